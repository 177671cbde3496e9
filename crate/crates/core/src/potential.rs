//! Rotationally symmetric potentials phi(x) = sum_i theta_i f_i(d(x, z_i))
//! with cosine profiles f(xi) = k^{-2} cos(k xi), their gradients, and the
//! l1 admissibility check that keeps the gradient map wrapping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{geodesic_distance, SpherePoint, TangentVector};

/// Below this value of sin(alpha_i) a component sits at its anchor (or the
/// anchor's antipode) and its gradient contribution vanishes smoothly,
/// because f'(0) = f'(pi) = 0 for cosine profiles.
pub const EPS_SIN: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error(
        "inadmissible spec: total weight {total_weight:.17} exceeds budget {budget:.17} \
         (margin {margin:.3e})"
    )]
    Inadmissible {
        total_weight: f64,
        budget: f64,
        margin: f64,
    },
    #[error("profile frequency must be a positive integer")]
    ZeroFrequency,
    #[error("slack must lie in [0, 1), got {slack}")]
    BadSlack { slack: f64 },
    #[error("component anchor has ambient dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("quadratic spec: matrix must be symmetric ({deviation:e} asymmetry)")]
    NotSymmetric { deviation: f64 },
    #[error("quadratic spec: mu has length {mu_len} but A is {a_rows}x{a_cols}")]
    ShapeMismatch {
        mu_len: usize,
        a_rows: usize,
        a_cols: usize,
    },
}

/// A radial profile f on [0, pi] with two derivatives. The extension point
/// for non-cosine potentials; check candidates with
/// [`profile_satisfies_wrapping`] before use.
pub trait RadialProfile {
    /// (f, f', f'') at xi.
    fn eval(&self, xi: f64) -> (f64, f64, f64);
}

/// Numeric check of the wrapping hypotheses on a xi-grid:
/// f'(0) = f'(pi) = 0 and f''(xi) >= -1. Equality at isolated points is
/// fine; weights with sum |theta_i| < 1 make the combined bound strict.
pub fn profile_satisfies_wrapping(profile: &impl RadialProfile, grid_size: usize) -> bool {
    let (_, d0, _) = profile.eval(0.0);
    let (_, dpi, _) = profile.eval(std::f64::consts::PI);
    if d0.abs() > 1e-12 || dpi.abs() > 1e-12 {
        return false;
    }
    (0..=grid_size).all(|i| {
        let xi = std::f64::consts::PI * i as f64 / grid_size as f64;
        profile.eval(xi).2 >= -1.0
    })
}

/// f(xi) = k^{-2} cos(k xi). Covers the linear (k = 1), quadratic (k = 2)
/// and high-frequency families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CosineProfile {
    k: u32,
}

impl CosineProfile {
    pub fn new(k: u32) -> Result<Self, PotentialError> {
        if k == 0 {
            return Err(PotentialError::ZeroFrequency);
        }
        Ok(Self { k })
    }

    pub fn frequency(&self) -> u32 {
        self.k
    }
}

impl RadialProfile for CosineProfile {
    fn eval(&self, xi: f64) -> (f64, f64, f64) {
        let k = self.k as f64;
        let (s, c) = (k * xi).sin_cos();
        (c / (k * k), -s / k, -c)
    }
}

/// One weighted radial term theta_i f_i(d(x, z_i)).
#[derive(Clone, Debug)]
pub struct PotentialComponent {
    pub profile: CosineProfile,
    pub anchor: SpherePoint,
    pub weight: f64,
}

/// Result of the l1 admissibility check.
#[derive(Clone, Copy, Debug)]
pub struct AdmissibilityReport {
    pub total_weight: f64,
    pub budget: f64,
    pub margin: f64,
    pub admissible: bool,
}

/// Checks sum |theta_i| <= 1 - slack. This is the sufficient wrapping
/// condition: sum theta_i f_i''(r) >= -sum |theta_i| > -1.
pub fn validate_components(components: &[PotentialComponent], slack: f64) -> AdmissibilityReport {
    let total_weight: f64 = components.iter().map(|c| c.weight.abs()).sum();
    let budget = 1.0 - slack;
    let margin = budget - total_weight;
    AdmissibilityReport {
        total_weight,
        budget,
        margin,
        admissible: margin >= 0.0,
    }
}

/// An admissible weighted sum of rotationally symmetric cosine components.
#[derive(Clone, Debug)]
pub struct PotentialSpec {
    components: Vec<PotentialComponent>,
    slack: f64,
    ambient_dim: usize,
}

impl PotentialSpec {
    pub fn new(
        ambient_dim: usize,
        components: Vec<PotentialComponent>,
        slack: f64,
    ) -> Result<Self, PotentialError> {
        if !(0.0..1.0).contains(&slack) {
            return Err(PotentialError::BadSlack { slack });
        }
        for c in &components {
            if c.anchor.ambient_dim() != ambient_dim {
                return Err(PotentialError::DimensionMismatch {
                    expected: ambient_dim,
                    found: c.anchor.ambient_dim(),
                });
            }
        }
        let report = validate_components(&components, slack);
        if !report.admissible {
            return Err(PotentialError::Inadmissible {
                total_weight: report.total_weight,
                budget: report.budget,
                margin: report.margin,
            });
        }
        Ok(Self {
            components,
            slack,
            ambient_dim,
        })
    }

    /// The zero potential; its gradient map is the identity.
    pub fn empty(ambient_dim: usize) -> Self {
        Self {
            components: Vec::new(),
            slack: 0.0,
            ambient_dim,
        }
    }

    pub fn components(&self) -> &[PotentialComponent] {
        &self.components
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn sphere_dim(&self) -> usize {
        self.ambient_dim - 1
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight.abs()).sum()
    }

    pub fn admissibility(&self) -> AdmissibilityReport {
        validate_components(&self.components, self.slack)
    }

    /// phi(x) = sum_i theta_i f_i(d(x, z_i)).
    pub fn value(&self, x: &SpherePoint) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let alpha = geodesic_distance(x, &c.anchor).radians();
                c.weight * c.profile.eval(alpha).0
            })
            .sum()
    }

    /// grad phi(x) = v_theta = -sum_i theta_i f_i'(alpha_i) e_i with
    /// e_i = (z_i - x cos alpha_i)/sin alpha_i. Components at the anchor or
    /// its antipode contribute zero.
    pub fn gradient(&self, x: &SpherePoint) -> TangentVector {
        let mut v = DVector::zeros(self.ambient_dim);
        for c in &self.components {
            let alpha = geodesic_distance(x, &c.anchor).radians();
            let sin_a = alpha.sin();
            if sin_a < EPS_SIN {
                continue;
            }
            let e = (c.anchor.coords() - x.coords() * alpha.cos()) / sin_a;
            let d1 = c.profile.eval(alpha).1;
            v -= e * (c.weight * d1);
        }
        TangentVector::new(x.clone(), v)
    }

    /// The convex combination (1-t) a + t b, with components concatenated
    /// and weights scaled. Admissible whenever both inputs are (the l1 ball
    /// is convex).
    pub fn blend(a: &PotentialSpec, b: &PotentialSpec, t: f64) -> PotentialSpec {
        assert_eq!(a.ambient_dim, b.ambient_dim, "dimension mismatch");
        let mut components = Vec::with_capacity(a.components.len() + b.components.len());
        for c in &a.components {
            components.push(PotentialComponent {
                weight: c.weight * (1.0 - t),
                ..c.clone()
            });
        }
        for c in &b.components {
            components.push(PotentialComponent {
                weight: c.weight * t,
                ..c.clone()
            });
        }
        PotentialSpec {
            components,
            slack: a.slack.min(b.slack),
            ambient_dim: a.ambient_dim,
        }
    }

    /// The same spec with every anchor rotated by the orthogonal matrix `r`.
    pub fn rotated(&self, r: &DMatrix<f64>) -> PotentialSpec {
        let components = self
            .components
            .iter()
            .map(|c| PotentialComponent {
                profile: c.profile,
                anchor: SpherePoint::new(r * c.anchor.coords()),
                weight: c.weight,
            })
            .collect();
        PotentialSpec {
            components,
            slack: self.slack,
            ambient_dim: self.ambient_dim,
        }
    }
}

/// The quadratic family phi(x) = x^T mu + (1/2) x^T A x, admissible when
/// |mu| + |A|_1 <= 1 - slack (|A|_1 = sum of absolute eigenvalues).
#[derive(Clone, Debug)]
pub struct QuadraticSpec {
    mu: DVector<f64>,
    a: DMatrix<f64>,
}

impl QuadraticSpec {
    pub fn new(mu: DVector<f64>, a: DMatrix<f64>) -> Result<Self, PotentialError> {
        if a.nrows() != mu.len() || a.ncols() != mu.len() {
            return Err(PotentialError::ShapeMismatch {
                mu_len: mu.len(),
                a_rows: a.nrows(),
                a_cols: a.ncols(),
            });
        }
        let deviation = (&a - a.transpose()).norm();
        if deviation > 1e-10 {
            return Err(PotentialError::NotSymmetric { deviation });
        }
        // Symmetrize exactly so the eigendecomposition is well posed.
        let a = (&a + a.transpose()) * 0.5;
        Ok(Self { mu, a })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn trace_norm(&self) -> f64 {
        self.a
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|l| l.abs())
            .sum()
    }

    /// Expands to cosine components: a k = 1 component along mu and one
    /// k = 2 component per nonzero eigenvalue of A. The component potential
    /// differs from x^T mu + (1/2) x^T A x by an x-independent constant,
    /// which does not affect the gradient map.
    pub fn to_components(&self, slack: f64) -> Result<PotentialSpec, PotentialError> {
        let dim = self.mu.len();
        let mut components = Vec::new();
        let mu_norm = self.mu.norm();
        if mu_norm > 0.0 {
            components.push(PotentialComponent {
                profile: CosineProfile::new(1)?,
                anchor: SpherePoint::new(self.mu.clone()),
                weight: mu_norm,
            });
        }
        let eigen = self.a.clone().symmetric_eigen();
        for (j, &lambda) in eigen.eigenvalues.iter().enumerate() {
            if lambda.abs() <= 1e-14 {
                continue;
            }
            components.push(PotentialComponent {
                profile: CosineProfile::new(2)?,
                anchor: SpherePoint::new(eigen.eigenvectors.column(j).into_owned()),
                weight: lambda,
            });
        }
        PotentialSpec::new(dim, components, slack)
    }
}

/// On-disk model spec, shared with the CLI.
///
/// ```json
/// {"type":"components","components":[{"z":[0,0,1],"k":1,"theta":0.5}],"delta":0.0}
/// {"type":"quadratic","mu":[0,0,0.5],"A":[[...]],"delta":0.0}
/// ```
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelFile {
    Components {
        components: Vec<ComponentEntry>,
        #[serde(default)]
        delta: f64,
    },
    Quadratic {
        mu: Vec<f64>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(default)]
        delta: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentEntry {
    pub z: Vec<f64>,
    pub k: u32,
    pub theta: f64,
}

impl ModelFile {
    pub fn delta(&self) -> f64 {
        match self {
            ModelFile::Components { delta, .. } | ModelFile::Quadratic { delta, .. } => *delta,
        }
    }

    /// Instantiates the potential with the parameter values stored in the
    /// file.
    pub fn to_potential(&self) -> Result<PotentialSpec, PotentialError> {
        match self {
            ModelFile::Components { components, delta } => {
                let dim = components
                    .first()
                    .map(|c| c.z.len())
                    .ok_or(PotentialError::DimensionMismatch {
                        expected: 2,
                        found: 0,
                    })?;
                let parts = components
                    .iter()
                    .map(|c| {
                        if c.z.len() != dim {
                            return Err(PotentialError::DimensionMismatch {
                                expected: dim,
                                found: c.z.len(),
                            });
                        }
                        Ok(PotentialComponent {
                            profile: CosineProfile::new(c.k)?,
                            anchor: SpherePoint::from_slice(&c.z),
                            weight: c.theta,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                PotentialSpec::new(dim, parts, *delta)
            }
            ModelFile::Quadratic { mu, a, delta } => {
                let dim = mu.len();
                let rows = a.len();
                let cols = a.first().map_or(0, |r| r.len());
                if rows != dim || a.iter().any(|r| r.len() != cols) || cols != dim {
                    return Err(PotentialError::ShapeMismatch {
                        mu_len: dim,
                        a_rows: rows,
                        a_cols: cols,
                    });
                }
                let a = DMatrix::from_fn(dim, dim, |i, j| a[i][j]);
                QuadraticSpec::new(DVector::from_row_slice(mu), a)?.to_components(*delta)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn e(axis: usize) -> SpherePoint {
        SpherePoint::standard_axis(3, axis)
    }

    fn single(k: u32, anchor: SpherePoint, weight: f64) -> PotentialSpec {
        PotentialSpec::new(
            anchor.ambient_dim(),
            vec![PotentialComponent {
                profile: CosineProfile::new(k).unwrap(),
                anchor,
                weight,
            }],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn profile_eval_examples() {
        let p1 = CosineProfile::new(1).unwrap();
        let (f, d1, d2) = p1.eval(0.0);
        assert_eq!((f, d1, d2), (1.0, 0.0, -1.0));

        let p2 = CosineProfile::new(2).unwrap();
        let (f, d1, d2) = p2.eval(FRAC_PI_2);
        assert_abs_diff_eq!(f, -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(d1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d2, 1.0, epsilon = 1e-15);

        let p3 = CosineProfile::new(3).unwrap();
        let (f, d1, d2) = p3.eval(PI);
        assert_abs_diff_eq!(f, -1.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d2, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cosine_profiles_satisfy_wrapping_hypotheses() {
        for k in 1..=30 {
            let p = CosineProfile::new(k).unwrap();
            assert!(profile_satisfies_wrapping(&p, 1000), "k = {k}");
            // |f''| <= 1 everywhere, f'(0) = f'(pi) = 0 exactly.
            assert_eq!(p.eval(0.0).1, 0.0);
            assert!(p.eval(PI).1.abs() < 1e-12);
            for i in 0..=500 {
                let xi = PI * i as f64 / 500.0;
                assert!(p.eval(xi).2.abs() <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn potential_value_examples() {
        let spec = single(1, e(2), 0.5);
        assert_abs_diff_eq!(spec.value(&e(2)), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.value(&e(0)), 0.0, epsilon = 1e-15);
        assert_eq!(PotentialSpec::empty(3).value(&e(0)), 0.0);
    }

    #[test]
    fn gradient_examples() {
        let spec = single(1, e(2), 0.5);
        assert_eq!(spec.gradient(&e(2)).norm(), 0.0);

        // At x = e1: alpha = pi/2, e = e3, v = -0.5 * (-1) * e3 = 0.5 e3.
        let g = spec.gradient(&e(0));
        assert_abs_diff_eq!((g.vec() - e(2).coords() * 0.5).norm(), 0.0, epsilon = 1e-15);

        assert_eq!(PotentialSpec::empty(3).gradient(&e(1)).norm(), 0.0);
    }

    #[test]
    fn admissibility_examples() {
        let comp = |w: f64| PotentialComponent {
            profile: CosineProfile::new(2).unwrap(),
            anchor: e(0),
            weight: w,
        };
        let report = validate_components(&[comp(0.5), comp(0.5)], 0.0);
        assert!(report.admissible);
        assert_abs_diff_eq!(report.margin, 0.0, epsilon = 1e-15);

        let err = PotentialSpec::new(3, vec![comp(0.6), comp(0.6)], 0.0).unwrap_err();
        match err {
            PotentialError::Inadmissible { total_weight, .. } => {
                assert_abs_diff_eq!(total_weight, 1.2, epsilon = 1e-15)
            }
            other => panic!("unexpected error {other:?}"),
        }

        assert!(validate_components(&[], 0.0).admissible);
    }

    #[test]
    fn quadratic_to_components_examples() {
        let zero =
            QuadraticSpec::new(DVector::zeros(3), DMatrix::zeros(3, 3)).unwrap();
        assert!(zero.to_components(0.0).unwrap().components().is_empty());

        let linear = QuadraticSpec::new(
            DVector::from_row_slice(&[0.5, 0.0, 0.0]),
            DMatrix::zeros(3, 3),
        )
        .unwrap()
        .to_components(0.0)
        .unwrap();
        assert_eq!(linear.components().len(), 1);
        let c = &linear.components()[0];
        assert_eq!(c.profile.frequency(), 1);
        assert_abs_diff_eq!(c.weight, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.anchor.dot(&e(0)), 1.0, epsilon = 1e-15);

        // diag(0.2, 0, -0.8): trace norm 1, components (e1, 0.2) and (e3, -0.8).
        let q = QuadraticSpec::new(
            DVector::zeros(3),
            DMatrix::from_diagonal(&DVector::from_row_slice(&[0.2, 0.0, -0.8])),
        )
        .unwrap();
        assert_abs_diff_eq!(q.trace_norm(), 1.0, epsilon = 1e-14);
        let spec = q.to_components(0.0).unwrap();
        assert_eq!(spec.components().len(), 2);
        assert_abs_diff_eq!(spec.total_weight(), 1.0, epsilon = 1e-12);
        for c in spec.components() {
            assert_eq!(c.profile.frequency(), 2);
            if c.weight > 0.0 {
                assert_abs_diff_eq!(c.weight, 0.2, epsilon = 1e-13);
                assert_abs_diff_eq!(c.anchor.dot(&e(0)).abs(), 1.0, epsilon = 1e-12);
            } else {
                assert_abs_diff_eq!(c.weight, -0.8, epsilon = 1e-13);
                assert_abs_diff_eq!(c.anchor.dot(&e(2)).abs(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn quadratic_component_value_matches_polynomial_up_to_constant() {
        let mu = DVector::from_row_slice(&[0.1, -0.2, 0.05]);
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.2, 0.05, 0.0, 0.05, -0.1, 0.1, 0.0, 0.1, 0.15],
        );
        let q = QuadraticSpec::new(mu.clone(), a.clone()).unwrap();
        let spec = q.to_components(0.0).unwrap();
        let poly = |x: &SpherePoint| {
            x.coords().dot(&mu) + 0.5 * (x.coords().transpose() * &a * x.coords())[(0, 0)]
        };
        let x0 = e(0);
        let shift = spec.value(&x0) - poly(&x0);
        for x in [e(1), e(2), SpherePoint::from_slice(&[0.3, -0.5, 0.81])] {
            assert_abs_diff_eq!(spec.value(&x) - poly(&x), shift, epsilon = 1e-12);
        }
    }

    #[test]
    fn model_file_json_round_trip() {
        let json = r#"{"type":"components","components":[{"z":[0,0,1],"k":1,"theta":0.5}],"delta":0.0}"#;
        let model: ModelFile = serde_json::from_str(json).unwrap();
        let spec = model.to_potential().unwrap();
        assert_eq!(spec.components().len(), 1);
        assert_abs_diff_eq!(spec.value(&e(2)), 0.5, epsilon = 1e-15);

        let json = r#"{"type":"quadratic","mu":[0.5,0,0],"A":[[0,0,0],[0,0,0],[0,0,0]]}"#;
        let model: ModelFile = serde_json::from_str(json).unwrap();
        let spec = model.to_potential().unwrap();
        assert_eq!(spec.components().len(), 1);
    }
}
