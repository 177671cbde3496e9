//! Log-likelihood, maximum-likelihood fitting over the convex parameter
//! set, AIC, and model comparison.
//!
//! The log-likelihood is concave in the parameters, so conditional-gradient
//! (Frank-Wolfe) ascent with a closed-form linear oracle over the l1 /
//! trace-norm ball finds the global optimum, certified by the duality gap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::density::{log_density, DensityError};
use crate::geometry::SpherePoint;
use crate::potential::{
    ComponentEntry, CosineProfile, ModelFile, PotentialComponent, PotentialError, PotentialSpec,
    QuadraticSpec,
};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("data set is empty")]
    EmptyData,
    #[error("parameter outside the constraint set: norm {norm:.17} > {budget:.17}")]
    ConstraintViolation { norm: f64, budget: f64 },
    #[error("parameter vector has length {found}, expected {expected}")]
    ParamLength { expected: usize, found: usize },
    #[error("fit reports have mismatched data fingerprints")]
    MismatchedData,
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// A parametrized family: fixed structure with a free parameter vector
/// ranging over a convex constraint set.
#[derive(Clone, Debug)]
pub enum ModelStructure {
    /// Fixed anchors and frequencies; theta_i are the free weights,
    /// constrained by sum |theta_i| <= 1 - delta.
    Components {
        anchors: Vec<SpherePoint>,
        freqs: Vec<u32>,
    },
    /// Free (mu, A) with |mu| + |A|_1 <= 1 - delta. Parameters are stored
    /// as mu followed by the upper triangle of A, row by row.
    Quadratic { ambient_dim: usize },
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub structure: ModelStructure,
    pub delta: f64,
}

impl ModelSpec {
    pub fn components(
        anchors: Vec<SpherePoint>,
        freqs: Vec<u32>,
        delta: f64,
    ) -> Result<Self, InferenceError> {
        assert_eq!(anchors.len(), freqs.len(), "one frequency per anchor");
        for k in &freqs {
            if *k == 0 {
                return Err(PotentialError::ZeroFrequency.into());
            }
        }
        Ok(Self {
            structure: ModelStructure::Components { anchors, freqs },
            delta,
        })
    }

    pub fn quadratic(ambient_dim: usize, delta: f64) -> Self {
        Self {
            structure: ModelStructure::Quadratic { ambient_dim },
            delta,
        }
    }

    /// Structure (and delta) from an on-disk model spec; the stored
    /// parameter values are ignored.
    pub fn from_model_file(file: &ModelFile) -> Result<Self, InferenceError> {
        match file {
            ModelFile::Components { components, .. } => ModelSpec::components(
                components
                    .iter()
                    .map(|c| SpherePoint::from_slice(&c.z))
                    .collect(),
                components.iter().map(|c| c.k).collect(),
                file.delta(),
            ),
            ModelFile::Quadratic { mu, .. } => Ok(ModelSpec::quadratic(mu.len(), file.delta())),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match &self.structure {
            ModelStructure::Components { anchors, .. } => anchors[0].ambient_dim(),
            ModelStructure::Quadratic { ambient_dim } => *ambient_dim,
        }
    }

    /// Length of the stored parameter vector.
    pub fn param_len(&self) -> usize {
        match &self.structure {
            ModelStructure::Components { anchors, .. } => anchors.len(),
            ModelStructure::Quadratic { ambient_dim } => {
                ambient_dim + ambient_dim * (ambient_dim + 1) / 2
            }
        }
    }

    /// Free-parameter count for AIC. The quadratic family counts out one
    /// gauge direction: A -> A + cI shifts the potential by a constant and
    /// leaves the density invariant.
    pub fn aic_dim(&self) -> usize {
        match &self.structure {
            ModelStructure::Components { anchors, .. } => anchors.len(),
            ModelStructure::Quadratic { .. } => self.param_len() - 1,
        }
    }

    pub fn budget(&self) -> f64 {
        1.0 - self.delta
    }

    /// The constraint norm: sum |theta_i|, or |mu| + |A|_1.
    pub fn constraint_norm(&self, theta: &[f64]) -> f64 {
        match &self.structure {
            ModelStructure::Components { .. } => theta.iter().map(|t| t.abs()).sum(),
            ModelStructure::Quadratic { ambient_dim } => {
                let (mu, a) = unpack_quadratic(*ambient_dim, theta);
                mu.norm()
                    + a.symmetric_eigen()
                        .eigenvalues
                        .iter()
                        .map(|l| l.abs())
                        .sum::<f64>()
            }
        }
    }

    /// Builds the potential for a parameter value inside the constraint
    /// set.
    pub fn instantiate(&self, theta: &[f64]) -> Result<PotentialSpec, InferenceError> {
        let norm = self.check_theta(theta)?;
        if norm > self.budget() {
            return Err(InferenceError::ConstraintViolation {
                norm,
                budget: self.budget(),
            });
        }
        self.instantiate_interior(theta)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<f64, InferenceError> {
        if theta.len() != self.param_len() {
            return Err(InferenceError::ParamLength {
                expected: self.param_len(),
                found: theta.len(),
            });
        }
        Ok(self.constraint_norm(theta))
    }

    /// Instantiation with the admissibility budget relaxed to 1, used for
    /// finite-difference probes that step just outside the shrunken set.
    fn instantiate_interior(&self, theta: &[f64]) -> Result<PotentialSpec, InferenceError> {
        match &self.structure {
            ModelStructure::Components { anchors, freqs } => {
                let components = anchors
                    .iter()
                    .zip(freqs)
                    .zip(theta)
                    .map(|((anchor, &k), &weight)| {
                        Ok(PotentialComponent {
                            profile: CosineProfile::new(k)?,
                            anchor: anchor.clone(),
                            weight,
                        })
                    })
                    .collect::<Result<Vec<_>, PotentialError>>()?;
                Ok(PotentialSpec::new(self.ambient_dim(), components, 0.0)?)
            }
            ModelStructure::Quadratic { ambient_dim } => {
                let (mu, a) = unpack_quadratic(*ambient_dim, theta);
                Ok(QuadraticSpec::new(mu, a)?.to_components(0.0)?)
            }
        }
    }

    /// The fitted parameters rendered back as an on-disk model spec.
    pub fn to_model_file(&self, theta: &[f64]) -> ModelFile {
        match &self.structure {
            ModelStructure::Components { anchors, freqs } => ModelFile::Components {
                components: anchors
                    .iter()
                    .zip(freqs)
                    .zip(theta)
                    .map(|((anchor, &k), &t)| ComponentEntry {
                        z: anchor.coords().iter().copied().collect(),
                        k,
                        theta: t,
                    })
                    .collect(),
                delta: self.delta,
            },
            ModelStructure::Quadratic { ambient_dim } => {
                let (mu, a) = unpack_quadratic(*ambient_dim, theta);
                ModelFile::Quadratic {
                    mu: mu.iter().copied().collect(),
                    a: (0..*ambient_dim)
                        .map(|i| (0..*ambient_dim).map(|j| a[(i, j)]).collect())
                        .collect(),
                    delta: self.delta,
                }
            }
        }
    }
}

/// theta storage -> (mu, symmetric A) for the quadratic family.
pub fn unpack_quadratic(dim: usize, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let mu = DVector::from_row_slice(&theta[..dim]);
    let mut a = DMatrix::zeros(dim, dim);
    let mut idx = dim;
    for i in 0..dim {
        for j in i..dim {
            a[(i, j)] = theta[idx];
            a[(j, i)] = theta[idx];
            idx += 1;
        }
    }
    (mu, a)
}

/// Inverse of [`unpack_quadratic`].
pub fn pack_quadratic(mu: &DVector<f64>, a: &DMatrix<f64>) -> Vec<f64> {
    let dim = mu.len();
    let mut theta: Vec<f64> = mu.iter().copied().collect();
    for i in 0..dim {
        for j in i..dim {
            theta.push(a[(i, j)]);
        }
    }
    theta
}

/// Sum in a fixed pairwise tree order, for run-to-run bit stability of the
/// reduction regardless of how the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// sum_k log p(x_k | theta).
pub fn log_likelihood(
    model: &ModelSpec,
    theta: &[f64],
    data: &[SpherePoint],
) -> Result<f64, InferenceError> {
    if data.is_empty() {
        return Err(InferenceError::EmptyData);
    }
    let spec = model.instantiate(theta)?;
    let terms = data
        .iter()
        .map(|x| log_density(&spec, x))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pairwise_sum(&terms))
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    /// Duality-gap termination threshold.
    pub tol: f64,
    pub max_iterations: u32,
    /// Interior margin of the constraint set during fitting.
    pub delta: f64,
    /// Central finite-difference step for objective gradients.
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 500,
            delta: 1e-6,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub gap: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Objective value after each iteration, starting at theta = 0;
    /// non-decreasing by construction.
    pub trace: Vec<f64>,
}

/// Objective for the optimizer: -inf on any evaluation failure (degenerate
/// boundary points), so the line search steers away from them.
fn objective(model: &ModelSpec, theta: &[f64], data: &[SpherePoint]) -> f64 {
    let spec = match model.instantiate_interior(theta) {
        Ok(s) => s,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut terms = Vec::with_capacity(data.len());
    for x in data {
        match log_density(&spec, x) {
            Ok(t) => terms.push(t),
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    pairwise_sum(&terms)
}

fn fd_gradient(model: &ModelSpec, theta: &[f64], data: &[SpherePoint], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for j in 0..theta.len() {
        probe[j] = theta[j] + step;
        let plus = objective(model, &probe, data);
        probe[j] = theta[j] - step;
        let minus = objective(model, &probe, data);
        probe[j] = theta[j];
        grad[j] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// The linear oracle: the extreme point s of the constraint set maximizing
/// <g, s>. For the l1 ball this is the best signed coordinate; for the
/// |mu| + |A|_1 ball, the better of the unit-mu atom and the best signed
/// rank-one A atom.
fn linear_oracle(model: &ModelSpec, grad: &[f64]) -> Vec<f64> {
    let radius = model.budget();
    match &model.structure {
        ModelStructure::Components { .. } => {
            let mut s = vec![0.0; grad.len()];
            let (j, gj) = grad
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, g)| (j, *g))
                .unwrap();
            s[j] = radius * gj.signum();
            s
        }
        ModelStructure::Quadratic { ambient_dim } => {
            let dim = *ambient_dim;
            let g_mu = DVector::from_row_slice(&grad[..dim]);
            // Stored off-diagonal gradients are directional derivatives
            // along E_ij + E_ji, i.e. twice the matrix derivative.
            let mut l = DMatrix::zeros(dim, dim);
            let mut idx = dim;
            for i in 0..dim {
                for j in i..dim {
                    let entry = if i == j { grad[idx] } else { grad[idx] / 2.0 };
                    l[(i, j)] = entry;
                    l[(j, i)] = entry;
                    idx += 1;
                }
            }
            let mu_value = g_mu.norm();
            let eigen = l.symmetric_eigen();
            let (jmax, lambda) = eigen
                .eigenvalues
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, l)| (j, *l))
                .unwrap();
            if mu_value >= lambda.abs() {
                let mut mu = g_mu;
                if mu_value > 0.0 {
                    mu *= radius / mu_value;
                }
                pack_quadratic(&mu, &DMatrix::zeros(dim, dim))
            } else {
                let u = eigen.eigenvectors.column(jmax).into_owned();
                let a = &u * u.transpose() * (radius * lambda.signum());
                pack_quadratic(&DVector::zeros(dim), &a)
            }
        }
    }
}

/// Golden-section search for the maximum of a unimodal function on [0, 1].
fn golden_section_max(f: impl Fn(f64) -> f64, iterations: u32) -> (f64, f64) {
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iterations {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    // Consider the boundary gamma = 1 too; f(0) is the incumbent.
    let mid = if fa >= fb { (a, fa) } else { (b, fb) };
    let f1 = f(1.0);
    if f1 >= mid.1 {
        (1.0, f1)
    } else {
        mid
    }
}

/// Frank-Wolfe ascent of the log-likelihood from theta = 0, with a
/// golden-section line search along each oracle direction and the duality
/// gap as the global-optimality certificate.
pub fn mle_fit(
    model: &ModelSpec,
    data: &[SpherePoint],
    options: &FitOptions,
) -> Result<FitResult, InferenceError> {
    if data.is_empty() {
        return Err(InferenceError::EmptyData);
    }
    let model = ModelSpec {
        structure: model.structure.clone(),
        delta: options.delta,
    };
    let mut theta = vec![0.0; model.param_len()];
    let mut obj = objective(&model, &theta, data);
    let mut trace = vec![obj];
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0u32;

    while iterations < options.max_iterations {
        let grad = fd_gradient(&model, &theta, data, options.fd_step);
        let s = linear_oracle(&model, &grad);
        gap = grad
            .iter()
            .zip(s.iter().zip(&theta))
            .map(|(g, (si, ti))| g * (si - ti))
            .sum();
        if gap <= options.tol {
            converged = true;
            break;
        }
        let direction: Vec<f64> = s.iter().zip(&theta).map(|(si, ti)| si - ti).collect();
        let line = |gamma: f64| {
            let probe: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(t, d)| t + gamma * d)
                .collect();
            objective(&model, &probe, data)
        };
        let (gamma, obj_new) = golden_section_max(line, 48);
        if !matches!(obj_new.partial_cmp(&obj), Some(std::cmp::Ordering::Greater)) {
            // No representable ascent along the oracle direction; the
            // remaining gap is finite-difference noise.
            converged = true;
            break;
        }
        for (t, d) in theta.iter_mut().zip(&direction) {
            *t += gamma * d;
        }
        obj = obj_new;
        trace.push(obj);
        iterations += 1;
    }

    let loglik = log_likelihood(&model, &theta, data)?;
    Ok(FitResult {
        aic: aic(loglik, model.aic_dim()),
        theta_hat: theta,
        loglik,
        gap,
        iterations,
        converged,
        trace,
    })
}

/// AIC = -2 loglik + 2 dim; smaller is preferred.
pub fn aic(loglik: f64, dim: usize) -> f64 {
    -2.0 * loglik + 2.0 * dim as f64
}

/// Order-independent fingerprint of a data set: coordinates rounded to
/// 1e-12, sorted, and hashed.
pub fn data_fingerprint(data: &[SpherePoint]) -> String {
    let mut rows: Vec<Vec<i64>> = data
        .iter()
        .map(|p| {
            p.coords()
                .iter()
                .map(|c| (c * 1e12).round() as i64)
                .collect()
        })
        .collect();
    rows.sort();
    let mut hasher = Sha256::new();
    for row in &rows {
        for v in row {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// On-disk fit report, shared with the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    /// The fitted model, rendered with the estimated parameters.
    pub model: ModelFile,
    pub theta_hat: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub dim: usize,
    pub converged: bool,
    pub iterations: u32,
    pub data_fingerprint: String,
}

/// Indices of `fits` in ascending AIC order; ties broken by smaller dim,
/// then input order. All reports must carry the same data fingerprint.
pub fn compare_models(fits: &[FitReport]) -> Result<Vec<usize>, InferenceError> {
    if fits
        .windows(2)
        .any(|w| w[0].data_fingerprint != w[1].data_fingerprint)
    {
        return Err(InferenceError::MismatchedData);
    }
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| {
        fits[a]
            .aic
            .total_cmp(&fits[b].aic)
            .then(fits[a].dim.cmp(&fits[b].dim))
            .then(a.cmp(&b))
    });
    Ok(order)
}
