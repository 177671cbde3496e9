//! Numerical witnesses for the structural facts the model relies on:
//! brute-force c-transforms on a quasi-uniform mesh (c-convexity), the
//! Jacobian log-concavity and Jacobian-ratio inequalities along blends,
//! sliding-mountain convexity, and consistency of the factored Jacobian.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{jacobian_parts, log_density, DensityError};
use crate::geometry::{
    c_segment, cost, tangent_basis, uniform_sample, GeometryError, SpherePoint,
};
use crate::potential::{CosineProfile, PotentialComponent, PotentialSpec};

/// Deterministic quasi-uniform mesh on S^2: the Fibonacci lattice. Nearest
/// neighbor spacing is O(1/sqrt(count)) with a small constant.
pub fn fibonacci_mesh(count: usize) -> Vec<SpherePoint> {
    assert!(count >= 2, "mesh needs at least two nodes");
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..count)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let lon = 2.0 * std::f64::consts::PI * (i as f64 / golden);
            SpherePoint::from_slice(&[r * lon.cos(), r * lon.sin(), z])
        })
        .collect()
}

/// A scalar function sampled on a mesh.
#[derive(Clone, Debug)]
pub struct GridFunction {
    pub nodes: Vec<SpherePoint>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn sample(nodes: Vec<SpherePoint>, f: impl Fn(&SpherePoint) -> f64) -> Self {
        let values = nodes.iter().map(&f).collect();
        Self { nodes, values }
    }
}

/// The discrete c-transform phi^c(y) = max_x { -c(x, y) - phi(x) } over the
/// mesh nodes, with costs recomputed in f64. O(N^2) reference route; use
/// [`CTransformMesh`] for repeated transforms on one mesh.
pub fn c_transform_grid(f: &GridFunction) -> GridFunction {
    let values = f
        .nodes
        .par_iter()
        .map(|y| {
            f.nodes
                .iter()
                .zip(&f.values)
                .map(|(x, v)| -cost(x, y) - v)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    GridFunction {
        nodes: f.nodes.clone(),
        values,
    }
}

/// A mesh with its full pairwise cost matrix precomputed in f32 (exact
/// zeros on the diagonal, relative error ~1e-7 elsewhere, well below the
/// discretization error), so repeated c-transforms are single sequential
/// sweeps over rows.
pub struct CTransformMesh {
    nodes: Vec<SpherePoint>,
    cost: Vec<f32>,
    spacing: f64,
}

impl CTransformMesh {
    pub fn build(count: usize) -> Self {
        let nodes = fibonacci_mesh(count);
        let n = nodes.len();
        let cost: Vec<f32> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let nodes = &nodes;
                (0..n).map(move |j| cost(&nodes[i], &nodes[j]) as f32)
            })
            .collect();
        let spacing_sum: f64 = (0..n)
            .map(|i| {
                let row = &cost[i * n..(i + 1) * n];
                let min_cost = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, c)| *c)
                    .fold(f32::INFINITY, f32::min);
                (2.0 * min_cost as f64).sqrt()
            })
            .sum();
        Self {
            nodes,
            cost,
            spacing: spacing_sum / n as f64,
        }
    }

    pub fn nodes(&self) -> &[SpherePoint] {
        &self.nodes
    }

    /// Mean nearest-neighbor geodesic distance.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sample(&self, f: impl Fn(&SpherePoint) -> f64 + Sync + Send) -> Vec<f64> {
        self.nodes.par_iter().map(f).collect()
    }

    pub fn c_transform(&self, values: &[f64]) -> Vec<f64> {
        let n = self.nodes.len();
        assert_eq!(values.len(), n);
        (0..n)
            .into_par_iter()
            .map(|j| {
                self.cost[j * n..(j + 1) * n]
                    .iter()
                    .zip(values)
                    .map(|(c, v)| -(*c as f64) - v)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// ||phi^cc - phi||_inf for the potential sampled on this mesh. The
    /// double transform never exceeds phi, so this measures how far phi is
    /// from discrete c-convexity.
    pub fn c_convexity_deviation(&self, spec: &PotentialSpec) -> f64 {
        let phi = self.sample(|x| spec.value(x));
        let phi_cc = self.c_transform(&self.c_transform(&phi));
        phi.iter()
            .zip(&phi_cc)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CConvexityReport {
    pub deviation: f64,
    pub deviation_refined: f64,
    pub spacing: f64,
    pub spacing_refined: f64,
    pub passed: bool,
}

/// c-convexity witness with the threshold calibrated by mesh refinement:
/// the deviation must decay under refinement (factor 0.75 over a
/// sqrt(2)-finer mesh) and stay below 3 C h, with the constant C estimated
/// from the fine mesh as deviation_refined / spacing_refined.
pub fn check_c_convexity_on(
    coarse: &CTransformMesh,
    fine: &CTransformMesh,
    spec: &PotentialSpec,
) -> Result<CConvexityReport, DensityError> {
    if spec.ambient_dim() != 3 {
        return Err(DensityError::Dimension {
            ambient_dim: spec.ambient_dim(),
        });
    }
    let deviation = coarse.c_convexity_deviation(spec);
    let deviation_refined = fine.c_convexity_deviation(spec);
    let slack = 1e-9;
    let decays = deviation_refined <= 0.75 * deviation + slack;
    let constant = deviation_refined / fine.spacing();
    let below_threshold = deviation <= 3.0 * constant * coarse.spacing() + slack;
    Ok(CConvexityReport {
        deviation,
        deviation_refined,
        spacing: coarse.spacing(),
        spacing_refined: fine.spacing(),
        passed: decays && below_threshold,
    })
}

/// One-shot variant that builds a `resolution`-node mesh and a 2x-refined
/// one. Prefer [`CTransformMesh::build`] + [`check_c_convexity_on`] when
/// checking many specs.
pub fn check_c_convexity(
    spec: &PotentialSpec,
    resolution: usize,
) -> Result<CConvexityReport, DensityError> {
    let coarse = CTransformMesh::build(resolution);
    let fine = CTransformMesh::build(2 * resolution);
    check_c_convexity_on(&coarse, &fine, spec)
}

/// Uniform grid on [0, 1] with `points` nodes.
pub fn unit_grid(points: usize) -> Vec<f64> {
    assert!(points >= 2);
    (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JacobianInequalityReport {
    /// min_t [ log J_t - (1-t) log J_0 - t log J_1 ]; >= -1e-9 when the
    /// log-concavity inequality holds.
    pub min_margin: f64,
    /// max second difference of log J_t; <= tol for a concave profile.
    pub max_second_diff: f64,
    /// min_t of the same chord margin for (J_t / sigma_t)^{1/n}.
    pub ratio_min_margin: f64,
    pub passed: bool,
}

/// Log-concavity of the Jacobian determinant along the blend
/// (1-t) spec0 + t spec1 at a fixed x, plus the Jacobian-ratio inequality
/// for det^{1/n} = (J/sigma)^{1/n}.
pub fn check_jacobian_inequality(
    spec0: &PotentialSpec,
    spec1: &PotentialSpec,
    x: &SpherePoint,
    t_grid: &[f64],
) -> Result<JacobianInequalityReport, DensityError> {
    assert!(t_grid.len() >= 2);
    let n = spec0.sphere_dim() as f64;
    let log_j0 = log_density(spec0, x)?;
    let log_j1 = log_density(spec1, x)?;
    let det0 = jacobian_parts(spec0, x)?.det.powf(1.0 / n);
    let det1 = jacobian_parts(spec1, x)?.det.powf(1.0 / n);

    let mut log_j = Vec::with_capacity(t_grid.len());
    let mut min_margin = f64::INFINITY;
    let mut ratio_min_margin = f64::INFINITY;
    for &t in t_grid {
        let blend = PotentialSpec::blend(spec0, spec1, t);
        let lj = log_density(&blend, x)?;
        min_margin = min_margin.min(lj - (1.0 - t) * log_j0 - t * log_j1);
        let root = jacobian_parts(&blend, x)?.det.powf(1.0 / n);
        ratio_min_margin = ratio_min_margin.min(root - (1.0 - t) * det0 - t * det1);
        log_j.push(lj);
    }
    let max_second_diff = log_j
        .windows(3)
        .map(|w| w[0] - 2.0 * w[1] + w[2])
        .fold(f64::NEG_INFINITY, f64::max);

    let dt = t_grid[1] - t_grid[0];
    let passed = min_margin >= -1e-9
        && ratio_min_margin >= -1e-9
        && max_second_diff <= 1e-6 * dt * dt;
    Ok(JacobianInequalityReport {
        min_margin,
        max_second_diff,
        ratio_min_margin,
        passed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlidingMountainReport {
    pub min_second_diff: f64,
    pub passed: bool,
}

/// Convexity in t of the sliding mountain
/// t -> c(z, [y0, y1]_t(z)) - c(x, [y0, y1]_t(z)).
pub fn check_sliding_mountain(
    x: &SpherePoint,
    z: &SpherePoint,
    y0: &SpherePoint,
    y1: &SpherePoint,
    t_grid: &[f64],
) -> Result<SlidingMountainReport, GeometryError> {
    assert!(t_grid.len() >= 3);
    let values = t_grid
        .iter()
        .map(|&t| {
            let y = c_segment(y0, y1, z, t)?;
            Ok(cost(z, &y) - cost(x, &y))
        })
        .collect::<Result<Vec<f64>, GeometryError>>()?;
    let min_second_diff = values
        .windows(3)
        .map(|w| w[0] - 2.0 * w[1] + w[2])
        .fold(f64::INFINITY, f64::min);
    Ok(SlidingMountainReport {
        passed: min_second_diff >= -1e-8,
        min_second_diff,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactoredJacobianReport {
    pub density: f64,
    pub factored: f64,
    pub relative_mismatch: f64,
    pub passed: bool,
}

/// Cross-checks the closed-form density against the factored route: the
/// determinant of the same matrix restricted to an explicit tangent frame,
/// recombined with the exponential-map factor sigma.
pub fn check_factored_jacobian(
    spec: &PotentialSpec,
    x: &SpherePoint,
) -> Result<FactoredJacobianReport, DensityError> {
    let parts = jacobian_parts(spec, x)?;
    let basis = tangent_basis(x);
    let n = basis.len();
    let restricted = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        (basis[i].vec().transpose() * &parts.m * basis[j].vec())[(0, 0)]
    });
    let factored = parts.sigma * restricted.lu().determinant();
    let density = parts.density();
    let relative_mismatch = (factored - density).abs() / density;
    Ok(FactoredJacobianReport {
        density,
        factored,
        relative_mismatch,
        passed: relative_mismatch <= 1e-10,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogSigmaReport {
    pub max_second_diff: f64,
    pub passed: bool,
}

/// Concavity of t -> log sigma_t(x) along the blend of two specs.
pub fn check_log_sigma_concavity(
    spec0: &PotentialSpec,
    spec1: &PotentialSpec,
    x: &SpherePoint,
    t_grid: &[f64],
) -> Result<LogSigmaReport, DensityError> {
    assert!(t_grid.len() >= 3);
    let values = t_grid
        .iter()
        .map(|&t| {
            let blend = PotentialSpec::blend(spec0, spec1, t);
            Ok(jacobian_parts(&blend, x)?.sigma.ln())
        })
        .collect::<Result<Vec<f64>, DensityError>>()?;
    let max_second_diff = values
        .windows(3)
        .map(|w| w[0] - 2.0 * w[1] + w[2])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LogSigmaReport {
        passed: max_second_diff <= 1e-8,
        max_second_diff,
    })
}

/// A random admissible spec: 1..=max_components anchors drawn uniformly,
/// frequencies in 1..=max_freq, signed weights rescaled so the total sits
/// at a random fraction of the budget.
pub fn random_spec<R: Rng + ?Sized>(
    rng: &mut R,
    ambient_dim: usize,
    max_components: usize,
    max_freq: u32,
) -> PotentialSpec {
    let slack = 1e-3;
    let m = rng.random_range(1..=max_components);
    let mut weights: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let total: f64 = weights.iter().map(|w| w.abs()).sum();
    let target = rng.random_range(0.2..0.95) * (1.0 - slack);
    for w in &mut weights {
        *w *= target / total;
    }
    let components = weights
        .into_iter()
        .map(|weight| PotentialComponent {
            profile: CosineProfile::new(rng.random_range(1..=max_freq)).unwrap(),
            anchor: uniform_sample(ambient_dim, rng),
            weight,
        })
        .collect();
    PotentialSpec::new(ambient_dim, components, slack).expect("rescaled weights are admissible")
}

/// One entry of a check-suite run, with enough detail to reproduce it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn new(seed: u64, checks: Vec<CheckOutcome>) -> Self {
        Self {
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}
