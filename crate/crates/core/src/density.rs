//! The gradient map G(x) = exp_x(grad phi(x)) and its closed-form Jacobian
//! determinant
//!
//!   p(x) = (sin|v|/|v|)^{n-1} det(x x^T + H + sum_i theta_i K_i),
//!
//! the probability density of the pull-back of the uniform measure. All
//! singular limits (zero gradient, points at an anchor or its antipode) are
//! handled by their analytic limits.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{exp_map, from_lon_lat_deg, geodesic_distance, SpherePoint, TangentVector};
use crate::potential::{PotentialSpec, RadialProfile, EPS_SIN};

/// Below this gradient norm the exponential-map Jacobian factor and H are
/// evaluated by their series limits.
pub const EPS_V: f64 = 1e-7;

/// Gradient norms within this margin of pi mean the spec is not wrapping at
/// x and the density is undefined there.
pub const WRAP_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("gradient norm {grad_norm:.17} reaches pi; potential is not wrapping here")]
    WrapViolation { grad_norm: f64 },
    #[error("operation requires S^2 (ambient dimension 3), got {ambient_dim}")]
    Dimension { ambient_dim: usize },
    #[error("Jacobian determinant {det:e} is not positive: internal inconsistency")]
    NonPositiveJacobian { det: f64 },
}

/// sin(t)/t, by series near zero. The series branch is accurate to well
/// below 1e-12 at the switch point.
pub(crate) fn sinc(t: f64) -> f64 {
    if t < EPS_V {
        let t2 = t * t;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sin() / t
    }
}

/// G(x) = exp_x(grad phi(x)). Admissibility keeps |grad phi| < pi, so this
/// is total for valid specs.
pub fn gradient_map(spec: &PotentialSpec, x: &SpherePoint) -> SpherePoint {
    exp_map(&spec.gradient(x))
}

/// The pieces of the closed-form Jacobian determinant at x.
#[derive(Clone, Debug)]
pub struct JacobianParts {
    /// v = grad phi(x).
    pub v: TangentVector,
    /// (sin|v|/|v|)^{n-1}, the exponential-map factor.
    pub sigma: f64,
    /// x x^T + H + sum_i theta_i K_i; the normal direction contributes
    /// eigenvalue 1.
    pub m: DMatrix<f64>,
    /// det(m).
    pub det: f64,
}

impl JacobianParts {
    pub fn density(&self) -> f64 {
        self.sigma * self.det
    }
}

pub fn jacobian_parts(spec: &PotentialSpec, x: &SpherePoint) -> Result<JacobianParts, DensityError> {
    let dim = spec.ambient_dim();
    let xc = x.coords();
    let xxt = xc * xc.transpose();
    let identity = DMatrix::identity(dim, dim);
    let tangential = &identity - &xxt;

    let mut v = nalgebra::DVector::zeros(dim);
    let mut k_sum = DMatrix::zeros(dim, dim);
    for c in spec.components() {
        let alpha = geodesic_distance(x, &c.anchor).radians();
        let (_, d1, d2) = c.profile.eval(alpha);
        let sin_a = alpha.sin();
        if sin_a < EPS_SIN {
            // At the anchor or its antipode f' vanishes, and the limit of
            // f'(a) cos(a)/sin(a) is f''(a); the e e^T terms merge.
            k_sum += &tangential * (c.weight * d2);
            continue;
        }
        let e = (c.anchor.coords() - xc * alpha.cos()) / sin_a;
        let eet = &e * e.transpose();
        v -= &e * (c.weight * d1);
        let radial = d1 * alpha.cos() / sin_a;
        k_sum += (&eet * d2 + (&tangential - &eet) * radial) * c.weight;
    }

    let vnorm = v.norm();
    if vnorm >= std::f64::consts::PI - WRAP_EPS {
        return Err(DensityError::WrapViolation { grad_norm: vnorm });
    }

    let h = if vnorm < EPS_V {
        // alpha cot(alpha) -> 1, e e^T (1 - factor) -> 0.
        tangential.clone()
    } else {
        let e = &v / vnorm;
        let eet = &e * e.transpose();
        let factor = vnorm * vnorm.cos() / vnorm.sin();
        &eet + (&tangential - &eet) * factor
    };

    let m = xxt + h + k_sum;
    let det = m.clone().lu().determinant();
    if det <= 0.0 {
        return Err(DensityError::NonPositiveJacobian { det });
    }
    let n = spec.sphere_dim() as i32;
    let sigma = sinc(vnorm).powi(n - 1);
    Ok(JacobianParts {
        v: TangentVector::new(x.clone(), v),
        sigma,
        m,
        det,
    })
}

/// p(x) = sigma * det, strictly positive for admissible specs.
pub fn density(spec: &PotentialSpec, x: &SpherePoint) -> Result<f64, DensityError> {
    Ok(jacobian_parts(spec, x)?.density())
}

/// log p(x) = (n-1) log(sin|v|/|v|) + log det, the latter via the LU
/// factorization.
pub fn log_density(spec: &PotentialSpec, x: &SpherePoint) -> Result<f64, DensityError> {
    let parts = jacobian_parts(spec, x)?;
    let lu = parts.m.clone().lu();
    let log_det: f64 = (0..parts.m.nrows())
        .map(|i| lu.u()[(i, i)].abs().ln())
        .sum();
    let n = spec.sphere_dim() as f64;
    Ok((n - 1.0) * sinc(parts.v.norm()).ln() + log_det)
}

/// Lon/lat table of density values on S^2, the export format for figures.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    pub lons_deg: Vec<f64>,
    pub lats_deg: Vec<f64>,
    /// Row-major lat-then-lon: values[ilat * nlon + ilon].
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn value(&self, ilat: usize, ilon: usize) -> f64 {
        self.values[ilat * self.lons_deg.len() + ilon]
    }

    /// Header `lon_deg,lat_deg,density`, row-major lat-then-lon, 17
    /// significant digits.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lon_deg,lat_deg,density")?;
        for (ilat, lat) in self.lats_deg.iter().enumerate() {
            for (ilon, lon) in self.lons_deg.iter().enumerate() {
                writeln!(w, "{:.16e},{:.16e},{:.16e}", lon, lat, self.value(ilat, ilon))?;
            }
        }
        Ok(())
    }

    /// Grid average weighted by cos(lat); approximately 1 for a normalized
    /// density.
    pub fn cos_lat_weighted_mean(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (ilat, lat) in self.lats_deg.iter().enumerate() {
            let w = lat.to_radians().cos();
            for ilon in 0..self.lons_deg.len() {
                num += w * self.value(ilat, ilon);
                den += w;
            }
        }
        num / den
    }
}

/// Evaluates the density on a lon/lat grid: lat has `resolution + 1` rows
/// covering [-90, 90], lon has `2 * resolution` columns covering
/// [-180, 180) at the same spacing.
pub fn density_grid(spec: &PotentialSpec, resolution: usize) -> Result<DensityGrid, DensityError> {
    if spec.ambient_dim() != 3 {
        return Err(DensityError::Dimension {
            ambient_dim: spec.ambient_dim(),
        });
    }
    assert!(resolution >= 1, "resolution must be at least 1");
    let step = 180.0 / resolution as f64;
    let lats_deg: Vec<f64> = (0..=resolution).map(|j| -90.0 + step * j as f64).collect();
    let lons_deg: Vec<f64> = (0..2 * resolution)
        .map(|i| -180.0 + step * i as f64)
        .collect();
    let values = lats_deg
        .par_iter()
        .flat_map_iter(|&lat| {
            let lons = &lons_deg;
            lons.iter()
                .map(move |&lon| density(spec, &from_lon_lat_deg(lon, lat)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DensityGrid {
        lons_deg,
        lats_deg,
        values,
    })
}

/// Midpoint-rule average of the density over the band lat in
/// [lat_lo, lat_hi] (degrees), normalized against the uniform density. The
/// full sphere gives the normalization integral; a hemisphere gives its
/// probability mass times 2.
fn band_quadrature(
    spec: &PotentialSpec,
    resolution: usize,
    lat_lo: f64,
    lat_hi: f64,
) -> Result<(f64, f64), DensityError> {
    if spec.ambient_dim() != 3 {
        return Err(DensityError::Dimension {
            ambient_dim: spec.ambient_dim(),
        });
    }
    let nlat = resolution;
    let nlon = 2 * resolution;
    let dlat = (lat_hi - lat_lo) / nlat as f64;
    let dlon = 360.0 / nlon as f64;
    let mut mass = 0.0;
    let mut area = 0.0;
    for j in 0..nlat {
        let lat = lat_lo + (j as f64 + 0.5) * dlat;
        let w = lat.to_radians().cos();
        for i in 0..nlon {
            let lon = -180.0 + (i as f64 + 0.5) * dlon;
            mass += w * density(spec, &from_lon_lat_deg(lon, lat))?;
            area += w;
        }
    }
    let cell = dlat.to_radians() * dlon.to_radians();
    Ok((mass * cell, area * cell))
}

/// Quadrature of the density over the whole sphere divided by 4 pi;
/// approaches 1 as the resolution grows.
pub fn quadrature_mean(spec: &PotentialSpec, resolution: usize) -> Result<f64, DensityError> {
    let (mass, _) = band_quadrature(spec, resolution, -90.0, 90.0)?;
    Ok(mass / (4.0 * std::f64::consts::PI))
}

/// Probability mass of the northern hemisphere (third coordinate positive)
/// under the density, by cos-lat quadrature.
pub fn northern_hemisphere_mass(
    spec: &PotentialSpec,
    resolution: usize,
) -> Result<f64, DensityError> {
    let (mass, _) = band_quadrature(spec, resolution, 0.0, 90.0)?;
    Ok(mass / (4.0 * std::f64::consts::PI))
}
