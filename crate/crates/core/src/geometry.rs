//! Exact geometry of the unit sphere S^n embedded in ambient (n+1)-space:
//! geodesic distance, squared-distance cost, exponential and log maps,
//! c-segments, deterministic tangent frames and uniform sampling.
//!
//! Everything works in ambient Euclidean coordinates. Points are unit
//! vectors in R^{n+1}; tangent vectors are ambient vectors orthogonal to
//! their base point.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Points closer than this to the cut locus are treated as antipodal.
pub const ANTIPODE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("points are antipodal within tolerance: d(x, y) = {distance:.17}")]
    Antipodal { distance: f64 },
    #[error("cannot normalize a near-zero vector (norm = {norm:e})")]
    ZeroVector { norm: f64 },
    #[error("ambient dimension must be at least 2, got {dim}")]
    AmbientDim { dim: usize },
}

/// A point of S^n as a unit vector in R^{n+1}. Renormalized on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SpherePoint {
    coords: DVector<f64>,
}

impl SpherePoint {
    pub fn try_new(coords: DVector<f64>) -> Result<Self, GeometryError> {
        if coords.len() < 2 {
            return Err(GeometryError::AmbientDim { dim: coords.len() });
        }
        let norm = coords.norm();
        if norm < 1e-12 {
            return Err(GeometryError::ZeroVector { norm });
        }
        Ok(Self {
            coords: coords / norm,
        })
    }

    /// Panics on a zero vector or ambient dimension below 2.
    pub fn new(coords: DVector<f64>) -> Self {
        Self::try_new(coords).expect("valid sphere point")
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Self::new(DVector::from_row_slice(coords))
    }

    /// The i-th standard basis vector of the ambient space.
    pub fn standard_axis(ambient_dim: usize, axis: usize) -> Self {
        assert!(axis < ambient_dim, "axis out of range");
        let mut v = DVector::zeros(ambient_dim);
        v[axis] = 1.0;
        Self { coords: v }
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    /// Dimension of the ambient space, n + 1.
    pub fn ambient_dim(&self) -> usize {
        self.coords.len()
    }

    /// Dimension n of the sphere.
    pub fn sphere_dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.coords.dot(&other.coords)
    }

    pub fn antipode(&self) -> SpherePoint {
        SpherePoint {
            coords: -&self.coords,
        }
    }
}

/// Geodesic initial data: a base point and an ambient vector orthogonal to
/// it. The Euclidean norm of `vec` is the geodesic length in radians.
#[derive(Clone, Debug)]
pub struct TangentVector {
    base: SpherePoint,
    vec: DVector<f64>,
}

impl TangentVector {
    /// Projects out any component of `vec` along the base point, so the
    /// orthogonality invariant holds by construction.
    pub fn new(base: SpherePoint, vec: DVector<f64>) -> Self {
        assert_eq!(base.ambient_dim(), vec.len(), "dimension mismatch");
        let normal = base.coords().dot(&vec);
        let vec = vec - base.coords() * normal;
        Self { base, vec }
    }

    pub fn zero(base: SpherePoint) -> Self {
        let dim = base.ambient_dim();
        Self {
            base,
            vec: DVector::zeros(dim),
        }
    }

    pub fn base(&self) -> &SpherePoint {
        &self.base
    }

    pub fn vec(&self) -> &DVector<f64> {
        &self.vec
    }

    pub fn norm(&self) -> f64 {
        self.vec.norm()
    }

    pub fn scaled(&self, factor: f64) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            vec: &self.vec * factor,
        }
    }
}

/// An angle in [0, pi] (radians), as returned by `geodesic_distance`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct GeodesicAngle(f64);

impl GeodesicAngle {
    pub fn new(value: f64) -> Self {
        assert!(
            (0.0..=std::f64::consts::PI).contains(&value),
            "angle out of [0, pi]: {value}"
        );
        Self(value)
    }

    pub fn radians(&self) -> f64 {
        self.0
    }
}

/// d(x, y) = arccos(x . y). Near 0 and pi the arccos form loses half the
/// significant digits (arccos(1 - eps) ~ sqrt(2 eps)), so those ranges use
/// the chord instead; identical inputs give exactly 0.
pub fn geodesic_distance(x: &SpherePoint, y: &SpherePoint) -> GeodesicAngle {
    let dot = x.dot(y);
    let d = if dot >= 0.5 {
        let chord = (x.coords() - y.coords()).norm();
        2.0 * (0.5 * chord).clamp(0.0, 1.0).asin()
    } else if dot <= -0.5 {
        let chord = (x.coords() + y.coords()).norm();
        std::f64::consts::PI - 2.0 * (0.5 * chord).clamp(0.0, 1.0).asin()
    } else {
        dot.acos()
    };
    GeodesicAngle(d)
}

/// c(x, y) = d(x, y)^2 / 2.
pub fn cost(x: &SpherePoint, y: &SpherePoint) -> f64 {
    let d = geodesic_distance(x, y).radians();
    0.5 * d * d
}

/// exp_x(v) = cos|v| x + sin|v| v/|v|; returns the base point when |v| = 0.
pub fn exp_map(v: &TangentVector) -> SpherePoint {
    let t = v.norm();
    if t == 0.0 {
        return v.base().clone();
    }
    let coords = v.base().coords() * t.cos() + v.vec() * (t.sin() / t);
    SpherePoint::new(coords)
}

/// Inverse of the exponential map: the tangent vector at `x` pointing to
/// `y` with length d(x, y). Fails loudly near the cut locus.
pub fn log_map(x: &SpherePoint, y: &SpherePoint) -> Result<TangentVector, GeometryError> {
    let d = geodesic_distance(x, y).radians();
    if d >= std::f64::consts::PI - ANTIPODE_EPS {
        return Err(GeometryError::Antipodal { distance: d });
    }
    // Tangential part of y at x; vanishes only when y = x.
    let w = y.coords() - x.coords() * x.dot(y);
    let wn = w.norm();
    if wn < 1e-300 {
        return Ok(TangentVector::zero(x.clone()));
    }
    Ok(TangentVector {
        base: x.clone(),
        vec: w * (d / wn),
    })
}

/// The c-segment [y0, y1]_t(z) = exp_z((1-t) log_z(y0) + t log_z(y1)).
/// Endpoints are returned exactly.
pub fn c_segment(
    y0: &SpherePoint,
    y1: &SpherePoint,
    z: &SpherePoint,
    t: f64,
) -> Result<SpherePoint, GeometryError> {
    let v0 = log_map(z, y0)?;
    let v1 = log_map(z, y1)?;
    if t == 0.0 {
        return Ok(y0.clone());
    }
    if t == 1.0 {
        return Ok(y1.clone());
    }
    let vec = v0.vec() * (1.0 - t) + v1.vec() * t;
    Ok(exp_map(&TangentVector {
        base: z.clone(),
        vec,
    }))
}

/// A deterministic orthonormal basis of the tangent space at `x`, built by
/// Gram-Schmidt on the ambient standard basis, skipping the axis most
/// aligned with `x`.
pub fn tangent_basis(x: &SpherePoint) -> Vec<TangentVector> {
    let dim = x.ambient_dim();
    let skip = x
        .coords()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(dim - 1);
    for axis in 0..dim {
        if axis == skip {
            continue;
        }
        let mut v = DVector::zeros(dim);
        v[axis] = 1.0;
        v -= x.coords() * x.coords()[axis];
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        debug_assert!(norm > 1e-8, "degenerate tangent basis");
        basis.push(v / norm);
    }
    basis
        .into_iter()
        .map(|vec| TangentVector {
            base: x.clone(),
            vec,
        })
        .collect()
}

/// A uniform point of S^{ambient_dim - 1}: a normalized standard Gaussian
/// sample in the ambient space.
pub fn uniform_sample<R: Rng + ?Sized>(ambient_dim: usize, rng: &mut R) -> SpherePoint {
    assert!(ambient_dim >= 2, "ambient dimension must be at least 2");
    loop {
        let coords = DVector::from_fn(ambient_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        if coords.norm() > 1e-8 {
            return SpherePoint::new(coords);
        }
    }
}

/// Geographic degrees to a point of S^2: lat positive north, lon positive
/// east, x = (cos lat cos lon, cos lat sin lon, sin lat).
pub fn from_lon_lat_deg(lon_deg: f64, lat_deg: f64) -> SpherePoint {
    let lon = lon_deg.to_radians();
    let lat = lat_deg.to_radians();
    SpherePoint::from_slice(&[
        lat.cos() * lon.cos(),
        lat.cos() * lon.sin(),
        lat.sin(),
    ])
}

/// Inverse of `from_lon_lat_deg`; lon in [-180, 180), lat in [-90, 90].
pub fn to_lon_lat_deg(x: &SpherePoint) -> (f64, f64) {
    assert_eq!(x.ambient_dim(), 3, "lon/lat is defined on S^2 only");
    let c = x.coords();
    let lat = c[2].clamp(-1.0, 1.0).asin().to_degrees();
    let mut lon = c[1].atan2(c[0]).to_degrees();
    if lon >= 180.0 {
        lon -= 360.0;
    }
    (lon, lat)
}
