//! Shared oracles for the integration suites.

use sgm_core::density::gradient_map;
use sgm_core::geometry::{exp_map, tangent_basis, SpherePoint};
use sgm_core::potential::PotentialSpec;

/// Finite-difference Jacobian determinant of the gradient map at x: central
/// differences of G along an orthonormal tangent frame at x, projected onto
/// a frame at G(x). Independent of the closed-form determinant route.
pub fn fd_jacobian_det(spec: &PotentialSpec, x: &SpherePoint, step: f64) -> f64 {
    let basis_x = tangent_basis(x);
    let y = gradient_map(spec, x);
    let basis_y = tangent_basis(&y);
    let n = basis_x.len();
    let jac = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let plus = gradient_map(spec, &exp_map(&basis_x[j].scaled(step)));
        let minus = gradient_map(spec, &exp_map(&basis_x[j].scaled(-step)));
        basis_y[i].vec().dot(&(plus.coords() - minus.coords())) / (2.0 * step)
    });
    jac.lu().determinant().abs()
}
