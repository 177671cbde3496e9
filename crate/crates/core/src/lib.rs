//! A statistical model on the unit sphere S^n: densities arise as Jacobian
//! determinants of gradient maps x -> exp_x(grad phi(x)) for admissible
//! potentials phi, giving closed-form normalized densities, exact sampling
//! by inverting the gradient map, concave maximum-likelihood fitting, and
//! AIC model selection.
//!
//! Modules, bottom up:
//! - [`geometry`]: sphere primitives in ambient coordinates.
//! - [`potential`]: cosine-profile potentials and admissibility.
//! - [`density`]: the gradient map, its Jacobian, and density grids.
//! - [`sampler`]: exact sampling via Riemannian descent.
//! - [`inference`]: likelihood, Frank-Wolfe MLE, AIC.
//! - [`verify`]: numerical witnesses of the structural inequalities the
//!   model depends on (c-convexity, Jacobian log-concavity, and friends).

pub mod density;
pub mod geometry;
pub mod inference;
pub mod potential;
pub mod sampler;
pub mod verify;
