//! Numerical substrate: seeded randomness, sphere sampling, Gegenbauer
//! polynomials, Gauss–Jacobi quadrature, and dense symmetric eigensolvers.

mod eigen;
mod gegenbauer;
mod quadrature;
mod rng;
mod sphere;

pub use eigen::{
    jacobi_eigen, sym_eigen, sym_eigenvalues, tridiagonal_first_components, EigenDecomposition,
};
pub use gegenbauer::{gegenbauer_all, gegenbauer_eval, multiplicity};
pub use quadrature::{gauss_jacobi, gauss_jacobi_rule, weight_total, QuadratureRule};
pub use rng::{mix, streams, SeededRng};
pub use sphere::{sample_sphere, surface_ratio};

/// Euclidean inner product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
