//! Uniform sampling on the unit sphere and sphere-geometry constants.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::SeededRng;
use crate::{Error, Result};

/// Draws `n` points uniformly on `S^{d-1}` (rows of the returned `n x d`
/// array) by normalizing standard Gaussian vectors.
pub fn sample_sphere(rng: &mut SeededRng, d: usize, n: usize) -> Result<Array2<f64>> {
    if d < 2 {
        return Err(Error::invalid(format!("sphere dimension d={d} must be >= 2")));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        loop {
            let mut sq = 0.0;
            for v in row.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *v = g;
                sq += g * g;
            }
            if sq > 1e-300 {
                let inv = 1.0 / sq.sqrt();
                row.mapv_inplace(|v| v * inv);
                break;
            }
        }
    }
    Ok(out)
}

/// `ω_{d-2} / ω_{d-1}`, the ratio of surface areas of `S^{d-2}` and
/// `S^{d-1}` with `ω_{m-1} = 2π^{m/2} / Γ(m/2)`.
///
/// This is the normalization turning `(1-t²)^{(d-3)/2} dt` on `[-1, 1]`
/// into the law of `⟨x, e⟩` for `x` uniform on the sphere.
pub fn surface_ratio(d: usize) -> f64 {
    assert!(d >= 2, "surface_ratio needs d >= 2");
    let d = d as f64;
    (ln_gamma(d / 2.0) - ln_gamma((d - 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_norms() {
        let mut rng = SeededRng::new(7, 0);
        let pts = sample_sphere(&mut rng, 3, 100).unwrap();
        for row in pts.rows() {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_vector_small() {
        let mut rng = SeededRng::new(7, 0);
        let pts = sample_sphere(&mut rng, 3, 100_000).unwrap();
        let mean = pts.mean_axis(ndarray::Axis(0)).unwrap();
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        // CLT scale: each coordinate has variance 1/d, so |mean| ~ sqrt(1/n) ≈ 0.003.
        assert!(norm < 0.02, "mean norm {norm}");
    }

    #[test]
    fn half_space_fraction_d2() {
        let mut rng = SeededRng::new(7, 0);
        let pts = sample_sphere(&mut rng, 2, 100_000).unwrap();
        let frac = pts.column(0).iter().filter(|&&v| v > 0.0).count() as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn rejects_degenerate_dimension() {
        let mut rng = SeededRng::new(7, 0);
        assert!(sample_sphere(&mut rng, 1, 10).is_err());
        assert!(sample_sphere(&mut rng, 3, 0).is_err());
    }

    #[test]
    fn bitwise_reproducible() {
        let a = sample_sphere(&mut SeededRng::new(11, 2), 5, 50).unwrap();
        let b = sample_sphere(&mut SeededRng::new(11, 2), 5, 50).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn surface_ratio_small_dimensions() {
        assert!((surface_ratio(3) - 0.5).abs() < 1e-14);
        assert!((surface_ratio(2) - 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn surface_ratio_d10_exact_gamma() {
        // Γ(5) = 24, Γ(9/2) = (7/2)(5/2)(3/2)(1/2)√π.
        let gamma_4_5 = 3.5 * 2.5 * 1.5 * 0.5 * PI.sqrt();
        let exact = 24.0 / (gamma_4_5 * PI.sqrt());
        assert!((surface_ratio(10) - exact).abs() < 1e-12);
    }
}
