//! Legendre polynomials of dimension `d` (Gegenbauer polynomials normalized
//! so that `P_k(1) = 1`) and spherical-harmonic multiplicities.

/// Evaluates `P_k(t)` in dimension `d` using the three-term recurrence
/// `P_{k+1} = ((2k+d-2) t P_k - k P_{k-1}) / (k+d-2)` from `P_0 = 1`,
/// `P_1 = t`.
pub fn gegenbauer_eval(k: usize, d: usize, t: f64) -> f64 {
    debug_assert!(d >= 2);
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = t;
    for j in 1..k {
        let (jf, df) = (j as f64, d as f64);
        let next = ((2.0 * jf + df - 2.0) * t * cur - jf * prev) / (jf + df - 2.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// All of `P_0(t), ..., P_{k_max}(t)` in one pass.
pub fn gegenbauer_all(k_max: usize, d: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(1.0);
    if k_max == 0 {
        return out;
    }
    out.push(t);
    let df = d as f64;
    for j in 1..k_max {
        let jf = j as f64;
        let next = ((2.0 * jf + df - 2.0) * t * out[j] - jf * out[j - 1]) / (jf + df - 2.0);
        out.push(next);
    }
    out
}

/// `N(d, k)`: the dimension of degree-`k` spherical harmonics on `S^{d-1}`,
/// `((2k+d-2)/k) C(k+d-3, d-2)` for `k >= 1` and `1` for `k = 0`.
pub fn multiplicity(d: usize, k: usize) -> f64 {
    assert!(d >= 2, "multiplicity needs d >= 2");
    if k == 0 {
        return 1.0;
    }
    // C(k+d-3, d-2) as a running product.
    let mut binom = 1.0;
    for i in 1..=(d - 2) {
        binom *= (k + i - 1) as f64 / i as f64;
    }
    let value = (2 * k + d - 2) as f64 / k as f64 * binom;
    value.round().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rodrigues' formula for odd d, where the differentiated factor
    /// `(1-t²)^{k+(d-3)/2}` is a polynomial. Exact polynomial arithmetic,
    /// independent of the recurrence.
    fn rodrigues(k: usize, d: usize, t: f64) -> f64 {
        assert!(d % 2 == 1);
        let m = k + (d - 3) / 2;
        // (1 - t²)^m expanded: coefficient of t^{2j} is C(m, j) (-1)^j.
        let mut coeffs = vec![0.0; 2 * m + 1];
        let mut c = 1.0;
        for j in 0..=m {
            coeffs[2 * j] = if j % 2 == 0 { c } else { -c };
            c = c * (m - j) as f64 / (j + 1) as f64;
        }
        for _ in 0..k {
            let diff: Vec<f64> = (1..coeffs.len()).map(|p| coeffs[p] * p as f64).collect();
            coeffs = if diff.is_empty() { vec![0.0] } else { diff };
        }
        let deriv: f64 = coeffs.iter().rev().fold(0.0, |acc, &a| acc * t + a);
        let half = (d as f64 - 1.0) / 2.0;
        // Γ(half) / Γ(k + half) = 1 / ((half)(half+1)...(half+k-1)).
        let ratio: f64 = (0..k).map(|i| 1.0 / (half + i as f64)).product();
        let pow = (1.0 - t * t).powf((3.0 - d as f64) / 2.0);
        (-0.5f64).powi(k as i32) * ratio * pow * deriv
    }

    #[test]
    fn base_cases() {
        assert_eq!(gegenbauer_eval(0, 5, 0.3), 1.0);
        assert_eq!(gegenbauer_eval(1, 5, 0.3), 0.3);
        assert!((gegenbauer_eval(7, 4, 1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unit_at_one_all_dims() {
        for d in 2..=12 {
            for k in 0..=30 {
                assert!((gegenbauer_eval(k, d, 1.0) - 1.0).abs() < 1e-12, "d={d} k={k}");
            }
        }
    }

    #[test]
    fn matches_rodrigues_low_degree() {
        for &d in &[3usize, 5, 7] {
            for k in 0..=5 {
                for &t in &[-0.9, -0.4, 0.0, 0.3, 0.77] {
                    let a = gegenbauer_eval(k, d, t);
                    let b = rodrigues(k, d, t);
                    assert!((a - b).abs() < 1e-12, "d={d} k={k} t={t}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn d2_is_chebyshev_d3_is_legendre() {
        for &t in &[-0.8f64, 0.1, 0.65] {
            assert!((gegenbauer_eval(5, 2, t) - (5.0 * t.acos()).cos()).abs() < 1e-12);
            let legendre3 = 0.5 * (5.0 * t.powi(3) - 3.0 * t);
            assert!((gegenbauer_eval(3, 3, t) - legendre3).abs() < 1e-12);
        }
    }

    #[test]
    fn all_matches_single() {
        let all = gegenbauer_all(20, 6, 0.42);
        for (k, v) in all.iter().enumerate() {
            assert_eq!(*v, gegenbauer_eval(k, 6, 0.42));
        }
    }

    #[test]
    fn multiplicity_small_cases() {
        for k in 0..10 {
            assert_eq!(multiplicity(3, k), (2 * k + 1) as f64);
        }
        assert_eq!(multiplicity(3, 2), 5.0);
        for k in 1..10 {
            assert_eq!(multiplicity(2, k), 2.0);
        }
    }

    #[test]
    fn multiplicity_lifts_one_dimension() {
        // 1 + Σ_{j≤k} N(d, j) = N(d+1, k).
        for &d in &[2usize, 3, 5] {
            let mut cum = 1.0;
            for k in 1..=20 {
                cum += multiplicity(d, k);
                assert_eq!(cum, multiplicity(d + 1, k), "d={d} k={k}");
            }
        }
    }
}
