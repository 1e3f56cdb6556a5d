//! Gauss quadrature against the sphere-projection weight
//! `(1 - t²)^{(d-3)/2}` on `[-1, 1]`.

use statrs::function::gamma::ln_gamma;

use super::eigen::tridiagonal_first_components;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub dim: usize,
    pub node_count: usize,
}

impl QuadratureRule {
    /// `Σ w_i f(t_i)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// A composite rule made of one Gauss rule on `[-1, 0]` and its mirror
    /// on `[0, 1]`, each with `per_half` nodes, for integrands with a kink at
    /// the origin (ReLU and its derivative). On `[0, 1]` the factor
    /// `(1-t)^a` is absorbed into a Gauss–Jacobi rule; the remaining
    /// `(1+t)^a` is smooth there.
    pub fn split_at_zero(per_half: usize, d: usize) -> Result<Self> {
        check_dim(d)?;
        if per_half == 0 {
            return Err(Error::invalid("quadrature needs at least one node"));
        }
        let a = (d as f64 - 3.0) / 2.0;
        let (s, w) = gauss_jacobi(per_half, a, 0.0)?;
        let mut nodes = Vec::with_capacity(2 * per_half);
        let mut weights = Vec::with_capacity(2 * per_half);
        // t = (1+s)/2: (1-t)^a (1+t)^a dt = 2^{-1-a} (1-s)^a ((3+s)/2)^a ds.
        let jac = 0.5f64.powf(1.0 + a);
        for (&si, &wi) in s.iter().zip(&w) {
            let t = 0.5 * (1.0 + si);
            let wt = wi * jac * (0.5 * (3.0 + si)).powf(a);
            nodes.push(-t);
            weights.push(wt);
        }
        for (&si, &wi) in s.iter().zip(&w) {
            let t = 0.5 * (1.0 + si);
            nodes.push(t);
            weights.push(wi * jac * (0.5 * (3.0 + si)).powf(a));
        }
        Ok(Self {
            nodes,
            weights,
            dim: d,
            node_count: 2 * per_half,
        })
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::invalid(format!("quadrature dimension d={d} must be >= 2")));
    }
    Ok(())
}

/// `∫_{-1}^{1} (1-t²)^{(d-3)/2} dt = ω_{d-1} / ω_{d-2}`.
pub fn weight_total(d: usize) -> f64 {
    let d = d as f64;
    (ln_gamma(0.5) + ln_gamma((d - 1.0) / 2.0) - ln_gamma(d / 2.0)).exp()
}

/// Gauss rule with `node_count` nodes for the weight `(1-t²)^{(d-3)/2}`.
/// Exact for polynomials of degree up to `2 node_count - 1`.
///
/// `d = 2` gives the Chebyshev weight, whose nodes and weights are known in
/// closed form; other dimensions use the Golub–Welsch eigenvalue method.
pub fn gauss_jacobi_rule(node_count: usize, d: usize) -> Result<QuadratureRule> {
    check_dim(d)?;
    if node_count == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    let (nodes, weights) = if d == 2 {
        let n = node_count as f64;
        let nodes = (1..=node_count)
            .rev()
            .map(|j| ((2.0 * j as f64 - 1.0) * std::f64::consts::PI / (2.0 * n)).cos())
            .collect();
        (nodes, vec![std::f64::consts::PI / n; node_count])
    } else {
        let a = (d as f64 - 3.0) / 2.0;
        gauss_jacobi(node_count, a, a)?
    };
    Ok(QuadratureRule {
        nodes,
        weights,
        dim: d,
        node_count,
    })
}

/// Golub–Welsch nodes and weights for `(1-t)^α (1+t)^β` on `[-1, 1]`.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if alpha <= -1.0 || beta <= -1.0 {
        return Err(Error::invalid("Jacobi exponents must exceed -1"));
    }
    let ab = alpha + beta;
    let mut diag = Vec::with_capacity(n);
    let mut sub = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n {
        let kf = k as f64;
        let a_k = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            let s = 2.0 * kf + ab;
            (beta * beta - alpha * alpha) / (s * (s + 2.0))
        };
        diag.push(a_k);
        if k + 1 < n {
            let j = kf + 1.0;
            let b2 = if k == 0 {
                4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
            } else {
                let s = 2.0 * j + ab;
                4.0 * j * (j + alpha) * (j + beta) * (j + ab) / (s * s * (s + 1.0) * (s - 1.0))
            };
            sub.push(b2.sqrt());
        }
    }
    let mu0 = ((ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(ab + 2.0))
    .exp();
    let (nodes, first) = tridiagonal_first_components(&diag, &sub)
        .map_err(|e| Error::invalid(format!("quadrature construction failed: {e}")))?;
    let weights = first.iter().map(|v| mu0 * v * v).collect();
    Ok((nodes, weights))
}
