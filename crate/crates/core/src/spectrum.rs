//! Spectra of NTK integral operators on the uniform sphere.
//!
//! Two routes: the empirical one (eigenvalues of `Gram / n` on a sample
//! cloud) and the analytic one via Funk–Hecke, where each degree-`k`
//! harmonic block is an eigenspace and the eigenvalue is a combination of
//! squared Legendre coefficients of `σ` and `σ'`.

use std::sync::Arc;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::activation::ActivationSpec;
use crate::kernel::{gram_matrix, Component, KernelSpec};
use crate::numerics::{
    gauss_jacobi_rule, gegenbauer_all, multiplicity, sample_sphere, surface_ratio, sym_eigen,
    sym_eigenvalues, QuadratureRule, SeededRng,
};
use crate::{Error, Result};

/// Which eigenvectors to keep from an empirical decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorPolicy {
    None,
    Top(usize),
    All,
}

#[derive(Clone, Debug)]
pub struct SpectrumEstimate {
    /// Eigenvalues of `Gram / n`, descending, negatives clipped to 0.
    pub eigenvalues: Vec<f64>,
    /// `n x k` orthonormal columns matching the leading eigenvalues.
    pub eigenvectors: Option<Array2<f64>>,
    pub sample_points: Arc<Array2<f64>>,
    pub kernel: KernelSpec,
    pub n: usize,
    /// `trace(Gram) / n`, before clipping.
    pub trace: f64,
}

impl SpectrumEstimate {
    pub fn dim(&self) -> usize {
        self.sample_points.ncols()
    }

    /// `1e-10 λ₁`.
    pub fn floor(&self) -> f64 {
        EIGEN_FLOOR_REL * self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn vector_count(&self) -> usize {
        self.eigenvectors.as_ref().map_or(0, |v| v.ncols())
    }
}

/// Eigenvalues below this fraction of the largest are treated as unresolved.
pub const EIGEN_FLOOR_REL: f64 = 1e-10;

/// Samples `n` uniform points on `S^{d-1}` and decomposes `Gram / n`.
pub fn empirical_spectrum(
    kernel: &KernelSpec,
    n: usize,
    d: usize,
    rng: &mut SeededRng,
    vectors: VectorPolicy,
) -> Result<SpectrumEstimate> {
    if n < 2 {
        return Err(Error::invalid(format!("empirical spectrum needs n >= 2 (got {n})")));
    }
    let points = Arc::new(sample_sphere(rng, d, n)?);
    spectrum_from_points(kernel, points, vectors)
}

/// Same as [`empirical_spectrum`] on a caller-supplied cloud, so several
/// operators can share one set of points.
pub fn spectrum_from_points(
    kernel: &KernelSpec,
    points: Arc<Array2<f64>>,
    vectors: VectorPolicy,
) -> Result<SpectrumEstimate> {
    let n = points.nrows();
    let mut gram = gram_matrix(kernel, &points)?;
    gram.mapv_inplace(|v| v / n as f64);
    let trace = gram.diag().sum();
    let (mut eigenvalues, eigenvectors) = match vectors {
        VectorPolicy::None => (sym_eigenvalues(&gram)?, None),
        VectorPolicy::Top(_) | VectorPolicy::All => {
            let dec = sym_eigen(&gram)?;
            let keep = match vectors {
                VectorPolicy::Top(k) => k.min(n),
                _ => n,
            };
            let vecs = dec.eigenvectors.slice(s![.., ..keep]).to_owned();
            (dec.eigenvalues, Some(vecs))
        }
    };
    for v in eigenvalues.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(SpectrumEstimate {
        eigenvalues,
        eigenvectors,
        sample_points: points,
        kernel: kernel.clone(),
        n,
        trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DegreeEigenvalue {
    pub degree: usize,
    /// `λ̂_{∞,k}` of the full kernel.
    pub value: f64,
    /// Output-layer part `λ̂^{(1)}_k`.
    pub output: f64,
    /// Input-layer part `R² (γ² λ̂^{(2)}_k + ...)`.
    pub input: f64,
    pub multiplicity: f64,
    /// Bound on the floating-point rounding error of `value`.
    pub rounding: f64,
}

impl DegreeEigenvalue {
    pub fn component(&self, c: Component) -> f64 {
        match c {
            Component::Full => self.value,
            Component::OutputLayer => self.output,
            Component::InputLayer => self.input,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnalyticSpectrum {
    pub per_degree: Vec<DegreeEigenvalue>,
    /// Legendre coefficients of `σ`, degrees `0..=k_max`.
    pub mu1: Vec<f64>,
    /// Legendre coefficients of `σ'`, degrees `0..=k_max + 1`.
    pub mu2: Vec<f64>,
    pub d: usize,
    pub k_max: usize,
    pub activation: ActivationSpec,
    pub gamma: f64,
    pub r_scale: f64,
    pub quad_nodes: usize,
}

pub const DEFAULT_K_MAX: usize = 60;
pub const DEFAULT_QUAD_NODES: usize = 256;
const UNDERFLOW: f64 = 1e-300;
/// A computed coefficient smaller than this many rounding units of the
/// quadrature sum is indistinguishable from zero and is reported as 0.
const RESOLUTION_ULPS: f64 = 64.0;
/// Rounding units per unit of `Σ|terms|` assumed for a quadrature sum
/// (node, weight, activation and recurrence errors combined).
const ROUNDING_ULPS: f64 = 16.0;

/// Per-degree NTK eigenvalues on `S^{d-1}`.
///
/// `μ^{(1)}_k = (ω_{d-2}/ω_{d-1}) ∫ σ(t) P_k(t) (1-t²)^{(d-3)/2} dt`, and
/// `μ^{(2)}_k` the same with `σ'`. With `λ^{(j)} = (μ^{(j)})²`,
///
/// ```text
/// λ_k = λ^{(1)}_k + R² [γ² λ^{(2)}_k + k/(2k+d-2) λ^{(2)}_{k-1}
///                       + (k+d-2)/(2k+d-2) λ^{(2)}_{k+1}]
/// ```
///
/// where the bracket comes from `t P_k = k/(2k+d-2) P_{k-1} + (k+d-2)/(2k+d-2)
/// P_{k+1}` (the first term vanishes at `k = 0`). ReLU integrals use a
/// rule split at the kink.
pub fn analytic_ntk_spectrum(
    activation: &ActivationSpec,
    d: usize,
    gamma: f64,
    r_scale: f64,
    k_max: usize,
    quad_nodes: usize,
) -> Result<AnalyticSpectrum> {
    if d < 2 {
        return Err(Error::invalid(format!("dimension d={d} must be >= 2")));
    }
    if quad_nodes < k_max + 2 {
        return Err(Error::invalid(format!(
            "quad_nodes={quad_nodes} must be at least k_max + 2 = {}",
            k_max + 2
        )));
    }
    let rule = if activation.is_relu() {
        QuadratureRule::split_at_zero(quad_nodes, d)?
    } else {
        gauss_jacobi_rule(quad_nodes, d)?
    };
    let ratio = surface_ratio(d);
    let top = k_max + 1;
    // Per node: all P_k(t) up to k_max + 1.
    let table: Vec<Vec<f64>> = rule
        .nodes
        .par_iter()
        .map(|&t| gegenbauer_all(top, d, t))
        .collect();
    let vals: Vec<(f64, f64)> = rule
        .nodes
        .iter()
        .map(|&t| activation.value_and_grad(t))
        .collect();
    // (coefficient, rounding bound); sub-resolution coefficients are 0.
    // Recurrence errors in P_k grow about linearly in k.
    let coeff = |k: usize, pick: fn(&(f64, f64)) -> f64| -> (f64, f64) {
        let unit = ROUNDING_ULPS * f64::EPSILON * (k + 1) as f64;
        let mut sum = 0.0;
        let mut abs = 0.0;
        for ((w, p), v) in rule.weights.iter().zip(&table).zip(&vals) {
            let term = w * pick(v) * p[k];
            sum += term;
            abs += term.abs();
        }
        if sum.abs() <= RESOLUTION_ULPS * f64::EPSILON * abs {
            (0.0, ratio * unit * abs)
        } else {
            (ratio * sum, ratio * unit * abs)
        }
    };
    let (mu1, e1): (Vec<f64>, Vec<f64>) = (0..=k_max).map(|k| coeff(k, |v| v.0)).unzip();
    let (mu2, e2): (Vec<f64>, Vec<f64>) = (0..=top).map(|k| coeff(k, |v| v.1)).unzip();
    let l2: Vec<f64> = mu2.iter().map(|m| m * m).collect();
    // Error of a square: |(μ+e)² - μ²| ≤ 2|μ|e + e².
    let sq_err = |m: f64, e: f64| 2.0 * m.abs() * e + e * e;
    let l2_err: Vec<f64> = mu2.iter().zip(&e2).map(|(&m, &e)| sq_err(m, e)).collect();
    let r2 = r_scale * r_scale;
    let g2 = gamma * gamma;
    let df = d as f64;
    let mut per_degree = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let kf = k as f64;
        let denom = 2.0 * kf + df - 2.0;
        let (down, up) = if k == 0 {
            (0.0, 1.0)
        } else {
            (kf / denom, (kf + df - 2.0) / denom)
        };
        let below = if k == 0 { 0.0 } else { l2[k - 1] };
        let output = mu1[k] * mu1[k];
        let input = r2 * (g2 * l2[k] + down * below + up * l2[k + 1]);
        let value = output + input;
        let below_err = if k == 0 { 0.0 } else { l2_err[k - 1] };
        let rounding = sq_err(mu1[k], e1[k])
            + r2 * (g2 * l2_err[k] + down * below_err + up * l2_err[k + 1]);
        if value < UNDERFLOW {
            break;
        }
        per_degree.push(DegreeEigenvalue {
            degree: k,
            value,
            output,
            input,
            multiplicity: multiplicity(d, k),
            rounding,
        });
    }
    Ok(AnalyticSpectrum {
        per_degree,
        mu1,
        mu2,
        d,
        k_max,
        activation: *activation,
        gamma,
        r_scale,
        quad_nodes,
    })
}

/// The full-kernel eigenvalues with each degree repeated `N(d, k)` times,
/// sorted descending.
pub fn expand_with_multiplicity(spec: &AnalyticSpectrum) -> Vec<f64> {
    expand_component(spec, Component::Full, None)
}

/// Expanded list for one kernel component, optionally truncated to
/// `max_len`. Degrees are placed in order of value, so the truncated prefix
/// is exact even when later blocks are huge (large `d`).
pub fn expand_component(
    spec: &AnalyticSpectrum,
    component: Component,
    max_len: Option<usize>,
) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize, f64)> = spec
        .per_degree
        .iter()
        .map(|e| (e.component(component), e.degree, e.multiplicity))
        .collect();
    blocks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let cap = max_len.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for (v, _, mult) in blocks {
        if out.len() >= cap {
            break;
        }
        let take = (mult as usize).min(cap - out.len());
        out.extend(std::iter::repeat_n(v, take));
    }
    out
}

/// Rows `(degree, eigenvalue, multiplicity, cumulative_index)` in degree
/// order, where the cumulative index is `Σ_{j ≤ k} N(d, j)`.
pub fn analytic_rows(spec: &AnalyticSpectrum, component: Component) -> Vec<(usize, f64, f64, f64)> {
    let mut cum = 0.0;
    spec.per_degree
        .iter()
        .map(|e| {
            cum += e.multiplicity;
            (e.degree, e.component(component), e.multiplicity, cum)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub beta_hat: f64,
    pub r2: f64,
}

/// Least-squares slope of `log λ_i` against `log i` over the 1-based
/// inclusive range `[lo, hi]`; `beta_hat` is minus the slope.
pub fn fit_decay(eigenvalues: &[f64], lo: usize, hi: usize) -> Result<DecayFit> {
    if lo < 1 || hi <= lo {
        return Err(Error::invalid(format!("fit range [{lo}, {hi}] needs 1 <= lo < hi")));
    }
    if hi > eigenvalues.len() {
        return Err(Error::invalid(format!(
            "fit range ends at {hi} but only {} eigenvalues are available",
            eigenvalues.len()
        )));
    }
    let mut xs = Vec::with_capacity(hi - lo + 1);
    let mut ys = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let v = eigenvalues[i - 1];
        if !(v > 0.0) {
            return Err(Error::invalid(format!(
                "eigenvalue {v:e} at index {i} is not positive; cannot fit a power law"
            )));
        }
        xs.push((i as f64).ln());
        ys.push(v.ln());
    }
    let (slope, r2) = least_squares(&xs, &ys, None);
    Ok(DecayFit {
        beta_hat: -slope,
        r2,
    })
}

/// Weighted least-squares slope and coefficient of determination. With no
/// variation in `y`, `r2` is reported as 1.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> (f64, f64) {
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..xs.len()).map(w).sum();
    let mx = (0..xs.len()).map(|i| w(i) * xs[i]).sum::<f64>() / sw;
    let my = (0..xs.len()).map(|i| w(i) * ys[i]).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..xs.len() {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxx += w(i) * dx * dx;
        sxy += w(i) * dx * dy;
        syy += w(i) * dy * dy;
    }
    let slope = sxy / sxx;
    let r2 = if syy <= 1e-300 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).min(1.0)
    };
    (slope, r2)
}

/// Rank-matched relative errors `|λ_emp - λ_ana| / λ_ana` for the top
/// `top_k` eigenvalues, expanding the analytic spectrum for the empirical
/// kernel's component.
pub fn compare_spectra(
    analytic: &AnalyticSpectrum,
    empirical: &SpectrumEstimate,
    top_k: usize,
) -> Result<Vec<f64>> {
    let ana = expand_component(analytic, empirical.kernel.component, Some(top_k));
    if top_k > ana.len() || top_k > empirical.eigenvalues.len() {
        return Err(Error::invalid(format!(
            "top_k={top_k} exceeds available eigenvalues ({} analytic, {} empirical)",
            ana.len(),
            empirical.eigenvalues.len()
        )));
    }
    Ok(ana
        .iter()
        .zip(&empirical.eigenvalues)
        .map(|(a, e)| (e - a).abs() / a)
        .collect())
}

/// For the first `blocks` degree blocks in value order, the ratio of the
/// largest to the smallest empirical eigenvalue occupying that block's
/// ranks.
pub fn block_spread(analytic: &AnalyticSpectrum, empirical: &[f64], component: Component, blocks: usize) -> Vec<f64> {
    let mut order: Vec<&DegreeEigenvalue> = analytic.per_degree.iter().collect();
    order.sort_by(|a, b| b.component(component).total_cmp(&a.component(component)));
    let mut start = 0usize;
    let mut out = Vec::new();
    for e in order.into_iter().take(blocks) {
        let len = e.multiplicity as usize;
        let end = (start + len).min(empirical.len());
        if start >= end {
            break;
        }
        let seg = &empirical[start..end];
        let max = seg.iter().cloned().fold(f64::MIN, f64::max);
        let min = seg.iter().cloned().fold(f64::MAX, f64::min);
        out.push(max / min);
        start = end;
    }
    out
}
