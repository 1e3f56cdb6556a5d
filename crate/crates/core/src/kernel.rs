//! NTK evaluation: the random-feature kernel `k_M`, closed-form ReLU kernels
//! on the sphere, Monte Carlo estimates, Gram matrices, and the degree of
//! freedom `tr Σ(Σ + λI)^{-1}`.
//!
//! All modes share one convention: the input-layer component carries
//! `R² (xᵀx' + γ²)`, so `k = k_a + k_b` with
//!
//! ```text
//! k_a(x, x') = E_b[σ(bᵀx) σ(bᵀx')]
//! k_b(x, x') = R² (xᵀx' + γ²) E_b[σ'(bᵀx) σ'(bᵀx')]
//! ```
//!
//! with `b` uniform on the sphere.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::model::NetworkParams;
use crate::numerics::{dot, sample_sphere, SeededRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// `k_a + k_b`.
    Full,
    /// `k_a`, the kernel of training the output weights only.
    OutputLayer,
    /// `k_b`, the kernel of training input weights and biases only.
    InputLayer,
}

impl Component {
    pub fn name(&self) -> &'static str {
        match self {
            Component::Full => "full",
            Component::OutputLayer => "output",
            Component::InputLayer => "input",
        }
    }

    fn weights(&self) -> (f64, f64) {
        match self {
            Component::Full => (1.0, 1.0),
            Component::OutputLayer => (1.0, 0.0),
            Component::InputLayer => (0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub enum KernelMode {
    /// `k_M` from the frozen features of a symmetric initialization.
    RandomFeature(Arc<NetworkParams>),
    /// Arc-cosine identities rescaled to the uniform sphere. ReLU only,
    /// unit-norm inputs only.
    ClosedFormRelu,
    /// Sample average over a fixed set of sphere directions (one per row).
    MonteCarlo(Arc<Array2<f64>>),
}

#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub component: Component,
    pub mode: KernelMode,
    pub activation: ActivationSpec,
    pub gamma: f64,
    pub r_scale: f64,
}

const SPHERE_TOL: f64 = 1e-9;

impl KernelSpec {
    pub fn random_feature(
        init: Arc<NetworkParams>,
        activation: ActivationSpec,
        component: Component,
    ) -> Result<Self> {
        if !init.is_symmetric_init() {
            return Err(Error::invalid("random-feature kernel needs a symmetric initialization"));
        }
        Ok(Self {
            component,
            gamma: init.gamma,
            r_scale: init.r_scale,
            mode: KernelMode::RandomFeature(init),
            activation,
        })
    }

    pub fn closed_form_relu(component: Component, gamma: f64, r_scale: f64) -> Self {
        Self {
            component,
            mode: KernelMode::ClosedFormRelu,
            activation: ActivationSpec::relu(),
            gamma,
            r_scale,
        }
    }

    /// Draws `samples` fresh directions once; every evaluation reuses them,
    /// so the estimate is an exactly symmetric kernel.
    pub fn monte_carlo(
        component: Component,
        activation: ActivationSpec,
        gamma: f64,
        r_scale: f64,
        d: usize,
        samples: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid("Monte Carlo kernel needs samples >= 1"));
        }
        let dirs = sample_sphere(rng, d, samples)?;
        Ok(Self {
            component,
            mode: KernelMode::MonteCarlo(Arc::new(dirs)),
            activation,
            gamma,
            r_scale,
        })
    }

    pub fn with_component(&self, component: Component) -> Self {
        Self {
            component,
            ..self.clone()
        }
    }

    /// Input dimension, when the mode fixes one.
    pub fn dim(&self) -> Option<usize> {
        match &self.mode {
            KernelMode::RandomFeature(p) => Some(p.dim()),
            KernelMode::MonteCarlo(dirs) => Some(dirs.ncols()),
            KernelMode::ClosedFormRelu => None,
        }
    }

    /// Short identifier for file names and fingerprints.
    pub fn label(&self) -> String {
        let mode = match &self.mode {
            KernelMode::RandomFeature(p) => format!("rf{}", p.width()),
            KernelMode::ClosedFormRelu => "closed".into(),
            KernelMode::MonteCarlo(d) => format!("mc{}", d.nrows()),
        };
        format!("{}-{}-{}", self.component.name(), mode, self.activation.label())
    }

    fn validate_pair(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        if let Some(d) = self.dim() {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
        }
        if let KernelMode::ClosedFormRelu = self.mode {
            if !self.activation.is_relu() {
                return Err(Error::invalid("closed-form kernel is only defined for ReLU"));
            }
            for p in [x, y] {
                let n = dot(p, p).sqrt();
                if (n - 1.0).abs() > SPHERE_TOL {
                    return Err(Error::invalid(format!(
                        "closed-form ReLU kernel needs unit-norm inputs (norm {n})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `k(x, x')` for the given spec.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate_pair(x, y)?;
    Ok(eval_unchecked(spec, x, y))
}

/// Closed-form `(k_a, k_b / (R²(cosθ + γ²)))` pieces of the ReLU NTK:
/// `k_a = (sinθ + (π-θ)cosθ) / (2πd)` and `(π-θ) / (2π)`.
fn relu_closed_pieces(cos: f64, d: usize) -> (f64, f64) {
    let cos = cos.clamp(-1.0, 1.0);
    let theta = cos.acos();
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let ka = (sin + (PI - theta) * cos) / (2.0 * PI * d as f64);
    let k0 = (PI - theta) / (2.0 * PI);
    (ka, k0)
}

pub(crate) fn eval_unchecked(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    let (wa, wb) = spec.component.weights();
    let xy = dot(x, y);
    match &spec.mode {
        KernelMode::ClosedFormRelu => {
            let (ka, k0) = relu_closed_pieces(xy, x.len());
            let kb = spec.r_scale * spec.r_scale * (xy + spec.gamma * spec.gamma) * k0;
            wa * ka + wb * kb
        }
        KernelMode::RandomFeature(p) => {
            let act = &spec.activation;
            let (mut sa, mut sb) = (0.0, 0.0);
            for (r, br) in p.b.rows().into_iter().enumerate() {
                let br = br.as_slice().expect("standard layout");
                let shift = p.gamma * p.c[r];
                let (u, up) = act.value_and_grad(dot(br, x) + shift);
                let (v, vp) = act.value_and_grad(dot(br, y) + shift);
                sa += u * v;
                sb += p.a[r] * p.a[r] * up * vp;
            }
            let m = p.width() as f64;
            (wa * sa + wb * (xy + p.gamma * p.gamma) * sb) / m
        }
        KernelMode::MonteCarlo(dirs) => {
            let act = &spec.activation;
            let (mut sa, mut sb) = (0.0, 0.0);
            for b in dirs.rows() {
                let b = b.as_slice().expect("standard layout");
                let (u, up) = act.value_and_grad(dot(b, x));
                let (v, vp) = act.value_and_grad(dot(b, y));
                sa += u * v;
                sb += up * vp;
            }
            let n = dirs.nrows() as f64;
            let r2 = spec.r_scale * spec.r_scale;
            (wa * sa + wb * r2 * (xy + spec.gamma * spec.gamma) * sb) / n
        }
    }
}

/// Mean and standard error of a Monte Carlo kernel estimate.
pub fn monte_carlo_stats(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    spec.validate_pair(x, y)?;
    let KernelMode::MonteCarlo(dirs) = &spec.mode else {
        return Err(Error::invalid("monte_carlo_stats needs a Monte Carlo kernel"));
    };
    let (wa, wb) = spec.component.weights();
    let act = &spec.activation;
    let r2 = spec.r_scale * spec.r_scale;
    let xy = dot(x, y);
    let scale_b = wb * r2 * (xy + spec.gamma * spec.gamma);
    let (mut sum, mut sq) = (0.0, 0.0);
    for b in dirs.rows() {
        let b = b.as_slice().expect("standard layout");
        let (u, up) = act.value_and_grad(dot(b, x));
        let (v, vp) = act.value_and_grad(dot(b, y));
        let f = wa * u * v + scale_b * up * vp;
        sum += f;
        sq += f * f;
    }
    let n = dirs.nrows() as f64;
    let mean = sum / n;
    let var = ((sq / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Gram matrix `K_ij = k(x_i, x_j)` over the rows of `points`. Exactly
/// symmetric: the upper triangle is computed and mirrored.
pub fn gram_matrix(spec: &KernelSpec, points: &Array2<f64>) -> Result<Array2<f64>> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::invalid("gram matrix needs at least one point"));
    }
    for i in 0..n {
        let xi = points.row(i);
        let xi = xi.as_slice().expect("standard layout");
        spec.validate_pair(xi, xi)?;
    }
    let mut g = match &spec.mode {
        KernelMode::RandomFeature(p) => random_feature_gram(spec, p, points),
        _ => {
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let xi = points.row(i);
                    let xi = xi.as_slice().expect("standard layout");
                    (i..n)
                        .map(|j| {
                            let xj = points.row(j);
                            eval_unchecked(spec, xi, xj.as_slice().expect("standard layout"))
                        })
                        .collect()
                })
                .collect();
            let mut g = Array2::zeros((n, n));
            for (i, row) in rows.into_iter().enumerate() {
                for (off, v) in row.into_iter().enumerate() {
                    g[[i, i + off]] = v;
                }
            }
            g
        }
    };
    for i in 0..n {
        for j in (i + 1)..n {
            g[[j, i]] = g[[i, j]];
        }
    }
    Ok(g)
}

const UNIT_BLOCK: usize = 512;

/// Block-wise `S Sᵀ / M` and `(XXᵀ + γ²) ∘ (T Tᵀ) / M` with `S = σ(XBᵀ + γc)`,
/// `T = |a| σ'(XBᵀ + γc)`. At a symmetric initialization the two halves of
/// the units coincide, so only the first half is visited (weight 2).
fn random_feature_gram(spec: &KernelSpec, p: &NetworkParams, points: &Array2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let (wa, wb) = spec.component.weights();
    let (units, mult) = if p.is_symmetric_init() {
        (p.width() / 2, 2.0)
    } else {
        (p.width(), 1.0)
    };
    let mut ga = Array2::<f64>::zeros((n, n));
    let mut gb = Array2::<f64>::zeros((n, n));
    let act = &spec.activation;
    let mut start = 0;
    while start < units {
        let end = (start + UNIT_BLOCK).min(units);
        let b = p.b.slice(s![start..end, ..]);
        let mut z = points.dot(&b.t());
        for (mut row, _) in z.rows_mut().into_iter().zip(0..n) {
            for (k, v) in row.iter_mut().enumerate() {
                *v += p.gamma * p.c[start + k];
            }
        }
        if wa != 0.0 {
            let sv = z.mapv(|u| act.value(u));
            ga += &sv.dot(&sv.t());
        }
        if wb != 0.0 {
            let mut tv = z.mapv(|u| act.grad(u));
            for mut row in tv.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v *= p.a[start + k].abs();
                }
            }
            gb += &tv.dot(&tv.t());
        }
        start = end;
    }
    let scale = mult / p.width() as f64;
    let mut g = Array2::zeros((n, n));
    if wa != 0.0 {
        g.scaled_add(scale * wa, &ga);
    }
    if wb != 0.0 {
        let xx = points.dot(&points.t());
        let g2 = p.gamma * p.gamma;
        ndarray::Zip::from(&mut g)
            .and(&gb)
            .and(&xx)
            .for_each(|o, &b, &x| *o += scale * wb * (x + g2) * b);
    }
    g
}

/// `Σ_i λ_i / (λ_i + λ)` with negative eigenvalues clipped to zero.
pub fn degree_of_freedom(eigenvalues: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("regularization lambda={lambda} must be positive")));
    }
    Ok(eigenvalues
        .iter()
        .map(|&l| {
            let l = l.max(0.0);
            l / (l + lambda)
        })
        .sum())
}
