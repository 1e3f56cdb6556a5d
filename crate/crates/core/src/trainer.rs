//! Regularized averaged SGD in parameter space (the network trainer) and in
//! the random-feature space `H_M` (the kernel trainer), both driven by one
//! replayable sample stream, plus the ridge minimizer and the pointwise gap
//! between the two averaged predictors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::ActivationSpec;
use crate::kernel::Component;
use crate::model::{forward_unchecked, param_gradient, NetworkParams};
use crate::numerics::{dot, sample_sphere, streams, SeededRng};
use crate::source::{mask_features, TargetFunction};
use crate::{Error, Result};

/// Which parameter blocks are updated. The input layer is `(B, c)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMask {
    Output,
    Input,
    Both,
}

impl LayerMask {
    pub fn trains_output(&self) -> bool {
        matches!(self, LayerMask::Output | LayerMask::Both)
    }

    pub fn trains_input(&self) -> bool {
        matches!(self, LayerMask::Input | LayerMask::Both)
    }

    /// The NTK component whose RKHS the masked linearization lives in.
    pub fn component(&self) -> Component {
        match self {
            LayerMask::Output => Component::OutputLayer,
            LayerMask::Input => Component::InputLayer,
            LayerMask::Both => Component::Full,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerMask::Output => "output",
            LayerMask::Input => "input",
            LayerMask::Both => "both",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub t: usize,
    pub lambda: f64,
    pub eta: f64,
    pub seed: u64,
    /// Iteration counts at which the running average is recorded.
    pub snapshot_schedule: Vec<usize>,
    /// Enforce `4(6 + λ)η <= 1`.
    pub theory_mode: bool,
    pub layers: LayerMask,
    /// Accept non-smooth activations in the network trainer; such runs sit
    /// outside the smoothness assumption and are flagged.
    pub allow_nonsmooth: bool,
}

impl TrainConfig {
    pub fn new(t: usize, lambda: f64, eta: f64, seed: u64) -> Self {
        Self {
            t,
            lambda,
            eta,
            seed,
            snapshot_schedule: Vec::new(),
            theory_mode: false,
            layers: LayerMask::Both,
            allow_nonsmooth: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("learning rate eta={} must be positive", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda={} must be nonnegative", self.lambda)));
        }
        if !(self.eta * self.lambda < 1.0) {
            return Err(Error::invalid(format!(
                "eta * lambda = {} must be < 1",
                self.eta * self.lambda
            )));
        }
        if self.theory_mode && 4.0 * (6.0 + self.lambda) * self.eta > 1.0 {
            return Err(Error::invalid(format!(
                "theory mode requires 4(6 + lambda) eta <= 1 (got {})",
                4.0 * (6.0 + self.lambda) * self.eta
            )));
        }
        if let Some(&s) = self.snapshot_schedule.iter().find(|&&s| s > self.t) {
            return Err(Error::invalid(format!("snapshot at {s} is beyond T={}", self.t)));
        }
        if self.snapshot_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("snapshot schedule must be strictly increasing"));
        }
        Ok(())
    }
}

/// Roughly geometric snapshot schedule with `count` points ending at `t`.
pub fn geometric_schedule(t: usize, count: usize) -> Vec<usize> {
    if t == 0 || count == 0 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..count)
        .map(|i| {
            let f = (i + 1) as f64 / count as f64;
            ((t as f64).powf(f)).round() as usize
        })
        .collect();
    out.dedup();
    if *out.last().expect("nonempty") != t {
        out.push(t);
    }
    out
}

/// Generator of `(x_t, y_t)` with `x_t` uniform on the sphere and
/// `y_t = g(x_t) + noise`, optionally clipped to `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct SampleStream {
    pub target: Arc<TargetFunction>,
    pub noise_std: f64,
    pub clip: bool,
    pub seed: u64,
}

/// The first `t` samples of a stream, with the stream's fingerprint.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub xs: Array2<f64>,
    pub ys: Vec<f64>,
    pub fingerprint: u64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    fn x(&self, t: usize) -> &[f64] {
        self.xs.row(t).to_slice().expect("standard layout")
    }
}

impl SampleStream {
    pub fn new(target: Arc<TargetFunction>, noise_std: f64, clip: bool, seed: u64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise_std={noise_std} must be nonnegative")));
        }
        Ok(Self {
            target,
            noise_std,
            clip,
            seed,
        })
    }

    /// Hash of `(seed, noise_std, clip, target id, T)`.
    pub fn fingerprint(&self, t: usize) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.noise_std.to_bits().to_le_bytes());
        h.update([self.clip as u8]);
        h.update(self.target.id().to_le_bytes());
        h.update((t as u64).to_le_bytes());
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
    }

    /// Draws the first `t` samples. Inputs and noise come from separate
    /// streams, so a shorter draw is a prefix of a longer one.
    pub fn draw(&self, t: usize) -> Result<SampleBatch> {
        let d = self.target.dim();
        let xs = if t == 0 {
            Array2::zeros((0, d))
        } else {
            let mut rng = SeededRng::new(self.seed, streams::SAMPLES);
            sample_sphere(&mut rng, d, t)?
        };
        let clean = self.target.eval_rows(&xs)?;
        let mut noise_rng = SeededRng::new(self.seed, streams::SAMPLES).derive(1);
        let ys = clean
            .into_iter()
            .map(|g| {
                let eps: f64 = StandardNormal.sample(&mut noise_rng);
                let y = g + self.noise_std * eps;
                if self.clip {
                    y.clamp(-1.0, 1.0)
                } else {
                    y
                }
            })
            .collect();
        Ok(SampleBatch {
            xs,
            ys,
            fingerprint: self.fingerprint(t),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot<S> {
    pub t: usize,
    pub state: S,
}

#[derive(Clone, Debug)]
pub struct NetworkRun {
    /// `Θ̄ = (1/(T+1)) Σ_{t=0}^{T} Θ^{(t)}`.
    pub averaged: NetworkParams,
    pub last: NetworkParams,
    pub snapshots: Vec<Snapshot<NetworkParams>>,
    pub fingerprint: u64,
    pub outside_assumptions: bool,
}

fn check_batch(config: &TrainConfig, batch: &SampleBatch, d: usize) -> Result<()> {
    if batch.len() != config.t {
        return Err(Error::invalid(format!(
            "sample batch has {} samples but T={}",
            batch.len(),
            config.t
        )));
    }
    if config.t > 0 && batch.xs.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: batch.xs.ncols(),
        });
    }
    Ok(())
}

/// Running-average update over `count` iterates seen so far.
#[inline]
fn fold_average(avg: &mut [f64], cur: &[f64], count: usize) {
    // Difference form keeps a constant sequence exactly constant.
    let inv = 1.0 / (count as f64 + 1.0);
    for (a, c) in avg.iter_mut().zip(cur) {
        *a += (*c - *a) * inv;
    }
}

/// Parameter-space averaged SGD. Each step uses the current parameters:
///
/// ```text
/// a_r ← a_r⁰ + (1-ηλ)(a_r - a_r⁰) - η M^{-1/2} (g - y) σ(z_r)
/// b_r ← b_r⁰ + (1-ηλ)(b_r - b_r⁰) - η M^{-1/2} (g - y) a_r σ'(z_r) x
/// c_r ← c_r⁰ + (1-ηλ)(c_r - c_r⁰) - η M^{-1/2} (g - y) a_r γ σ'(z_r)
/// ```
///
/// with `z_r = b_rᵀx + γ c_r`. Frozen blocks stay at their initial values.
pub fn asgd_network(
    init: &NetworkParams,
    activation: &ActivationSpec,
    config: &TrainConfig,
    batch: &SampleBatch,
) -> Result<NetworkRun> {
    config.validate()?;
    check_batch(config, batch, init.dim())?;
    if !activation.is_smooth() && !config.allow_nonsmooth {
        return Err(Error::invalid(
            "network trainer needs a smooth activation (set allow_nonsmooth to run outside the assumptions)",
        ));
    }
    let (m, d) = (init.width(), init.dim());
    let gamma = init.gamma;
    let inv_sqrt_m = 1.0 / (m as f64).sqrt();
    let rho = 1.0 - config.eta * config.lambda;
    let eta = config.eta;

    let theta0 = init.to_flat();
    let mut theta = theta0.clone();
    let mut avg = theta0.clone();
    let mut snaps = Vec::new();
    let mut next_snap = config.snapshot_schedule.iter().peekable();
    let mut cur = init.clone();
    let mut s = vec![0.0; m];
    let mut sp = vec![0.0; m];

    let take_snap = |t: usize, avg: &[f64], snaps: &mut Vec<Snapshot<NetworkParams>>| -> Result<()> {
        snaps.push(Snapshot {
            t,
            state: init.from_flat(avg)?,
        });
        Ok(())
    };
    if next_snap.peek() == Some(&&0) {
        take_snap(0, &avg, &mut snaps)?;
        next_snap.next();
    }
    for t in 0..config.t {
        let x = batch.x(t);
        let y = batch.ys[t];
        // Forward pass at Θ^{(t)}. Mirrored units are summed pairwise so the
        // symmetric initialization evaluates to exactly zero.
        let mut g = 0.0;
        {
            let (a, rest) = theta.split_at(m);
            let (b, c) = rest.split_at(m * d);
            for r in 0..m {
                let z = dot(&b[r * d..(r + 1) * d], x) + gamma * c[r];
                let (v, dv) = activation.value_and_grad(z);
                s[r] = v;
                sp[r] = dv;
            }
            let half = m / 2;
            for r in 0..half {
                g += a[r] * s[r] + a[r + half] * s[r + half];
            }
        }
        g *= inv_sqrt_m;
        let e = (g - y) * inv_sqrt_m;
        let (a, rest) = theta.split_at_mut(m);
        let (b, c) = rest.split_at_mut(m * d);
        let (a0, rest0) = theta0.split_at(m);
        let (b0, c0) = rest0.split_at(m * d);
        for r in 0..m {
            let coef = e * a[r] * sp[r];
            if config.layers.trains_input() {
                let br = &mut b[r * d..(r + 1) * d];
                let b0r = &b0[r * d..(r + 1) * d];
                for i in 0..d {
                    br[i] = b0r[i] + rho * (br[i] - b0r[i]) - eta * coef * x[i];
                }
                c[r] = c0[r] + rho * (c[r] - c0[r]) - eta * coef * gamma;
            }
            if config.layers.trains_output() {
                a[r] = a0[r] + rho * (a[r] - a0[r]) - eta * e * s[r];
            }
        }
        fold_average(&mut avg, &theta, t + 1);
        if next_snap.peek() == Some(&&(t + 1)) {
            take_snap(t + 1, &avg, &mut snaps)?;
            next_snap.next();
        }
    }
    cur = cur.from_flat(&theta)?;
    Ok(NetworkRun {
        averaged: init.from_flat(&avg)?,
        last: cur,
        snapshots: snaps,
        fingerprint: batch.fingerprint,
        outside_assumptions: !activation.is_smooth(),
    })
}

/// A function in `H_M` represented by feature-space weights; predictions are
/// `⟨w, φ(x)⟩` with `φ` the gradient features of a fixed initialization.
#[derive(Clone, Debug)]
pub struct LinearIterate {
    pub w: Vec<f64>,
    pub w_avg: Vec<f64>,
    pub init: Arc<NetworkParams>,
    pub activation: ActivationSpec,
    pub component: Component,
}

impl LinearIterate {
    fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut phi = param_gradient(&self.init, &self.activation, x)?;
        mask_features(&mut phi, self.init.width(), self.init.dim(), self.component);
        Ok(phi)
    }

    /// Averaged predictor `ḡ(x)`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.w_avg, &self.features(x)?))
    }

    /// Last iterate `g^{(T)}(x)`.
    pub fn predict_last(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.w, &self.features(x)?))
    }

    pub fn with_average(&self, w_avg: Vec<f64>) -> Self {
        Self {
            w_avg,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelRun {
    pub iterate: LinearIterate,
    /// Averaged weights at the scheduled iteration counts.
    pub snapshots: Vec<Snapshot<Vec<f64>>>,
    pub fingerprint: u64,
}

/// ASGD in `H_M`: `w ← (1-ηλ) w - η (⟨w, φ(x_t)⟩ - y_t) φ(x_t)` from `w = 0`,
/// averaged uniformly over iterates `0..=T`. Frozen layers zero the
/// corresponding feature blocks.
pub fn asgd_kernel(
    init: Arc<NetworkParams>,
    activation: &ActivationSpec,
    config: &TrainConfig,
    batch: &SampleBatch,
) -> Result<KernelRun> {
    config.validate()?;
    check_batch(config, batch, init.dim())?;
    if !init.is_symmetric_init() {
        return Err(Error::invalid("kernel trainer needs a symmetric initialization"));
    }
    let p = init.num_params();
    let mut it = LinearIterate {
        w: vec![0.0; p],
        w_avg: vec![0.0; p],
        init: init.clone(),
        activation: *activation,
        component: config.layers.component(),
    };
    let rho = 1.0 - config.eta * config.lambda;
    let mut snaps = Vec::new();
    let mut next_snap = config.snapshot_schedule.iter().peekable();
    if next_snap.peek() == Some(&&0) {
        snaps.push(Snapshot {
            t: 0,
            state: it.w_avg.clone(),
        });
        next_snap.next();
    }
    for t in 0..config.t {
        let phi = it.features(batch.x(t))?;
        let resid = dot(&it.w, &phi) - batch.ys[t];
        let step = config.eta * resid;
        for (w, f) in it.w.iter_mut().zip(&phi) {
            *w = rho * *w - step * f;
        }
        fold_average(&mut it.w_avg, &it.w, t + 1);
        if next_snap.peek() == Some(&&(t + 1)) {
            snaps.push(Snapshot {
                t: t + 1,
                state: it.w_avg.clone(),
            });
            next_snap.next();
        }
    }
    Ok(KernelRun {
        iterate: it,
        snapshots: snaps,
        fingerprint: batch.fingerprint,
    })
}

/// Regularized least squares in feature space,
/// `(ΦᵀΦ/n + λI) w = Φᵀy/n`, solved by Cholesky in whichever of the primal
/// (`p x p`) or dual (`n x n`, `w = Φᵀα`) forms is smaller.
pub fn ridge_minimizer(
    init: Arc<NetworkParams>,
    activation: &ActivationSpec,
    xs: &Array2<f64>,
    ys: &[f64],
    lambda: f64,
    component: Component,
) -> Result<LinearIterate> {
    let n = xs.nrows();
    if n == 0 || ys.len() != n {
        return Err(Error::invalid(format!("ridge needs n >= 1 matching labels (n={n}, labels={})", ys.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("ridge lambda must be nonnegative"));
    }
    if !init.is_symmetric_init() {
        return Err(Error::invalid("ridge minimizer needs a symmetric initialization"));
    }
    let p = init.num_params();
    let mut it = LinearIterate {
        w: Vec::new(),
        w_avg: Vec::new(),
        init: init.clone(),
        activation: *activation,
        component,
    };
    let mut phi = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        let f = it.features(xs.row(i).as_slice().expect("standard layout"))?;
        for (j, v) in f.into_iter().enumerate() {
            phi[(i, j)] = v;
        }
    }
    let y = DVector::from_column_slice(ys);
    let nf = n as f64;
    let singular = || Error::Singular(format!("ridge system with lambda={lambda} is not positive definite"));
    let w = if p <= n {
        let mut a = phi.transpose() * &phi / nf;
        for i in 0..p {
            a[(i, i)] += lambda;
        }
        let rhs = phi.transpose() * &y / nf;
        a.cholesky().ok_or_else(singular)?.solve(&rhs)
    } else {
        let mut k = &phi * phi.transpose();
        for i in 0..n {
            k[(i, i)] += nf * lambda;
        }
        let alpha = k.cholesky().ok_or_else(singular)?.solve(&y);
        phi.transpose() * alpha
    };
    // Primal residual of the normal equations.
    let lhs = phi.transpose() * (&phi * &w) / nf + &w * lambda;
    let rhs = phi.transpose() * &y / nf;
    let resid = (&lhs - &rhs).norm();
    let scale = rhs.norm().max(lhs.norm()).max(f64::MIN_POSITIVE);
    if !(resid <= 1e-8 * scale) && rhs.norm() > 0.0 {
        return Err(Error::Singular(format!(
            "ridge normal equations residual {:.3e} exceeds tolerance",
            resid / scale
        )));
    }
    it.w = w.iter().copied().collect();
    it.w_avg = it.w.clone();
    Ok(it)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Gap {
    pub sup_gap: f64,
    pub l2_gap: f64,
}

/// Sup and root-mean-square of `|g_{Θ̄}(x) - ḡ(x)|` over `test_points`
/// (weighted mean when weights are given).
pub fn equivalence_gap(
    net: &NetworkRun,
    activation: &ActivationSpec,
    kernel: &KernelRun,
    test_points: &Array2<f64>,
    weights: Option<&[f64]>,
) -> Result<Gap> {
    if net.fingerprint != kernel.fingerprint {
        return Err(Error::FingerprintMismatch(net.fingerprint, kernel.fingerprint));
    }
    if test_points.nrows() == 0 {
        return Err(Error::invalid("equivalence gap needs at least one test point"));
    }
    if let Some(w) = weights {
        if w.len() != test_points.nrows() {
            return Err(Error::DimensionMismatch {
                expected: test_points.nrows(),
                found: w.len(),
            });
        }
    }
    let a = predict_network(&net.averaged, activation, test_points)?;
    let b = predict_linear(&kernel.iterate, test_points)?;
    let mut sup: f64 = 0.0;
    let (mut sq, mut wsum) = (0.0, 0.0);
    for i in 0..a.len() {
        let diff = (a[i] - b[i]).abs();
        let w = weights.map_or(1.0, |w| w[i]);
        sup = sup.max(diff);
        sq += w * diff * diff;
        wsum += w;
    }
    Ok(Gap {
        sup_gap: sup,
        l2_gap: (sq / wsum).sqrt(),
    })
}

pub fn predict_network(params: &NetworkParams, activation: &ActivationSpec, points: &Array2<f64>) -> Result<Vec<f64>> {
    if points.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: points.ncols(),
        });
    }
    Ok(points
        .rows()
        .into_iter()
        .map(|x| forward_unchecked(params, activation, x.as_slice().expect("standard layout")))
        .collect())
}

pub fn predict_linear(it: &LinearIterate, points: &Array2<f64>) -> Result<Vec<f64>> {
    points
        .rows()
        .into_iter()
        .map(|x| it.predict(x.as_slice().expect("standard layout")))
        .collect()
}

/// `½ mean (g - g_ρ)²`.
pub fn excess_risk(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (0.5 * s / n).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{kernel_eval, KernelSpec};
    use crate::model::{forward, symmetric_init};

    fn zonal3() -> Arc<TargetFunction> {
        Arc::new(TargetFunction::zonal(2, vec![0.0, 0.0, 1.0], 0.8).unwrap())
    }

    fn setup(m: usize, seed: u64) -> (NetworkParams, ActivationSpec) {
        let mut rng = SeededRng::new(seed, streams::INIT);
        let init = symmetric_init(&mut rng, m, 3, 1.0, 0.5).unwrap();
        (init, ActivationSpec::swish(5.0).unwrap())
    }

    fn batch(t: usize, seed: u64) -> SampleBatch {
        SampleStream::new(zonal3(), 0.1, true, seed).unwrap().draw(t).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(10, 0.1, 0.0, 0).validate().is_err());
        assert!(TrainConfig::new(10, -0.1, 0.1, 0).validate().is_err());
        assert!(TrainConfig::new(10, 10.0, 0.1, 0).validate().is_err());
        let mut c = TrainConfig::new(10, 0.1, 0.05, 0);
        c.theory_mode = true;
        assert!(c.validate().is_err());
        c.eta = 1.0 / (4.0 * 6.1);
        assert!(c.validate().is_ok());
        c.snapshot_schedule = vec![3, 2];
        assert!(c.validate().is_err());
        c.snapshot_schedule = vec![11];
        assert!(c.validate().is_err());
    }

    #[test]
    fn stream_is_replayable_prefix_and_clipped() {
        let s = SampleStream::new(Arc::new(TargetFunction::zonal(1, vec![1.0, 0.0], 3.0).unwrap()), 1.0, true, 4).unwrap();
        let a = s.draw(50).unwrap();
        let b = s.draw(50).unwrap();
        let c = s.draw(80).unwrap();
        assert_eq!(a.ys, b.ys);
        assert_eq!(a.xs, b.xs);
        assert_eq!(&c.ys[..50], &a.ys[..]);
        assert!(a.ys.iter().all(|y| y.abs() <= 1.0));
        assert_ne!(a.fingerprint, c.fingerprint);
        assert_ne!(s.fingerprint(5), SampleStream { seed: 5, ..s.clone() }.fingerprint(5));
    }

    #[test]
    fn zero_learning_rate_limit_keeps_init() {
        // η = 0 is rejected by validation; the smallest step keeps g ≈ 0.
        let (init, act) = setup(8, 1);
        let b = batch(20, 1);
        assert!(asgd_network(&init, &act, &TrainConfig::new(20, 0.0, 0.0, 1), &b).is_err());
        let run = asgd_network(&init, &act, &TrainConfig::new(20, 0.0, 1e-300, 1), &b).unwrap();
        let (got, want) = (run.averaged.to_flat(), init.to_flat());
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-290));
        let x = [0.0, 0.6, 0.8];
        assert!(forward(&run.averaged, &act, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn one_step_output_update() {
        let (init, act) = setup(16, 2);
        let b = batch(1, 2);
        let mut cfg = TrainConfig::new(1, 0.3, 0.05, 2);
        cfg.layers = LayerMask::Output;
        let run = asgd_network(&init, &act, &cfg, &b).unwrap();
        let x = b.x(0);
        let sm = 16f64.sqrt();
        for r in 0..16 {
            let z = dot(init.b.row(r).as_slice().unwrap(), x);
            let want = 0.05 * b.ys[0] * act.value(z) / sm;
            assert!((run.last.a[r] - init.a[r] - want).abs() < 1e-15);
        }
        // Average of two iterates.
        assert!((run.averaged.a[0] - 0.5 * (init.a[0] + run.last.a[0])).abs() < 1e-15);
    }

    fn loss_grad_fd(p: &NetworkParams, act: &ActivationSpec, x: &[f64], y: f64) -> Vec<f64> {
        let flat = p.to_flat();
        let h = 1e-6;
        (0..flat.len())
            .map(|i| {
                let mut up = flat.clone();
                up[i] += h;
                let mut dn = flat.clone();
                dn[i] -= h;
                let lu = 0.5 * (forward(&p.from_flat(&up).unwrap(), act, x).unwrap() - y).powi(2);
                let ld = 0.5 * (forward(&p.from_flat(&dn).unwrap(), act, x).unwrap() - y).powi(2);
                (lu - ld) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn update_matches_finite_difference_direction() {
        for act in [ActivationSpec::swish(5.0).unwrap(), ActivationSpec::tanh(), ActivationSpec::sigmoid()] {
            let mut rng = SeededRng::new(3, streams::INIT);
            let init = symmetric_init(&mut rng, 8, 3, 1.2, 0.7).unwrap();
            let (eta, lambda) = (0.3, 0.4);
            let b = SampleStream::new(zonal3(), 0.0, false, 3).unwrap().draw(2).unwrap();
            let one = asgd_network(&init, &act, &TrainConfig::new(1, lambda, eta, 3), &b_prefix(&b, 1)).unwrap();
            let two = asgd_network(&init, &act, &TrainConfig::new(2, lambda, eta, 3), &b).unwrap();
            let th0 = init.to_flat();
            let th1 = one.last.to_flat();
            let th2 = two.last.to_flat();
            // Step 1 from init: Θ¹ - Θ⁰ = -η ∇ℓ(Θ⁰).
            let g0 = loss_grad_fd(&init, &act, b.x(0), b.ys[0]);
            // Step 2: Θ² - Θ¹ = -η (∇ℓ(Θ¹) + λ (Θ¹ - Θ⁰)).
            let g1 = loss_grad_fd(&one.last, &act, b.x(1), b.ys[1]);
            let mut d1 = vec![0.0; th0.len()];
            let mut d2 = vec![0.0; th0.len()];
            let mut e1 = vec![0.0; th0.len()];
            let mut e2 = vec![0.0; th0.len()];
            for i in 0..th0.len() {
                d1[i] = th1[i] - th0[i];
                e1[i] = -eta * g0[i];
                d2[i] = th2[i] - th1[i];
                e2[i] = -eta * (g1[i] + lambda * (th1[i] - th0[i]));
            }
            let rel = |a: &[f64], b: &[f64]| {
                let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                num / b.iter().map(|y| y * y).sum::<f64>().sqrt()
            };
            assert!(rel(&d1, &e1) < 1e-5, "{act:?} step 1: {}", rel(&d1, &e1));
            assert!(rel(&d2, &e2) < 1e-5, "{act:?} step 2: {}", rel(&d2, &e2));
        }
    }

    fn b_prefix(b: &SampleBatch, t: usize) -> SampleBatch {
        SampleBatch {
            xs: b.xs.slice(ndarray::s![..t, ..]).to_owned(),
            ys: b.ys[..t].to_vec(),
            fingerprint: b.fingerprint,
        }
    }

    #[test]
    fn zero_targets_stay_at_init() {
        let (init, act) = setup(12, 4);
        let s = SampleStream::new(Arc::new(TargetFunction::zero(3)), 0.0, false, 4).unwrap();
        let b = s.draw(100).unwrap();
        let run = asgd_network(&init, &act, &TrainConfig::new(100, 0.5, 0.1, 4), &b).unwrap();
        assert_eq!(run.last, init);
        assert_eq!(run.averaged, init);
        let k = asgd_kernel(Arc::new(init), &act, &TrainConfig::new(100, 0.0, 0.1, 4), &b).unwrap();
        assert!(k.iterate.w.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn regularization_contracts_toward_init() {
        // Pure regularization steps (zero residual) shrink Θ - Θ⁰ by 1-ηλ.
        // Exercised through the kernel trainer where the iterate starts at 0
        // and labels are 0 after a nonzero first sample.
        let (init, act) = setup(8, 5);
        let init = Arc::new(init);
        let mut b = batch(30, 5);
        for y in b.ys.iter_mut().skip(1) {
            *y = 0.0;
        }
        let mut prev = f64::INFINITY;
        for t in 1..=30 {
            let sub = b_prefix(&b, t);
            let r = asgd_kernel(init.clone(), &act, &TrainConfig::new(t, 0.5, 0.1, 5), &sub).unwrap();
            let norm = dot(&r.iterate.w, &r.iterate.w).sqrt();
            assert!(norm <= prev * (1.0 + 1e-12));
            prev = norm;
        }
    }

    #[test]
    fn kernel_trainer_matches_expansion_oracle() {
        let (init, act) = setup(20, 6);
        let init = Arc::new(init);
        let spec = KernelSpec::random_feature(init.clone(), act, Component::Full).unwrap();
        let (eta, lambda) = (0.2, 0.3);
        let t_max = 64;
        let b = batch(t_max, 6);
        let mut rng = SeededRng::new(6, streams::TEST_SET);
        let test = sample_sphere(&mut rng, 3, 10).unwrap();
        let mut cfg = TrainConfig::new(t_max, lambda, eta, 6);
        cfg.snapshot_schedule = (0..=t_max).collect();
        let run = asgd_kernel(init.clone(), &act, &cfg, &b).unwrap();
        // Brute force: g^{(t)} = Σ_s c_s k(x_s, ·), averaged coefficients.
        let mut coef: Vec<f64> = Vec::new();
        let mut avg: Vec<f64> = Vec::new();
        let k = |i: usize, x: &[f64]| kernel_eval(&spec, b.x(i), x).unwrap();
        for t in 0..=t_max {
            let snap = &run.snapshots[t];
            assert_eq!(snap.t, t);
            let it = run.iterate.with_average(snap.state.clone());
            for x in test.rows() {
                let x = x.as_slice().unwrap();
                let oracle: f64 = avg.iter().enumerate().map(|(s, c)| c * k(s, x)).sum();
                let got = it.predict(x).unwrap();
                assert!((got - oracle).abs() < 1e-10, "t={t}: {got} vs {oracle}");
            }
            if t == t_max {
                break;
            }
            let pred: f64 = coef.iter().enumerate().map(|(s, c)| c * k(s, b.x(t))).sum();
            for c in coef.iter_mut() {
                *c *= 1.0 - eta * lambda;
            }
            coef.push(-eta * (pred - b.ys[t]));
            avg.push(0.0);
            let n = (t + 1) as f64;
            for (a, c) in avg.iter_mut().zip(&coef) {
                *a = *a * n / (n + 1.0) + c / (n + 1.0);
            }
        }
    }

    #[test]
    fn first_kernel_step_is_scaled_kernel_section() {
        let (init, act) = setup(10, 7);
        let init = Arc::new(init);
        let spec = KernelSpec::random_feature(init.clone(), act, Component::Full).unwrap();
        let b = batch(1, 7);
        let run = asgd_kernel(init, &act, &TrainConfig::new(1, 0.2, 0.05, 7), &b).unwrap();
        let x = [0.36, 0.48, 0.8];
        let want = 0.05 * b.ys[0] * kernel_eval(&spec, b.x(0), &x).unwrap();
        assert!((run.iterate.predict_last(&x).unwrap() - want).abs() < 1e-14);
        assert!((run.iterate.predict(&x).unwrap() - want / 2.0).abs() < 1e-14);
    }

    #[test]
    fn shrink_to_zero_when_eta_lambda_near_one() {
        let (init, act) = setup(6, 8);
        assert!(TrainConfig::new(5, 10.0, 0.1, 8).validate().is_err());
        let s = SampleStream::new(Arc::new(TargetFunction::zero(3)), 0.0, false, 8).unwrap();
        let b = s.draw(5).unwrap();
        let run = asgd_kernel(Arc::new(init), &act, &TrainConfig::new(5, 9.999, 0.1, 8), &b).unwrap();
        assert!(run.iterate.w.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn bitwise_determinism() {
        let (init, act) = setup(32, 9);
        let b1 = batch(200, 9);
        let b2 = batch(200, 9);
        let cfg = TrainConfig::new(200, 0.1, 0.05, 9);
        let a = asgd_network(&init, &act, &cfg, &b1).unwrap();
        let b = asgd_network(&init, &act, &cfg, &b2).unwrap();
        assert_eq!(a.averaged.to_flat(), b.averaged.to_flat());
        let init = Arc::new(init);
        let c = asgd_kernel(init.clone(), &act, &cfg, &b1).unwrap();
        let d = asgd_kernel(init, &act, &cfg, &b2).unwrap();
        assert_eq!(c.iterate.w_avg, d.iterate.w_avg);
    }

    #[test]
    fn nonsmooth_flagged() {
        let (init, _) = setup(8, 10);
        let relu = ActivationSpec::relu();
        let b = batch(5, 10);
        let mut cfg = TrainConfig::new(5, 0.1, 0.05, 10);
        assert!(asgd_network(&init, &relu, &cfg, &b).is_err());
        cfg.allow_nonsmooth = true;
        assert!(asgd_network(&init, &relu, &cfg, &b).unwrap().outside_assumptions);
    }

    #[test]
    fn ridge_closed_forms() {
        let (init, act) = setup(6, 11);
        let init = Arc::new(init);
        let x = ndarray::array![[0.0, 0.6, 0.8]];
        let phi = param_gradient(&init, &act, x.row(0).as_slice().unwrap()).unwrap();
        let lam = 0.3;
        let it = ridge_minimizer(init.clone(), &act, &x, &[0.7], lam, Component::Full).unwrap();
        let nrm2 = dot(&phi, &phi);
        for (w, f) in it.w.iter().zip(&phi) {
            assert!((w - 0.7 * f / (nrm2 + lam)).abs() < 1e-12);
        }
        let big = ridge_minimizer(init.clone(), &act, &x, &[0.7], 1e12, Component::Full).unwrap();
        assert!(big.w.iter().all(|w| w.abs() < 1e-11));
        // λ = 0 with more parameters than samples is singular in the primal
        // but fine in the dual; duplicated rows make the dual singular too.
        let dup = ndarray::array![[0.0, 0.6, 0.8], [0.0, 0.6, 0.8]];
        assert!(ridge_minimizer(init, &act, &dup, &[0.1, 0.2], 0.0, Component::Full).is_err());
    }

    #[test]
    fn asgd_approaches_ridge_solution() {
        let act = ActivationSpec::swish(5.0).unwrap();
        let lambda = 0.05;
        let mut rng = SeededRng::new(12, streams::INIT);
        let init = Arc::new(symmetric_init(&mut rng, 8, 3, 1.0, 0.5).unwrap());
        let target = zonal3();
        // Population minimizer proxy: ridge on a large fresh sample.
        let big = SampleStream::new(target.clone(), 0.0, false, 999).unwrap().draw(20_000).unwrap();
        let ridge = ridge_minimizer(init.clone(), &act, &big.xs, &big.ys, lambda, Component::Full).unwrap();
        let test = sample_sphere(&mut SeededRng::new(12, streams::TEST_SET), 3, 500).unwrap();
        let truth = predict_linear(&ridge, &test).unwrap();
        let mut medians = Vec::new();
        for t in [256usize, 1024, 4096] {
            let mut errs: Vec<f64> = (0..5u64)
                .map(|seed| {
                    let b = SampleStream::new(target.clone(), 0.1, true, seed).unwrap().draw(t).unwrap();
                    let run = asgd_kernel(init.clone(), &act, &TrainConfig::new(t, lambda, 0.1, seed), &b).unwrap();
                    excess_risk(&predict_linear(&run.iterate, &test).unwrap(), &truth)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(errs[2]);
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    #[test]
    fn averaged_risk_decreases_with_t() {
        let (init, act) = setup(64, 13);
        let init = Arc::new(init);
        let target = zonal3();
        let test = sample_sphere(&mut SeededRng::new(13, streams::TEST_SET), 3, 1000).unwrap();
        let truth = target.eval_rows(&test).unwrap();
        let mut medians = Vec::new();
        for t in [64usize, 256, 1024] {
            let mut errs: Vec<f64> = (0..5u64)
                .map(|seed| {
                    let b = SampleStream::new(target.clone(), 0.1, true, seed).unwrap().draw(t).unwrap();
                    let run = asgd_kernel(init.clone(), &act, &TrainConfig::new(t, 1e-3, 0.1, seed), &b).unwrap();
                    excess_risk(&predict_linear(&run.iterate, &test).unwrap(), &truth)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(errs[2]);
        }
        assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
    }

    #[test]
    fn gap_examples() {
        let (init, act) = setup(16, 14);
        let b = batch(20, 14);
        let cfg = TrainConfig::new(20, 0.1, 0.04, 14);
        let net = asgd_network(&init, &act, &cfg, &b).unwrap();
        let ker = asgd_kernel(Arc::new(init.clone()), &act, &cfg, &b).unwrap();
        let test = sample_sphere(&mut SeededRng::new(14, streams::TEST_SET), 3, 50).unwrap();
        let g = equivalence_gap(&net, &act, &ker, &test, None).unwrap();
        assert!(g.sup_gap >= g.l2_gap && g.l2_gap > 0.0);
        assert!(equivalence_gap(&net, &act, &ker, &Array2::zeros((0, 3)), None).is_err());
        let other = asgd_kernel(Arc::new(init.clone()), &act, &cfg, &batch(20, 15)).unwrap();
        assert!(matches!(
            equivalence_gap(&net, &act, &other, &test, None),
            Err(Error::FingerprintMismatch(..))
        ));
        // T = 0: both predictors are the zero function.
        let empty = batch(0, 14);
        let c0 = TrainConfig::new(0, 0.1, 0.04, 14);
        let n0 = asgd_network(&init, &act, &c0, &empty).unwrap();
        let k0 = asgd_kernel(Arc::new(init), &act, &c0, &empty).unwrap();
        let z = equivalence_gap(&n0, &act, &k0, &test, None).unwrap();
        assert!(z.sup_gap < 1e-12 && z.l2_gap < 1e-12);
    }

    #[test]
    fn schedule_shape() {
        let s = geometric_schedule(10_000, 12);
        assert_eq!(*s.last().unwrap(), 10_000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(geometric_schedule(0, 5), vec![0]);
    }
}
