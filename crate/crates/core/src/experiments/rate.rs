//! Learning-rate exponent check: kernel-trainer excess risk on a synthetic
//! source-condition target under the `λ(T) = T^{-β/(2rβ+1)}` schedule.

use std::sync::Arc;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::RateCheckConfig;
use super::output::{Outcome, Table};
use crate::activation::ActivationSpec;
use crate::kernel::{Component, KernelSpec};
use crate::model::{symmetric_init, NetworkParams};
use crate::numerics::{sample_sphere, streams, SeededRng};
use crate::source::{synthesize_target, TargetFunction};
use crate::spectrum::{analytic_ntk_spectrum, empirical_spectrum, expand_component, fit_decay, least_squares, VectorPolicy};
use crate::trainer::{asgd_kernel, asgd_network, excess_risk, predict_linear, predict_network, SampleBatch, SampleStream, TrainConfig};
use crate::{Error, Result};

/// `-2rβ / (2rβ + 1)`.
pub fn slope_theory(r: f64, beta: f64) -> f64 {
    -2.0 * r * beta / (2.0 * r * beta + 1.0)
}

/// `T^{-β/(2rβ+1)}`.
pub fn lambda_schedule(t: usize, r: f64, beta: f64) -> f64 {
    (t as f64).powf(-beta / (2.0 * r * beta + 1.0))
}

/// `min(η₀, 1/(4(6+λ)))`.
pub fn eta_schedule(eta0: f64, lambda: f64) -> f64 {
    eta0.min(1.0 / (4.0 * (6.0 + lambda)))
}

/// High-dimensional ReLU rate exponent, `-2rd / (2rd + d - 1)`,
/// with its schedule `λ = T^{-d/(2rd + d - 1)}`.
pub fn relu_rate_exponents(r: f64, d: usize) -> (f64, f64) {
    let d = d as f64;
    let den = 2.0 * r * d + d - 1.0;
    (-2.0 * r * d / den, -d / den)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub t: usize,
    pub lambda_used: f64,
    pub eta_used: f64,
    pub excess_risk: f64,
    pub excess_risk_std: f64,
    pub seed_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope_hat: f64,
    pub slope_theory: f64,
    pub r2: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Log-log slope of the curve, each point weighted by the inverse of the
/// delta-method variance of `log(mean)`, `std² / (n mean²)`. Falls back to
/// equal weights when any variance is zero.
pub fn fit_curve(rows: &[CurveRow], slope_theory: f64, tolerance: f64) -> RateFit {
    let xs: Vec<f64> = rows.iter().map(|r| (r.t as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.excess_risk.ln()).collect();
    let w: Vec<f64> = rows
        .iter()
        .map(|r| {
            let var = r.excess_risk_std.powi(2) / (r.seed_count as f64 * r.excess_risk.powi(2));
            1.0 / var
        })
        .collect();
    let weights = w.iter().all(|v| v.is_finite() && *v > 0.0).then_some(w.as_slice());
    let (slope, r2) = if ys.iter().all(|y| y.is_finite()) && rows.len() >= 2 {
        least_squares(&xs, &ys, weights)
    } else {
        (f64::NAN, f64::NAN)
    };
    RateFit {
        slope_hat: slope,
        slope_theory,
        r2,
        tolerance,
        pass: (slope - slope_theory).abs() <= tolerance,
    }
}

pub(crate) fn prefix(batch: &SampleBatch, t: usize, fingerprint: u64) -> SampleBatch {
    SampleBatch {
        xs: batch.xs.slice(s![..t, ..]).to_owned(),
        ys: batch.ys[..t].to_vec(),
        fingerprint,
    }
}

/// The kernel in use, its eigenbasis target and the capacity exponent.
pub struct RateSetup {
    pub init: Arc<NetworkParams>,
    pub activation: ActivationSpec,
    pub target: Arc<TargetFunction>,
    pub beta: f64,
    pub beta_source: &'static str,
    pub beta_fit_r2: Option<f64>,
}

pub fn rate_setup(c: &RateCheckConfig) -> Result<RateSetup> {
    let act = ActivationSpec::new(c.activation)?;
    let mut init_rng = SeededRng::new(c.init_seed, streams::INIT);
    let init = Arc::new(symmetric_init(&mut init_rng, c.m, c.d, c.r_scale, c.gamma)?);
    let kernel = KernelSpec::random_feature(init.clone(), act, Component::Full)?;
    let mut basis_rng = SeededRng::new(c.init_seed, streams::BASIS);
    let est = empirical_spectrum(&kernel, c.basis_n, c.d, &mut basis_rng, VectorPolicy::Top(c.theta_count))?;
    let indices: Vec<usize> = (0..c.theta_count).collect();
    // a_i = λ_i^r θ_i with θ_i = 1/i (1-based).
    let weights: Vec<f64> = indices
        .iter()
        .map(|&i| est.eigenvalues[i].max(0.0).powf(c.r) / (i + 1) as f64)
        .collect();
    let target = Arc::new(synthesize_target(&est, &indices, &weights)?);
    let (beta, beta_source, beta_fit_r2) = match c.beta_override {
        Some(b) => (b, "override", None),
        None => {
            let spec = analytic_ntk_spectrum(&act, c.d, c.gamma, c.r_scale, c.k_max, c.quad_nodes)?;
            let [lo, hi] = c.fit_range;
            let expanded = expand_component(&spec, Component::Full, Some(hi));
            let fit = fit_decay(&expanded, lo, hi)?;
            (fit.beta_hat, "analytic_fit", Some(fit.r2))
        }
    };
    Ok(RateSetup {
        init,
        activation: act,
        target,
        beta,
        beta_source,
        beta_fit_r2,
    })
}

struct Cell {
    kernel_risk: f64,
    network_risk: Option<f64>,
}

pub fn run_rate_check(c: &RateCheckConfig) -> Result<Outcome> {
    let setup = rate_setup(c)?;
    let (r, beta) = (c.r, setup.beta);
    let t_max = *c.t_grid.last().expect("validated nonempty");
    let per_seed: Vec<(SampleStream, SampleBatch, Array2<f64>, Vec<f64>)> = c
        .seeds
        .par_iter()
        .map(|&seed| {
            let stream = SampleStream::new(setup.target.clone(), c.noise_std, c.clip, seed)?;
            let batch = stream.draw(t_max)?;
            let mut rng = SeededRng::new(seed, streams::TEST_SET);
            let test = sample_sphere(&mut rng, c.d, c.test_set_size)?;
            let truth = setup.target.eval_rows(&test)?;
            Ok((stream, batch, test, truth))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..c.t_grid.len())
        .flat_map(|ti| (0..c.seeds.len()).map(move |si| (ti, si)))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(ti, si)| {
            let t = c.t_grid[ti];
            let (stream, full, test, truth) = &per_seed[si];
            let lambda = lambda_schedule(t, r, beta);
            let eta = if c.theory_mode { eta_schedule(c.eta, lambda) } else { c.eta };
            let mut cfg = TrainConfig::new(t, lambda, eta, c.seeds[si]);
            cfg.theory_mode = c.theory_mode;
            cfg.allow_nonsmooth = true;
            let batch = prefix(full, t, stream.fingerprint(t));
            let run = asgd_kernel(setup.init.clone(), &setup.activation, &cfg, &batch)?;
            let kernel_risk = excess_risk(&predict_linear(&run.iterate, test)?, truth);
            let network_risk = if c.network_check {
                let net = asgd_network(&setup.init, &setup.activation, &cfg, &batch)?;
                Some(excess_risk(&predict_network(&net.averaged, &setup.activation, test)?, truth))
            } else {
                None
            };
            Ok(Cell {
                kernel_risk,
                network_risk,
            })
        })
        .collect::<Result<_>>()?;

    let mut raw_header = vec!["T", "seed", "lambda_used", "eta_used", "excess_risk"];
    if c.network_check {
        raw_header.push("network_excess_risk");
    }
    let mut raw = Table::new(format!("{}_runs.csv", c.output_path), &raw_header);
    let mut curve = Table::new(
        format!("{}.csv", c.output_path),
        &["T", "lambda_used", "eta_used", "excess_risk", "excess_risk_std", "seed_count"],
    );
    let mut rows = Vec::new();
    let mut network_rows = Vec::new();
    for (ti, &t) in c.t_grid.iter().enumerate() {
        let lambda = lambda_schedule(t, r, beta);
        let eta = if c.theory_mode { eta_schedule(c.eta, lambda) } else { c.eta };
        let cells_t = &cells[ti * c.seeds.len()..(ti + 1) * c.seeds.len()];
        for (si, cell) in cells_t.iter().enumerate() {
            let mut row = vec![t.into(), c.seeds[si].into(), lambda.into(), eta.into(), cell.kernel_risk.into()];
            if let Some(n) = cell.network_risk {
                row.push(n.into());
            }
            raw.push(row);
        }
        let risks: Vec<f64> = cells_t.iter().map(|c| c.kernel_risk).collect();
        let (mean, std) = mean_std(&risks);
        let row = CurveRow {
            t,
            lambda_used: lambda,
            eta_used: eta,
            excess_risk: mean,
            excess_risk_std: std,
            seed_count: risks.len(),
        };
        curve.push(vec![
            t.into(),
            lambda.into(),
            eta.into(),
            mean.into(),
            std.into(),
            risks.len().into(),
        ]);
        rows.push(row.clone());
        if c.network_check {
            let nr: Vec<f64> = cells_t.iter().filter_map(|c| c.network_risk).collect();
            let (m, s) = mean_std(&nr);
            network_rows.push(CurveRow {
                excess_risk: m,
                excess_risk_std: s,
                ..row
            });
        }
    }
    let theory = slope_theory(r, beta);
    let fit = fit_curve(&rows, theory, c.tolerance);
    if !fit.slope_hat.is_finite() {
        return Err(Error::Singular("learning curve has a zero or non-finite mean excess risk".into()));
    }
    let mut report = json!({
        "rate_fit": fit,
        "beta": beta,
        "beta_source": setup.beta_source,
        "beta_fit_r2": setup.beta_fit_r2,
        "r": r,
        "target_norm_sq": setup.target.l2_norm_sq(),
        "curve": rows,
    });
    if c.network_check {
        report["network_rate_fit"] = json!(fit_curve(&network_rows, theory, c.tolerance));
        report["network_curve"] = json!(network_rows);
    }
    Ok(Outcome {
        tables: vec![curve, raw],
        report,
    })
}
