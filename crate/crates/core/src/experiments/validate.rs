//! Closed-form ReLU kernels against Monte Carlo estimates at random pairs.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::ValidateKernelConfig;
use super::output::{Outcome, Table};
use crate::activation::ActivationSpec;
use crate::kernel::{kernel_eval, monte_carlo_stats, Component, KernelSpec};
use crate::numerics::{sample_sphere, streams, SeededRng};
use crate::Result;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ComponentDeviation {
    pub component: &'static str,
    /// Largest `|mc - exact| / stderr` over the pairs.
    pub max_se: f64,
    pub max_abs: f64,
    pub pass: bool,
}

pub fn run_validate_kernel(c: &ValidateKernelConfig) -> Result<Outcome> {
    let seed = c.seeds[0];
    let mut rng = SeededRng::new(seed, streams::PROPERTY);
    let xs = sample_sphere(&mut rng, c.d, c.pairs)?;
    let ys = sample_sphere(&mut rng, c.d, c.pairs)?;
    let mut mc_rng = SeededRng::new(seed, streams::MONTE_CARLO);
    let mc = KernelSpec::monte_carlo(Component::Full, ActivationSpec::relu(), c.gamma, c.r_scale, c.d, c.samples, &mut mc_rng)?;
    let comps = [Component::OutputLayer, Component::InputLayer, Component::Full];
    let mut table = Table::new(
        format!("{}.csv", c.output_path),
        &["component", "pair", "closed_form", "monte_carlo", "stderr", "deviation_se"],
    );
    let mut summary = Vec::new();
    for comp in comps {
        let closed = KernelSpec::closed_form_relu(comp, c.gamma, c.r_scale);
        let mc = mc.with_component(comp);
        let rows: Vec<(f64, f64, f64)> = (0..c.pairs)
            .into_par_iter()
            .map(|i| {
                let x = xs.row(i).to_vec();
                let y = ys.row(i).to_vec();
                let exact = kernel_eval(&closed, &x, &y)?;
                let (mean, se) = monte_carlo_stats(&mc, &x, &y)?;
                Ok((exact, mean, se))
            })
            .collect::<Result<_>>()?;
        let (mut max_se, mut max_abs) = (0.0f64, 0.0f64);
        for (i, &(exact, mean, se)) in rows.iter().enumerate() {
            let dev = (mean - exact).abs();
            let z = if se > 0.0 { dev / se } else if dev == 0.0 { 0.0 } else { f64::INFINITY };
            max_se = max_se.max(z);
            max_abs = max_abs.max(dev);
            table.push(vec![comp.name().into(), i.into(), exact.into(), mean.into(), se.into(), z.into()]);
        }
        summary.push(ComponentDeviation {
            component: comp.name(),
            max_se,
            max_abs,
            pass: max_se <= c.max_se,
        });
    }
    let pass = summary.iter().all(|s| s.pass);
    Ok(Outcome {
        tables: vec![table],
        report: json!({ "components": summary, "pass": pass, "samples": c.samples, "pairs": c.pairs }),
    })
}
