//! Output-only, input-only and both-layer training of a network on targets
//! built from each operator's eigenfunctions, with the matching norm table.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::LayerwiseConfig;
use super::output::{Outcome, Table};
use super::rate::mean_std;
use super::source_norm::{build_bases, norm_report, norm_rows, norm_table};
use crate::activation::ActivationSpec;
use crate::kernel::Component;
use crate::model::symmetric_init;
use crate::numerics::{sample_sphere, streams, SeededRng};
use crate::trainer::{asgd_network, excess_risk, geometric_schedule, predict_network, LayerMask, SampleStream, TrainConfig};
use crate::{Error, Result};

/// The layer mask whose kernel is the specifying operator.
pub fn matched_layers(op: Component) -> LayerMask {
    match op {
        Component::OutputLayer => LayerMask::Output,
        Component::InputLayer => LayerMask::Input,
        Component::Full => LayerMask::Both,
    }
}

fn mismatched(op: Component) -> &'static [LayerMask] {
    match op {
        Component::OutputLayer => &[LayerMask::Input],
        Component::InputLayer => &[LayerMask::Output],
        Component::Full => &[LayerMask::Output, LayerMask::Input],
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TargetVerdict {
    pub target_operator: &'static str,
    pub matched_layers: &'static str,
    pub wins: usize,
    pub seeds: usize,
    pub min_wins: usize,
    pub wins_pass: bool,
    /// Mean final error of both-layer training over the matched single
    /// layer's; `None` for the full-operator target.
    pub both_ratio: Option<f64>,
    pub both_ratio_pass: Option<bool>,
}

pub fn run_layerwise_comparison(c: &LayerwiseConfig) -> Result<Outcome> {
    let act = ActivationSpec::new(c.activation)?;
    for op in &c.target_operators {
        for l in std::iter::once(&matched_layers(*op)).chain(mismatched(*op)) {
            if !c.layers.contains(l) {
                return Err(Error::Config(format!(
                    "layers must include {} to judge the {} target",
                    l.name(),
                    op.name()
                )));
            }
        }
    }
    let snc = c.source_norm_config();
    if c.target_ranks.iter().any(|&r| r > snc.n) {
        return Err(Error::Config(format!("target rank beyond basis_n={}", snc.n)));
    }
    let bases = build_bases(&snc)?;
    let norms = norm_rows(&snc, &bases)?;

    let schedule = geometric_schedule(c.t, c.snapshots);
    let per_seed: Vec<_> = c
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = SeededRng::new(seed, streams::INIT);
            let init = symmetric_init(&mut rng, c.m, c.d, c.r_scale, c.gamma)?;
            let mut test_rng = SeededRng::new(seed, streams::TEST_SET);
            let test = sample_sphere(&mut test_rng, c.d, c.test_set_size)?;
            Ok((init, test))
        })
        .collect::<Result<_>>()?;

    // (target, seed) cells share one stream across layer modes.
    let cells: Vec<(usize, usize)> = (0..bases.targets.len())
        .flat_map(|ti| (0..c.seeds.len()).map(move |si| (ti, si)))
        .collect();
    // curves[cell][layer][snapshot]
    let curves: Vec<Vec<Vec<f64>>> = cells
        .par_iter()
        .map(|&(ti, si)| {
            let target = &bases.targets[ti].1;
            let seed = c.seeds[si];
            let (init, test) = &per_seed[si];
            let truth = target.eval_rows(test)?;
            let batch = SampleStream::new(target.clone(), c.noise_std, c.clip, seed)?.draw(c.t)?;
            c.layers
                .par_iter()
                .map(|&layers| {
                    let mut cfg = TrainConfig::new(c.t, c.lambda, c.eta, seed);
                    cfg.layers = layers;
                    cfg.allow_nonsmooth = !act.is_smooth();
                    cfg.snapshot_schedule = schedule.clone();
                    let run = asgd_network(init, &act, &cfg, &batch)?;
                    run.snapshots
                        .iter()
                        .map(|s| Ok(excess_risk(&predict_network(&s.state, &act, test)?, &truth)))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let cell_of = |ti: usize, si: usize| &curves[ti * c.seeds.len() + si];
    let layer_idx = |l: LayerMask| c.layers.iter().position(|&x| x == l).expect("checked above");

    let mut curve_table = Table::new(
        format!("{}.csv", c.output_path),
        &["target_operator", "layers", "t", "excess_risk", "excess_risk_std", "seed_count"],
    );
    let mut final_table = Table::new(
        format!("{}_final.csv", c.output_path),
        &["target_operator", "seed", "layers", "final_excess_risk"],
    );
    let mut verdicts = Vec::new();
    for (ti, (op, _)) in bases.targets.iter().enumerate() {
        for (li, layers) in c.layers.iter().enumerate() {
            for (k, &t) in schedule.iter().enumerate() {
                let vals: Vec<f64> = (0..c.seeds.len()).map(|si| cell_of(ti, si)[li][k]).collect();
                let (mean, std) = mean_std(&vals);
                curve_table.push(vec![
                    op.name().into(),
                    layers.name().into(),
                    t.into(),
                    mean.into(),
                    std.into(),
                    vals.len().into(),
                ]);
            }
            for (si, &seed) in c.seeds.iter().enumerate() {
                let last = *cell_of(ti, si)[li].last().expect("schedule ends at T");
                final_table.push(vec![op.name().into(), seed.into(), layers.name().into(), last.into()]);
            }
        }
        let final_err = |si: usize, l: LayerMask| *cell_of(ti, si)[layer_idx(l)].last().expect("nonempty");
        let matched = matched_layers(*op);
        let wins = (0..c.seeds.len())
            .filter(|&si| {
                let own = final_err(si, matched);
                mismatched(*op).iter().all(|&l| own < final_err(si, l))
            })
            .count();
        let (both_ratio, both_ratio_pass) = if matched != LayerMask::Both && c.layers.contains(&LayerMask::Both) {
            let mean = |l: LayerMask| (0..c.seeds.len()).map(|si| final_err(si, l)).sum::<f64>() / c.seeds.len() as f64;
            let ratio = mean(LayerMask::Both) / mean(matched);
            (Some(ratio), Some(ratio <= c.both_ratio))
        } else {
            (None, None)
        };
        verdicts.push(TargetVerdict {
            target_operator: op.name(),
            matched_layers: matched.name(),
            wins,
            seeds: c.seeds.len(),
            min_wins: c.min_wins,
            wins_pass: wins >= c.min_wins,
            both_ratio,
            both_ratio_pass,
        });
    }

    Ok(Outcome {
        tables: vec![curve_table, final_table, norm_table(format!("{}_norms.csv", c.output_path), &norms)],
        report: json!({
            "verdicts": verdicts,
            "norms": norm_report(&snc, &bases, &norms),
            "schedule": schedule,
            "outside_assumptions": !act.is_smooth(),
            "target_norm_sq": bases.targets.iter().map(|(op, t)| json!({"target_operator": op.name(), "l2_norm_sq": t.l2_norm_sq()})).collect::<Vec<_>>(),
        }),
    })
}
