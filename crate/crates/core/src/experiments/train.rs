//! Single training runs with learning curves on a closed-form target.

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use super::config::{TrainRunConfig, TrainerKind};
use super::output::{Outcome, Table};
use crate::activation::ActivationSpec;
use crate::model::symmetric_init;
use crate::numerics::{sample_sphere, streams, SeededRng};
use crate::trainer::{
    asgd_kernel, asgd_network, excess_risk, geometric_schedule, predict_linear, predict_network, SampleStream, TrainConfig,
};
use crate::Result;

pub fn run_train(c: &TrainRunConfig) -> Result<Outcome> {
    let act = ActivationSpec::new(c.activation)?;
    let target = Arc::new(c.target.build(c.d)?);
    let schedule = geometric_schedule(c.t, c.snapshots);
    let runs: Vec<(Vec<f64>, serde_json::Value)> = c
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = SeededRng::new(seed, streams::INIT);
            let init = symmetric_init(&mut rng, c.m, c.d, c.r_scale, c.gamma)?;
            let mut test_rng = SeededRng::new(seed, streams::TEST_SET);
            let test = sample_sphere(&mut test_rng, c.d, c.test_set_size)?;
            let truth = target.eval_rows(&test)?;
            let batch = SampleStream::new(target.clone(), c.noise_std, c.clip, seed)?.draw(c.t)?;
            let mut cfg = TrainConfig::new(c.t, c.lambda, c.eta, seed);
            cfg.layers = c.layers;
            cfg.theory_mode = c.theory_mode;
            cfg.allow_nonsmooth = c.allow_nonsmooth;
            cfg.snapshot_schedule = schedule.clone();
            match c.trainer {
                TrainerKind::Network => {
                    let run = asgd_network(&init, &act, &cfg, &batch)?;
                    let risks = run
                        .snapshots
                        .iter()
                        .map(|s| Ok(excess_risk(&predict_network(&s.state, &act, &test)?, &truth)))
                        .collect::<Result<Vec<f64>>>()?;
                    let meta = json!({
                        "seed": seed,
                        "fingerprint": format!("{:016x}", run.fingerprint),
                        "outside_assumptions": run.outside_assumptions,
                        "averaged_params": run.averaged.to_json(),
                    });
                    Ok((risks, meta))
                }
                TrainerKind::Kernel => {
                    let run = asgd_kernel(Arc::new(init), &act, &cfg, &batch)?;
                    let risks = run
                        .snapshots
                        .iter()
                        .map(|s| Ok(excess_risk(&predict_linear(&run.iterate.with_average(s.state.clone()), &test)?, &truth)))
                        .collect::<Result<Vec<f64>>>()?;
                    let meta = json!({
                        "seed": seed,
                        "fingerprint": format!("{:016x}", run.fingerprint),
                        "feature_weights_norm": run.iterate.w_avg.iter().map(|w| w * w).sum::<f64>().sqrt(),
                    });
                    Ok((risks, meta))
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(format!("{}.csv", c.output_path), &["seed", "t", "excess_risk"]);
    for (&seed, (risks, _)) in c.seeds.iter().zip(&runs) {
        for (&t, &r) in schedule.iter().zip(risks) {
            table.push(vec![seed.into(), t.into(), r.into()]);
        }
    }
    Ok(Outcome {
        tables: vec![table],
        report: json!({
            "trainer": c.trainer,
            "target_norm_sq": target.l2_norm_sq(),
            "runs": runs.into_iter().map(|(_, m)| m).collect::<Vec<_>>(),
        }),
    })
}
