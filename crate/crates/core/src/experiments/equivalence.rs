//! Width sweep of the gap between the averaged network and the averaged
//! random-feature kernel predictor trained on the same stream.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::EquivalenceSweepConfig;
use super::output::{Outcome, Table};
use crate::activation::ActivationSpec;
use crate::model::symmetric_init;
use crate::numerics::{sample_sphere, streams, SeededRng};
use crate::spectrum::least_squares;
use crate::trainer::{asgd_kernel, asgd_network, equivalence_gap, Gap, SampleStream, TrainConfig};
use crate::{Error, Result};

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub sup_gap_median: f64,
    pub l2_gap_median: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepFit {
    /// Log-log slope of the median sup gap against `M`; NaN when a median
    /// is zero.
    pub slope_hat: f64,
    pub slope_theory: f64,
    pub tolerance: f64,
    pub strictly_decreasing: bool,
    pub slope_pass: bool,
}

pub fn fit_sweep(rows: &[SweepRow], slope_theory: f64, tolerance: f64) -> SweepFit {
    let xs: Vec<f64> = rows.iter().map(|r| (r.m as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sup_gap_median.ln()).collect();
    let slope = if rows.len() >= 2 && ys.iter().all(|y| y.is_finite()) {
        least_squares(&xs, &ys, None).0
    } else {
        f64::NAN
    };
    SweepFit {
        slope_hat: slope,
        slope_theory,
        tolerance,
        strictly_decreasing: rows.windows(2).all(|w| w[1].sup_gap_median < w[0].sup_gap_median),
        slope_pass: (slope - slope_theory).abs() <= tolerance,
    }
}

pub fn run_equivalence_sweep(c: &EquivalenceSweepConfig) -> Result<Outcome> {
    let act = ActivationSpec::new(c.activation)?;
    if let Some(m) = c.m_grid.iter().find(|m| *m % 2 == 1) {
        return Err(Error::invalid(format!("odd width M={m}")));
    }
    let target = Arc::new(c.target.build(c.d)?);
    let mut test_rng = SeededRng::new(c.seeds[0], streams::TEST_SET);
    let test = sample_sphere(&mut test_rng, c.d, c.test_set_size)?;
    let batches: Vec<_> = c
        .seeds
        .iter()
        .map(|&seed| SampleStream::new(target.clone(), c.noise_std, c.clip, seed)?.draw(c.t))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..c.m_grid.len())
        .flat_map(|mi| (0..c.seeds.len()).map(move |si| (mi, si)))
        .collect();
    let gaps: Vec<Gap> = jobs
        .par_iter()
        .map(|&(mi, si)| {
            let (m, seed) = (c.m_grid[mi], c.seeds[si]);
            let mut rng = SeededRng::new(seed, streams::INIT).derive(m as u64);
            let init = symmetric_init(&mut rng, m, c.d, c.r_scale, c.gamma)?;
            let mut cfg = TrainConfig::new(c.t, c.lambda, c.eta, seed);
            cfg.allow_nonsmooth = !act.is_smooth();
            let net = asgd_network(&init, &act, &cfg, &batches[si])?;
            let ker = asgd_kernel(Arc::new(init), &act, &cfg, &batches[si])?;
            equivalence_gap(&net, &act, &ker, &test, None)
        })
        .collect::<Result<_>>()?;

    let mut raw = Table::new(format!("{}_runs.csv", c.output_path), &["M", "seed", "sup_gap", "l2_gap"]);
    let mut table = Table::new(format!("{}.csv", c.output_path), &["M", "sup_gap_median", "l2_gap_median"]);
    let mut rows = Vec::new();
    for (mi, &m) in c.m_grid.iter().enumerate() {
        let g = &gaps[mi * c.seeds.len()..(mi + 1) * c.seeds.len()];
        for (si, gap) in g.iter().enumerate() {
            raw.push(vec![m.into(), c.seeds[si].into(), gap.sup_gap.into(), gap.l2_gap.into()]);
        }
        let sup: Vec<f64> = g.iter().map(|x| x.sup_gap).collect();
        let l2: Vec<f64> = g.iter().map(|x| x.l2_gap).collect();
        let row = SweepRow {
            m,
            sup_gap_median: median(&sup),
            l2_gap_median: median(&l2),
        };
        table.push(vec![m.into(), row.sup_gap_median.into(), row.l2_gap_median.into()]);
        rows.push(row);
    }
    let fit = fit_sweep(&rows, c.slope_theory, c.slope_tolerance);
    Ok(Outcome {
        tables: vec![table, raw],
        report: json!({ "fit": fit, "rows": rows, "outside_assumptions": !act.is_smooth() }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sweep_fit_on_exact_power() {
        let rows: Vec<SweepRow> = [64usize, 128, 256]
            .iter()
            .map(|&m| SweepRow {
                m,
                sup_gap_median: 2.0 / (m as f64).sqrt(),
                l2_gap_median: 1.0 / (m as f64).sqrt(),
            })
            .collect();
        let f = fit_sweep(&rows, -0.5, 0.2);
        assert!((f.slope_hat + 0.5).abs() < 1e-12);
        assert!(f.strictly_decreasing && f.slope_pass);
    }
}
