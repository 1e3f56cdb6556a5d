//! Source-condition norms `‖Σ^{-r} g‖` of targets built from one operator's
//! eigenfunctions, measured under each of the output-layer, input-layer and
//! full operators on one shared sample cloud.

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use super::config::SourceNormConfig;
use super::output::{Outcome, Table};
use crate::activation::ActivationSpec;
use crate::kernel::{Component, KernelSpec};
use crate::model::symmetric_init;
use crate::numerics::{sample_sphere, streams, SeededRng};
use crate::source::{project_target, source_norm_report, synthesize_target, SourceNormReport, TargetFunction};
use crate::spectrum::{spectrum_from_points, SpectrumEstimate, VectorPolicy};
use crate::{Error, Result};

pub const OPERATORS: [Component; 3] = [Component::OutputLayer, Component::InputLayer, Component::Full];

/// The three operators' decompositions and the synthesized targets.
pub struct Bases {
    pub estimates: Vec<(Component, SpectrumEstimate)>,
    pub targets: Vec<(Component, Arc<TargetFunction>)>,
}

impl Bases {
    pub fn estimate(&self, c: Component) -> &SpectrumEstimate {
        &self.estimates.iter().find(|(k, _)| *k == c).expect("all three operators").1
    }
}

pub fn build_bases(c: &SourceNormConfig) -> Result<Bases> {
    let act = ActivationSpec::new(c.activation)?;
    let seed = c.seeds[0];
    let mut init_rng = SeededRng::new(seed, streams::INIT).derive(0xba5e);
    let init = Arc::new(symmetric_init(&mut init_rng, c.m, c.d, c.r_scale, c.gamma)?);
    let mut rng = SeededRng::new(seed, streams::BASIS);
    let points = Arc::new(sample_sphere(&mut rng, c.d, c.n)?);
    let estimates: Vec<(Component, SpectrumEstimate)> = OPERATORS
        .par_iter()
        .map(|&comp| {
            let kernel = KernelSpec::random_feature(init.clone(), act, comp)?;
            Ok((comp, spectrum_from_points(&kernel, points.clone(), VectorPolicy::All)?))
        })
        .collect::<Result<_>>()?;
    let indices: Vec<usize> = c.target_ranks.iter().map(|r| r - 1).collect();
    let weights = vec![c.target_weight; indices.len()];
    let mut targets = Vec::new();
    for &comp in &c.target_operators {
        let est = &estimates.iter().find(|(k, _)| *k == comp).expect("all three operators").1;
        targets.push((comp, Arc::new(synthesize_target(est, &indices, &weights)?)));
    }
    Ok(Bases { estimates, targets })
}

/// Coefficients of `target` in an operator's eigenbasis: its own when the
/// operator specified it, otherwise a projection on the shared cloud.
fn coefficients(bases: &Bases, spec_op: Component, target: &TargetFunction, op: Component) -> Result<Vec<(usize, f64)>> {
    if spec_op == op {
        return Ok(target.coefficients().iter().map(|(&i, &a)| (i, a)).collect());
    }
    let proj = project_target(target, bases.estimate(op))?;
    Ok(proj.into_iter().enumerate().collect())
}

#[derive(Clone, Debug)]
pub struct NormRow {
    pub target_operator: Component,
    pub r: f64,
    pub operator: Component,
    pub report: SourceNormReport,
    pub unbounded: bool,
}

impl NormRow {
    /// The norm, infinite when the target is not in the operator's range.
    pub fn value(&self) -> f64 {
        if self.unbounded {
            f64::INFINITY
        } else {
            self.report.norm
        }
    }
}

pub fn norm_rows(c: &SourceNormConfig, bases: &Bases) -> Result<Vec<NormRow>> {
    let mut rows = Vec::new();
    for (spec_op, target) in &bases.targets {
        for op in OPERATORS {
            let coeffs = coefficients(bases, *spec_op, target, op)?;
            let eigs = &bases.estimate(op).eigenvalues;
            for &r in &c.r_list {
                let report = source_norm_report(&coeffs, eigs, r)?;
                rows.push(NormRow {
                    target_operator: *spec_op,
                    r,
                    operator: op,
                    unbounded: report.is_unbounded(c.unbounded_tol),
                    report,
                });
            }
        }
    }
    Ok(rows)
}

/// Operators the specifying one is compared against. The full operator
/// dominates each layer's operator and commutes with it, so a single-layer
/// target is compared with the other single layer only.
pub fn rivals(spec_op: Component) -> &'static [Component] {
    match spec_op {
        Component::OutputLayer => &[Component::InputLayer],
        Component::InputLayer => &[Component::OutputLayer],
        Component::Full => &[Component::OutputLayer, Component::InputLayer],
    }
}

/// Whether the specifying operator gives the strictly smallest norm, per
/// `(target_operator, r)`.
pub fn ordering_checks(rows: &[NormRow]) -> Vec<(Component, f64, bool)> {
    let mut out = Vec::new();
    for row in rows.iter().filter(|r| r.operator == r.target_operator) {
        let own = row.value();
        let holds = rivals(row.target_operator).iter().all(|rival| {
            rows.iter()
                .find(|o| o.target_operator == row.target_operator && o.r == row.r && o.operator == *rival)
                .is_some_and(|o| own.is_finite() && own < o.value())
        });
        out.push((row.target_operator, row.r, holds));
    }
    out
}

pub fn norm_table(file_name: String, rows: &[NormRow]) -> Table {
    let mut t = Table::new(file_name, &["target_operator", "r", "operator_name", "norm", "excluded_mass"]);
    for row in rows {
        t.push(vec![
            row.target_operator.name().into(),
            row.r.into(),
            row.operator.name().into(),
            row.value().into(),
            row.report.excluded_mass.into(),
        ]);
    }
    t
}

pub fn norm_report(c: &SourceNormConfig, bases: &Bases, rows: &[NormRow]) -> serde_json::Value {
    let checks: Vec<_> = ordering_checks(rows)
        .into_iter()
        .map(|(op, r, holds)| json!({"target_operator": op.name(), "r": r, "smallest_under_own": holds}))
        .collect();
    let premise: Vec<_> = OPERATORS
        .iter()
        .map(|&op| {
            let top = bases.estimate(op).eigenvalues[0];
            json!({"operator": op.name(), "lambda_1": top, "all_at_most_one": top <= 1.0})
        })
        .collect();
    json!({
        "ordering": checks,
        "all_orderings_hold": checks.iter().all(|c| c["smallest_under_own"] == json!(true)),
        "eigenvalue_premise": premise,
        "unbounded_tol": c.unbounded_tol,
    })
}

pub fn run_source_norm(c: &SourceNormConfig) -> Result<Outcome> {
    if c.target_ranks.iter().any(|&r| r > c.n) {
        return Err(Error::Config(format!("target rank beyond n={}", c.n)));
    }
    let bases = build_bases(c)?;
    let rows = norm_rows(c, &bases)?;
    Ok(Outcome {
        tables: vec![norm_table(format!("{}.csv", c.output_path), &rows)],
        report: norm_report(c, &bases, &rows),
    })
}
