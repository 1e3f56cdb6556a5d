//! Config-driven experiments writing CSV tables, a JSON report and a
//! metadata sidecar.
//!
//! Grid cells are independent and run on the ambient rayon pool; results
//! are collected in grid order, so outputs do not depend on the pool size.

pub mod config;
pub mod equivalence;
pub mod layerwise;
pub mod output;
pub mod rate;
pub mod source_norm;
pub mod spectrum_figure;
pub mod train;
pub mod validate;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{load_config, resolve_config, ExperimentConfig, ExperimentKind, Override};
pub use output::{Cell, Outcome, Table};

use output::{ensure_dir, write_file, write_json, Sidecar};

use crate::Result;

/// Runs an experiment without touching the filesystem.
pub fn compute(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg {
        ExperimentConfig::RateCheck(c) => rate::run_rate_check(c),
        ExperimentConfig::EquivalenceSweep(c) => equivalence::run_equivalence_sweep(c),
        ExperimentConfig::LayerwiseComparison(c) => layerwise::run_layerwise_comparison(c),
        ExperimentConfig::SpectrumFigure(c) => spectrum_figure::run_spectrum_figure(c),
        ExperimentConfig::SourceNorm(c) => source_norm::run_source_norm(c),
        ExperimentConfig::Train(c) => train::run_train(c),
        ExperimentConfig::ValidateKernel(c) => validate::run_validate_kernel(c),
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub overrides: Vec<Override>,
    /// Record wall time in the sidecar (makes it run-dependent).
    pub timing: bool,
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: Outcome,
    pub sidecar: PathBuf,
    pub report: PathBuf,
    pub tables: Vec<PathBuf>,
}

pub fn sidecar_path(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    dir.join(format!("{}_meta.json", cfg.output_path()))
}

/// Writes the sidecar with status `started`, computes, then writes the
/// tables, the report and the completed sidecar. A crashed run leaves the
/// `started` sidecar behind.
pub fn run_and_write(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let dir = ensure_dir(&opts.out_dir)?;
    let sidecar = sidecar_path(&dir, cfg);
    let mut meta = Sidecar {
        experiment: cfg.kind().name().to_string(),
        status: "started",
        config_hash: cfg.hash(),
        config: cfg.to_value(),
        seeds: cfg.seeds().to_vec(),
        overrides: serde_json::to_value(&opts.overrides).expect("serializable"),
        jobs: None,
        wall_time_ms: None,
        outputs: Vec::new(),
    };
    write_json(&sidecar, &meta)?;
    let start = Instant::now();
    let outcome = compute(cfg)?;
    let mut tables = Vec::new();
    for t in &outcome.tables {
        let p = dir.join(&t.file_name);
        write_file(&p, &t.to_bytes())?;
        meta.outputs.push(t.file_name.clone());
        tables.push(p);
    }
    let report_name = format!("{}_report.json", cfg.output_path());
    let report = dir.join(&report_name);
    write_json(&report, &outcome.report)?;
    meta.outputs.push(report_name);
    meta.status = "complete";
    if opts.timing {
        meta.wall_time_ms = Some(start.elapsed().as_millis() as u64);
        meta.jobs = opts.jobs;
    }
    write_json(&sidecar, &meta)?;
    Ok(RunResult {
        outcome,
        sidecar,
        report,
        tables,
    })
}

/// `key = value` lines of the resolved config, for `--dry-run`.
pub fn parameter_table(cfg: &ExperimentConfig) -> String {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", &cfg.to_value(), &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in rows {
        s.push_str(&format!("{k:<width$}  {v}\n"));
    }
    s
}
