//! Experiment configuration documents.
//!
//! Each experiment kind has its own struct with `deny_unknown_fields` and
//! kind-specific defaults, so a config only needs the keys it changes.
//! Dotted `key=value` overrides are applied to the parsed document before
//! typing, last one wins.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::activation::{Activation, ActivationSpec};
use crate::kernel::Component;
use crate::source::TargetFunction;
use crate::trainer::LayerMask;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RateCheck,
    EquivalenceSweep,
    LayerwiseComparison,
    SpectrumFigure,
    SourceNorm,
    Train,
    ValidateKernel,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::RateCheck => "rate_check",
            ExperimentKind::EquivalenceSweep => "equivalence_sweep",
            ExperimentKind::LayerwiseComparison => "layerwise_comparison",
            ExperimentKind::SpectrumFigure => "spectrum_figure",
            ExperimentKind::SourceNorm => "source_norm",
            ExperimentKind::Train => "train",
            ExperimentKind::ValidateKernel => "validate_kernel",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        serde_json::from_value(Value::String(name.to_string())).ok()
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed-form targets for experiments that do not build one from a basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Zero,
    /// `scale · P_k(⟨direction, x⟩)`, direction defaulting to `e_1`.
    Zonal {
        degree: usize,
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<Vec<f64>>,
    },
}

impl TargetSpec {
    pub fn build(&self, d: usize) -> Result<TargetFunction> {
        match self {
            TargetSpec::Zero => Ok(TargetFunction::zero(d)),
            TargetSpec::Zonal {
                degree,
                scale,
                direction,
            } => {
                let dir = match direction {
                    Some(v) => v.clone(),
                    None => {
                        let mut e = vec![0.0; d];
                        e[0] = 1.0;
                        e
                    }
                };
                if dir.len() != d {
                    return Err(Error::Config(format!(
                        "target.direction has length {} but d={d}",
                        dir.len()
                    )));
                }
                TargetFunction::zonal(*degree, dir, *scale)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Network,
    Kernel,
}

fn relu() -> Activation {
    Activation::Relu
}

fn swish(s: f64) -> Activation {
    Activation::Swish { s }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumFigureConfig {
    pub experiment: Option<ExperimentKind>,
    pub d_list: Vec<usize>,
    pub activation: Activation,
    #[serde(rename = "R")]
    pub r_scale: f64,
    pub gamma: f64,
    /// Sample points of the empirical operator.
    pub n: usize,
    /// Random-feature width.
    #[serde(rename = "M")]
    pub m: usize,
    pub k_max: usize,
    pub quad_nodes: usize,
    /// 1-based inclusive index window of the decay fits.
    pub fit_range: [usize; 2],
    pub seeds: Vec<u64>,
    pub output_path: String,
}

impl Default for SpectrumFigureConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            d_list: vec![5, 10, 100],
            activation: relu(),
            r_scale: 1.0,
            gamma: 0.5,
            n: 2000,
            m: 1 << 13,
            k_max: 60,
            quad_nodes: 256,
            fit_range: [10, 500],
            seeds: vec![0],
            output_path: "spectrum".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceNormConfig {
    pub experiment: Option<ExperimentKind>,
    pub d: usize,
    pub activation: Activation,
    #[serde(rename = "R")]
    pub r_scale: f64,
    pub gamma: f64,
    /// Shared sample cloud size of the three operators.
    pub n: usize,
    /// Random-feature width of the operators.
    #[serde(rename = "M")]
    pub m: usize,
    /// Operators whose eigenbases specify the targets.
    pub target_operators: Vec<Component>,
    /// 1-based ranks averaged into each target.
    pub target_ranks: Vec<usize>,
    pub target_weight: f64,
    pub r_list: Vec<f64>,
    /// A norm is reported as infinite when more than this fraction of the
    /// target's mass sits on unresolvable eigen-directions.
    pub unbounded_tol: f64,
    pub seeds: Vec<u64>,
    pub output_path: String,
}

impl Default for SourceNormConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            d: 2,
            activation: swish(10.0),
            r_scale: 1.0 / (20.0 * 2f64.sqrt()),
            gamma: 10.0 * 2f64.sqrt(),
            n: 2000,
            m: 1 << 13,
            target_operators: vec![Component::OutputLayer, Component::InputLayer, Component::Full],
            target_ranks: (3..=12).collect(),
            target_weight: 0.1,
            r_list: vec![0.5, 0.75, 1.0],
            unbounded_tol: 1e-6,
            seeds: vec![0],
            output_path: "source_norm".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateCheckConfig {
    pub experiment: Option<ExperimentKind>,
    pub d: usize,
    pub activation: Activation,
    #[serde(rename = "R")]
    pub r_scale: f64,
    pub gamma: f64,
    /// Source exponent of the synthetic target.
    pub r: f64,
    /// Replaces the fitted capacity exponent when set.
    pub beta_override: Option<f64>,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Seed of the fixed initialization defining the kernel in use.
    pub init_seed: u64,
    #[serde(rename = "M")]
    pub m: usize,
    /// Sample points of the eigenbasis the target is built in.
    pub basis_n: usize,
    /// Number of leading eigenfunctions in the target.
    pub theta_count: usize,
    /// Upper bound `η₀` on the learning rate.
    pub eta: f64,
    pub theory_mode: bool,
    pub noise_std: f64,
    pub clip: bool,
    pub test_set_size: usize,
    pub k_max: usize,
    pub quad_nodes: usize,
    pub fit_range: [usize; 2],
    pub tolerance: f64,
    /// Also run the network trainer on each cell.
    pub network_check: bool,
    pub output_path: String,
}

impl Default for RateCheckConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            d: 3,
            activation: relu(),
            r_scale: 1.0,
            gamma: 0.5,
            r: 0.5,
            beta_override: None,
            t_grid: (8..=13).map(|k| 1usize << k).collect(),
            seeds: (0..5).collect(),
            init_seed: 0,
            m: 1 << 11,
            basis_n: 1000,
            theta_count: 30,
            eta: 1.0,
            theory_mode: true,
            noise_std: 0.1,
            clip: true,
            test_set_size: 4000,
            k_max: 60,
            quad_nodes: 256,
            fit_range: [10, 500],
            tolerance: 0.15,
            network_check: false,
            output_path: "rate_check".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceSweepConfig {
    pub experiment: Option<ExperimentKind>,
    pub d: usize,
    pub activation: Activation,
    #[serde(rename = "R")]
    pub r_scale: f64,
    pub gamma: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    #[serde(rename = "M_grid")]
    pub m_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub target: TargetSpec,
    pub noise_std: f64,
    pub clip: bool,
    pub test_set_size: usize,
    pub slope_theory: f64,
    pub slope_tolerance: f64,
    pub output_path: String,
}

impl Default for EquivalenceSweepConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            d: 3,
            activation: swish(5.0),
            r_scale: 1.0,
            gamma: 0.5,
            t: 50,
            eta: 0.04,
            lambda: 0.1,
            m_grid: (6..=12).map(|k| 1usize << k).collect(),
            seeds: (0..5).collect(),
            target: TargetSpec::Zonal {
                degree: 2,
                scale: 0.5,
                direction: None,
            },
            noise_std: 0.1,
            clip: true,
            test_set_size: 1000,
            slope_theory: -0.5,
            slope_tolerance: 0.2,
            output_path: "equivalence_sweep".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerwiseConfig {
    pub experiment: Option<ExperimentKind>,
    pub d: usize,
    pub activation: Activation,
    #[serde(rename = "R")]
    pub r_scale: f64,
    pub gamma: f64,
    /// Network width of the trained models.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub basis_n: usize,
    #[serde(rename = "basis_M")]
    pub basis_m: usize,
    pub target_operators: Vec<Component>,
    pub target_ranks: Vec<usize>,
    pub target_weight: f64,
    pub layers: Vec<LayerMask>,
    pub seeds: Vec<u64>,
    pub noise_std: f64,
    pub clip: bool,
    pub test_set_size: usize,
    /// Number of snapshots along each learning curve.
    pub snapshots: usize,
    pub r_list: Vec<f64>,
    pub unbounded_tol: f64,
    /// Seeds out of `seeds` in which the matched layer must win.
    pub min_wins: usize,
    /// Bound on `both / matched` final error.
    pub both_ratio: f64,
    pub output_path: String,
}

impl Default for LayerwiseConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            d: 2,
            activation: swish(10.0),
            r_scale: 1.0 / (20.0 * 2f64.sqrt()),
            gamma: 10.0 * 2f64.sqrt(),
            m: 512,
            t: 10_000,
            eta: 0.05,
            lambda: 1e-4,
            basis_n: 2000,
            basis_m: 1 << 13,
            target_operators: vec![Component::OutputLayer, Component::InputLayer, Component::Full],
            target_ranks: (3..=12).collect(),
            target_weight: 0.1,
            layers: vec![LayerMask::Output, LayerMask::Input, LayerMask::Both],
            seeds: (0..10).collect(),
            noise_std: 0.1,
            clip: true,
            test_set_size: 4000,
            snapshots: 16,
            r_list: vec![0.5, 0.75, 1.0],
            unbounded_tol: 1e-6,
            min_wins: 8,
            both_ratio: 1.2,
            output_path: "layerwise".into(),
        }
    }
}

impl LayerwiseConfig {
    /// The source-norm part of the experiment, on the same operators.
    pub fn source_norm_config(&self) -> SourceNormConfig {
        SourceNormConfig {
            experiment: Some(ExperimentKind::SourceNorm),
            d: self.d,
            activation: self.activation,
            r_scale: self.r_scale,
            gamma: self.gamma,
            n: self.basis_n,
            m: self.basis_m,
            target_operators: self.target_operators.clone(),
            target_ranks: self.target_ranks.clone(),
            target_weight: self.target_weight,
            r_list: self.r_list.clone(),
            unbounded_tol: self.unbounded_tol,
            seeds: vec![self.seeds[0]],
            output_path: format!("{}_norms", self.output_path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub experiment: Option<ExperimentKind>,
    pub trainer: TrainerKind,
    pub d: usize,
    pub activation: Activation,
    #[serde(rename = "R")]
    pub r_scale: f64,
    pub gamma: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub layers: LayerMask,
    pub theory_mode: bool,
    pub allow_nonsmooth: bool,
    pub seeds: Vec<u64>,
    pub target: TargetSpec,
    pub noise_std: f64,
    pub clip: bool,
    pub test_set_size: usize,
    pub snapshots: usize,
    pub output_path: String,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            trainer: TrainerKind::Network,
            d: 3,
            activation: swish(5.0),
            r_scale: 1.0,
            gamma: 0.5,
            m: 256,
            t: 2000,
            eta: 0.04,
            lambda: 0.01,
            layers: LayerMask::Both,
            theory_mode: false,
            allow_nonsmooth: false,
            seeds: vec![0],
            target: TargetSpec::Zonal {
                degree: 2,
                scale: 0.5,
                direction: None,
            },
            noise_std: 0.1,
            clip: true,
            test_set_size: 1000,
            snapshots: 12,
            output_path: "train".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateKernelConfig {
    pub experiment: Option<ExperimentKind>,
    pub d: usize,
    #[serde(rename = "R")]
    pub r_scale: f64,
    pub gamma: f64,
    pub pairs: usize,
    pub samples: usize,
    /// Allowed deviation in Monte Carlo standard errors.
    pub max_se: f64,
    pub seeds: Vec<u64>,
    pub output_path: String,
}

impl Default for ValidateKernelConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            d: 3,
            r_scale: 1.0,
            gamma: 0.5,
            pairs: 50,
            samples: 1_000_000,
            max_se: 3.0,
            seeds: vec![0],
            output_path: "validate_kernel".into(),
        }
    }
}

/// A typed configuration of any kind.
#[derive(Clone, Debug, PartialEq)]
pub enum ExperimentConfig {
    RateCheck(RateCheckConfig),
    EquivalenceSweep(EquivalenceSweepConfig),
    LayerwiseComparison(LayerwiseConfig),
    SpectrumFigure(SpectrumFigureConfig),
    SourceNorm(SourceNormConfig),
    Train(TrainRunConfig),
    ValidateKernel(ValidateKernelConfig),
}

fn check_increasing(name: &str, grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config(format!("{name} must not be empty")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{name} must be strictly increasing (got {grid:?})")));
    }
    Ok(())
}

fn check_activation(a: Activation) -> Result<()> {
    ActivationSpec::new(a).map(|_| ()).map_err(|e| Error::Config(format!("activation: {e}")))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name}={v} must be positive")));
    }
    Ok(())
}

fn check_ranks(ranks: &[usize]) -> Result<()> {
    if ranks.contains(&0) {
        return Err(Error::Config("target_ranks are 1-based".into()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            ExperimentConfig::RateCheck(_) => ExperimentKind::RateCheck,
            ExperimentConfig::EquivalenceSweep(_) => ExperimentKind::EquivalenceSweep,
            ExperimentConfig::LayerwiseComparison(_) => ExperimentKind::LayerwiseComparison,
            ExperimentConfig::SpectrumFigure(_) => ExperimentKind::SpectrumFigure,
            ExperimentConfig::SourceNorm(_) => ExperimentKind::SourceNorm,
            ExperimentConfig::Train(_) => ExperimentKind::Train,
            ExperimentConfig::ValidateKernel(_) => ExperimentKind::ValidateKernel,
        }
    }

    /// Defaults of a kind.
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::RateCheck => ExperimentConfig::RateCheck(Default::default()),
            ExperimentKind::EquivalenceSweep => ExperimentConfig::EquivalenceSweep(Default::default()),
            ExperimentKind::LayerwiseComparison => ExperimentConfig::LayerwiseComparison(Default::default()),
            ExperimentKind::SpectrumFigure => ExperimentConfig::SpectrumFigure(Default::default()),
            ExperimentKind::SourceNorm => ExperimentConfig::SourceNorm(Default::default()),
            ExperimentKind::Train => ExperimentConfig::Train(Default::default()),
            ExperimentKind::ValidateKernel => ExperimentConfig::ValidateKernel(Default::default()),
        }
        .with_kind_tag()
    }

    fn with_kind_tag(mut self) -> Self {
        let kind = Some(self.kind());
        match &mut self {
            ExperimentConfig::RateCheck(c) => c.experiment = kind,
            ExperimentConfig::EquivalenceSweep(c) => c.experiment = kind,
            ExperimentConfig::LayerwiseComparison(c) => c.experiment = kind,
            ExperimentConfig::SpectrumFigure(c) => c.experiment = kind,
            ExperimentConfig::SourceNorm(c) => c.experiment = kind,
            ExperimentConfig::Train(c) => c.experiment = kind,
            ExperimentConfig::ValidateKernel(c) => c.experiment = kind,
        }
        self
    }

    pub fn seeds(&self) -> &[u64] {
        match self {
            ExperimentConfig::RateCheck(c) => &c.seeds,
            ExperimentConfig::EquivalenceSweep(c) => &c.seeds,
            ExperimentConfig::LayerwiseComparison(c) => &c.seeds,
            ExperimentConfig::SpectrumFigure(c) => &c.seeds,
            ExperimentConfig::SourceNorm(c) => &c.seeds,
            ExperimentConfig::Train(c) => &c.seeds,
            ExperimentConfig::ValidateKernel(c) => &c.seeds,
        }
    }

    fn seeds_mut(&mut self) -> &mut Vec<u64> {
        match self {
            ExperimentConfig::RateCheck(c) => &mut c.seeds,
            ExperimentConfig::EquivalenceSweep(c) => &mut c.seeds,
            ExperimentConfig::LayerwiseComparison(c) => &mut c.seeds,
            ExperimentConfig::SpectrumFigure(c) => &mut c.seeds,
            ExperimentConfig::SourceNorm(c) => &mut c.seeds,
            ExperimentConfig::Train(c) => &mut c.seeds,
            ExperimentConfig::ValidateKernel(c) => &mut c.seeds,
        }
    }

    /// Replaces the seed list by `base, base+1, ...` keeping its length.
    pub fn rebase_seeds(&mut self, base: u64) {
        let seeds = self.seeds_mut();
        let n = seeds.len().max(1) as u64;
        *seeds = (0..n).map(|i| base.wrapping_add(i)).collect();
    }

    pub fn output_path(&self) -> &str {
        match self {
            ExperimentConfig::RateCheck(c) => &c.output_path,
            ExperimentConfig::EquivalenceSweep(c) => &c.output_path,
            ExperimentConfig::LayerwiseComparison(c) => &c.output_path,
            ExperimentConfig::SpectrumFigure(c) => &c.output_path,
            ExperimentConfig::SourceNorm(c) => &c.output_path,
            ExperimentConfig::Train(c) => &c.output_path,
            ExperimentConfig::ValidateKernel(c) => &c.output_path,
        }
    }

    /// The resolved document, with every key.
    pub fn to_value(&self) -> Value {
        let v = match self {
            ExperimentConfig::RateCheck(c) => serde_json::to_value(c),
            ExperimentConfig::EquivalenceSweep(c) => serde_json::to_value(c),
            ExperimentConfig::LayerwiseComparison(c) => serde_json::to_value(c),
            ExperimentConfig::SpectrumFigure(c) => serde_json::to_value(c),
            ExperimentConfig::SourceNorm(c) => serde_json::to_value(c),
            ExperimentConfig::Train(c) => serde_json::to_value(c),
            ExperimentConfig::ValidateKernel(c) => serde_json::to_value(c),
        };
        v.expect("config serializes")
    }

    /// SHA-256 of the resolved document, hex.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.to_value()).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds().is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.output_path().is_empty() || self.output_path().contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "output_path {:?} must be a plain file stem",
                self.output_path()
            )));
        }
        match self {
            ExperimentConfig::RateCheck(c) => {
                check_increasing("T_grid", &c.t_grid)?;
                check_activation(c.activation)?;
                check_positive("eta", c.eta)?;
                check_positive("M", c.m as f64)?;
                if !(0.0..=1.0).contains(&c.r) || c.r == 0.0 {
                    return Err(Error::Config(format!("r={} must lie in (0, 1]", c.r)));
                }
                if let Some(b) = c.beta_override {
                    check_positive("beta_override", b)?;
                }
                if c.theta_count == 0 || c.theta_count > c.basis_n {
                    return Err(Error::Config("theta_count must be in 1..=basis_n".into()));
                }
                if c.test_set_size == 0 {
                    return Err(Error::Config("test_set_size must be positive".into()));
                }
            }
            ExperimentConfig::EquivalenceSweep(c) => {
                check_increasing("M_grid", &c.m_grid)?;
                check_activation(c.activation)?;
                if let Some(m) = c.m_grid.iter().find(|m| *m % 2 == 1) {
                    return Err(Error::Config(format!("M_grid contains odd width {m}")));
                }
                if c.test_set_size == 0 {
                    return Err(Error::Config("test_set_size must be positive".into()));
                }
            }
            ExperimentConfig::LayerwiseComparison(c) => {
                check_activation(c.activation)?;
                check_ranks(&c.target_ranks)?;
                if c.layers.is_empty() || c.target_operators.is_empty() {
                    return Err(Error::Config("layers and target_operators must not be empty".into()));
                }
                if c.test_set_size == 0 {
                    return Err(Error::Config("test_set_size must be positive".into()));
                }
            }
            ExperimentConfig::SpectrumFigure(c) => {
                check_activation(c.activation)?;
                if c.d_list.is_empty() || c.d_list.iter().any(|&d| d < 2) {
                    return Err(Error::Config("d_list must be nonempty with every d >= 2".into()));
                }
                if c.fit_range[0] == 0 || c.fit_range[0] >= c.fit_range[1] {
                    return Err(Error::Config("fit_range must be [lo, hi] with 1 <= lo < hi".into()));
                }
            }
            ExperimentConfig::SourceNorm(c) => {
                check_activation(c.activation)?;
                check_ranks(&c.target_ranks)?;
                if c.r_list.iter().any(|r| !(0.0..=1.0).contains(r)) {
                    return Err(Error::Config("r_list entries must lie in [0, 1]".into()));
                }
            }
            ExperimentConfig::Train(c) => {
                check_activation(c.activation)?;
            }
            ExperimentConfig::ValidateKernel(c) => {
                if c.pairs == 0 || c.samples < 2 {
                    return Err(Error::Config("pairs must be positive and samples >= 2".into()));
                }
            }
        }
        Ok(())
    }
}

fn typed<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))
}

fn typed_text<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))
}

fn parse_typed(kind: ExperimentKind, source: Source<'_>) -> Result<ExperimentConfig> {
    macro_rules! go {
        ($variant:ident) => {
            ExperimentConfig::$variant(match source {
                Source::Text(t) => typed_text(t)?,
                Source::Value(v) => typed(v)?,
            })
        };
    }
    let cfg = match kind {
        ExperimentKind::RateCheck => go!(RateCheck),
        ExperimentKind::EquivalenceSweep => go!(EquivalenceSweep),
        ExperimentKind::LayerwiseComparison => go!(LayerwiseComparison),
        ExperimentKind::SpectrumFigure => go!(SpectrumFigure),
        ExperimentKind::SourceNorm => go!(SourceNorm),
        ExperimentKind::Train => go!(Train),
        ExperimentKind::ValidateKernel => go!(ValidateKernel),
    };
    Ok(cfg.with_kind_tag())
}

enum Source<'a> {
    Text(&'a str),
    Value(Value),
}

/// `key=value` with a dotted key path; the value is read as JSON when it
/// parses and as a string otherwise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Override {
    pub key: String,
    pub value: Value,
}

impl Override {
    pub fn parse(text: &str) -> Result<Self> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {text:?} is not key=value")))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(Error::Config(format!("override {text:?} has an empty key")));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(Self {
            key: key.to_string(),
            value,
        })
    }

    fn apply(&self, doc: &mut Value) -> Result<()> {
        let mut cur = doc;
        let parts: Vec<&str> = self.key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            cur = match cur {
                Value::Object(map) => {
                    if last {
                        // Switching a tagged variant drops the old variant's fields.
                        if *part == "kind" && map.get("kind") != Some(&self.value) {
                            map.clear();
                        }
                        map.insert(part.to_string(), self.value.clone());
                        return Ok(());
                    }
                    map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
                }
                Value::Array(items) => {
                    let idx: usize = part
                        .parse()
                        .map_err(|_| Error::Config(format!("override {}: {part:?} is not an index", self.key)))?;
                    let len = items.len();
                    let slot = items
                        .get_mut(idx)
                        .ok_or_else(|| Error::Config(format!("override {}: index {idx} out of range {len}", self.key)))?;
                    if last {
                        *slot = self.value.clone();
                        return Ok(());
                    }
                    slot
                }
                _ => {
                    return Err(Error::Config(format!(
                        "override {}: `{}` is not an object",
                        self.key,
                        parts[..i].join(".")
                    )))
                }
            };
        }
        Ok(())
    }
}

/// Deep merge of `top` over `base`. Objects with different `kind` tags are
/// distinct variants and are replaced whole.
fn merge(base: Value, top: Value) -> Value {
    match (base, top) {
        (Value::Object(mut b), Value::Object(t)) => {
            if t.get("kind").is_some_and(|k| b.get("kind") != Some(k)) {
                return Value::Object(t);
            }
            for (k, v) in t {
                let merged = match b.remove(&k) {
                    Some(old) => merge(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (_, t) => t,
    }
}

/// Builds a typed config of `kind` from optional document text and
/// overrides. The document's own `experiment` key, if present, must agree.
pub fn resolve_config(kind: ExperimentKind, text: Option<&str>, overrides: &[Override]) -> Result<ExperimentConfig> {
    let doc: Value = match text {
        Some(t) => serde_json::from_str(t).map_err(|e| Error::Config(format!("malformed config: {e}")))?,
        None => Value::Object(Default::default()),
    };
    if !doc.is_object() {
        return Err(Error::Config("config document must be a JSON object".into()));
    }
    if let Some(tag) = doc.get("experiment") {
        let named = tag.as_str().and_then(ExperimentKind::from_name);
        if named != Some(kind) {
            return Err(Error::Config(format!(
                "config declares experiment {tag} but the command runs {kind}"
            )));
        }
    }
    let cfg = if let (true, Some(text)) = (overrides.is_empty(), text) {
        // Typed straight from the text so diagnostics carry line and column.
        parse_typed(kind, Source::Text(text))?
    } else {
        // Overrides land on the defaults so a dotted key can change one
        // field of a nested object.
        let mut doc = merge(ExperimentConfig::default_for(kind).to_value(), doc);
        for o in overrides {
            o.apply(&mut doc)?;
        }
        parse_typed(kind, Source::Value(doc))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and resolves a config file.
pub fn load_config(kind: ExperimentKind, path: Option<&Path>, overrides: &[Override]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    resolve_config(kind, text.as_deref(), overrides).map_err(|e| match (e, path) {
        (Error::Config(msg), Some(p)) => Error::Config(format!("{}: {msg}", p.display())),
        (e, _) => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_validate() {
        for kind in [
            ExperimentKind::RateCheck,
            ExperimentKind::EquivalenceSweep,
            ExperimentKind::LayerwiseComparison,
            ExperimentKind::SpectrumFigure,
            ExperimentKind::SourceNorm,
            ExperimentKind::Train,
            ExperimentKind::ValidateKernel,
        ] {
            let c = ExperimentConfig::default_for(kind);
            c.validate().unwrap();
            let text = serde_json::to_string(&c.to_value()).unwrap();
            let back = resolve_config(kind, Some(&text), &[]).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
            assert_eq!(ExperimentKind::from_name(kind.name()), Some(kind));
        }
    }

    #[test]
    fn unknown_keys_and_bad_types_are_located() {
        let e = resolve_config(ExperimentKind::RateCheck, Some("{\n  \"T_grid\": [1, 2],\n  \"bogus\": 1\n}"), &[])
            .unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 3"), "{msg}");
        let e = resolve_config(ExperimentKind::RateCheck, Some("{\"T_grid\": [1, \"x\"]}"), &[]).unwrap_err();
        assert!(e.to_string().contains("T_grid[1]"), "{e}");
        let e = resolve_config(ExperimentKind::RateCheck, Some("{\"T_grid\": [1,"), &[]).unwrap_err();
        assert!(e.is_config_error());
    }

    #[test]
    fn grids_and_seeds_checked() {
        assert!(resolve_config(ExperimentKind::RateCheck, Some("{\"T_grid\": [4, 4]}"), &[]).is_err());
        assert!(resolve_config(ExperimentKind::RateCheck, Some("{\"seeds\": []}"), &[]).is_err());
        assert!(resolve_config(ExperimentKind::EquivalenceSweep, Some("{\"M_grid\": [4, 7]}"), &[]).is_err());
        assert!(resolve_config(ExperimentKind::Train, Some("{\"experiment\": \"rate_check\"}"), &[]).is_err());
    }

    #[test]
    fn overrides_last_wins_and_nest() {
        let ov = [
            Override::parse("T=10").unwrap(),
            Override::parse("T=20").unwrap(),
            Override::parse("activation.s=2.5").unwrap(),
            Override::parse("target.degree=3").unwrap(),
            Override::parse("M_grid.1=16").unwrap(),
        ];
        let text = "{\"M_grid\": [2, 4, 32]}";
        let c = resolve_config(ExperimentKind::EquivalenceSweep, Some(text), &ov).unwrap();
        let ExperimentConfig::EquivalenceSweep(c) = c else { panic!() };
        assert_eq!(c.t, 20);
        assert_eq!(c.activation, Activation::Swish { s: 2.5 });
        assert_eq!(c.m_grid, vec![2, 16, 32]);
        assert!(matches!(c.target, TargetSpec::Zonal { degree: 3, .. }));
        assert!(Override::parse("novalue").is_err());
        let relu = [Override::parse("activation.kind=relu").unwrap(), Override::parse("target.scale=2").unwrap()];
        let ExperimentConfig::EquivalenceSweep(c) = resolve_config(ExperimentKind::EquivalenceSweep, None, &relu).unwrap()
        else {
            panic!()
        };
        assert_eq!(c.activation, Activation::Relu);
        assert_eq!(c.target, TargetSpec::Zonal { degree: 2, scale: 2.0, direction: None });
        let s = Override::parse("output_path=run7").unwrap();
        assert_eq!(s.value, Value::String("run7".into()));
    }

    #[test]
    fn seed_rebase_keeps_count() {
        let mut c = ExperimentConfig::default_for(ExperimentKind::RateCheck);
        c.rebase_seeds(100);
        assert_eq!(c.seeds(), &[100, 101, 102, 103, 104]);
    }

    #[test]
    fn missing_file_names_path() {
        let e = load_config(ExperimentKind::Train, Some(Path::new("/nonexistent/cfg.json")), &[]).unwrap_err();
        assert!(e.is_config_error());
        assert!(e.to_string().contains("/nonexistent/cfg.json"));
    }
}
