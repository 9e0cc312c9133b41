//! Run and grid configuration: one documented TOML format with nested
//! sections. Unknown keys are hard errors so that typos in sweep scripts
//! fail loudly instead of silently training the wrong thing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DelimitedSchema;
use crate::error::{Error, Result};
use crate::network::{Activation, LayerSpec};

fn default_run_id() -> Option<String> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Defaults to `run-s<seed>` when absent.
    #[serde(default = "default_run_id")]
    pub run_id: Option<String>,
    pub seed: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    /// Output directory; the CLI `--out` flag overrides it.
    #[serde(default)]
    pub out_dir: Option<String>,
}

/// Dataset selection. Generated datasets are pure functions of their
/// parameters; delimited files are z-scored per column with the training
/// split's statistics after the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        classes: usize,
        dim: usize,
        n_per_class: usize,
        spread: f64,
        seed: u64,
    },
    Spirals {
        turns: f64,
        n_per_class: usize,
        noise: f64,
        seed: u64,
    },
    Delimited {
        path: String,
        #[serde(flatten)]
        schema: DelimitedSchema,
    },
}

fn default_val_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Defaults to a stream derived from the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            val_fraction: default_val_fraction(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Full list of layer widths, input and output included, e.g.
    /// `[2, 64, 64, 2]`. Hidden layers are ReLU; the final layer is the
    /// identity over the logits.
    pub architecture: Vec<usize>,
}

impl ModelSection {
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        if self.architecture.len() < 3 {
            return Err(Error::InvalidConfig(
                "architecture needs input, at least one hidden layer, and output".into(),
            ));
        }
        Ok(self
            .architecture
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                input_dim: w[0],
                output_dim: w[1],
                activation: if i == self.architecture.len() - 2 {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect())
    }

    pub fn num_layers(&self) -> usize {
        self.architecture.len().saturating_sub(1)
    }
}

/// Scalar decay broadcasts to every layer; a list gives one coefficient
/// per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightDecaySetting {
    Scalar(f64),
    PerLayer(Vec<f64>),
}

impl WeightDecaySetting {
    pub fn per_layer(&self, num_layers: usize) -> Result<Vec<f64>> {
        match self {
            WeightDecaySetting::Scalar(v) => Ok(vec![*v; num_layers]),
            WeightDecaySetting::PerLayer(v) => {
                if v.len() != num_layers {
                    return Err(Error::InvalidConfig(format!(
                        "{} weight-decay values for {} layers",
                        v.len(),
                        num_layers
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub weight_decay: WeightDecaySetting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuiSource {
    /// Compute the indicator on each step's training batch (default).
    Train,
    /// Compute it on the fixed probe batch instead.
    Probe,
}

fn default_true() -> bool {
    true
}
fn default_probe_size() -> usize {
    256
}
fn default_snapshot_cadence() -> u64 {
    10
}
fn default_eval_cadence() -> u64 {
    50
}
fn default_alpha() -> f64 {
    0.1
}
fn default_oui_source() -> OuiSource {
    OuiSource::Train
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
    /// Steps between probe-batch mask snapshots.
    #[serde(default = "default_snapshot_cadence")]
    pub snapshot_cadence: u64,
    /// Steps between validation evaluations.
    #[serde(default = "default_eval_cadence")]
    pub eval_cadence: u64,
    /// EMA coefficient for the smoothed indicator stream.
    #[serde(default = "default_alpha")]
    pub smoothing_alpha: f64,
    #[serde(default = "default_oui_source")]
    pub oui_source: OuiSource,
}

impl Default for ObserverSection {
    fn default() -> Self {
        ObserverSection {
            enabled: true,
            probe_size: default_probe_size(),
            snapshot_cadence: default_snapshot_cadence(),
            eval_cadence: default_eval_cadence(),
            smoothing_alpha: default_alpha(),
            oui_source: default_oui_source(),
        }
    }
}

/// Online layer-wise weight-decay adaptation. The law is multiplicative
/// with clipping:
///
/// ```text
/// wd_l <- clip(wd_l * exp(eta * (smoothed_oui_l - target)), wd_min, wd_max)
/// ```
///
/// With `eta > 0`, an indicator above target increases that layer's decay
/// and below target decreases it; `eta` may be negated in config to flip
/// the convention, and the sign in effect is recorded in the run sidecar.
/// `eta = 0` is the identity, which makes paired A/B runs exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Desired indicator level per module, in (0, 1).
    pub target: f64,
    /// Gain of the multiplicative law; 0 disables adaptation.
    pub eta: f64,
    /// Steps between controller applications.
    pub cadence: u64,
    pub wd_min: f64,
    pub wd_max: f64,
    /// EMA coefficient for the indicator stream the controller reads.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "controller target must be in (0, 1), got {}",
                self.target
            )));
        }
        if !self.eta.is_finite() {
            return Err(Error::InvalidConfig("controller eta must be finite".into()));
        }
        if self.cadence == 0 {
            return Err(Error::InvalidConfig(
                "controller cadence must be at least 1".into(),
            ));
        }
        if !(self.wd_min > 0.0) || !(self.wd_max > 0.0) || self.wd_min > self.wd_max {
            return Err(Error::InvalidConfig(format!(
                "controller bounds must satisfy 0 < wd_min <= wd_max, got [{}, {}]",
                self.wd_min, self.wd_max
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "controller alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Complete configuration for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitSection,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub observers: ObserverSection,
    #[serde(default)]
    pub controller: Option<ControllerConfig>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run.total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be at least 1".into()));
        }
        if self.run.batch_size < 2 {
            return Err(Error::InvalidBatch(self.run.batch_size));
        }
        let specs = self.model.layer_specs()?;
        crate::network::validate_specs(&specs)?;
        if self.model.architecture.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("architecture widths must be >= 1".into()));
        }
        if !(self.split.val_fraction > 0.0 && self.split.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must be in (0, 1), got {}",
                self.split.val_fraction
            )));
        }
        let opt = &self.optimizer;
        if !opt.learning_rate.is_finite() || opt.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and nonnegative, got {}",
                opt.learning_rate
            )));
        }
        if !opt.momentum.is_finite() || !(0.0..1.0).contains(&opt.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                opt.momentum
            )));
        }
        let decay = opt.weight_decay.per_layer(self.model.num_layers())?;
        if decay.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(
                "weight decay must be finite and nonnegative".into(),
            ));
        }
        let obs = &self.observers;
        if obs.probe_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "probe_size must be at least 2, got {}",
                obs.probe_size
            )));
        }
        if obs.snapshot_cadence == 0 || obs.eval_cadence == 0 {
            return Err(Error::InvalidConfig("cadences must be at least 1".into()));
        }
        if !(obs.smoothing_alpha > 0.0 && obs.smoothing_alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "smoothing_alpha must be in (0, 1], got {}",
                obs.smoothing_alpha
            )));
        }
        if let Some(ctrl) = &self.controller {
            ctrl.validate()?;
            for (i, wd) in decay.iter().enumerate() {
                if *wd < ctrl.wd_min || *wd > ctrl.wd_max {
                    return Err(Error::InvalidConfig(format!(
                        "initial weight decay {wd} of layer {i} lies outside controller bounds [{}, {}]",
                        ctrl.wd_min, ctrl.wd_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// Effective run id: configured, or derived from the seed.
    pub fn run_id(&self) -> String {
        self.run
            .run_id
            .clone()
            .unwrap_or_else(|| format!("run-s{}", self.run.seed))
    }

    /// Stable content hash of the full configuration (hex SHA-256 of its
    /// canonical JSON encoding).
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// The screening grid: a base run config plus one swept axis, a list of
/// values, and a list of seeds. Every (value, seed) pair becomes one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    WeightDecay,
    LearningRate,
}

impl GridAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridAxis::WeightDecay => "weight_decay",
            GridAxis::LearningRate => "learning_rate",
        }
    }
}

fn default_noise_multiplier() -> f64 {
    2.0
}
fn default_persistence_fraction() -> f64 {
    0.05
}
fn default_early_fraction() -> f64 {
    0.15
}
fn default_single_seed_epsilon() -> f64 {
    0.02
}

/// Late-window indicator bands for regime classification; thresholds are
/// explicit configuration, not universal constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeBands {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub axis: GridAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Noise band = multiplier x max within-config seed std of the
    /// smoothed indicator.
    #[serde(default = "default_noise_multiplier")]
    pub noise_multiplier: f64,
    /// Length of the persistence window as a fraction of total steps.
    #[serde(default = "default_persistence_fraction")]
    pub persistence_fraction: f64,
    /// Early-window endpoint as a fraction of total steps.
    #[serde(default = "default_early_fraction")]
    pub early_fraction: f64,
    /// Absolute band used when seed noise cannot be estimated.
    #[serde(default = "default_single_seed_epsilon")]
    pub single_seed_epsilon: f64,
    /// EMA coefficient applied to indicator series before analysis.
    #[serde(default = "default_alpha")]
    pub smoothing_alpha: f64,
    #[serde(default)]
    pub bands: Option<RegimeBands>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub grid: GridSection,
    #[serde(flatten)]
    pub base: RunConfig,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let g = &self.grid;
        if g.values.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "grid needs at least 2 axis values, got {}",
                g.values.len()
            )));
        }
        if g.seeds.is_empty() {
            return Err(Error::InvalidSpec("grid needs at least 1 seed".into()));
        }
        if g.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "grid values must be positive and finite".into(),
            ));
        }
        if !(g.noise_multiplier > 0.0) {
            return Err(Error::InvalidConfig("noise_multiplier must be positive".into()));
        }
        if !(g.persistence_fraction > 0.0 && g.persistence_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "persistence_fraction must be in (0, 1]".into(),
            ));
        }
        if !(g.early_fraction > 0.0 && g.early_fraction <= 1.0) {
            return Err(Error::InvalidConfig("early_fraction must be in (0, 1]".into()));
        }
        if !(g.single_seed_epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "single_seed_epsilon must be positive".into(),
            ));
        }
        if !(g.smoothing_alpha > 0.0 && g.smoothing_alpha <= 1.0) {
            return Err(Error::InvalidConfig(
                "grid smoothing_alpha must be in (0, 1]".into(),
            ));
        }
        if let Some(b) = &g.bands {
            if !(0.0 < b.low && b.low < b.high && b.high < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "bands must satisfy 0 < low < high < 1, got ({}, {})",
                    b.low, b.high
                )));
            }
        }
        Ok(())
    }

    /// The concrete run config for one (value, seed) grid point.
    pub fn run_for(&self, value: f64, seed: u64) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.run.seed = seed;
        cfg.run.run_id = Some(format!("{}-{:.3e}-s{}", self.grid.axis.as_str(), value, seed));
        match self.grid.axis {
            GridAxis::WeightDecay => {
                cfg.optimizer.weight_decay = WeightDecaySetting::Scalar(value);
            }
            GridAxis::LearningRate => {
                cfg.optimizer.learning_rate = value;
            }
        }
        cfg
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        Error::InvalidConfig(format!("{}: {}", path.display(), e.to_string().trim()))
    })
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let cfg: RunConfig = parse_toml(path, &text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_grid_config(path: impl AsRef<Path>) -> Result<GridConfig> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let cfg: GridConfig = parse_toml(path, &text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Shared fixture for tests across the crate.
#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn sample_run_config() -> RunConfig {
        RunConfig {
            run: RunSection {
                run_id: Some("sample".into()),
                seed: 7,
                total_steps: 50,
                batch_size: 8,
                out_dir: None,
            },
            dataset: DatasetConfig::Blobs {
                classes: 2,
                dim: 2,
                n_per_class: 40,
                spread: 0.6,
                seed: 3,
            },
            split: SplitSection::default(),
            model: ModelSection {
                architecture: vec![2, 8, 2],
            },
            optimizer: OptimizerSection {
                learning_rate: 0.05,
                momentum: 0.9,
                weight_decay: WeightDecaySetting::Scalar(1e-4),
            },
            observers: ObserverSection::default(),
            controller: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::sample_run_config;
    use super::*;

    #[test]
    fn toml_round_trip_is_lossless() {
        let cfg = sample_run_config();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let cfg = sample_run_config();
        let mut text = toml::to_string(&cfg).unwrap();
        text.push_str("\n[extra]\nnope = 1\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
        let typo = text.replace("batch_size", "batchsize");
        assert!(toml::from_str::<RunConfig>(&typo).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = sample_run_config();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.optimizer.learning_rate = 0.06;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut cfg = sample_run_config();
        cfg.run.batch_size = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = sample_run_config();
        cfg.model.architecture = vec![2, 2];
        assert!(cfg.validate().is_err());

        let mut cfg = sample_run_config();
        cfg.optimizer.momentum = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = sample_run_config();
        cfg.controller = Some(ControllerConfig {
            target: 0.5,
            eta: 1.0,
            cadence: 10,
            wd_min: 1e-3,
            wd_max: 1e-4, // inverted
            alpha: 0.1,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn controller_bounds_must_contain_initial_decay() {
        let mut cfg = sample_run_config();
        cfg.controller = Some(ControllerConfig {
            target: 0.5,
            eta: 0.0,
            cadence: 10,
            wd_min: 1e-3,
            wd_max: 1e-1,
            alpha: 0.1,
        });
        // initial decay 1e-4 lies below wd_min
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn grid_expansion_sets_axis_value() {
        let grid = GridConfig {
            grid: GridSection {
                axis: GridAxis::WeightDecay,
                values: vec![1e-4, 1e-2],
                seeds: vec![1, 2],
                noise_multiplier: default_noise_multiplier(),
                persistence_fraction: default_persistence_fraction(),
                early_fraction: default_early_fraction(),
                single_seed_epsilon: default_single_seed_epsilon(),
                smoothing_alpha: default_alpha(),
                bands: None,
            },
            base: sample_run_config(),
        };
        grid.validate().unwrap();
        let cfg = grid.run_for(1e-2, 2);
        assert_eq!(
            cfg.optimizer.weight_decay,
            WeightDecaySetting::Scalar(1e-2)
        );
        assert_eq!(cfg.run.seed, 2);
    }

    #[test]
    fn grid_requires_two_values() {
        let mut grid = GridConfig {
            grid: GridSection {
                axis: GridAxis::WeightDecay,
                values: vec![1e-4],
                seeds: vec![1],
                noise_multiplier: default_noise_multiplier(),
                persistence_fraction: default_persistence_fraction(),
                early_fraction: default_early_fraction(),
                single_seed_epsilon: default_single_seed_epsilon(),
                smoothing_alpha: default_alpha(),
                bands: None,
            },
            base: sample_run_config(),
        };
        assert!(grid.validate().is_err());
        grid.grid.values = vec![1e-4, 1e-3];
        assert!(grid.validate().is_ok());
    }
}
