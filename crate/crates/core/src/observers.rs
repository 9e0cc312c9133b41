//! Training-loop observers: per-module indicator readings, loss/accuracy,
//! dead-unit fractions, and the activation-pattern convergence observable
//! on a fixed probe batch.
//!
//! Observers read the forward trace and append to a [`TrajectoryLog`]; they
//! never touch parameters, the optimizer, or any RNG stream the training
//! path consumes, so a run with observers enabled is bit-identical to the
//! same run with observers disabled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{self, ActivationMask, ModuleId, OuiValue};
use crate::network::{Activation, ForwardTrace};

/// One reading of the indicator: (step, module, value). The run is
/// identified by the log the reading is appended to.
pub type OuiReading = OuiValue;

/// Metric names used in trajectory logs and run CSV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Raw per-module indicator on the configured source batch.
    Oui,
    /// Exponentially smoothed per-module indicator.
    OuiSmooth,
    TrainLoss,
    ValLoss,
    ValAcc,
    /// Fraction of probe-batch mask bits that flipped since the previous
    /// snapshot, over all modules.
    MaskChangeRate,
    /// Per-module fraction of units that never fire on the probe batch.
    DeadFraction,
    /// Per-layer decoupled weight-decay coefficient in effect.
    WeightDecay,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Oui => "oui",
            Metric::OuiSmooth => "oui_smooth",
            Metric::TrainLoss => "train_loss",
            Metric::ValLoss => "val_loss",
            Metric::ValAcc => "val_acc",
            Metric::MaskChangeRate => "mask_change_rate",
            Metric::DeadFraction => "dead_fraction",
            Metric::WeightDecay => "weight_decay",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Some(match s {
            "oui" => Metric::Oui,
            "oui_smooth" => Metric::OuiSmooth,
            "train_loss" => Metric::TrainLoss,
            "val_loss" => Metric::ValLoss,
            "val_acc" => Metric::ValAcc,
            "mask_change_rate" => Metric::MaskChangeRate,
            "dead_fraction" => Metric::DeadFraction,
            "weight_decay" => Metric::WeightDecay,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One appended observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub metric: Metric,
    pub module: Option<ModuleId>,
    pub value: f64,
}

/// Append-only time series of observations for one run. Steps are
/// nondecreasing overall and strictly increasing within each
/// (metric, module) stream; indicator values are checked against [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    run_id: String,
    fingerprint: String,
    rows: Vec<LogRow>,
}

impl TrajectoryLog {
    pub fn new(run_id: impl Into<String>, fingerprint: impl Into<String>) -> Self {
        TrajectoryLog {
            run_id: run_id.into(),
            fingerprint: fingerprint.into(),
            rows: Vec::new(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn push(
        &mut self,
        step: u64,
        metric: Metric,
        module: Option<ModuleId>,
        value: f64,
    ) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if step < last.step {
                return Err(Error::Log(format!(
                    "step {step} appended after step {}",
                    last.step
                )));
            }
        }
        if let Some(prev) = self
            .rows
            .iter()
            .rev()
            .find(|r| r.metric == metric && r.module == module)
        {
            if prev.step >= step {
                return Err(Error::Log(format!(
                    "duplicate or out-of-order step {step} for {metric} module {module:?}"
                )));
            }
        }
        if matches!(metric, Metric::Oui | Metric::OuiSmooth) && !(0.0..=1.0).contains(&value) {
            return Err(Error::Log(format!(
                "indicator value {value} outside [0, 1] at step {step}"
            )));
        }
        self.rows.push(LogRow {
            step,
            metric,
            module,
            value,
        });
        Ok(())
    }

    /// The (step, value) series for one metric stream.
    pub fn series(&self, metric: Metric, module: Option<ModuleId>) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && r.module == module)
            .map(|r| (r.step, r.value))
            .collect()
    }

    /// Sorted module ids that appear for the given metric.
    pub fn modules_for(&self, metric: Metric) -> Vec<ModuleId> {
        let mut ids: Vec<ModuleId> = self
            .rows
            .iter()
            .filter(|r| r.metric == metric)
            .filter_map(|r| r.module)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Last recorded (step, value) of a metric stream, any module.
    pub fn last_value(&self, metric: Metric) -> Option<(u64, f64)> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.metric == metric)
            .map(|r| (r.step, r.value))
    }

    pub fn max_step(&self) -> Option<u64> {
        self.rows.last().map(|r| r.step)
    }

    /// Per-step mean of a per-module metric over the given modules.
    /// Steps at which any module is missing are skipped.
    pub fn mean_over_modules(&self, metric: Metric, modules: &[ModuleId]) -> Vec<(u64, f64)> {
        if modules.is_empty() {
            return Vec::new();
        }
        let series: Vec<Vec<(u64, f64)>> = modules
            .iter()
            .map(|&m| self.series(metric, Some(m)))
            .collect();
        let first = &series[0];
        let mut out = Vec::with_capacity(first.len());
        'steps: for (i, &(step, v0)) in first.iter().enumerate() {
            let mut sum = v0;
            for s in &series[1..] {
                match s.get(i) {
                    Some(&(st, v)) if st == step => sum += v,
                    _ => continue 'steps,
                }
            }
            out.push((step, sum / modules.len() as f64));
        }
        out
    }
}

/// Per-module activation masks on the fixed probe batch at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSnapshot {
    pub step: u64,
    masks: Vec<ActivationMask>,
}

impl MaskSnapshot {
    pub fn masks(&self) -> &[ActivationMask] {
        &self.masks
    }
}

/// Computes one indicator reading per ReLU module from the trace.
pub fn record_oui(trace: &ForwardTrace, step: u64) -> Result<Vec<OuiReading>> {
    let relu_layers: Vec<usize> = trace
        .activations
        .iter()
        .enumerate()
        .filter(|(_, a)| **a == Activation::Relu)
        .map(|(i, _)| i)
        .collect();
    if relu_layers.is_empty() {
        return Err(Error::InvalidSpec(
            "trace has no ReLU modules to observe".into(),
        ));
    }
    relu_layers
        .into_iter()
        .map(|i| metric::oui_from_preactivations(&trace.preactivations[i], ModuleId(i), step))
        .collect()
}

/// Captures the activation masks of every ReLU module in the trace.
pub fn snapshot_masks(trace: &ForwardTrace, step: u64) -> Result<MaskSnapshot> {
    let masks: Result<Vec<ActivationMask>> = trace
        .activations
        .iter()
        .enumerate()
        .filter(|(_, a)| **a == Activation::Relu)
        .map(|(i, _)| metric::compute_masks(&trace.preactivations[i]))
        .collect();
    let masks = masks?;
    if masks.is_empty() {
        return Err(Error::InvalidSpec(
            "trace has no ReLU modules to snapshot".into(),
        ));
    }
    Ok(MaskSnapshot { step, masks })
}

/// Fraction of mask bits, over all modules, samples, and units, that
/// differ between two snapshots of the same probe batch.
pub fn mask_change_rate(prev: &MaskSnapshot, curr: &MaskSnapshot) -> Result<f64> {
    if prev.masks.len() != curr.masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} modules vs {}",
            prev.masks.len(),
            curr.masks.len()
        )));
    }
    let mut flipped = 0u64;
    let mut total = 0u64;
    for (a, b) in prev.masks.iter().zip(&curr.masks) {
        flipped += a.hamming_distance(b)?;
        total += (a.batch_size() * a.width()) as u64;
    }
    Ok(flipped as f64 / total as f64)
}

/// Fraction of units that never fire on the batch: |{n : s_n = 0}| / d.
pub fn dead_fraction(mask: &ActivationMask) -> f64 {
    let counts = metric::activation_counts(mask);
    let dead = counts.s().iter().filter(|&&s| s == 0).count();
    dead as f64 / mask.width() as f64
}

/// Exponential moving average: y_0 = x_0, y_t = alpha*x_t + (1-alpha)*y_{t-1}.
pub fn smooth(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Degenerate("cannot smooth an empty series".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "smoothing alpha must be in (0, 1], got {alpha}"
        )));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut y = series[0];
    out.push(y);
    for &x in &series[1..] {
        y = alpha * x + (1.0 - alpha) * y;
        out.push(y);
    }
    Ok(out)
}

/// Streaming form of [`smooth`] for online consumers (the controller).
#[derive(Debug, Clone)]
pub struct Ema {
    alpha: f64,
    state: Option<f64>,
}

impl Ema {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "smoothing alpha must be in (0, 1], got {alpha}"
            )));
        }
        Ok(Ema { alpha, state: None })
    }

    pub fn update(&mut self, x: f64) -> f64 {
        let y = match self.state {
            None => x,
            Some(prev) => self.alpha * x + (1.0 - self.alpha) * prev,
        };
        self.state = Some(y);
        y
    }

    pub fn value(&self) -> Option<f64> {
        self.state
    }
}
