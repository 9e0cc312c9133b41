//! The single-run training loop: dataset assembly, deterministic seeding,
//! the SGD loop, observers, and optional weight-decay control.
//!
//! One run is strictly single-threaded and a pure function of its config.
//! Distinct runs share no mutable state and may execute in parallel.
//!
//! Seed streams are derived from the run seed with a splitmix step so that
//! the network init, the train/validation split, the probe-batch choice,
//! and each epoch's shuffle are independent: changing one consumer (for
//! example disabling observers, which skips the probe draw) cannot shift
//! the randomness any other consumer sees.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DatasetConfig, OuiSource, RunConfig};
use crate::controller::controller_step;
use crate::data::{batch_iter, load_delimited, make_blobs, make_spirals, Batch, Dataset};
use crate::error::{Error, Result};
use crate::metric::ModuleId;
use crate::network::{
    backward, evaluate, forward, init_network, loss_softmax_ce, sgd_step, Network, OptimizerState,
};
use crate::observers::{
    mask_change_rate, record_oui, snapshot_masks, Ema, MaskSnapshot, Metric, TrajectoryLog,
};

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_PROBE: u64 = 3;
const STREAM_EPOCH: u64 = 4;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for a named consumer stream of the run seed.
pub fn derive_seed(run_seed: u64, stream: u64) -> u64 {
    splitmix64(run_seed ^ splitmix64(stream))
}

fn epoch_seed(run_seed: u64, epoch: u64) -> u64 {
    splitmix64(derive_seed(run_seed, STREAM_EPOCH) ^ splitmix64(epoch))
}

/// Why and where a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceInfo {
    pub step: u64,
    pub reason: String,
}

/// Everything a completed (or diverged) run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub network: Network,
    pub diverged: Option<DivergenceInfo>,
    /// Mean validation loss under the final parameters; `None` for
    /// diverged runs.
    pub final_val_loss: Option<f64>,
    /// Validation accuracy under the final parameters; 0 for diverged
    /// runs so they participate in reports instead of vanishing.
    pub final_val_acc: f64,
    /// Number of optimizer steps actually executed.
    pub steps_run: u64,
}

/// Builds the raw dataset named by the config.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Blobs {
            classes,
            dim,
            n_per_class,
            spread,
            seed,
        } => make_blobs(*classes, *dim, *n_per_class, *spread, *seed),
        DatasetConfig::Spirals {
            turns,
            n_per_class,
            noise,
            seed,
        } => make_spirals(*turns, *n_per_class, *noise, *seed),
        DatasetConfig::Delimited { path, schema } => load_delimited(path, schema),
    }
}

/// Assembles the (train, validation) pair for a run: build, split, and for
/// delimited data z-score both splits with the training split's statistics.
pub fn prepare_splits(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let full = build_dataset(&cfg.dataset)?;
    let split_seed = cfg
        .split
        .seed
        .unwrap_or_else(|| derive_seed(cfg.run.seed, STREAM_SPLIT));
    let (mut train, mut val) = full.split(cfg.split.val_fraction, split_seed)?;
    if matches!(cfg.dataset, DatasetConfig::Delimited { .. }) {
        let stats = train.column_stats();
        train.standardize(&stats)?;
        val.standardize(&stats)?;
    }
    if cfg.run.batch_size > train.n() {
        return Err(Error::InvalidConfig(format!(
            "batch size {} exceeds training split size {}",
            cfg.run.batch_size,
            train.n()
        )));
    }
    if cfg.model.architecture[0] != train.dim() {
        return Err(Error::InvalidConfig(format!(
            "architecture input width {} does not match dataset dimension {}",
            cfg.model.architecture[0],
            train.dim()
        )));
    }
    if *cfg.model.architecture.last().unwrap() != train.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "architecture output width {} does not match {} classes",
            cfg.model.architecture.last().unwrap(),
            train.num_classes()
        )));
    }
    Ok((train, val))
}

/// Seeded fixed probe batch: `probe_size` training rows (clamped to the
/// split size), reused at every snapshot so that mask changes reflect
/// parameter movement rather than data change.
fn draw_probe(train: &Dataset, probe_size: usize, seed: u64) -> Array2<f64> {
    let size = probe_size.min(train.n()).max(2);
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.truncate(size);
    let (features, _) = train.gather(&order);
    features
}

struct BatchStream<'a> {
    train: &'a Dataset,
    batch_size: usize,
    run_seed: u64,
    epoch: u64,
    queue: std::collections::VecDeque<Batch>,
}

impl<'a> BatchStream<'a> {
    fn new(train: &'a Dataset, batch_size: usize, run_seed: u64) -> Self {
        BatchStream {
            train,
            batch_size,
            run_seed,
            epoch: 0,
            queue: std::collections::VecDeque::new(),
        }
    }

    fn next_batch(&mut self) -> Result<Batch> {
        if self.queue.is_empty() {
            let seed = epoch_seed(self.run_seed, self.epoch);
            self.epoch += 1;
            self.queue = batch_iter(self.train, self.batch_size, seed)?.into();
        }
        Ok(self.queue.pop_front().expect("epoch yields >= 1 batch"))
    }
}

/// Executes one full training run as described by the config. Divergence
/// (a non-finite forward value or parameter update) truncates the run and
/// is reported in the output instead of failing the call.
pub fn run_training(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (train, val) = prepare_splits(cfg)?;

    let specs = cfg.model.layer_specs()?;
    let mut net = init_network(&specs, derive_seed(cfg.run.seed, STREAM_INIT))?;
    let decay = cfg
        .optimizer
        .weight_decay
        .per_layer(cfg.model.num_layers())?;
    let mut opt = OptimizerState::new(
        &net,
        cfg.optimizer.learning_rate,
        cfg.optimizer.momentum,
        decay,
    )?;

    let obs = &cfg.observers;
    let observers_on = obs.enabled;
    let controller = cfg.controller.as_ref();
    // The probe draw has its own seed stream, so whether it happens can
    // never shift the randomness the training path consumes.
    let probe_needed = observers_on
        || (controller.is_some() && obs.oui_source == OuiSource::Probe);
    let probe: Option<Array2<f64>> = if probe_needed {
        Some(draw_probe(
            &train,
            obs.probe_size,
            derive_seed(cfg.run.seed, STREAM_PROBE),
        ))
    } else {
        None
    };

    let relu_layers = net.relu_layers();
    let mut log = TrajectoryLog::new(cfg.run_id(), cfg.fingerprint());
    let mut smoothers: Vec<Ema> = relu_layers
        .iter()
        .map(|_| Ema::new(obs.smoothing_alpha))
        .collect::<Result<_>>()?;
    let mut controller_ema: Vec<Ema> = match controller {
        Some(c) => relu_layers
            .iter()
            .map(|_| Ema::new(c.alpha))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let mut stream = BatchStream::new(&train, cfg.run.batch_size, cfg.run.seed);
    let mut prev_snapshot: Option<MaskSnapshot> = None;
    let mut diverged: Option<DivergenceInfo> = None;
    let mut steps_run = 0u64;

    // initial decay coefficients
    if observers_on {
        for (i, wd) in opt.weight_decay.iter().enumerate() {
            log.push(0, Metric::WeightDecay, Some(ModuleId(i)), *wd)?;
        }
    }

    let total = cfg.run.total_steps;
    for step in 0..total {
        let batch = stream.next_batch()?;
        let trace = match forward(&net, &batch.features) {
            Ok(t) => t,
            Err(e @ Error::ForwardDiverged { .. }) => {
                diverged = Some(DivergenceInfo {
                    step,
                    reason: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };

        // Observers read the trace (or a probe forward) before the update;
        // none of this touches parameters or training RNG.
        let need_probe_for_oui =
            obs.oui_source == OuiSource::Probe && (observers_on || controller.is_some());
        let need_probe_for_snapshot = observers_on && step % obs.snapshot_cadence == 0;
        let probe_trace = if need_probe_for_oui || need_probe_for_snapshot {
            Some(forward(&net, probe.as_ref().expect("probe drawn"))?)
        } else {
            None
        };
        let oui_trace = if observers_on || controller.is_some() {
            match obs.oui_source {
                OuiSource::Train => Some(&trace),
                OuiSource::Probe => probe_trace.as_ref(),
            }
        } else {
            None
        };
        let mut smoothed_now: Vec<f64> = Vec::new();
        if let Some(source) = oui_trace {
            let readings = record_oui(source, step)?;
            for (i, r) in readings.iter().enumerate() {
                let smoothed = smoothers[i].update(r.value);
                if observers_on {
                    log.push(step, Metric::Oui, Some(r.module_id), r.value)?;
                    log.push(step, Metric::OuiSmooth, Some(r.module_id), smoothed)?;
                }
            }
            if controller.is_some() {
                smoothed_now = readings
                    .iter()
                    .enumerate()
                    .map(|(i, r)| controller_ema[i].update(r.value))
                    .collect();
            }
        }

        if observers_on {
            if step % obs.snapshot_cadence == 0 {
                let snap = snapshot_masks(probe_trace.as_ref().expect("probe trace"), step)?;
                if let Some(prev) = &prev_snapshot {
                    log.push(step, Metric::MaskChangeRate, None, mask_change_rate(prev, &snap)?)?;
                }
                for (pos, &layer) in relu_layers.iter().enumerate() {
                    log.push(
                        step,
                        Metric::DeadFraction,
                        Some(ModuleId(layer)),
                        crate::observers::dead_fraction(&snap.masks()[pos]),
                    )?;
                }
                prev_snapshot = Some(snap);
            }
            if step % obs.eval_cadence == 0 {
                let (val_loss, val_acc) = evaluate(&net, &val)?;
                log.push(step, Metric::ValLoss, None, val_loss)?;
                log.push(step, Metric::ValAcc, None, val_acc)?;
            }
        }

        // Weight-decay control at its cadence, before the update it
        // should influence.
        if let Some(ctrl) = controller {
            if step > 0 && step % ctrl.cadence == 0 {
                for (pos, &layer) in relu_layers.iter().enumerate() {
                    opt.weight_decay[layer] =
                        controller_step(opt.weight_decay[layer], smoothed_now[pos], ctrl)?;
                }
                if observers_on {
                    for (i, wd) in opt.weight_decay.iter().enumerate() {
                        log.push(step, Metric::WeightDecay, Some(ModuleId(i)), *wd)?;
                    }
                }
            }
        }

        let (train_loss, _) = loss_softmax_ce(trace.logits(), &batch.labels)?;
        if observers_on {
            log.push(step, Metric::TrainLoss, None, train_loss)?;
        }

        let grads = backward(&net, &trace, &batch.labels)?;
        match sgd_step(&mut net, &grads, &mut opt) {
            Ok(()) => {}
            Err(e @ Error::UpdateDiverged { .. }) => {
                diverged = Some(DivergenceInfo {
                    step,
                    reason: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
        steps_run = step + 1;
    }

    // Closing observations under the final parameters.
    let (final_val_loss, final_val_acc) = if diverged.is_none() {
        let (l, a) = evaluate(&net, &val)?;
        if observers_on {
            log.push(total, Metric::ValLoss, None, l)?;
            log.push(total, Metric::ValAcc, None, a)?;
            if let Some(probe) = &probe {
                let trace = forward(&net, probe)?;
                let snap = snapshot_masks(&trace, total)?;
                if let Some(prev) = &prev_snapshot {
                    log.push(total, Metric::MaskChangeRate, None, mask_change_rate(prev, &snap)?)?;
                }
            }
        }
        (Some(l), a)
    } else {
        (None, 0.0)
    };

    Ok(RunOutput {
        log,
        network: net,
        diverged,
        final_val_loss,
        final_val_acc,
        steps_run,
    })
}
