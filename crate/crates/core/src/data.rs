//! Deterministic synthetic dataset generators, a delimited-text loader,
//! and seeded shuffled batch iteration.
//!
//! Every generator is a pure function of its arguments including the seed;
//! the same call always reproduces the same dataset bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled classification dataset: n rows of `dim` features plus one
/// integer label per row in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if num_classes < 1 {
            return Err(Error::InvalidSpec("num_classes must be at least 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        for ((row, col), &v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "dataset features",
                    row,
                    col,
                });
            }
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the given rows into a new (features, labels) pair.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (features, labels)
    }

    /// Seeded split into (train, validation). `val_fraction` must leave at
    /// least one row on each side.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must be in (0, 1), got {val_fraction}"
            )));
        }
        let n = self.n();
        let n_val = ((n as f64) * val_fraction).floor() as usize;
        if n_val == 0 || n_val >= n {
            return Err(Error::InvalidConfig(format!(
                "val_fraction {val_fraction} leaves an empty split for n = {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let (val_idx, train_idx) = order.split_at(n_val);
        let (vf, vl) = self.gather(val_idx);
        let (tf, tl) = self.gather(train_idx);
        Ok((
            Dataset::new(tf, tl, self.num_classes)?,
            Dataset::new(vf, vl, self.num_classes)?,
        ))
    }

    /// Per-column z-score statistics of this dataset (mean, std).
    pub fn column_stats(&self) -> Vec<(f64, f64)> {
        let n = self.n() as f64;
        (0..self.dim())
            .map(|c| {
                let col = self.features.column(c);
                let mean = col.sum() / n;
                let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// Applies per-column z-scoring with the supplied statistics (usually
    /// the training split's). Columns with zero spread collapse to 0.
    pub fn standardize(&mut self, stats: &[(f64, f64)]) -> Result<()> {
        if stats.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} column stats for {} columns",
                stats.len(),
                self.dim()
            )));
        }
        for (c, &(mean, std)) in stats.iter().enumerate() {
            let mut col = self.features.column_mut(c);
            if std > 0.0 {
                col.mapv_inplace(|v| (v - mean) / std);
            } else {
                col.fill(0.0);
            }
        }
        Ok(())
    }
}

/// Gaussian blobs: `k` classes in `dim` dimensions, each drawn around a
/// seeded random center in [-4, 4]^dim with isotropic spread.
pub fn make_blobs(
    k: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 classes, got {k}")));
    }
    if dim < 1 {
        return Err(Error::InvalidSpec("dim must be at least 1".into()));
    }
    if n_per_class < 1 {
        return Err(Error::InvalidSpec("n_per_class must be at least 1".into()));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "spread must be positive and finite, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).expect("finite spread");
    let n = k * n_per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for i in 0..n_per_class {
            let row = c * n_per_class + i;
            for (d, &cd) in center.iter().enumerate() {
                features[[row, d]] = cd + noise.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, k)
}

/// Two interleaved 2-D spirals (class 1 is class 0 rotated by pi), with
/// isotropic Gaussian positional noise. Radius grows linearly to 2.
pub fn make_spirals(turns: f64, n_per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if !(turns > 0.0) || !turns.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "turns must be positive and finite, got {turns}"
        )));
    }
    if n_per_class < 1 {
        return Err(Error::InvalidSpec("n_per_class must be at least 1".into()));
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "noise must be nonnegative and finite, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let n = 2 * n_per_class;
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for c in 0..2usize {
        for i in 0..n_per_class {
            let t = (i as f64 + 0.5) / n_per_class as f64;
            let angle = 2.0 * std::f64::consts::PI * turns * t + c as f64 * std::f64::consts::PI;
            let r = 2.0 * t;
            let row = c * n_per_class + i;
            features[[row, 0]] = r * angle.cos() + noise * jitter.sample(&mut rng);
            features[[row, 1]] = r * angle.sin() + noise * jitter.sample(&mut rng);
            labels.push(c);
        }
    }
    Dataset::new(features, labels, 2)
}

/// Column roles for the delimited-text loader: comma-separated values,
/// optionally with a header row to skip, one column holding the integer
/// class label and every other column a numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelimitedSchema {
    pub label_column: usize,
    #[serde(default)]
    pub has_header: bool,
    /// When absent, the class count is inferred as max label + 1.
    #[serde(default)]
    pub num_classes: Option<usize>,
}

/// Loads a comma-separated file under the schema. Row order is preserved;
/// malformed rows are reported with their 1-based line number.
pub fn load_delimited(path: impl AsRef<Path>, schema: &DelimitedSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);

    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        let line_no = idx + 1;
        if idx == 0 && schema.has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if schema.label_column >= fields.len() {
            return Err(Error::Parse {
                path: display.clone(),
                line: line_no,
                msg: format!(
                    "label column {} out of range for {} fields",
                    schema.label_column,
                    fields.len()
                ),
            });
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: line_no,
                    msg: format!("expected {w} fields, found {}", fields.len()),
                });
            }
            _ => {}
        }
        let label: usize = fields[schema.label_column].parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: line_no,
            msg: format!(
                "label {:?} is not a nonnegative integer",
                fields[schema.label_column]
            ),
        })?;
        let mut row = Vec::with_capacity(fields.len() - 1);
        for (col, field) in fields.iter().enumerate() {
            if col == schema.label_column {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_no,
                msg: format!("feature {field:?} in column {col} is not numeric"),
            })?;
            row.push(v);
        }
        features.push(row);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = features[0].len();
    let flat: Vec<f64> = features.into_iter().flatten().collect();
    let n = labels.len();
    let arr = Array2::from_shape_vec((n, dim), flat)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let num_classes = match schema.num_classes {
        Some(c) => c,
        None => labels.iter().max().map(|&m| m + 1).unwrap_or(0),
    };
    Dataset::new(arr, labels, num_classes)
}

/// One mini-batch: features and labels in the permuted epoch order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Seeded shuffled batches covering one epoch. The permutation is a pure
/// function of `epoch_seed`; a trailing batch of size 1 is dropped because
/// the indicator is undefined there, while short batches of size >= 2 are
/// kept.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::InvalidBatch(batch_size));
    }
    if batch_size > dataset.n() {
        return Err(Error::InvalidConfig(format!(
            "batch size {} exceeds dataset size {}",
            batch_size,
            dataset.n()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        if chunk.len() < 2 {
            break;
        }
        let (features, labels) = dataset.gather(chunk);
        batches.push(Batch { features, labels });
    }
    Ok(batches)
}
