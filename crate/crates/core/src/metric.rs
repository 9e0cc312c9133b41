//! Batch-based activation-balance indicator.
//!
//! For a module with `d` scalar units evaluated on a batch of `B` samples,
//! each unit either fires (preactivation strictly positive) or stays silent
//! per sample. A unit that splits the batch evenly carries the most
//! information about the inputs; a unit that is almost always on or almost
//! always off carries little. The indicator averages that balance over the
//! module:
//!
//! ```text
//! m[b][n] = 1 if preactivation(b, n) > 0 else 0
//! s[n]    = sum over b of m[b][n]
//! u[n]    = min(s[n], B - s[n])
//! oui     = (1/d) * sum over n of u[n] / floor(B/2)
//! ```
//!
//! The value lives in [0, 1]: 0 means every unit is uniform across the
//! batch (all-on or all-off), 1 means every unit splits it as evenly as
//! the batch size allows.
//!
//! All arithmetic is exact integer arithmetic until the final division,
//! which is performed once in double precision. This keeps the metric
//! bit-reproducible and makes equivalence against a naive transcription of
//! the formula testable without tolerances.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a module (layer) inside a network, used to key per-module
/// readings in logs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModuleId(pub usize);

impl std::fmt::Display for ModuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Binary activation mask for one module on one batch: rows are samples,
/// columns are units. Entries are exactly 0 or 1; a preactivation of
/// exactly zero counts as inactive (ReLU outputs zero there).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationMask {
    bits: Vec<u8>, // row-major, B * d entries
    batch_size: usize,
    width: usize,
}

impl ActivationMask {
    /// Builds a mask from raw row-major bits, validating the type
    /// invariants: B >= 2, d >= 1, every entry 0 or 1.
    pub fn from_bits(bits: Vec<u8>, batch_size: usize, width: usize) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::InvalidBatch(batch_size));
        }
        if width == 0 {
            return Err(Error::InvalidMask("width must be at least 1".into()));
        }
        if bits.len() != batch_size * width {
            return Err(Error::InvalidMask(format!(
                "expected {} bits for a {}x{} mask, got {}",
                batch_size * width,
                batch_size,
                width,
                bits.len()
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidMask(format!(
                "entry at flat index {pos} is {} (must be 0 or 1)",
                bits[pos]
            )));
        }
        Ok(ActivationMask {
            bits,
            batch_size,
            width,
        })
    }

    /// Convenience constructor from nested rows (mostly for tests).
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let batch_size = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidMask("ragged rows".into()));
        }
        let bits = rows.iter().flatten().copied().collect();
        Self::from_bits(bits, batch_size, width)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.width + col]
    }

    /// Flat row-major view of the bits.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Number of bit positions at which the two masks differ.
    /// Errors unless both masks have identical shape.
    pub fn hamming_distance(&self, other: &ActivationMask) -> Result<u64> {
        if self.batch_size != other.batch_size || self.width != other.width {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.batch_size, self.width, other.batch_size, other.width
            )));
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count() as u64)
    }
}

/// Per-unit activation counts: `s[n]` samples in the batch activate unit `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationCounts {
    s: Vec<u32>,
    batch_size: usize,
}

impl ActivationCounts {
    pub fn s(&self) -> &[u32] {
        &self.s
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

/// Per-unit minority counts: `u[n] = min(s[n], B - s[n])`, the size of the
/// smaller side of the unit's batch split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinorityCounts {
    u: Vec<u32>,
}

impl MinorityCounts {
    pub fn u(&self) -> &[u32] {
        &self.u
    }
}

/// One evaluation of the indicator for one module at one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuiValue {
    pub value: f64,
    pub module_id: ModuleId,
    pub step: u64,
}

/// Thresholds preactivations into an activation mask: strictly positive
/// entries map to 1, everything else (including exact zero) to 0.
///
/// Errors on batches smaller than 2 and on non-finite entries, naming the
/// offending position.
pub fn compute_masks(preactivations: &Array2<f64>) -> Result<ActivationMask> {
    let (batch_size, width) = preactivations.dim();
    if batch_size < 2 {
        return Err(Error::InvalidBatch(batch_size));
    }
    if width == 0 {
        return Err(Error::InvalidMask("width must be at least 1".into()));
    }
    for ((row, col), &v) in preactivations.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "preactivations",
                row,
                col,
            });
        }
    }
    let bits = preactivations
        .iter()
        .map(|&v| u8::from(v > 0.0))
        .collect();
    ActivationMask::from_bits(bits, batch_size, width)
}

/// Column sums of the mask: how many samples activate each unit.
pub fn activation_counts(mask: &ActivationMask) -> ActivationCounts {
    let mut s = vec![0u32; mask.width()];
    for row in 0..mask.batch_size() {
        for (col, count) in s.iter_mut().enumerate() {
            *count += u32::from(mask.bit(row, col));
        }
    }
    ActivationCounts {
        s,
        batch_size: mask.batch_size(),
    }
}

/// `u[n] = min(s[n], B - s[n])` per unit.
pub fn minority_counts(counts: &ActivationCounts) -> MinorityCounts {
    let b = counts.batch_size() as u32;
    MinorityCounts {
        u: counts.s().iter().map(|&s| s.min(b - s)).collect(),
    }
}

/// The per-module scalar: mean over units of `u[n] / floor(B/2)`.
///
/// Computed as one integer sum divided by one integer product, so the
/// result is the correctly rounded value of the exact rational.
pub fn oui_of_mask(mask: &ActivationMask, module_id: ModuleId, step: u64) -> OuiValue {
    let counts = activation_counts(mask);
    let minority = minority_counts(&counts);
    let half = (mask.batch_size() / 2) as u64;
    let numerator: u64 = minority.u().iter().map(|&u| u as u64).sum();
    let denominator = mask.width() as u64 * half;
    OuiValue {
        value: numerator as f64 / denominator as f64,
        module_id,
        step,
    }
}

/// Masks the preactivations and evaluates the indicator in one call.
pub fn oui_from_preactivations(
    preactivations: &Array2<f64>,
    module_id: ModuleId,
    step: u64,
) -> Result<OuiValue> {
    let mask = compute_masks(preactivations)?;
    Ok(oui_of_mask(&mask, module_id, step))
}
