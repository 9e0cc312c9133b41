//! Online layer-wise weight-decay adaptation driven by the per-module
//! indicator.
//!
//! The control law is multiplicative with clipping,
//!
//! ```text
//! wd_l <- clip(wd_l * exp(eta * (oui_l - target)), wd_min, wd_max)
//! ```
//!
//! applied to each ReLU layer's coefficient at a fixed cadence, using the
//! exponentially smoothed indicator of that module. The multiplicative
//! form keeps the coefficient positive and moves it in equal relative
//! steps across decades, and `eta = 0` reduces to the identity so a
//! controlled run can be compared bit-for-bit against an uncontrolled
//! baseline. With `eta > 0`, an indicator above target increases decay;
//! negating `eta` flips the convention.

pub use crate::config::ControllerConfig;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::train::{run_training, RunOutput};

/// One application of the control law to a single layer's coefficient.
pub fn controller_step(current_wd: f64, smoothed_oui: f64, cfg: &ControllerConfig) -> Result<f64> {
    cfg.validate()?;
    if !(current_wd > 0.0) || !current_wd.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "current weight decay must be positive and finite, got {current_wd}"
        )));
    }
    if !(0.0..=1.0).contains(&smoothed_oui) {
        return Err(Error::InvalidConfig(format!(
            "smoothed indicator {smoothed_oui} outside [0, 1]"
        )));
    }
    let next = current_wd * (cfg.eta * (smoothed_oui - cfg.target)).exp();
    Ok(next.clamp(cfg.wd_min, cfg.wd_max))
}

/// Runs a full training run with the controller attached. The returned
/// log contains the per-layer decay series alongside the standard
/// observables, plus both raw and smoothed indicator streams so the
/// feedback loop can be audited after the fact.
pub fn controlled_training(cfg: &RunConfig) -> Result<RunOutput> {
    if cfg.controller.is_none() {
        return Err(Error::InvalidConfig(
            "controlled training requires a [controller] section".into(),
        ));
    }
    run_training(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(eta: f64) -> ControllerConfig {
        ControllerConfig {
            target: 0.5,
            eta,
            cadence: 10,
            wd_min: 1e-6,
            wd_max: 1e-1,
            alpha: 0.1,
        }
    }

    #[test]
    fn zero_gain_is_identity() {
        let c = cfg(0.0);
        for oui in [0.0, 0.3, 0.5, 0.9, 1.0] {
            let wd = controller_step(1e-3, oui, &c).unwrap();
            assert_eq!(wd.to_bits(), 1e-3f64.to_bits());
        }
    }

    #[test]
    fn on_target_is_identity_for_any_gain() {
        for eta in [0.0, 0.5, 2.0, -1.0] {
            let wd = controller_step(1e-3, 0.5, &cfg(eta)).unwrap();
            assert_eq!(wd.to_bits(), 1e-3f64.to_bits());
        }
    }

    #[test]
    fn law_worked_example() {
        // wd * exp(1.0 * (0.8 - 0.5)) = 1e-4 * exp(0.3) ~= 1.3499e-4
        let wd = controller_step(1e-4, 0.8, &cfg(1.0)).unwrap();
        let expected = 1e-4 * (1.0f64 * (0.8 - 0.5)).exp();
        assert_eq!(wd.to_bits(), expected.to_bits());
        assert!((wd - 1.3499e-4).abs() < 1e-8);
    }

    #[test]
    fn clipping_keeps_wd_inside_bounds() {
        let c = cfg(50.0);
        let hi = controller_step(1e-2, 1.0, &c).unwrap();
        assert_eq!(hi, c.wd_max);
        let lo = controller_step(1e-5, 0.0, &c).unwrap();
        assert_eq!(lo, c.wd_min);
    }

    #[test]
    fn monotone_in_indicator_for_positive_gain() {
        let c = cfg(1.5);
        let mut prev = 0.0;
        for i in 0..=10 {
            let oui = i as f64 / 10.0;
            let wd = controller_step(1e-3, oui, &c).unwrap();
            assert!(wd >= prev);
            prev = wd;
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let c = cfg(1.0);
        assert!(controller_step(0.0, 0.5, &c).is_err());
        assert!(controller_step(1e-3, 1.5, &c).is_err());
        let mut bad = cfg(1.0);
        bad.target = 1.0;
        assert!(controller_step(1e-3, 0.5, &bad).is_err());
    }
}
