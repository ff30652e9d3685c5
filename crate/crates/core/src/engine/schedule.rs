//! Training phases and their step-decay learning-rate schedules.
//!
//! Milestones are absolute positions, not fractions of the configured run
//! length: the adversarial schedule starts at its base rate and steps down
//! tenfold at iterations 30k and 45k (1e-3 -> 1e-5 across a 56k-iteration
//! run at defaults); the recognizer schedule steps down after epochs 15 and
//! 18 of 20; joint training holds a constant rate.

use crate::error::{Error, Result};

pub const GAN_DECAY_ITERS: [u64; 2] = [30_000, 45_000];
pub const FR_DECAY_EPOCHS: [u64; 2] = [15, 18];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    FrPretrain,
    GanPretrain,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::FrPretrain => "fr_pretrain",
            Phase::GanPretrain => "gan_pretrain",
            Phase::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Phase> {
        match s {
            "fr_pretrain" => Ok(Phase::FrPretrain),
            "gan_pretrain" => Ok(Phase::GanPretrain),
            "joint" => Ok(Phase::Joint),
            _ => Err(Error::Config(format!(
                "unknown phase '{s}' (expected fr_pretrain, gan_pretrain or joint)"
            ))),
        }
    }
}

/// Adversarial-phase rate at a 0-based iteration.
pub fn gan_lr(base: f64, iter: u64) -> f64 {
    let drops = GAN_DECAY_ITERS.iter().filter(|&&m| iter >= m).count() as i32;
    base * 0.1f64.powi(drops)
}

/// Recognizer-phase rate at a 0-based epoch.
pub fn fr_lr(base: f64, epoch: u64) -> f64 {
    let drops = FR_DECAY_EPOCHS.iter().filter(|&&m| epoch >= m).count() as i32;
    base * 0.1f64.powi(drops)
}
