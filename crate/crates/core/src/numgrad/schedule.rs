//! Learning-rate schedules.

use alloc::vec::Vec;

use crate::error::Result;
use crate::ensure;

#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    /// eta * cos(7*pi*k / (16*K)); the decay stops at cos(7pi/16), not 0.
    Cosine { eta: f32, total_steps: usize },
    /// eta * gamma^(number of milestones at or before k).
    MultiStep { eta: f32, milestones: Vec<usize>, gamma: f32 },
    Constant { eta: f32 },
}

impl LrSchedule {
    /// Learning rate at step `k`.
    pub fn lr_at(&self, k: usize) -> Result<f32> {
        match self {
            LrSchedule::Cosine { eta, total_steps } => {
                ensure!(*total_steps >= 1, "cosine schedule requires at least one step");
                ensure!(k <= *total_steps, "step {k} outside cosine schedule of {total_steps} steps");
                let frac = 7.0 * core::f32::consts::PI * k as f32 / (16.0 * *total_steps as f32);
                Ok(eta * libm::cosf(frac))
            }
            LrSchedule::MultiStep { eta, milestones, gamma } => {
                ensure!(
                    milestones.windows(2).all(|w| w[0] < w[1]),
                    "multistep milestones must be strictly increasing, got {milestones:?}"
                );
                let passed = milestones.iter().filter(|&&m| m <= k).count();
                Ok(eta * libm::powf(*gamma, passed as f32))
            }
            LrSchedule::Constant { eta } => Ok(*eta),
        }
    }
}
