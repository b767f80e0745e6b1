//! DoA-conditioned score model over aligned HRTF features: diffusion
//! schedule, denoiser network, denoising-score-matching trainer with EMA,
//! and ancestral prior sampling.

pub mod checkpoint;
pub mod model;
pub mod sample;
pub mod train;

pub use checkpoint::Checkpoint;
pub use model::{DenoiserOutput, ScoreNet, ScoreNetConfig};
pub use train::{TrainConfig, Trainer};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DiffusionSchedule {
    pub t_min_train: f64,
    pub t_max_train: f64,
    pub t_min_infer: f64,
    pub t_max_infer: f64,
    pub n_steps: usize,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        DiffusionSchedule {
            t_min_train: 0.01,
            t_max_train: 10.0,
            t_min_infer: 0.05,
            t_max_infer: 8.0,
            n_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Train,
    Infer,
}

impl DiffusionSchedule {
    /// Descending log-spaced grid of n_steps+1 diffusion times between the
    /// mode's extremal times.
    pub fn schedule_times(&self, mode: ScheduleMode) -> Result<Vec<f64>> {
        let (t_min, t_max) = match mode {
            ScheduleMode::Train => (self.t_min_train, self.t_max_train),
            ScheduleMode::Infer => (self.t_min_infer, self.t_max_infer),
        };
        if t_min >= t_max || t_min <= 0.0 {
            return Err(Error::InvalidSchedule { t_min, t_max });
        }
        let n = self.n_steps;
        let ratio = (t_min / t_max).powf(1.0 / n as f64);
        Ok((0..=n).map(|i| t_max * ratio.powi(i as i32)).collect())
    }
}

/// EDM-style preconditioning coefficients for unit-variance data under the
/// variance-exploding sigma(tau) = tau parameterization.
#[derive(Debug, Clone, Copy)]
pub struct Precond {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Precond {
    pub fn at(sigma: f64) -> Self {
        let s2 = sigma * sigma;
        Precond {
            c_skip: 1.0 / (s2 + 1.0),
            c_out: sigma / (s2 + 1.0).sqrt(),
            c_in: 1.0 / (s2 + 1.0).sqrt(),
            c_noise: sigma.ln() / 4.0,
        }
    }
}
