//! Checkpoint serialization: network (config, RFF frequencies, raw weights),
//! EMA weights, diffusion schedule, feature normalization statistics, and
//! the training step reached.

use super::model::ScoreNet;
use super::DiffusionSchedule;
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub net: ScoreNet,
    pub ema: Vec<f64>,
    pub schedule: DiffusionSchedule,
    pub norm: NormStats,
    pub step: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
