//! Run configuration: every pipeline hyperparameter by name with its paper
//! default, plus the desk-scale overrides used for minutes-scale runs.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// artifact root; stage directories live below it
    pub root: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            root: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// "synthetic" or a directory of .sofa/.json HRTF sets
    pub source: String,
    /// roster size when source = "synthetic" (HUTUBS has 87 subjects)
    pub n_subjects: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub exclusions: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synthetic".into(),
            n_subjects: 87,
            train: 74,
            val: 6,
            test: 7,
            exclusions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ema_decay: f64,
    pub doa_noise_sigma: f64,
    pub doa_dropout_p: f64,
    pub hidden_features: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 110_000,
            batch_size: 32,
            lr: 5e-4,
            ema_decay: 0.999,
            doa_noise_sigma: 0.05,
            doa_dropout_p: 0.3,
            hidden_features: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_min_train: f64,
    pub t_max_train: f64,
    pub t_min_infer: f64,
    pub t_max_infer: f64,
    /// reverse-diffusion step count N
    pub n_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t_min_train: 0.01,
            t_max_train: 10.0,
            t_min_infer: 0.05,
            t_max_infer: 8.0,
            n_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    /// modeled late-field STFT frames M_r
    pub n_late_frames: usize,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig { n_late_frames: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksConfig {
    /// total estimation tasks, spread over the test subjects
    pub count: usize,
    pub utterance_seconds: f64,
    /// distinct dry utterances to draw from
    pub utterance_pool: usize,
}

impl Default for TasksConfig {
    fn default() -> Self {
        TasksConfig {
            count: 599,
            utterance_seconds: 2.0,
            utterance_pool: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// base guidance scale; per-step scale is zeta0 / distance_n
    pub zeta0: f64,
    /// Adam iterations of the inner psi fit per diffusion step
    pub inner_iters: usize,
    pub inner_lr: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            zeta0: 10_000.0,
            inner_iters: 50,
            inner_lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub global: u64,
    pub prepare_data: u64,
    pub train: u64,
    pub gen_tasks: u64,
    pub estimate: u64,
    pub evaluate: u64,
}

impl Seeds {
    pub fn derive(global: u64) -> Seeds {
        Seeds {
            global,
            prepare_data: global.wrapping_add(1),
            train: global.wrapping_add(2),
            gen_tasks: global.wrapping_add(3),
            estimate: global.wrapping_add(4),
            evaluate: global.wrapping_add(5),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::derive(0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub schedule: ScheduleConfig,
    pub operator: OperatorConfig,
    pub tasks: TasksConfig,
    pub inference: InferenceConfig,
    pub seeds: Seeds,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                Ok(toml::from_str(&text)?)
            }
            None => Ok(RunConfig::default()),
        }
    }

    /// Desk-scale budget overrides: 12 training subjects, 2k training
    /// steps, ~20 tasks, N = 50 inference steps, and a shorter inner fit
    /// so the whole pipeline runs in tens of minutes. The operator keeps
    /// its full late-field length: the rooms are the same either way, and
    /// a truncated parametric tail leaves a reverb mismatch that swamps
    /// the observation-fit distance.
    pub fn apply_desk_scale(&mut self) {
        self.data.n_subjects = 16;
        self.data.train = 12;
        self.data.val = 1;
        self.data.test = 3;
        self.training.steps = 2_000;
        self.schedule.n_steps = 50;
        self.tasks.count = 21;
        self.tasks.utterance_seconds = 1.0;
        self.tasks.utterance_pool = 8;
        self.inference.inner_iters = 15;
        self.inference.inner_lr = 0.05;
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seeds = Seeds::derive(seed);
    }

    /// Canonical TOML serialization, hashed into stage manifests.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    pub fn diffusion_schedule(&self) -> hrtfest::score::DiffusionSchedule {
        hrtfest::score::DiffusionSchedule {
            t_min_train: self.schedule.t_min_train,
            t_max_train: self.schedule.t_max_train,
            t_min_infer: self.schedule.t_min_infer,
            t_max_infer: self.schedule.t_max_infer,
            n_steps: self.schedule.n_steps,
        }
    }
}
