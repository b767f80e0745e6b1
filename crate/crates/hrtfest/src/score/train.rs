//! Denoising-score-matching trainer: log-uniform diffusion times, noisy /
//! dropped DoA conditioning, Adam updates, and an EMA copy of the weights.
//!
//! All per-item randomness is keyed on (seed, step, item_id) so a training
//! run is reproducible and invariant to the ordering of the corpus slice.

use super::model::{ScoreNet, ScoreNetConfig};
use super::DiffusionSchedule;
use crate::dataset::{Doa, N_BINS, N_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::util::seeded_rng;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Items per parallel gradient chunk; fixed so the floating-point summation
/// order (and therefore the result) does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ema_decay: f64,
    pub doa_noise_sigma: f64,
    pub doa_dropout_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 40_000,
            batch_size: 32,
            lr: 5e-4,
            ema_decay: 0.999,
            doa_noise_sigma: 0.05,
            doa_dropout_p: 0.3,
            seed: 0,
        }
    }
}

/// One training example: a normalized aligned-HRTF feature and its DoA.
/// `item_id` must be unique and stable across runs; it keys the per-item
/// noise stream.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub item_id: u64,
    pub doa: Doa,
    pub feature: Array2<f64>,
}

pub struct Trainer {
    pub net: ScoreNet,
    pub ema: Vec<f64>,
    pub config: TrainConfig,
    pub schedule: DiffusionSchedule,
    pub losses: Vec<f64>,
    adam: Adam,
    step: u64,
}

impl Trainer {
    pub fn new(net_config: ScoreNetConfig, config: TrainConfig, schedule: DiffusionSchedule) -> Self {
        let net = ScoreNet::new(net_config);
        let ema = net.params.data.clone();
        let adam = Adam::new(net.params.len(), config.lr, 0.9, 0.999);
        Trainer {
            net,
            ema,
            config,
            schedule,
            losses: Vec::new(),
            adam,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Runs one Adam step over a freshly sampled batch; returns the batch
    /// DSM loss.
    pub fn train_step(&mut self, corpus: &[TrainItem]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("training corpus".into()));
        }
        for item in corpus {
            if item.feature.dim() != (N_CHANNELS, N_BINS) {
                return Err(Error::ShapeMismatch(format!(
                    "train item {} feature {:?}, expected (2, 128)",
                    item.item_id,
                    item.feature.dim()
                )));
            }
        }
        // batch selection runs over corpus indices sorted by item id so a
        // permuted corpus slice reproduces the same run
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.sort_by_key(|&i| corpus[i].item_id);
        let step = self.step;
        let seed = self.config.seed;
        let mut batch_rng = seeded_rng(seed, &format!("batch-{step}"));
        let batch: Vec<&TrainItem> = (0..self.config.batch_size)
            .map(|_| &corpus[order[batch_rng.gen_range(0..order.len())]])
            .collect();
        let n_params = self.net.params.len();
        let batch_size = batch.len();
        let p = &self.net.params.data;
        let net = &self.net;
        let schedule = self.schedule;
        let cfg = &self.config;
        let chunks: Vec<(Vec<f64>, f64)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; n_params];
                let mut loss = 0.0;
                for item in chunk {
                    loss += item_loss_and_grad(net, p, item, step, cfg, &schedule, batch_size, &mut g);
                }
                (g, loss)
            })
            .collect();
        let mut grads = vec![0.0; n_params];
        let mut loss = 0.0;
        for (g, l) in &chunks {
            for (acc, v) in grads.iter_mut().zip(g.iter()) {
                *acc += v;
            }
            loss += l;
        }
        loss /= batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        self.adam.step(&mut self.net.params.data, &grads);
        let d = self.config.ema_decay;
        for (e, &w) in self.ema.iter_mut().zip(self.net.params.data.iter()) {
            *e = d * *e + (1.0 - d) * w;
        }
        self.step += 1;
        self.losses.push(loss);
        Ok(loss)
    }

    pub fn train(&mut self, corpus: &[TrainItem], steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.train_step(corpus)?;
        }
        Ok(())
    }
}

/// DSM loss for one item, accumulating parameter gradients scaled by
/// 1/batch_size into `g`.
fn item_loss_and_grad(
    net: &ScoreNet,
    p: &[f64],
    item: &TrainItem,
    step: u64,
    cfg: &TrainConfig,
    schedule: &DiffusionSchedule,
    batch_size: usize,
    g: &mut [f64],
) -> f64 {
    let mut rng = seeded_rng(cfg.seed, &format!("noise-{step}-{}", item.item_id));
    // log-uniform diffusion time over the training support
    let u: f64 = rng.gen_range(schedule.t_min_train.ln()..schedule.t_max_train.ln());
    let tau = u.exp();
    let h = &item.feature;
    let mut a = h.clone();
    for v in a.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += tau * z;
    }
    let dropped = rng.gen_range(0.0..1.0) < cfg.doa_dropout_p;
    let doa_vec = if dropped {
        None
    } else {
        let mut v = item.doa.unit_vector();
        for c in v.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *c += cfg.doa_noise_sigma * z;
        }
        Some(v)
    };
    let (out, cache, pc) = net
        .denoise_with_vec(p, &a, tau, doa_vec, schedule)
        .expect("tau sampled inside the training support");
    let diff = &out.h0_hat - h;
    let n = diff.len() as f64;
    let w = 1.0 / (pc.c_out * pc.c_out);
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n * w;
    let grad_h0 = diff.mapv(|d| 2.0 * d * w / (n * batch_size as f64));
    net.denoise_backward(p, &cache, &pc, &grad_h0, g);
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus(n: usize) -> Vec<TrainItem> {
        let mut rng = seeded_rng(11, "corpus");
        (0..n)
            .map(|i| {
                // smooth low-amplitude features, roughly unit scale
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let feature = Array2::from_shape_fn((2, 128), |(c, k)| {
                    (0.05 * k as f64 + phase + c as f64).sin()
                });
                TrainItem {
                    item_id: i as u64,
                    doa: Doa::new(30.0 * i as f64, 0.0),
                    feature,
                }
            })
            .collect()
    }

    fn tiny_trainer(seed: u64) -> Trainer {
        Trainer::new(
            ScoreNetConfig {
                hidden_features: 8,
                seed: 2,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 4,
                seed,
                ..Default::default()
            },
            DiffusionSchedule::default(),
        )
    }

    #[test]
    fn loss_decreases_over_training() {
        let corpus = tiny_corpus(4);
        let mut t = tiny_trainer(7);
        t.train(&corpus, 80).unwrap();
        let head: f64 = t.losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = t.losses[70..].iter().sum::<f64>() / 10.0;
        assert!(
            tail < head,
            "loss did not decrease: first 10 mean {head}, last 10 mean {tail}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus(4);
        let mut t1 = tiny_trainer(9);
        let mut t2 = tiny_trainer(9);
        t1.train(&corpus, 3).unwrap();
        t2.train(&corpus, 3).unwrap();
        assert_eq!(t1.losses, t2.losses);
        assert_eq!(t1.net.params.data, t2.net.params.data);
        assert_eq!(t1.ema, t2.ema);
    }

    #[test]
    fn training_invariant_to_corpus_order() {
        let corpus = tiny_corpus(5);
        let mut reversed = corpus.clone();
        reversed.reverse();
        let mut t1 = tiny_trainer(13);
        let mut t2 = tiny_trainer(13);
        t1.train(&corpus, 3).unwrap();
        t2.train(&reversed, 3).unwrap();
        assert_eq!(t1.losses, t2.losses);
        assert_eq!(t1.net.params.data, t2.net.params.data);
    }

    #[test]
    fn ema_trails_raw_weights() {
        let corpus = tiny_corpus(4);
        let mut t = tiny_trainer(17);
        let init = t.net.params.data.clone();
        t.train(&corpus, 5).unwrap();
        let d_raw: f64 = t
            .net
            .params
            .data
            .iter()
            .zip(init.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let d_ema: f64 = t
            .ema
            .iter()
            .zip(init.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(d_raw > 0.0);
        assert!(d_ema > 0.0);
        assert!(d_ema < d_raw, "EMA should move slower than raw weights");
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut t = tiny_trainer(1);
        assert!(t.train_step(&[]).is_err());
    }
}
