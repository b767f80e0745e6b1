//! Joint posterior sampling: reverse diffusion over normalized HRTF features
//! with likelihood guidance through the differentiable BRIR renderer,
//! interleaved with per-step optimization of the BRIR parameters.

use crate::dataset::{invert_norm, AlignedHrtfFeature, NormStats};
use crate::error::{Error, Result};
use crate::minphase::{min_phase_fir_backward, min_phase_fir_cached};

use crate::reverb::{BrirParams, OptConfig, ReverbOperator};
use crate::room::EstimationTask;
use crate::score::checkpoint::Checkpoint;
use crate::score::model::ScoreNet;
use crate::score::{DiffusionSchedule, ScheduleMode};
use crate::util::seeded_rng;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Salt mixed into the per-task late-field noise seed.
pub const LATE_NOISE_SALT: u64 = 0x1a7e_f1e1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// base guidance scale; the per-step scale is zeta0 / distance_n
    pub zeta0: f64,
    pub inner: OptConfig,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            zeta0: 20.0,
            inner: OptConfig::default(),
        }
    }
}

/// Number of final sampler steps whose denoised readouts are averaged into
/// the estimate.
pub const READOUT_TAIL_STEPS: usize = 10;

#[derive(Debug, Clone)]
pub struct SamplerState {
    pub a: Array2<f64>,
    pub psi: BrirParams,
    pub step_index: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub tau: f64,
    pub distance: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// denormalized dB magnitude estimate at the final step
    pub feature: AlignedHrtfFeature,
    pub fir: [Vec<f64>; 2],
    pub psi: BrirParams,
    pub trace: Vec<TraceEntry>,
}

/// Everything the sampler needs besides per-task data.
pub struct Sampler<'a> {
    pub net: &'a ScoreNet,
    pub weights: &'a [f64],
    pub schedule: DiffusionSchedule,
    pub norm: &'a NormStats,
    pub op: &'a ReverbOperator,
    pub guidance: GuidanceConfig,
}

impl<'a> Sampler<'a> {
    pub fn from_checkpoint(
        ck: &'a Checkpoint,
        op: &'a ReverbOperator,
        guidance: GuidanceConfig,
        n_steps: usize,
    ) -> Sampler<'a> {
        Sampler {
            net: &ck.net,
            weights: &ck.ema,
            schedule: DiffusionSchedule {
                n_steps,
                ..ck.schedule
            },
            norm: &ck.norm,
            op,
            guidance,
        }
    }

    /// Denoised estimate at (a, tau) realized as a stereo minimum-phase FIR.
    fn h0_fir(&self, a: &Array2<f64>, tau: f64, task: &EstimationTask) -> Result<[Vec<f64>; 2]> {
        let out = self
            .net
            .denoise(self.weights, a, tau, Some(&task.doa), &self.schedule)?;
        let feature = self.denormalize(&out.h0_hat, task);
        let left = min_phase_fir(&feature, 0)?;
        let right = min_phase_fir(&feature, 1)?;
        Ok([left, right])
    }

    fn denormalize(&self, h0: &Array2<f64>, task: &EstimationTask) -> AlignedHrtfFeature {
        invert_norm(
            &AlignedHrtfFeature {
                doa: task.doa,
                values: h0.clone(),
                normalized: true,
            },
            self.norm,
        )
    }

    /// Fit distance and its gradient with respect to the diffusion iterate,
    /// differentiated through the denoiser, minimum-phase reconstruction,
    /// and renderer.
    pub fn likelihood_grad(
        &self,
        a: &Array2<f64>,
        tau: f64,
        psi: &BrirParams,
        task: &EstimationTask,
        noise_seed: u64,
    ) -> Result<(f64, Array2<f64>)> {
        let (out, cache, pc) =
            self.net
                .denoise_cached(self.weights, a, tau, Some(&task.doa), &self.schedule)?;
        let feature = self.denormalize(&out.h0_hat, task);
        let (fir_l, mp_cache_l) =
            min_phase_fir_cached(feature.values.row(0).as_slice().expect("contiguous"))?;
        let (fir_r, mp_cache_r) =
            min_phase_fir_cached(feature.values.row(1).as_slice().expect("contiguous"))?;
        let (distance, grad_fir) = self.op.fit_grad_hrtf(
            psi,
            &[fir_l, fir_r],
            &task.dry,
            &task.observation,
            noise_seed,
        )?;
        if !distance.is_finite() {
            return Err(Error::NonFinite("fit distance".into()));
        }
        let grad_db_l = min_phase_fir_backward(&mp_cache_l, &grad_fir[0]);
        let grad_db_r = min_phase_fir_backward(&mp_cache_r, &grad_fir[1]);
        // back through the denormalization: d(h_db)/d(h0) = std
        let mut grad_h0 = Array2::zeros((2, grad_db_l.len()));
        for (k, (gl, gr)) in grad_db_l.iter().zip(grad_db_r.iter()).enumerate() {
            grad_h0[[0, k]] = gl * self.norm.std[[0, k]];
            grad_h0[[1, k]] = gr * self.norm.std[[1, k]];
        }
        let mut scratch = vec![0.0; self.net.params.len()];
        let grad_a = self
            .net
            .denoise_backward(self.weights, &cache, &pc, &grad_h0, &mut scratch);
        if grad_a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("likelihood gradient".into()));
        }
        Ok((distance, grad_a))
    }

    /// One guided reverse-diffusion step from times[n] to times[n+1].
    /// Returns the updated state and the trace entry for step n.
    pub fn posterior_step(
        &self,
        state: &SamplerState,
        tau_next: f64,
        task: &EstimationTask,
        noise_seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(SamplerState, TraceEntry)> {
        let tau = state.tau;
        // (i)-(ii): fit psi against the observation with h0 frozen
        let h0_fir = self.h0_fir(&state.a, tau, task)?;
        let (psi, _) = self.op.fit_params(
            &state.psi,
            &h0_fir,
            &task.dry,
            &task.observation,
            &self.guidance.inner,
            noise_seed,
        )?;
        // (iii): prior score and likelihood gradient at the updated psi
        let out = self
            .net
            .denoise(self.weights, &state.a, tau, Some(&task.doa), &self.schedule)?;
        let (distance, grad_a) = self.likelihood_grad(&state.a, tau, &psi, task, noise_seed)?;
        let zeta = if self.guidance.zeta0 == 0.0 {
            0.0
        } else {
            self.guidance.zeta0 / distance.max(1e-6)
        };
        // (iv): Euler-Maruyama update with the guided score
        let delta = tau - tau_next;
        let step_std = (2.0 * tau * delta).sqrt();
        let mut a = state.a.clone();
        for ((av, s), g) in a.iter_mut().zip(out.score.iter()).zip(grad_a.iter()) {
            let guided = s - zeta * g;
            let z: f64 = StandardNormal.sample(rng);
            *av += 2.0 * tau * delta * guided + step_std * z;
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "diffusion iterate at step {}",
                state.step_index
            )));
        }
        let next = SamplerState {
            a,
            psi,
            step_index: state.step_index + 1,
            tau: tau_next,
        };
        Ok((
            next,
            TraceEntry {
                step: state.step_index,
                tau,
                distance,
                zeta,
            },
        ))
    }

    /// Full inference on one task: N guided steps from t_max to t_min, then
    /// the denoised readout at the final time.
    pub fn run_inference(&self, task: &EstimationTask, seed: u64) -> Result<InferenceResult> {
        let times = self.schedule.schedule_times(ScheduleMode::Infer)?;
        let mut rng = seeded_rng(seed, "prior-sample");
        let noise_seed = seed ^ LATE_NOISE_SALT ^ task.task_id;
        let t_max = times[0];
        let a0 = Array2::from_shape_fn((2, 128), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            t_max * z
        });
        let mut state = SamplerState {
            a: a0,
            psi: BrirParams::init_from_observation(&task.doa, &task.dry, &task.observation),
            step_index: 0,
            tau: times[0],
        };
        let mut trace = Vec::with_capacity(self.schedule.n_steps);
        // Readout: denoised estimates averaged over the tail of the
        // trajectory. The per-step readouts near t_min share the mode but
        // differ in residual sampling noise, so the tail mean is a lower
        // variance estimate of the same posterior draw than the final
        // readout alone.
        let tail_from = self.schedule.n_steps.saturating_sub(READOUT_TAIL_STEPS);
        let mut tail_sum: Option<Array2<f64>> = None;
        let mut tail_n = 0.0;
        for w in times.windows(2) {
            let (next, entry) = self.posterior_step(&state, w[1], task, noise_seed, &mut rng)?;
            trace.push(entry);
            state = next;
            if state.step_index >= tail_from {
                let out = self.net.denoise(
                    self.weights,
                    &state.a,
                    state.tau,
                    Some(&task.doa),
                    &self.schedule,
                )?;
                match tail_sum.as_mut() {
                    Some(acc) => *acc += &out.h0_hat,
                    None => tail_sum = Some(out.h0_hat),
                }
                tail_n += 1.0;
            }
        }
        let mut h0 = tail_sum.expect("non-empty schedule");
        h0 /= tail_n;
        let feature = self.denormalize(&h0, task);
        let fir = [min_phase_fir(&feature, 0)?, min_phase_fir(&feature, 1)?];
        Ok(InferenceResult {
            feature,
            fir,
            psi: state.psi,
            trace,
        })
    }
}

fn min_phase_fir(feature: &AlignedHrtfFeature, channel: usize) -> Result<Vec<f64>> {
    crate::minphase::min_phase_fir(feature.values.row(channel).as_slice().expect("contiguous"))
}

pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = String::from("step,tau,distance,zeta\n");
    for e in trace {
        s.push_str(&format!("{},{},{},{}\n", e.step, e.tau, e.distance, e.zeta));
    }
    s
}

/// Per-task result bundle: feature cache, psi JSON, trace CSV, FIR WAV.
pub fn save_result(result: &InferenceResult, subject_id: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    crate::dataset::cache::write_feature_cache(
        &dir.join("estimate.hfc"),
        subject_id,
        std::slice::from_ref(&result.feature),
    )?;
    let psi_path = dir.join("psi.json");
    std::fs::write(&psi_path, serde_json::to_string_pretty(&result.psi)?).map_err(|source| {
        Error::Io {
            path: psi_path.display().to_string(),
            source,
        }
    })?;
    let trace_path = dir.join("trace.csv");
    std::fs::write(&trace_path, trace_csv(&result.trace)).map_err(|source| Error::Io {
        path: trace_path.display().to_string(),
        source,
    })?;
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: crate::dataset::SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(dir.join("fir.wav"), spec)?;
    for n in 0..result.fir[0].len() {
        writer.write_sample(result.fir[0][n] as f32)?;
        writer.write_sample(result.fir[1][n] as f32)?;
    }
    writer.finalize()?;
    Ok(())
}
