//! Parametric binaural room impulse response model: a delayed, scaled direct
//! path through the HRTF plus a late field of seeded noise shaped by
//! per-subband exponential decays in the STFT domain. Includes the
//! differentiable renderer and the Adam-based observation fit.

use crate::dataset::{AlignedHrtfFeature, Doa, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::minphase::min_phase_fir;
use crate::nn::Adam;
use crate::stft::{Spec, Stft, StftConfig};
use crate::util::{
    fft_convolve, fft_correlate_adjoint, frac_delay_kernel, frac_delay_kernel_deriv, seeded_rng,
    woodworth_itd_seconds,
};
use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const N_BANDS: usize = 40;
pub const N_LATE_FRAMES: usize = 200;
/// Frequency below which band edges are linearly spaced.
const LOG_KNEE_HZ: f64 = 400.0;
/// dB floor applied to log-magnitude STFTs inside the fit distance.
pub const FIT_FLOOR_DB: f64 = -80.0;
// The late field is unit-variance noise shaped by 10^(w/20); real
// observations place the reverb tail well below that reference, so the
// weight range must extend far enough below 0 dB for the fit to reach it.
pub const W_MIN_DB: f64 = -80.0;
pub const W_MAX_DB: f64 = 40.0;
pub const ALPHA_MIN: f64 = 0.01;
pub const ALPHA_MAX: f64 = 40.0;
/// Woodworth head radius used for ITD initialization, meters.
pub const HEAD_RADIUS_M: f64 = 0.0875;

/// Partition of the STFT bin axis into quasi-logarithmic subbands:
/// single-bin spacing below the knee frequency, log spacing above.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubbandScale {
    pub band_edges: Vec<usize>,
}

impl SubbandScale {
    pub fn quasi_log(stft: &StftConfig, n_bands: usize) -> Result<SubbandScale> {
        let n_bins = stft.n_bins();
        let bin_hz = stft.sample_rate as f64 / stft.window_len as f64;
        let knee_bin = (LOG_KNEE_HZ / bin_hz).round() as usize;
        if knee_bin + 1 >= n_bands || n_bands >= n_bins {
            return Err(Error::InvalidData(format!(
                "cannot place {n_bands} bands over {n_bins} bins with knee bin {knee_bin}"
            )));
        }
        let mut edges: Vec<usize> = (0..=knee_bin).collect();
        let n_log = n_bands - knee_bin;
        let ratio = (n_bins as f64 / knee_bin as f64).powf(1.0 / n_log as f64);
        for i in 1..=n_log {
            let target = (knee_bin as f64 * ratio.powi(i as i32)).round() as usize;
            let prev = *edges.last().expect("non-empty");
            edges.push(target.max(prev + 1).min(n_bins));
        }
        *edges.last_mut().expect("non-empty") = n_bins;
        let scale = SubbandScale { band_edges: edges };
        scale.validate(n_bins, n_bands)?;
        Ok(scale)
    }

    fn validate(&self, n_bins: usize, n_bands: usize) -> Result<()> {
        if self.band_edges.len() != n_bands + 1 {
            return Err(Error::InvalidData(format!(
                "{} band edges, expected {}",
                self.band_edges.len(),
                n_bands + 1
            )));
        }
        if self.band_edges[0] != 0 || *self.band_edges.last().expect("non-empty") != n_bins {
            return Err(Error::InvalidData("band edges must cover 0..n_bins".into()));
        }
        if self.band_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData("band edges must strictly increase".into()));
        }
        Ok(())
    }

    pub fn n_bands(&self) -> usize {
        self.band_edges.len() - 1
    }

    pub fn band_of_bin(&self, k: usize) -> usize {
        match self.band_edges.binary_search(&(k + 1)) {
            Ok(i) | Err(i) => i - 1,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("band,first_bin,last_bin\n");
        for b in 0..self.n_bands() {
            s.push_str(&format!(
                "{},{},{}\n",
                b,
                self.band_edges[b],
                self.band_edges[b + 1] - 1
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BrirParams {
    /// linear direct-path gain
    pub g: f64,
    /// direct-path delay of the left channel, samples
    pub t_left: f64,
    /// interaural delay (right minus left), samples
    pub t_itd: f64,
    /// subband weights, dB
    pub w: Vec<f64>,
    /// subband decay rates, per frame
    pub alpha: Vec<f64>,
}

impl BrirParams {
    pub fn init(doa: &Doa) -> BrirParams {
        let itd_samples =
            woodworth_itd_seconds(doa.azimuth_deg, doa.elevation_deg, HEAD_RADIUS_M)
                * SAMPLE_RATE as f64;
        BrirParams {
            g: 0.15,
            t_left: 52.0,
            t_itd: itd_samples,
            w: vec![2.0; N_BANDS],
            alpha: vec![0.1; N_BANDS],
        }
    }

    /// Initialization anchored to the observation: the direct-path delay and
    /// gain come from the onset of the dry/left-channel cross-correlation.
    /// Gradient descent on the fit distance cannot recover a delay that
    /// starts hundreds of samples off (the rendered direct path then shares
    /// no STFT frames with the observed one and the gain collapses to zero
    /// instead), so the delay must start close before the fit can refine it.
    pub fn init_from_observation(
        doa: &Doa,
        dry: &[f64],
        observation: &[Vec<f64>; 2],
    ) -> BrirParams {
        let mut params = Self::init(doa);
        params.w = vec![-30.0; N_BANDS];
        if dry.is_empty() || observation[0].is_empty() {
            return params;
        }
        let dry_energy: f64 = dry.iter().map(|v| v * v).sum();
        if dry_energy <= 0.0 {
            return params;
        }
        let lag = crate::util::gcc_phat_delay(dry, &observation[0]);
        // matched-filter amplitude at the PHAT lag for the gain estimate
        let xcorr_at_lag: f64 = dry
            .iter()
            .enumerate()
            .map(|(n, &v)| v * observation[0].get(n + lag).copied().unwrap_or(0.0))
            .sum();
        params.t_left = lag as f64;
        params.g = (xcorr_at_lag.abs() / dry_energy).max(1e-3);
        params
    }

    pub fn clamp(&mut self) {
        self.g = self.g.max(0.0);
        self.t_left = self.t_left.max(0.0);
        for w in self.w.iter_mut() {
            *w = w.clamp(W_MIN_DB, W_MAX_DB);
        }
        for a in self.alpha.iter_mut() {
            *a = a.clamp(ALPHA_MIN, ALPHA_MAX);
        }
    }

    pub fn validate(&self, n_bands: usize) -> Result<()> {
        if self.w.len() != n_bands || self.alpha.len() != n_bands {
            return Err(Error::ShapeMismatch(format!(
                "{} weights / {} decays, expected {n_bands}",
                self.w.len(),
                self.alpha.len()
            )));
        }
        let finite = self.g.is_finite()
            && self.t_left.is_finite()
            && self.t_itd.is_finite()
            && self.w.iter().chain(self.alpha.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("BRIR parameters".into()));
        }
        if self.g < 0.0 || self.t_left < 0.0 {
            return Err(Error::ParamOutOfRange(format!(
                "g {} and t_left {} must be >= 0",
                self.g, self.t_left
            )));
        }
        if self.w.iter().any(|&w| !(W_MIN_DB..=W_MAX_DB).contains(&w)) {
            return Err(Error::ParamOutOfRange(format!(
                "weights must lie in [{W_MIN_DB}, {W_MAX_DB}] dB"
            )));
        }
        if self.alpha.iter().any(|&a| !(ALPHA_MIN..=ALPHA_MAX).contains(&a)) {
            return Err(Error::ParamOutOfRange(format!(
                "decays must lie in [{ALPHA_MIN}, {ALPHA_MAX}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iters: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            iters: 50,
        }
    }
}

/// Gradient of the fit distance with respect to every BRIR parameter.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub g: f64,
    pub t_left: f64,
    pub t_itd: f64,
    pub w: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub struct ReverbOperator {
    pub stft_config: StftConfig,
    pub scale: SubbandScale,
    pub n_frames: usize,
    stft: Stft,
}

/// Minimum-phase stereo FIR realized from a denormalized feature.
pub fn minimum_phase_filter(feature: &AlignedHrtfFeature) -> Result<[Vec<f64>; 2]> {
    if feature.normalized {
        return Err(Error::InvalidData(
            "minimum_phase_filter expects denormalized dB magnitudes".into(),
        ));
    }
    feature.validate()?;
    let left = min_phase_fir(feature.values.row(0).as_slice().expect("contiguous"))?;
    let right = min_phase_fir(feature.values.row(1).as_slice().expect("contiguous"))?;
    Ok([left, right])
}

/// y[n] = sum_k taps[k] x[n - offset - k], truncated/padded to out_len.
fn apply_delay(x: &[f64], taps: &[f64], offset: i64, out_len: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_len];
    for (k, &t) in taps.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let shift = offset + k as i64;
        for (n, xv) in x.iter().enumerate() {
            let m = n as i64 + shift;
            if m >= 0 && (m as usize) < out_len {
                y[m as usize] += t * xv;
            }
        }
    }
    y
}

impl ReverbOperator {
    pub fn new() -> Result<ReverbOperator> {
        Self::with_frames(N_LATE_FRAMES)
    }

    pub fn with_frames(n_frames: usize) -> Result<ReverbOperator> {
        let stft_config = StftConfig::default();
        let scale = SubbandScale::quasi_log(&stft_config, N_BANDS)?;
        Ok(ReverbOperator {
            stft: Stft::new(stft_config.clone()),
            stft_config,
            scale,
            n_frames,
        })
    }

    /// Subband envelope at band b, frame m (relative to the direct arrival).
    pub fn envelope(&self, params: &BrirParams, b: usize, m: usize) -> f64 {
        if m >= self.n_frames {
            return 0.0;
        }
        10f64.powf(params.w[b] / 20.0) * (-params.alpha[b] * m as f64).exp()
    }

    /// STFT frame holding the direct arrival.
    fn direct_frame(&self, params: &BrirParams) -> usize {
        params.t_left.max(0.0) as usize / self.stft_config.hop
    }

    pub fn brir_len(&self, params: &BrirParams) -> usize {
        let frames = self.direct_frame(params) + self.n_frames;
        (frames - 1) * self.stft_config.hop + self.stft_config.window_len
    }

    pub fn build_direct(&self, params: &BrirParams, hrtf: &[Vec<f64>; 2]) -> [Vec<f64>; 2] {
        let out_len = self.brir_len(params);
        let mut out = [vec![0.0; out_len], vec![0.0; out_len]];
        for (c, outc) in out.iter_mut().enumerate() {
            let delay = params.t_left + if c == 1 { params.t_itd } else { 0.0 };
            let (taps, offset) = frac_delay_kernel(delay);
            let d = apply_delay(&hrtf[c], &taps, offset, out_len);
            for (o, v) in outc.iter_mut().zip(d.iter()) {
                *o = params.g * v;
            }
        }
        out
    }

    /// Raw late-field noise STFTs, one per channel, over the BRIR support.
    fn late_noise_specs(&self, params: &BrirParams, seed: u64) -> Result<[Spec; 2]> {
        let out_len = self.brir_len(params);
        let mut specs = Vec::with_capacity(2);
        for c in 0..2 {
            let mut rng = seeded_rng(seed, &format!("late-{c}"));
            let noise: Vec<f64> = (0..out_len)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            specs.push(self.stft.analyze(&noise)?);
        }
        let right = specs.pop().expect("two specs");
        let left = specs.pop().expect("two specs");
        Ok([left, right])
    }

    /// Masks a raw noise STFT with the subband envelope. The decaying tail
    /// occupies the frames after the direct arrival: frame d+m carries
    /// envelope(b, m) for m = 1..n_frames-1, every other frame is zeroed.
    fn mask_spec(&self, params: &BrirParams, spec: &Spec) -> Spec {
        let d = self.direct_frame(params);
        let mut masked = Array2::from_elem(spec.dim(), Complex64::new(0.0, 0.0));
        for m in 1..self.n_frames {
            let fi = d + m;
            if fi >= spec.nrows() {
                break;
            }
            for b in 0..self.scale.n_bands() {
                let env = self.envelope(params, b, m);
                for k in self.scale.band_edges[b]..self.scale.band_edges[b + 1] {
                    masked[[fi, k]] = spec[[fi, k]] * env;
                }
            }
        }
        masked
    }

    fn build_brir_impl(
        &self,
        params: &BrirParams,
        hrtf: &[Vec<f64>; 2],
        seed: u64,
    ) -> Result<[Vec<f64>; 2]> {
        let out_len = self.brir_len(params);
        let mut brir = self.build_direct(params, hrtf);
        let specs = self.late_noise_specs(params, seed)?;
        for (c, spec) in specs.iter().enumerate() {
            let late = self.stft.synthesize(&self.mask_spec(params, spec), out_len);
            for (o, v) in brir[c].iter_mut().zip(late.iter()) {
                *o += v;
            }
        }
        Ok(brir)
    }

    pub fn build_brir(
        &self,
        params: &BrirParams,
        hrtf: &[Vec<f64>; 2],
        seed: u64,
    ) -> Result<[Vec<f64>; 2]> {
        params.validate(self.scale.n_bands())?;
        self.build_brir_impl(params, hrtf, seed)
    }

    pub fn render(
        &self,
        params: &BrirParams,
        hrtf: &[Vec<f64>; 2],
        dry: &[f64],
        seed: u64,
    ) -> Result<[Vec<f64>; 2]> {
        params.validate(self.scale.n_bands())?;
        self.render_impl(params, hrtf, dry, seed)
    }

    fn render_impl(
        &self,
        params: &BrirParams,
        hrtf: &[Vec<f64>; 2],
        dry: &[f64],
        seed: u64,
    ) -> Result<[Vec<f64>; 2]> {
        if dry.is_empty() {
            return Err(Error::EmptyInput("dry excitation".into()));
        }
        let brir = self.build_brir_impl(params, hrtf, seed)?;
        Ok([fft_convolve(dry, &brir[0]), fft_convolve(dry, &brir[1])])
    }

    /// Observation-fit distance: mean squared difference between the dB
    /// log-magnitude STFTs (floored) of the rendered and observed signals,
    /// summed over both channels.
    pub fn fit_distance(&self, rendered: &[Vec<f64>; 2], observed: &[Vec<f64>; 2]) -> Result<f64> {
        let mut total = 0.0;
        for c in 0..2 {
            let len = rendered[c].len().min(observed[c].len());
            let s = self.stft.analyze(&rendered[c][..len])?;
            let o = self.stft.analyze(&observed[c][..len])?;
            let n = s.len() as f64;
            let mut acc = 0.0;
            for (sv, ov) in s.iter().zip(o.iter()) {
                let d = crate::stft::db_mag_floored(*sv, FIT_FLOOR_DB)
                    - crate::stft::db_mag_floored(*ov, FIT_FLOOR_DB);
                acc += d * d;
            }
            total += acc / n;
        }
        Ok(total)
    }

    /// Distance and its analytic gradient with respect to the BRIR
    /// parameters, holding the late-field noise realization fixed.
    pub fn fit_grad(
        &self,
        params: &BrirParams,
        hrtf: &[Vec<f64>; 2],
        dry: &[f64],
        observed: &[Vec<f64>; 2],
        seed: u64,
    ) -> Result<(f64, ParamGrads)> {
        if dry.is_empty() {
            return Err(Error::EmptyInput("dry excitation".into()));
        }
        let n_bands = self.scale.n_bands();
        let out_len = self.brir_len(params);
        let specs = self.late_noise_specs(params, seed)?;
        let direct = self.build_direct(params, hrtf);
        let mut grads = ParamGrads {
            g: 0.0,
            t_left: 0.0,
            t_itd: 0.0,
            w: vec![0.0; n_bands],
            alpha: vec![0.0; n_bands],
        };
        let mut total = 0.0;
        let ln10_over20 = std::f64::consts::LN_10 / 20.0;
        let d_frame = self.direct_frame(params);
        for c in 0..2 {
            let masked = self.mask_spec(params, &specs[c]);
            let mut brir = self.stft.synthesize(&masked, out_len);
            for (o, v) in brir.iter_mut().zip(direct[c].iter()) {
                *o += v;
            }
            let rendered = fft_convolve(dry, &brir);
            let len = rendered.len().min(observed[c].len());
            let s = self.stft.analyze(&rendered[..len])?;
            let o = self.stft.analyze(&observed[c][..len])?;
            let n = s.len() as f64;
            // distance and gradient in the complex STFT domain
            let mut grad_spec = Array2::from_elem(s.dim(), Complex64::new(0.0, 0.0));
            let mut acc = 0.0;
            for (idx, (sv, ov)) in s.iter().zip(o.iter()).enumerate() {
                let sdb = crate::stft::db_mag_floored(*sv, FIT_FLOOR_DB);
                let odb = crate::stft::db_mag_floored(*ov, FIT_FLOOR_DB);
                let diff = sdb - odb;
                acc += diff * diff;
                if sdb > FIT_FLOOR_DB {
                    let mag2 = sv.norm_sqr();
                    let coeff = 2.0 * diff / n * (20.0 / std::f64::consts::LN_10) / mag2;
                    let (fi, k) = (idx / s.ncols(), idx % s.ncols());
                    grad_spec[[fi, k]] = Complex64::new(coeff * sv.re, coeff * sv.im);
                }
            }
            total += acc / n;
            let mut grad_rendered = self.stft.analyze_adjoint(&grad_spec, len);
            grad_rendered.resize(rendered.len(), 0.0);
            let grad_brir = fft_correlate_adjoint(&grad_rendered, dry, brir.len());
            // direct path: gain and fractional delays
            let delay = params.t_left + if c == 1 { params.t_itd } else { 0.0 };
            let (taps, offset) = frac_delay_kernel(delay);
            let delayed = apply_delay(&hrtf[c], &taps, offset, out_len);
            grads.g += grad_brir
                .iter()
                .zip(delayed.iter())
                .map(|(gb, d)| gb * d)
                .sum::<f64>();
            let (dtaps, doffset) = frac_delay_kernel_deriv(delay);
            let ddelayed = apply_delay(&hrtf[c], &dtaps, doffset, out_len);
            let ddelay: f64 = params.g
                * grad_brir
                    .iter()
                    .zip(ddelayed.iter())
                    .map(|(gb, d)| gb * d)
                    .sum::<f64>();
            grads.t_left += ddelay;
            if c == 1 {
                grads.t_itd += ddelay;
            }
            // late field: back through synthesis to the envelope mask
            let grad_spec_late = self.stft.synthesize_adjoint(&grad_brir, masked.nrows());
            for m in 1..self.n_frames {
                let fi = d_frame + m;
                if fi >= masked.nrows() {
                    break;
                }
                for b in 0..n_bands {
                    let env = self.envelope(params, b, m);
                    let mut denv = 0.0;
                    for k in self.scale.band_edges[b]..self.scale.band_edges[b + 1] {
                        let gs = grad_spec_late[[fi, k]];
                        let u = specs[c][[fi, k]];
                        denv += gs.re * u.re + gs.im * u.im;
                    }
                    grads.w[b] += denv * env * ln10_over20;
                    grads.alpha[b] -= denv * env * m as f64;
                }
            }
        }
        Ok((total, grads))
    }

    /// Distance and its analytic gradient with respect to the HRTF FIRs,
    /// holding the BRIR parameters and noise realization fixed. Only the
    /// direct path depends on the HRTF.
    pub fn fit_grad_hrtf(
        &self,
        params: &BrirParams,
        hrtf: &[Vec<f64>; 2],
        dry: &[f64],
        observed: &[Vec<f64>; 2],
        seed: u64,
    ) -> Result<(f64, [Vec<f64>; 2])> {
        if dry.is_empty() {
            return Err(Error::EmptyInput("dry excitation".into()));
        }
        let out_len = self.brir_len(params);
        let specs = self.late_noise_specs(params, seed)?;
        let direct = self.build_direct(params, hrtf);
        let mut grad_hrtf = [vec![0.0; hrtf[0].len()], vec![0.0; hrtf[1].len()]];
        let mut total = 0.0;
        for c in 0..2 {
            let masked = self.mask_spec(params, &specs[c]);
            let mut brir = self.stft.synthesize(&masked, out_len);
            for (o, v) in brir.iter_mut().zip(direct[c].iter()) {
                *o += v;
            }
            let rendered = fft_convolve(dry, &brir);
            let len = rendered.len().min(observed[c].len());
            let s = self.stft.analyze(&rendered[..len])?;
            let o = self.stft.analyze(&observed[c][..len])?;
            let n = s.len() as f64;
            let mut grad_spec = Array2::from_elem(s.dim(), Complex64::new(0.0, 0.0));
            let mut acc = 0.0;
            for (idx, (sv, ov)) in s.iter().zip(o.iter()).enumerate() {
                let sdb = crate::stft::db_mag_floored(*sv, FIT_FLOOR_DB);
                let odb = crate::stft::db_mag_floored(*ov, FIT_FLOOR_DB);
                let diff = sdb - odb;
                acc += diff * diff;
                if sdb > FIT_FLOOR_DB {
                    let mag2 = sv.norm_sqr();
                    let coeff = 2.0 * diff / n * (20.0 / std::f64::consts::LN_10) / mag2;
                    let (fi, k) = (idx / s.ncols(), idx % s.ncols());
                    grad_spec[[fi, k]] = Complex64::new(coeff * sv.re, coeff * sv.im);
                }
            }
            total += acc / n;
            let mut grad_rendered = self.stft.analyze_adjoint(&grad_spec, len);
            grad_rendered.resize(rendered.len(), 0.0);
            let grad_brir = fft_correlate_adjoint(&grad_rendered, dry, brir.len());
            let delay = params.t_left + if c == 1 { params.t_itd } else { 0.0 };
            let (taps, offset) = frac_delay_kernel(delay);
            // adjoint of the delayed, scaled direct path
            for (nh, gh) in grad_hrtf[c].iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let m = nh as i64 + offset + k as i64;
                    if m >= 0 && (m as usize) < grad_brir.len() {
                        acc += t * grad_brir[m as usize];
                    }
                }
                *gh = params.g * acc;
            }
        }
        Ok((total, grad_hrtf))
    }

    /// Fits the BRIR parameters to the observation with Adam, clamping after
    /// every step. Returns the updated parameters and the final residual.
    pub fn fit_params(
        &self,
        params_in: &BrirParams,
        hrtf: &[Vec<f64>; 2],
        dry: &[f64],
        observed: &[Vec<f64>; 2],
        opt: &OptConfig,
        seed: u64,
    ) -> Result<(BrirParams, f64)> {
        let n_bands = self.scale.n_bands();
        if params_in.w.len() != n_bands || params_in.alpha.len() != n_bands {
            return Err(Error::ShapeMismatch(format!(
                "fit_params got {} bands, operator has {n_bands}",
                params_in.w.len()
            )));
        }
        let n_dims = 3 + 2 * n_bands;
        let mut adam = Adam::new(n_dims, opt.lr, opt.beta1, opt.beta2);
        let mut params = params_in.clone();
        let mut theta = pack(&params);
        let mut residual = f64::INFINITY;
        for it in 0..opt.iters {
            let (dist, grads) = self.fit_grad(&params, hrtf, dry, observed, seed)?;
            residual = dist;
            let gvec = pack_grads(&grads);
            if gvec.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "fit gradient at iteration {it}; params: {}",
                    serde_json::to_string(&params)?
                )));
            }
            adam.step(&mut theta, &gvec);
            params = unpack(&theta, n_bands);
            params.clamp();
            theta = pack(&params);
        }
        residual = self
            .fit_grad(&params, hrtf, dry, observed, seed)
            .map(|(d, _)| d)
            .unwrap_or(residual);
        Ok((params, residual))
    }
}

fn pack(p: &BrirParams) -> Vec<f64> {
    let mut v = vec![p.g, p.t_left, p.t_itd];
    v.extend_from_slice(&p.w);
    v.extend_from_slice(&p.alpha);
    v
}

fn pack_grads(g: &ParamGrads) -> Vec<f64> {
    let mut v = vec![g.g, g.t_left, g.t_itd];
    v.extend_from_slice(&g.w);
    v.extend_from_slice(&g.alpha);
    v
}

fn unpack(v: &[f64], n_bands: usize) -> BrirParams {
    BrirParams {
        g: v[0],
        t_left: v[1],
        t_itd: v[2],
        w: v[3..3 + n_bands].to_vec(),
        alpha: v[3 + n_bands..3 + 2 * n_bands].to_vec(),
    }
}
