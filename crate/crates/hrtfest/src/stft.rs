//! STFT analysis/synthesis with weighted overlap-add, plus the adjoint
//! operators needed for gradient propagation through spectral distances.

use crate::error::{Error, Result};
use ndarray::Array2;
use realfft::RealFftPlanner;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        // Hann 1024 at 44.1 kHz is ~23 ms; hop 256 gives 75% overlap.
        StftConfig {
            sample_rate: 44100,
            window_len: 1024,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }
}

pub type Spec = Array2<Complex64>;

/// Floor on the pointwise window-energy sum used to normalize overlap-add
/// synthesis. Near the first and last window tails the sum decays toward
/// zero, and dividing by it amplifies inconsistent (modified) spectrograms
/// by up to 1/window^2; flooring trades exact edge reconstruction for a
/// bounded gain.
const WSUM_FLOOR: f64 = 1e-2;

pub struct Stft {
    pub config: StftConfig,
    window: Vec<f64>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Self {
        let n = config.window_len;
        // periodic Hann: satisfies COLA for hop = N/4
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
            .collect();
        Stft { config, window }
    }

    pub fn n_frames(&self, sig_len: usize) -> usize {
        if sig_len < self.config.window_len {
            0
        } else {
            (sig_len - self.config.window_len) / self.config.hop + 1
        }
    }

    /// Forward STFT: frames x bins (window_len/2 + 1) complex matrix.
    pub fn analyze(&self, x: &[f64]) -> Result<Spec> {
        let n = self.config.window_len;
        if x.len() < n {
            return Err(Error::SignalTooShort {
                len: x.len(),
                min: n,
            });
        }
        let hop = self.config.hop;
        let m = self.n_frames(x.len());
        let mut planner = RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut spec = Array2::zeros((m, self.config.n_bins()));
        let mut buf = vec![0.0; n];
        let mut out = fft.make_output_vec();
        for fi in 0..m {
            let start = fi * hop;
            for i in 0..n {
                buf[i] = x[start + i] * self.window[i];
            }
            fft.process(&mut buf, &mut out).expect("fft");
            for (k, c) in out.iter().enumerate() {
                spec[[fi, k]] = *c;
            }
        }
        Ok(spec)
    }

    /// Inverse STFT via weighted overlap-add with pointwise window-energy
    /// normalization (floored; see WSUM_FLOOR). Reconstructs analyze()
    /// output exactly wherever the window-energy sum clears the floor.
    pub fn synthesize(&self, spec: &Spec, out_len: usize) -> Vec<f64> {
        let n = self.config.window_len;
        let hop = self.config.hop;
        let m = spec.nrows();
        let mut planner = RealFftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(n);
        let mut acc = vec![0.0; out_len];
        let mut wsum = vec![0.0; out_len];
        let mut inbuf = ifft.make_input_vec();
        let mut frame = vec![0.0; n];
        for fi in 0..m {
            for k in 0..self.config.n_bins() {
                inbuf[k] = spec[[fi, k]];
            }
            // realfft requires zero imaginary parts at DC/Nyquist
            inbuf[0].im = 0.0;
            inbuf[n / 2].im = 0.0;
            ifft.process(&mut inbuf, &mut frame).expect("ifft");
            let start = fi * hop;
            for i in 0..n {
                let t = start + i;
                if t < out_len {
                    acc[t] += frame[i] / n as f64 * self.window[i];
                    wsum[t] += self.window[i] * self.window[i];
                }
            }
        }
        for t in 0..out_len {
            acc[t] /= wsum[t].max(WSUM_FLOOR);
        }
        acc
    }

    /// Adjoint of `analyze` under the convention that the spectral gradient
    /// stores (dD/dRe X, dD/dIm X) as a complex number.
    pub fn analyze_adjoint(&self, grad_spec: &Spec, sig_len: usize) -> Vec<f64> {
        let n = self.config.window_len;
        let hop = self.config.hop;
        let mut grad = vec![0.0; sig_len];
        let mut planner = rustfft::FftPlanner::new();
        let ifft = planner.plan_fft_inverse(n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for fi in 0..grad_spec.nrows() {
            for c in buf.iter_mut() {
                *c = Complex64::new(0.0, 0.0);
            }
            for k in 0..self.config.n_bins() {
                buf[k] = grad_spec[[fi, k]];
            }
            // unnormalized inverse: sum_k G e^{+j w k n}
            ifft.process(&mut buf);
            let start = fi * hop;
            for i in 0..n {
                let t = start + i;
                if t < sig_len {
                    grad[t] += self.window[i] * buf[i].re;
                }
            }
        }
        grad
    }

    /// Adjoint of `synthesize` (fixed out_len): maps a signal-domain gradient
    /// back to a spectral gradient in the same (Re, Im) packing convention.
    pub fn synthesize_adjoint(&self, grad_sig: &[f64], n_frames: usize) -> Spec {
        let n = self.config.window_len;
        let hop = self.config.hop;
        let out_len = grad_sig.len();
        // recompute the normalization used in synthesize
        let mut wsum = vec![0.0; out_len];
        for fi in 0..n_frames {
            let start = fi * hop;
            for i in 0..n {
                let t = start + i;
                if t < out_len {
                    wsum[t] += self.window[i] * self.window[i];
                }
            }
        }
        let mut planner = RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut spec = Array2::zeros((n_frames, self.config.n_bins()));
        let mut v = vec![0.0; n];
        let mut out = fft.make_output_vec();
        for fi in 0..n_frames {
            let start = fi * hop;
            for i in 0..n {
                let t = start + i;
                v[i] = if t < out_len {
                    grad_sig[t] * self.window[i] / wsum[t].max(WSUM_FLOOR)
                } else {
                    0.0
                };
            }
            fft.process(&mut v, &mut out).expect("fft");
            for k in 0..self.config.n_bins() {
                let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                let g = out[k] * (c / n as f64);
                // DC/Nyquist have no imaginary degree of freedom
                spec[[fi, k]] = if k == 0 || k == n / 2 {
                    Complex64::new(g.re, 0.0)
                } else {
                    g
                };
            }
        }
        spec
    }
}

/// dB log-magnitude with floor, and its companion gradient helper.
pub fn db_mag_floored(c: Complex64, floor_db: f64) -> f64 {
    let mag = c.norm();
    let db = 20.0 * mag.max(1e-300).log10();
    db.max(floor_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::util::seeded_rng(seed, "stft-test");
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn round_trip_interior_error_small() {
        let stft = Stft::new(StftConfig::default());
        let x = rand_signal(44100, 1);
        let spec = stft.analyze(&x).unwrap();
        let y = stft.synthesize(&spec, x.len());
        let n = stft.config.window_len;
        let hi = (spec.nrows() - 1) * stft.config.hop + n;
        let mut num = 0.0;
        let mut den = 0.0;
        for t in n..hi - n {
            num += (x[t] - y[t]).powi(2);
            den += x[t].powi(2);
        }
        assert!((num / den).sqrt() < 1e-6, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn too_short_signal_errors() {
        let stft = Stft::new(StftConfig::default());
        assert!(matches!(
            stft.analyze(&[0.0; 100]),
            Err(Error::SignalTooShort { .. })
        ));
    }

    #[test]
    fn parseval_on_frames() {
        // per-frame Parseval: sum |X_k|^2 (with hermitian doubling) == N * sum (w x)^2
        let stft = Stft::new(StftConfig::default());
        let x = rand_signal(4096, 2);
        let spec = stft.analyze(&x).unwrap();
        let n = stft.config.window_len;
        for fi in 0..spec.nrows() {
            let start = fi * stft.config.hop;
            let mut time_e = 0.0;
            for i in 0..n {
                let w = 0.5
                    * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos());
                time_e += (x[start + i] * w).powi(2);
            }
            let mut freq_e = 0.0;
            for k in 0..stft.config.n_bins() {
                let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                freq_e += c * spec[[fi, k]].norm_sqr();
            }
            freq_e /= n as f64;
            assert!(
                (time_e - freq_e).abs() / time_e.max(1e-12) < 1e-9,
                "frame {fi}: {time_e} vs {freq_e}"
            );
        }
    }

    #[test]
    fn sinusoid_energy_concentrates_at_bin() {
        let stft = Stft::new(StftConfig::default());
        let n = 1024;
        let bin = 64;
        let x: Vec<f64> = (0..8192)
            .map(|t| (2.0 * std::f64::consts::PI * bin as f64 * t as f64 / n as f64).cos())
            .collect();
        let spec = stft.analyze(&x).unwrap();
        let fi = spec.nrows() / 2;
        let total: f64 = (0..stft.config.n_bins())
            .map(|k| spec[[fi, k]].norm_sqr())
            .sum();
        let main: f64 = (bin - 1..=bin + 1).map(|k| spec[[fi, k]].norm_sqr()).sum();
        // Hann main lobe spans +-2 bins; +-1 already captures the bulk
        assert!(main / total > 0.99, "{}", main / total);
    }

    #[test]
    fn analyze_adjoint_inner_product_identity() {
        // <analyze(x), G> (re/im inner product) == <x, adjoint(G)>
        let stft = Stft::new(StftConfig {
            sample_rate: 44100,
            window_len: 64,
            hop: 16,
        });
        let x = rand_signal(256, 3);
        let spec = stft.analyze(&x).unwrap();
        let mut rng = crate::util::seeded_rng(4, "adj");
        let g: Spec = Array2::from_shape_fn(spec.dim(), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let lhs: f64 = spec
            .iter()
            .zip(g.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        let xt = stft.analyze_adjoint(&g, x.len());
        let rhs: f64 = x.iter().zip(xt.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn synthesize_adjoint_inner_product_identity() {
        let stft = Stft::new(StftConfig {
            sample_rate: 44100,
            window_len: 64,
            hop: 16,
        });
        let x = rand_signal(256, 5);
        let spec = stft.analyze(&x).unwrap();
        let n_frames = spec.nrows();
        let out_len = 256;
        let y = stft.synthesize(&spec, out_len);
        let mut rng = crate::util::seeded_rng(6, "adj2");
        let g: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let st = stft.synthesize_adjoint(&g, n_frames);
        // spec only has hermitian-consistent content (from a real signal),
        // so the (Re,Im) inner product is the right pairing
        let rhs: f64 = spec
            .iter()
            .zip(st.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        assert!(
            (lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0),
            "{lhs} vs {rhs}"
        );
    }
}
