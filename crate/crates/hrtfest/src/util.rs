//! Shared numerics: seeded RNG derivation, windowed-sinc kernels, FFT helpers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Derive a child RNG from a global seed and a stream label, so every
/// stochastic stage gets an independent, reproducible stream.
pub fn seeded_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let bytes = stream.as_bytes();
    let n = bytes.len().min(24);
    key[8..8 + n].copy_from_slice(&bytes[..n]);
    ChaCha8Rng::from_seed(key)
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    }
}

/// Derivative of sinc(x).
pub fn sinc_deriv(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        // Taylor: sinc'(x) = -pi^2 x / 3 + O(x^3)
        -std::f64::consts::PI.powi(2) * x / 3.0
    } else {
        let pix = std::f64::consts::PI * x;
        (pix.cos() - sinc(x)) / x
    }
}

pub const FRAC_DELAY_TAPS: usize = 64;

/// Windowed-sinc fractional-delay kernel. Returns (taps, offset) such that
/// delaying x by `delay` samples is y[n] = sum_k taps[k] * x[n - offset - k].
pub fn frac_delay_kernel(delay: f64) -> (Vec<f64>, i64) {
    let half = (FRAC_DELAY_TAPS / 2) as i64;
    let base = delay.floor() as i64;
    let offset = base - half + 1;
    let mut taps = vec![0.0; FRAC_DELAY_TAPS];
    for (k, t) in taps.iter_mut().enumerate() {
        let pos = (offset + k as i64) as f64;
        let x = delay - pos;
        *t = sinc(x) * hann_arg(x / half as f64);
    }
    (taps, offset)
}

/// Derivative of the kernel taps with respect to the delay.
pub fn frac_delay_kernel_deriv(delay: f64) -> (Vec<f64>, i64) {
    let half = (FRAC_DELAY_TAPS / 2) as i64;
    let base = delay.floor() as i64;
    let offset = base - half + 1;
    let mut taps = vec![0.0; FRAC_DELAY_TAPS];
    let h = half as f64;
    for (k, t) in taps.iter_mut().enumerate() {
        let pos = (offset + k as i64) as f64;
        let x = delay - pos;
        *t = sinc_deriv(x) * hann_arg(x / h) + sinc(x) * hann_arg_deriv(x / h) / h;
    }
    (taps, offset)
}

fn hann_arg(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

fn hann_arg_deriv(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        -0.5 * std::f64::consts::PI * (std::f64::consts::PI * u).sin()
    }
}

/// FFT-based linear convolution of two real signals.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut fb: Vec<Complex64> = b
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= *y;
    }
    ifft.process(&mut fa);
    fa.iter().take(out_len).map(|c| c.re / n as f64).collect()
}

/// Adjoint of `y = fft_convolve(x, b)` with respect to `x`:
/// given grad over y (length x_len + b_len - 1), returns grad over x (length x_len).
pub fn fft_correlate_adjoint(grad_y: &[f64], b: &[f64], x_len: usize) -> Vec<f64> {
    // (conv(x, b))^T g = correlate(g, b), i.e. convolve g with reversed b, delayed.
    let b_rev: Vec<f64> = b.iter().rev().cloned().collect();
    let full = fft_convolve(grad_y, &b_rev);
    // valid part starts at b.len()-1
    full[b.len() - 1..b.len() - 1 + x_len].to_vec()
}

/// In-place complex FFT (unnormalized forward).
pub fn complex_fft(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(buf);
}

/// In-place complex inverse FFT (unnormalized: no 1/N).
pub fn complex_ifft(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(buf.len()).process(buf);
}

/// GCC-PHAT delay of `y` relative to `x` (y ≈ gain * delayed x plus noise),
/// restricted to non-negative lags. Phase-transform whitening keeps the
/// estimate sharp for quasi-periodic signals, where the plain matched filter
/// repeats at every pitch period.
pub fn gcc_phat_delay(x: &[f64], y: &[f64]) -> usize {
    if x.is_empty() || y.is_empty() {
        return 0;
    }
    let n = (x.len() + y.len()).next_power_of_two();
    let pad = |s: &[f64]| -> Vec<Complex64> {
        s.iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(n)
            .collect()
    };
    let mut fx = pad(x);
    let mut fy = pad(y);
    complex_fft(&mut fx);
    complex_fft(&mut fy);
    let mut cross: Vec<Complex64> = fy
        .iter()
        .zip(fx.iter())
        .map(|(a, b)| {
            let c = a * b.conj();
            let m = c.norm();
            if m > 0.0 {
                c / m
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    complex_ifft(&mut cross);
    let max_lag = y.len().saturating_sub(1).min(n - 1);
    let peak = (0..=max_lag)
        .map(|k| cross[k].re)
        .fold(f64::NEG_INFINITY, f64::max);
    // earliest arrival within half the strongest correlation: in a hard
    // room a late reflection can out-correlate the direct path, but the
    // direct path always arrives first
    (0..=max_lag)
        .find(|&k| cross[k].re >= 0.5 * peak)
        .unwrap_or(0)
}

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Woodworth spherical-head interaural delay (right minus left, seconds).
/// Positive azimuth points left, so a source at az 90 delays the right ear.
pub fn woodworth_itd_seconds(az_deg: f64, el_deg: f64, head_radius_m: f64) -> f64 {
    let lateral = (az_deg.to_radians().sin() * el_deg.to_radians().cos()).clamp(-1.0, 1.0);
    let theta = lateral.asin();
    head_radius_m / SPEED_OF_SOUND * (theta.sin() + theta)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    20.0 * x.log10()
}
