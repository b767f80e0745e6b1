//! Minimum-phase FIR reconstruction from dB log-magnitude features via
//! real-cepstrum folding, with an explicit backward pass so likelihood
//! gradients can flow from rendered audio back into the feature domain.
//!
//! The 128-bin feature is mirrored to a full 256-bin log-magnitude (the
//! dropped Nyquist bin is extended from the last feature bin), so the
//! resulting 256-tap FIR matches the requested magnitude exactly on the
//! DFT grid.

use crate::error::{Error, Result};
use crate::util::{complex_fft, complex_ifft};
use rustfft::num_complex::Complex64;

pub const FIR_LEN: usize = 256;
pub const N_BINS: usize = 128;
const LN10_OVER_20: f64 = std::f64::consts::LN_10 / 20.0;

/// Everything the backward pass needs from the forward computation.
pub struct MinPhaseCache {
    h_spec: Vec<Complex64>,
}

/// Build a 256-tap minimum-phase FIR whose DFT magnitude matches the given
/// 128-bin dB spectrum (bins 0..127 of a 256-point DFT).
pub fn min_phase_fir(db_bins: &[f64]) -> Result<Vec<f64>> {
    Ok(min_phase_fir_cached(db_bins)?.0)
}

pub fn min_phase_fir_cached(db_bins: &[f64]) -> Result<(Vec<f64>, MinPhaseCache)> {
    if db_bins.len() != N_BINS {
        return Err(Error::ShapeMismatch(format!(
            "expected {} dB bins, got {}",
            N_BINS,
            db_bins.len()
        )));
    }
    if db_bins.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("min_phase_fir input".into()));
    }
    let n = FIR_LEN;
    // mirror log-magnitude to a full hermitian spectrum
    let mut log_mag = vec![0.0; n];
    for (k, &d) in db_bins.iter().enumerate() {
        log_mag[k] = d * LN10_OVER_20;
    }
    log_mag[n / 2] = log_mag[n / 2 - 1]; // Nyquist extension
    for k in 1..n / 2 {
        log_mag[n - k] = log_mag[k];
    }
    // real cepstrum
    let mut buf: Vec<Complex64> = log_mag.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    complex_ifft(&mut buf);
    let cep: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    // fold onto the causal part
    let mut folded = vec![0.0; n];
    folded[0] = cep[0];
    folded[n / 2] = cep[n / 2];
    for i in 1..n / 2 {
        folded[i] = 2.0 * cep[i];
    }
    let mut spec: Vec<Complex64> = folded.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    complex_fft(&mut spec);
    let h_spec: Vec<Complex64> = spec.iter().map(|c| c.exp()).collect();
    let mut time = h_spec.clone();
    complex_ifft(&mut time);
    let fir: Vec<f64> = time.iter().map(|c| c.re / n as f64).collect();
    Ok((fir, MinPhaseCache { h_spec }))
}

/// Backward pass: given dD/dfir, return dD/d(db_bins).
pub fn min_phase_fir_backward(cache: &MinPhaseCache, grad_fir: &[f64]) -> Vec<f64> {
    let n = FIR_LEN;
    debug_assert_eq!(grad_fir.len(), n);
    // adjoint of (1/n)*ifft + re-extraction
    let mut hbar: Vec<Complex64> = grad_fir.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    complex_fft(&mut hbar);
    for c in hbar.iter_mut() {
        *c /= n as f64;
    }
    // adjoint of elementwise exp: Cbar = conj(H) * Hbar
    let cbar: Vec<Complex64> = hbar
        .iter()
        .zip(cache.h_spec.iter())
        .map(|(g, h)| h.conj() * g)
        .collect();
    // adjoint of fft (on real-embedded folded cepstrum)
    let mut fbar_c = cbar;
    complex_ifft(&mut fbar_c);
    let fbar: Vec<f64> = fbar_c.iter().map(|c| c.re).collect();
    // adjoint of folding
    let mut cepbar = vec![0.0; n];
    cepbar[0] = fbar[0];
    cepbar[n / 2] = fbar[n / 2];
    for i in 1..n / 2 {
        cepbar[i] = 2.0 * fbar[i];
    }
    // adjoint of (1/n)*ifft + re-extraction
    let mut lbar_c: Vec<Complex64> = cepbar.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    complex_fft(&mut lbar_c);
    let lbar: Vec<f64> = lbar_c.iter().map(|c| c.re / n as f64).collect();
    // adjoint of the mirror + dB scaling
    let mut grad_db = vec![0.0; N_BINS];
    grad_db[0] = lbar[0] * LN10_OVER_20;
    for k in 1..N_BINS - 1 {
        grad_db[k] = (lbar[k] + lbar[n - k]) * LN10_OVER_20;
    }
    grad_db[N_BINS - 1] =
        (lbar[N_BINS - 1] + lbar[n - (N_BINS - 1)] + lbar[n / 2]) * LN10_OVER_20;
    grad_db
}

/// DFT magnitude (dB) of a FIR at the 128 feature bins, for round-trip checks.
pub fn fir_db_magnitude(fir: &[f64]) -> Vec<f64> {
    let n = FIR_LEN;
    let mut buf: Vec<Complex64> = fir.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    complex_fft(&mut buf);
    (0..N_BINS).map(|k| 20.0 * buf[k].norm().log10()).collect()
}
