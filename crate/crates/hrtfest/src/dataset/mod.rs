//! HRTF set ingestion, pure-delay removal, 2x128 time-aligned log-magnitude
//! feature extraction, normalization statistics, and subject splits.

pub mod cache;
pub mod sofa;
pub mod synthetic;

use crate::error::{Error, Result};
use crate::util::{complex_fft, complex_ifft};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SAMPLE_RATE: u32 = 44100;
/// HRIR length: a 256-point real DFT yields 129 bins; dropping Nyquist
/// leaves the 128 feature bins.
pub const HRIR_LEN: usize = 256;
pub const N_BINS: usize = 128;
pub const N_CHANNELS: usize = 2;
/// Magnitudes are floored here before the log to avoid -inf at nulls.
pub const MAG_FLOOR_DB: f64 = -100.0;
pub const STD_FLOOR: f64 = 1e-3;

/// Direction of arrival in the head frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Doa {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl Doa {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        let az = azimuth_deg.rem_euclid(360.0);
        Doa {
            azimuth_deg: az,
            elevation_deg,
        }
    }

    /// Spherical-to-Cartesian: x front, y left, z up.
    pub fn unit_vector(&self) -> [f64; 3] {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let el = v[2].clamp(-1.0, 1.0).asin().to_degrees();
        let az = v[1].atan2(v[0]).to_degrees();
        Doa::new(az, el)
    }

    pub fn angle_to(&self, other: &Doa) -> f64 {
        let a = self.unit_vector();
        let b = other.unit_vector();
        let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let cross_norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        // atan2 form stays accurate for near-parallel directions
        cross_norm.atan2(dot)
    }
}

/// One subject's HRIR set on a DoA grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HrirSet {
    pub subject_id: String,
    pub sample_rate: u32,
    pub grid: Vec<Doa>,
    /// per-DoA stereo impulse responses, each channel HRIR_LEN samples
    pub hrirs: Vec<[Vec<f64>; 2]>,
}

impl HrirSet {
    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.hrirs.len() {
            return Err(Error::InvalidData(format!(
                "grid has {} DoAs but {} HRIR pairs",
                self.grid.len(),
                self.hrirs.len()
            )));
        }
        for (i, a) in self.grid.iter().enumerate() {
            for b in self.grid.iter().skip(i + 1) {
                if a.angle_to(b) < 1e-9 {
                    return Err(Error::InvalidData(format!("duplicate DoA {a:?}")));
                }
            }
        }
        for pair in &self.hrirs {
            if pair[0].len() != HRIR_LEN || pair[1].len() != HRIR_LEN {
                return Err(Error::InvalidData(format!(
                    "HRIR length {} / {}, expected {}",
                    pair[0].len(),
                    pair[1].len(),
                    HRIR_LEN
                )));
            }
        }
        Ok(())
    }

    pub fn nearest_doa_index(&self, doa: &Doa) -> usize {
        let mut best = 0;
        let mut best_ang = f64::INFINITY;
        for (i, g) in self.grid.iter().enumerate() {
            let a = g.angle_to(doa);
            if a < best_ang {
                best_ang = a;
                best = i;
            }
        }
        best
    }
}

/// 2x128 time-aligned log-magnitude HRTF spectrum at one DoA.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignedHrtfFeature {
    pub doa: Doa,
    /// dB log-magnitude, shape (2, 128)
    pub values: Array2<f64>,
    pub normalized: bool,
}

impl AlignedHrtfFeature {
    pub fn validate(&self) -> Result<()> {
        if self.values.dim() != (N_CHANNELS, N_BINS) {
            return Err(Error::ShapeMismatch(format!(
                "feature shape {:?}, expected (2, 128)",
                self.values.dim()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub excluded: Vec<String>,
}

/// Per-bin normalization statistics, computed from the training split only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

/// Load an HRTF set from disk. `.sofa` files are read as AES69 containers;
/// `.json` files use this crate's serialized HrirSet layout.
pub fn load_hrtf_set(path: &Path) -> Result<HrirSet> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let set = match ext.as_str() {
        "sofa" => sofa::load_sofa(path)?,
        "json" => {
            let data = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let raw: HrirSet = serde_json::from_str(&data)?;
            conform_hrir_set(raw)?
        }
        other => {
            return Err(Error::InvalidData(format!(
                "unsupported HRTF container '.{other}' for {}",
                path.display()
            )))
        }
    };
    set.validate()?;
    Ok(set)
}

/// Resample (if needed) and truncate/zero-pad each channel to HRIR_LEN at 44.1 kHz.
pub fn conform_hrir_set(mut set: HrirSet) -> Result<HrirSet> {
    if set.sample_rate != SAMPLE_RATE {
        let ratio = SAMPLE_RATE as f64 / set.sample_rate as f64;
        for pair in set.hrirs.iter_mut() {
            for ch in pair.iter_mut() {
                *ch = resample_sinc(ch, ratio);
            }
        }
        set.sample_rate = SAMPLE_RATE;
    }
    for pair in set.hrirs.iter_mut() {
        for ch in pair.iter_mut() {
            ch.resize(HRIR_LEN, 0.0);
        }
    }
    Ok(set)
}

fn resample_sinc(x: &[f64], ratio: f64) -> Vec<f64> {
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half = 32i64;
    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let c = t.floor() as i64;
            let mut acc = 0.0;
            for k in (c - half)..=(c + half) {
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                let u = t - k as f64;
                let w = 0.5 * (1.0 + (std::f64::consts::PI * u / half as f64).cos());
                acc += x[k as usize] * cutoff * crate::util::sinc(cutoff * u) * w;
            }
            acc
        })
        .collect()
}

const UPSAMPLE: usize = 32;

/// Estimate the pure-delay component of an HRIR as the envelope peak of the
/// 32x band-limited (FFT zero-padding) upsampled signal, in fractional samples.
pub fn estimate_pure_delay(hrir: &[f64]) -> Result<f64> {
    if hrir.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroSignal);
    }
    let n = hrir.len();
    let up = upsample_fft(hrir, UPSAMPLE);
    let mut best = 0usize;
    let mut best_v = -1.0;
    for (i, &v) in up.iter().enumerate() {
        if v.abs() > best_v {
            best_v = v.abs();
            best = i;
        }
    }
    let mut delay = best as f64 / UPSAMPLE as f64;
    if delay >= n as f64 {
        delay -= n as f64;
    }
    Ok(delay)
}

fn upsample_fft(x: &[f64], factor: usize) -> Vec<f64> {
    let n = x.len();
    let m = n * factor;
    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    complex_fft(&mut spec);
    let mut big = vec![Complex64::new(0.0, 0.0); m];
    let half = n / 2;
    for k in 0..half {
        big[k] = spec[k];
    }
    // split the Nyquist bin between positive and negative frequencies
    big[half] = spec[half] * 0.5;
    big[m - half] = spec[half] * 0.5;
    for k in 1..half {
        big[m - k] = spec[n - k];
    }
    complex_ifft(&mut big);
    big.iter().map(|c| c.re * factor as f64 / m as f64).collect()
}

/// Circular fractional shift by `-delay` samples via linear phase.
/// Leaves the DFT magnitude exactly unchanged.
pub fn remove_delay_circular(x: &[f64], delay: f64) -> Vec<f64> {
    let n = x.len();
    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    complex_fft(&mut spec);
    for k in 0..n {
        // signed frequency index for a real shift
        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        let phase = 2.0 * std::f64::consts::PI * kk * delay / n as f64;
        spec[k] *= Complex64::new(0.0, phase).exp();
    }
    complex_ifft(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

/// Extract the 2x128 time-aligned dB log-magnitude feature from a stereo HRIR.
pub fn extract_feature(hrir_pair: &[Vec<f64>; 2], doa: Doa) -> Result<AlignedHrtfFeature> {
    let mut values = Array2::zeros((N_CHANNELS, N_BINS));
    for (ch, h) in hrir_pair.iter().enumerate() {
        if h.len() != HRIR_LEN {
            return Err(Error::ShapeMismatch(format!(
                "channel {ch} length {}, expected {HRIR_LEN}",
                h.len()
            )));
        }
        let delay = estimate_pure_delay(h)?;
        let aligned = remove_delay_circular(h, delay);
        let mut spec: Vec<Complex64> =
            aligned.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        complex_fft(&mut spec);
        for f in 0..N_BINS {
            let mag = spec[f].norm().max(crate::util::db_to_linear(MAG_FLOOR_DB));
            values[[ch, f]] = crate::util::linear_to_db(mag);
        }
    }
    let feat = AlignedHrtfFeature {
        doa,
        values,
        normalized: false,
    };
    feat.validate()?;
    Ok(feat)
}

/// Per-bin mean/std over a training set of features.
pub fn fit_norm_stats(features: &[AlignedHrtfFeature]) -> Result<NormStats> {
    if features.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "need >= 2 features for NormStats, got {}",
            features.len()
        )));
    }
    let n = features.len() as f64;
    let mut mean = Array2::zeros((N_CHANNELS, N_BINS));
    for f in features {
        f.validate()?;
        mean += &f.values;
    }
    mean /= n;
    let mut var = Array2::zeros((N_CHANNELS, N_BINS));
    for f in features {
        let d = &f.values - &mean;
        var += &(&d * &d);
    }
    var /= n;
    let std = var.mapv(|v| v.sqrt().max(STD_FLOOR));
    Ok(NormStats { mean, std })
}

pub fn apply_norm(f: &AlignedHrtfFeature, stats: &NormStats) -> AlignedHrtfFeature {
    AlignedHrtfFeature {
        doa: f.doa,
        values: (&f.values - &stats.mean) / &stats.std,
        normalized: true,
    }
}

pub fn invert_norm(f: &AlignedHrtfFeature, stats: &NormStats) -> AlignedHrtfFeature {
    AlignedHrtfFeature {
        doa: f.doa,
        values: &f.values * &stats.std + &stats.mean,
        normalized: false,
    }
}

/// HUTUBS repeated-simulation subjects excluded from every split.
pub const DEFAULT_EXCLUSIONS: [&str; 2] = ["88", "96"];

/// Deterministic seeded subject split. Exclusions are removed first, the
/// remainder shuffled, then cut into train/val/test of the requested sizes.
pub fn make_splits(
    subjects: &[String],
    sizes: (usize, usize, usize),
    exclusions: &[String],
    seed: u64,
) -> Result<SplitManifest> {
    let excluded: Vec<String> = subjects
        .iter()
        .filter(|s| exclusions.contains(s))
        .cloned()
        .collect();
    let mut pool: Vec<String> = subjects
        .iter()
        .filter(|s| !exclusions.contains(s))
        .cloned()
        .collect();
    let (n_train, n_val, n_test) = sizes;
    let need = n_train + n_val + n_test;
    if pool.len() < need {
        return Err(Error::RosterTooSmall {
            have: pool.len(),
            need,
        });
    }
    let mut rng = crate::util::seeded_rng(seed, "splits");
    pool.shuffle(&mut rng);
    let train = pool[..n_train].to_vec();
    let val = pool[n_train..n_train + n_val].to_vec();
    let test = pool[n_train + n_val..need].to_vec();
    Ok(SplitManifest {
        train,
        val,
        test,
        excluded,
    })
}
