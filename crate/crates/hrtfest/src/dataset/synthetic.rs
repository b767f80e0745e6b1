//! Synthetic HRTF subjects for desk-scale runs when no measured database is
//! mounted. Each subject gets a random head radius (Woodworth ITD), a smooth
//! subject-specific spectral fingerprint with growing high-frequency
//! variability, direction-dependent head shadow, and an elevation-dependent
//! pinna notch. HRIRs are realized as delayed minimum-phase filters.

use super::{Doa, HrirSet, HRIR_LEN, N_BINS, SAMPLE_RATE};
use crate::minphase::min_phase_fir;
use crate::util::{seeded_rng, woodworth_itd_seconds};
use rand::Rng;

/// Base onset delay so both ears keep positive delays after the ITD split.
const BASE_DELAY: f64 = 24.0;

pub fn default_grid() -> Vec<Doa> {
    let mut grid = Vec::new();
    for el in (-45..=60).step_by(15) {
        for az in (0..360).step_by(15) {
            grid.push(Doa::new(az as f64, el as f64));
        }
    }
    grid
}

struct SubjectShape {
    head_radius: f64,
    base_amp: Vec<f64>,
    base_phase: Vec<f64>,
    hf_gain: f64,
    hf_phase: f64,
    notch_depth: f64,
    notch_width: f64,
    shadow_strength: f64,
}

fn subject_shape(seed: u64, subject_id: &str) -> SubjectShape {
    let mut rng = seeded_rng(seed, &format!("synth-{subject_id}"));
    let n_harm = 6;
    SubjectShape {
        head_radius: rng.gen_range(0.075..0.095),
        base_amp: (0..n_harm)
            .map(|j| rng.gen_range(-1.0..1.0) * (1.0 + 0.6 * j as f64))
            .collect(),
        base_phase: (0..n_harm)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect(),
        hf_gain: rng.gen_range(-8.0..8.0),
        hf_phase: rng.gen_range(0.0..std::f64::consts::TAU),
        notch_depth: rng.gen_range(6.0..18.0),
        notch_width: rng.gen_range(4.0..9.0),
        shadow_strength: rng.gen_range(10.0..16.0),
    }
}

fn magnitude_db(shape: &SubjectShape, doa: &Doa, ear: usize) -> Vec<f64> {
    let az = doa.azimuth_deg.to_radians();
    let el = doa.elevation_deg.to_radians();
    // lateral > 0 means source on the left; ear 0 = left
    let lateral = az.sin() * el.cos();
    let ear_side = if ear == 0 { 1.0 } else { -1.0 };
    let ipsi = lateral * ear_side; // > 0: ear faces the source
    let notch_center = 52.0 + doa.elevation_deg / 90.0 * 28.0;
    let mut mag = vec![0.0; N_BINS];
    for (f, m) in mag.iter_mut().enumerate() {
        let x = f as f64 / N_BINS as f64;
        // subject fingerprint, smooth over frequency
        let mut v = 0.0;
        for (j, (&a, &p)) in shape.base_amp.iter().zip(shape.base_phase.iter()).enumerate() {
            v += a * (std::f64::consts::PI * (j + 1) as f64 * x + p).cos();
        }
        // high-frequency idiosyncrasy grows with frequency
        v += shape.hf_gain * x * x * (7.0 * std::f64::consts::PI * x + shape.hf_phase).cos();
        // head shadow: contralateral high-frequency rolloff, small ipsilateral boost
        if ipsi >= 0.0 {
            v += 2.0 * ipsi * x;
        } else {
            v += shape.shadow_strength * ipsi * x;
        }
        // pinna notch moving with elevation
        let d = (f as f64 - notch_center) / shape.notch_width;
        v -= shape.notch_depth * (-0.5 * d * d).exp();
        // gentle global lowpass so HRIRs look physical
        v -= 3.0 * x * x;
        *m = v;
    }
    mag
}

fn synth_hrir(shape: &SubjectShape, doa: &Doa) -> [Vec<f64>; 2] {
    let itd = woodworth_itd_seconds(doa.azimuth_deg, doa.elevation_deg, shape.head_radius)
        * SAMPLE_RATE as f64;
    let mut out = [vec![0.0; HRIR_LEN], vec![0.0; HRIR_LEN]];
    for ear in 0..2 {
        let mag = magnitude_db(shape, doa, ear);
        let fir = min_phase_fir(&mag).expect("finite synthetic magnitude");
        // ear 0 (left) leads when the source is left (positive itd)
        let delay = BASE_DELAY + if ear == 0 { -itd / 2.0 } else { itd / 2.0 };
        out[ear] = super::remove_delay_circular(&fir, -delay);
    }
    out
}

/// Build one synthetic subject's HRIR set on the default grid.
pub fn synthetic_subject(seed: u64, subject_id: &str) -> HrirSet {
    let shape = subject_shape(seed, subject_id);
    let grid = default_grid();
    let hrirs = grid.iter().map(|d| synth_hrir(&shape, d)).collect();
    HrirSet {
        subject_id: subject_id.to_string(),
        sample_rate: SAMPLE_RATE,
        grid,
        hrirs,
    }
}

/// A roster of synthetic subjects named "s00".."sNN".
pub fn synthetic_roster(seed: u64, count: usize) -> Vec<HrirSet> {
    (0..count)
        .map(|i| synthetic_subject(seed, &format!("s{i:02}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::extract_feature;

    #[test]
    fn synthetic_set_is_valid_and_deterministic() {
        let a = synthetic_subject(3, "s00");
        a.validate().unwrap();
        let b = synthetic_subject(3, "s00");
        assert_eq!(a.hrirs[10][0], b.hrirs[10][0]);
        let c = synthetic_subject(3, "s01");
        assert_ne!(a.hrirs[10][0], c.hrirs[10][0]);
    }

    #[test]
    fn itd_sign_follows_azimuth() {
        let set = synthetic_subject(5, "s00");
        // az=90, el=0: source on the left, right ear arrives later
        let idx = set.nearest_doa_index(&Doa::new(90.0, 0.0));
        let dl = crate::dataset::estimate_pure_delay(&set.hrirs[idx][0]).unwrap();
        let dr = crate::dataset::estimate_pure_delay(&set.hrirs[idx][1]).unwrap();
        assert!(dr > dl + 5.0, "left {dl} right {dr}");
    }

    #[test]
    fn features_extractable_for_all_doas() {
        let set = synthetic_subject(7, "s03");
        for (d, pair) in set.grid.iter().zip(set.hrirs.iter()).take(16) {
            let f = extract_feature(pair, *d).unwrap();
            f.validate().unwrap();
        }
    }

    #[test]
    fn subjects_differ_spectrally() {
        let a = synthetic_subject(11, "s00");
        let b = synthetic_subject(11, "s05");
        let fa = extract_feature(&a.hrirs[0], a.grid[0]).unwrap();
        let fb = extract_feature(&b.hrirs[0], b.grid[0]).unwrap();
        let diff: f64 = fa
            .values
            .iter()
            .zip(fb.values.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / fa.values.len() as f64;
        assert!(diff > 1.0, "mean |diff| {diff} dB");
    }
}
