//! Shoebox room simulation with the image-source method and randomized
//! estimation-task generation: rooms, head/source placements, reverberant
//! binaural observations, and their on-disk bundles.

use crate::dataset::{extract_feature, AlignedHrtfFeature, Doa, HrirSet, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::util::{fft_convolve, frac_delay_kernel, seeded_rng, SPEED_OF_SOUND};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAX_REFLECTION_ORDER: usize = 20;
/// Images quieter than this relative to the direct path are dropped.
pub const TAIL_TRUNCATION_DB: f64 = -90.0;
const MAX_REJECTIONS: usize = 10_000;
const WALL_CLEARANCE_M: f64 = 1.5;
const MIN_SRC_DIST_M: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RoomSpec {
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub absorption: f64,
    pub speed_of_sound: f64,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width <= 0.0 || self.length <= 0.0 || self.height <= 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "non-positive room dims {}x{}x{}",
                self.width, self.length, self.height
            )));
        }
        if !(0.0..1.0).contains(&self.absorption) || self.absorption == 0.0 {
            return Err(Error::ParamOutOfRange(format!(
                "absorption {} outside (0, 1)",
                self.absorption
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenePlacement {
    pub head_pos: [f64; 3],
    pub src_pos: [f64; 3],
    pub head_yaw: f64,
    /// source direction in the head frame, snapped to the subject's grid
    pub doa: Doa,
}

impl ScenePlacement {
    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        for (label, p) in [("head", self.head_pos), ("source", self.src_pos)] {
            let ok = p[0] >= WALL_CLEARANCE_M
                && p[0] <= room.width - WALL_CLEARANCE_M
                && p[1] >= WALL_CLEARANCE_M
                && p[1] <= room.length - WALL_CLEARANCE_M
                && (1.0..=2.0).contains(&p[2])
                && p[2] <= room.height;
            if !ok {
                return Err(Error::DegenerateGeometry(format!(
                    "{label} position {p:?} violates placement constraints"
                )));
            }
        }
        if src_head_distance(self) < MIN_SRC_DIST_M {
            return Err(Error::DegenerateGeometry(
                "source closer than 1 m to the head".into(),
            ));
        }
        Ok(())
    }
}

pub fn src_head_distance(p: &ScenePlacement) -> f64 {
    let d = [
        p.src_pos[0] - p.head_pos[0],
        p.src_pos[1] - p.head_pos[1],
        p.src_pos[2] - p.head_pos[2],
    ];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Room-frame direction vector -> head-frame DoA given the head yaw.
pub fn head_frame_doa(v: [f64; 3], yaw: f64) -> Doa {
    let (s, c) = yaw.sin_cos();
    let local = [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]];
    let norm = (local[0] * local[0] + local[1] * local[1] + local[2] * local[2]).sqrt();
    Doa::from_unit_vector([local[0] / norm, local[1] / norm, local[2] / norm])
}

/// Head-frame unit vector -> room frame.
fn room_frame_dir(u: [f64; 3], yaw: f64) -> [f64; 3] {
    let (s, c) = yaw.sin_cos();
    [c * u[0] - s * u[1], s * u[0] + c * u[1], u[2]]
}

/// Draws a room and placement satisfying the geometric constraints, with
/// the source snapped onto the nearest grid DoA at its original distance.
pub fn sample_scene(rng: &mut ChaCha8Rng, grid: &[Doa]) -> Result<(RoomSpec, ScenePlacement)> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("DoA grid".into()));
    }
    let room = RoomSpec {
        width: rng.gen_range(7.0..15.0),
        length: rng.gen_range(7.0..15.0),
        height: rng.gen_range(2.5..4.0),
        absorption: rng.gen_range(0.05..0.1),
        speed_of_sound: SPEED_OF_SOUND,
    };
    for _ in 0..MAX_REJECTIONS {
        let head_pos = [
            rng.gen_range(WALL_CLEARANCE_M..room.width - WALL_CLEARANCE_M),
            rng.gen_range(WALL_CLEARANCE_M..room.length - WALL_CLEARANCE_M),
            rng.gen_range(1.0..2.0),
        ];
        let head_yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        let src_raw = [
            rng.gen_range(WALL_CLEARANCE_M..room.width - WALL_CLEARANCE_M),
            rng.gen_range(WALL_CLEARANCE_M..room.length - WALL_CLEARANCE_M),
            rng.gen_range(1.0..2.0),
        ];
        let v = [
            src_raw[0] - head_pos[0],
            src_raw[1] - head_pos[1],
            src_raw[2] - head_pos[2],
        ];
        let dist = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if dist < MIN_SRC_DIST_M {
            continue;
        }
        let raw_doa = head_frame_doa(v, head_yaw);
        let snapped = grid
            .iter()
            .min_by(|a, b| {
                raw_doa
                    .angle_to(a)
                    .partial_cmp(&raw_doa.angle_to(b))
                    .expect("finite angles")
            })
            .expect("non-empty grid");
        let dir = room_frame_dir(snapped.unit_vector(), head_yaw);
        let src_pos = [
            head_pos[0] + dist * dir[0],
            head_pos[1] + dist * dir[1],
            head_pos[2] + dist * dir[2],
        ];
        let placement = ScenePlacement {
            head_pos,
            src_pos,
            head_yaw,
            doa: *snapped,
        };
        if placement.validate(&room).is_ok() {
            return Ok((room, placement));
        }
    }
    Err(Error::SceneInfeasible(MAX_REJECTIONS))
}

/// Axis coordinate of image index i for a source at x in a room of size l:
/// even indices translate, odd indices mirror.
fn image_coord(i: i64, x: f64, l: f64) -> f64 {
    if i.rem_euclid(2) == 0 {
        i as f64 * l + x
    } else {
        (i + 1) as f64 * l - x
    }
}

/// All image-source lattice indices with |i|+|j|+|k| <= max_order.
pub fn image_indices(max_order: usize) -> Vec<(i64, i64, i64)> {
    let n = max_order as i64;
    let mut out = Vec::new();
    for i in -n..=n {
        for j in -(n - i.abs())..=(n - i.abs()) {
            let rem = n - i.abs() - j.abs();
            for k in -rem..=rem {
                out.push((i, j, k));
            }
        }
    }
    out
}

/// Image-source BRIR: each image contributes the subject's HRIR at its
/// head-frame DoA, scaled by (1 - absorption)^(order/2) / distance at the
/// fractional propagation delay (D22).
pub fn image_source_brir(
    room: &RoomSpec,
    placement: &ScenePlacement,
    hrirs: &HrirSet,
    max_order: usize,
) -> Result<[Vec<f64>; 2]> {
    room.validate()?;
    let fs = SAMPLE_RATE as f64;
    let d0 = src_head_distance(placement);
    if d0 < 1e-6 {
        return Err(Error::DegenerateGeometry("source coincides with head".into()));
    }
    let direct_amp = 1.0 / d0;
    let floor_amp = direct_amp * 10f64.powf(TAIL_TRUNCATION_DB / 20.0);
    let refl = 1.0 - room.absorption;
    // group image excitations by grid DoA so each used HRIR is convolved once
    let mut excitations: Vec<Option<Vec<f64>>> = vec![None; hrirs.grid.len()];
    let mut max_delay = 0usize;
    for (i, j, k) in image_indices(max_order) {
        let order = (i.abs() + j.abs() + k.abs()) as f64;
        let img = [
            image_coord(i, placement.src_pos[0], room.width),
            image_coord(j, placement.src_pos[1], room.length),
            image_coord(k, placement.src_pos[2], room.height),
        ];
        let v = [
            img[0] - placement.head_pos[0],
            img[1] - placement.head_pos[1],
            img[2] - placement.head_pos[2],
        ];
        let dist = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if dist < 1e-6 {
            return Err(Error::DegenerateGeometry("image source at the head".into()));
        }
        let amp = refl.powf(order / 2.0) / dist;
        if amp < floor_amp {
            continue;
        }
        let delay = dist / room.speed_of_sound * fs;
        let doa = head_frame_doa(v, placement.head_yaw);
        let gidx = hrirs.nearest_doa_index(&doa);
        let (taps, offset) = frac_delay_kernel(delay);
        let end = (offset + taps.len() as i64) as usize;
        max_delay = max_delay.max(end);
        let exc = excitations[gidx].get_or_insert_with(Vec::new);
        if exc.len() < end {
            exc.resize(end, 0.0);
        }
        for (t, &tap) in taps.iter().enumerate() {
            let n = offset + t as i64;
            if n >= 0 {
                exc[n as usize] += amp * tap;
            }
        }
    }
    let hrir_len = hrirs.hrirs[0][0].len();
    let out_len = max_delay + hrir_len;
    let mut brir = [vec![0.0; out_len], vec![0.0; out_len]];
    for (gidx, exc) in excitations.iter().enumerate() {
        let Some(exc) = exc else { continue };
        for c in 0..2 {
            let part = fft_convolve(exc, &hrirs.hrirs[gidx][c]);
            for (o, v) in brir[c].iter_mut().zip(part.iter()) {
                *o += v;
            }
        }
    }
    Ok(brir)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationTask {
    pub task_id: u64,
    pub subject_id: String,
    pub room: RoomSpec,
    pub placement: ScenePlacement,
    pub doa: Doa,
    pub dry: Vec<f64>,
    pub observation: [Vec<f64>; 2],
    pub truth_feature: AlignedHrtfFeature,
    pub truth_fir: [Vec<f64>; 2],
}

/// Speech-like dry excitation: pitch-modulated harmonics with a syllabic
/// amplitude envelope and interleaved unvoiced noise bursts.
pub fn synthetic_utterance(seed: u64, n_samples: usize) -> Vec<f64> {
    let mut rng = seeded_rng(seed, "utterance");
    let fs = SAMPLE_RATE as f64;
    let f0: f64 = rng.gen_range(90.0..220.0);
    let vibrato: f64 = rng.gen_range(3.0..7.0);
    let syllable: f64 = rng.gen_range(2.5..5.0);
    let syl_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let n_harm = 12;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| rng.gen_range(0.3..1.0) / h as f64)
        .collect();
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n_samples);
    for n in 0..n_samples {
        let t = n as f64 / fs;
        let env = (0.5 * (1.0 - (std::f64::consts::TAU * syllable * t + syl_phase).cos())).powi(2);
        let inst_f0 = f0 * (1.0 + 0.02 * (std::f64::consts::TAU * vibrato * t).sin());
        phase += std::f64::consts::TAU * inst_f0 / fs;
        let mut v = 0.0;
        for (h, a) in amps.iter().enumerate() {
            v += a * ((h + 1) as f64 * phase).sin();
        }
        let noise: f64 = rng.gen_range(-1.0..1.0);
        out.push(env * (0.9 * v + 0.1 * noise) * 0.2);
    }
    out
}

pub fn synthetic_utterances(seed: u64, count: usize, n_samples: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| synthetic_utterance(seed.wrapping_add(i as u64), n_samples))
        .collect()
}

/// Generates `count_per_subject` tasks for each subject, deterministic per
/// (seed, task_id) so permuting the roster or parallelism cannot change a
/// task's content.
pub fn generate_tasks(
    subjects: &[&HrirSet],
    utterances: &[Vec<f64>],
    count_per_subject: usize,
    seed: u64,
) -> Result<Vec<EstimationTask>> {
    if subjects.is_empty() {
        return Err(Error::EmptyInput("subject roster".into()));
    }
    if utterances.is_empty() {
        return Err(Error::EmptyInput("utterance pool".into()));
    }
    let specs: Vec<(u64, &HrirSet)> = subjects
        .iter()
        .enumerate()
        .flat_map(|(si, set)| {
            (0..count_per_subject)
                .map(move |ti| ((si * count_per_subject + ti) as u64, *set))
        })
        .collect();
    specs
        .par_iter()
        .map(|&(task_id, set)| build_task(task_id, set, utterances, seed))
        .collect()
}

fn build_task(
    task_id: u64,
    set: &HrirSet,
    utterances: &[Vec<f64>],
    seed: u64,
) -> Result<EstimationTask> {
    let mut rng = seeded_rng(seed, &format!("task-{task_id}"));
    let dry = utterances[rng.gen_range(0..utterances.len())].clone();
    let (room, placement) = sample_scene(&mut rng, &set.grid)?;
    let brir = image_source_brir(&room, &placement, set, MAX_REFLECTION_ORDER)?;
    let observation = [fft_convolve(&dry, &brir[0]), fft_convolve(&dry, &brir[1])];
    let gidx = set.nearest_doa_index(&placement.doa);
    let truth_fir = set.hrirs[gidx].clone();
    let truth_feature = extract_feature(&truth_fir, set.grid[gidx])?;
    Ok(EstimationTask {
        task_id,
        subject_id: set.subject_id.clone(),
        room,
        placement,
        doa: set.grid[gidx],
        dry,
        observation,
        truth_feature,
        truth_fir,
    })
}

fn write_wav(path: &Path, channels: &[&[f64]]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    let len = channels.iter().map(|c| c.len()).min().unwrap_or(0);
    for n in 0..len {
        for c in channels {
            writer.write_sample(c[n] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

fn read_wav(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = hound::WavReader::open(path)?;
    let n_ch = reader.spec().channels as usize;
    let mut out = vec![Vec::new(); n_ch];
    for (i, s) in reader.samples::<f32>().enumerate() {
        out[i % n_ch].push(s? as f64);
    }
    Ok(out)
}

/// Serializable task metadata; the signals live in WAV files next to it.
#[derive(Serialize, Deserialize)]
struct TaskMeta {
    task_id: u64,
    subject_id: String,
    room: RoomSpec,
    placement: ScenePlacement,
    doa: Doa,
    truth_feature: AlignedHrtfFeature,
    truth_fir: [Vec<f64>; 2],
}

pub fn save_task(task: &EstimationTask, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let meta = TaskMeta {
        task_id: task.task_id,
        subject_id: task.subject_id.clone(),
        room: task.room.clone(),
        placement: task.placement.clone(),
        doa: task.doa,
        truth_feature: task.truth_feature.clone(),
        truth_fir: task.truth_fir.clone(),
    };
    let meta_path = dir.join("meta.json");
    let file = std::fs::File::create(&meta_path).map_err(|source| Error::Io {
        path: meta_path.display().to_string(),
        source,
    })?;
    serde_json::to_writer(std::io::BufWriter::new(file), &meta)?;
    write_wav(&dir.join("dry.wav"), &[&task.dry])?;
    write_wav(
        &dir.join("observation.wav"),
        &[&task.observation[0], &task.observation[1]],
    )?;
    Ok(())
}

pub fn load_task(dir: &Path) -> Result<EstimationTask> {
    let meta_path = dir.join("meta.json");
    let file = std::fs::File::open(&meta_path).map_err(|source| Error::Io {
        path: meta_path.display().to_string(),
        source,
    })?;
    let meta: TaskMeta = serde_json::from_reader(std::io::BufReader::new(file))?;
    let dry = read_wav(&dir.join("dry.wav"))?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Wav("dry.wav has no channels".into()))?;
    let mut obs = read_wav(&dir.join("observation.wav"))?;
    if obs.len() != 2 {
        return Err(Error::NonStereo(obs.len()));
    }
    let right = obs.pop().expect("two channels");
    let left = obs.pop().expect("two channels");
    let task = EstimationTask {
        task_id: meta.task_id,
        subject_id: meta.subject_id,
        room: meta.room,
        placement: meta.placement,
        doa: meta.doa,
        dry,
        observation: [left, right],
        truth_feature: meta.truth_feature,
        truth_fir: meta.truth_fir,
    };
    // persisted tasks must still satisfy the geometric constraints
    task.placement.validate(&task.room)?;
    task.room.validate()?;
    Ok(task)
}

pub fn manifest_csv(tasks: &[EstimationTask]) -> String {
    let mut s =
        String::from("task_id,subject_id,azimuth_deg,elevation_deg,width,length,height,absorption\n");
    for t in tasks {
        s.push_str(&format!(
            "{},{},{},{},{:.3},{:.3},{:.3},{:.4}\n",
            t.task_id,
            t.subject_id,
            t.doa.azimuth_deg,
            t.doa.elevation_deg,
            t.room.width,
            t.room.length,
            t.room.height,
            t.room.absorption
        ));
    }
    s
}
