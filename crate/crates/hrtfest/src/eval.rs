//! LRE/LMD evaluation metrics, per-task aggregation, and the random,
//! generic, and nearest-neighbor reference baselines.

use crate::dataset::{AlignedHrtfFeature, Doa};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Floor replacing -inf when the estimate matches the truth exactly,
/// keeping aggregates finite.
pub const LRE_FLOOR_DB: f64 = -300.0;

/// DoA grid match tolerance in degrees.
const DOA_MATCH_DEG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proposed,
    Random,
    Generic,
    Nearest,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Proposed => "proposed",
            Method::Random => "random",
            Method::Generic => "generic",
            Method::Nearest => "nearest",
        };
        f.write_str(s)
    }
}

/// Logarithmic relative error between two linear magnitudes, in dB.
pub fn lre(h: f64, h_hat: f64) -> Result<f64> {
    if h == 0.0 {
        return Err(Error::InvalidData("lre reference magnitude is zero".into()));
    }
    let num = (h_hat - h).abs();
    if num == 0.0 {
        return Ok(LRE_FLOOR_DB);
    }
    Ok((20.0 * (num / h.abs()).log10()).max(LRE_FLOOR_DB))
}

/// Absolute log-magnitude distance between two linear magnitudes, in dB.
pub fn lmd(h: f64, h_hat: f64) -> Result<f64> {
    if h == 0.0 || h_hat == 0.0 {
        return Err(Error::InvalidData("lmd magnitude is zero".into()));
    }
    Ok((20.0 * (h_hat.abs() / h.abs()).log10()).abs())
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Mean LRE over channels and bins between two dB-domain features,
/// compared on linear magnitudes.
pub fn mean_lre(truth: &AlignedHrtfFeature, estimate: &AlignedHrtfFeature) -> Result<f64> {
    feature_mean(truth, estimate, lre)
}

/// Mean LMD over channels and bins between two dB-domain features.
pub fn mean_lmd(truth: &AlignedHrtfFeature, estimate: &AlignedHrtfFeature) -> Result<f64> {
    feature_mean(truth, estimate, lmd)
}

fn feature_mean(
    truth: &AlignedHrtfFeature,
    estimate: &AlignedHrtfFeature,
    metric: fn(f64, f64) -> Result<f64>,
) -> Result<f64> {
    if truth.values.dim() != estimate.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature dims {:?} vs {:?}",
            truth.values.dim(),
            estimate.values.dim()
        )));
    }
    let mut acc = 0.0;
    for (t, e) in truth.values.iter().zip(estimate.values.iter()) {
        acc += metric(db_to_linear(*t), db_to_linear(*e))?;
    }
    Ok(acc / truth.values.len() as f64)
}

/// One training subject's features over the shared DoA grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub features: Vec<AlignedHrtfFeature>,
}

impl SubjectFeatures {
    pub fn feature_at(&self, doa: &Doa) -> Result<&AlignedHrtfFeature> {
        self.features
            .iter()
            .find(|f| f.doa.angle_to(doa).to_degrees() < DOA_MATCH_DEG)
            .ok_or_else(|| {
                Error::Missing(format!(
                    "no feature at azimuth {} elevation {} for subject {}",
                    doa.azimuth_deg, doa.elevation_deg, self.subject_id
                ))
            })
    }
}

fn non_empty(train: &[SubjectFeatures]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyInput("baseline training set".into()));
    }
    Ok(())
}

/// Random baseline: a uniformly drawn training subject's feature at the DoA.
pub fn baseline_random<'a, R: Rng>(
    train: &'a [SubjectFeatures],
    doa: &Doa,
    rng: &mut R,
) -> Result<&'a AlignedHrtfFeature> {
    non_empty(train)?;
    let idx = rng.gen_range(0..train.len());
    train[idx].feature_at(doa)
}

/// Generic baseline: the training subject minimizing mean pairwise LRE to
/// all others across DoAs, frequencies, and channels. Fixed per train set.
pub fn baseline_generic(train: &[SubjectFeatures]) -> Result<usize> {
    non_empty(train)?;
    if train.len() == 1 {
        return Ok(0);
    }
    let mut best = (0usize, f64::INFINITY);
    for (i, a) in train.iter().enumerate() {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (j, b) in train.iter().enumerate() {
            if i == j {
                continue;
            }
            for (fa, fb) in a.features.iter().zip(b.features.iter()) {
                acc += mean_lre(fb, fa)?;
                n += 1;
            }
        }
        let score = acc / n as f64;
        if score < best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

/// Quasi-oracle baseline: the training feature at the DoA closest to the
/// truth in mean LRE.
pub fn baseline_nearest<'a>(
    train: &'a [SubjectFeatures],
    truth: &AlignedHrtfFeature,
    doa: &Doa,
) -> Result<&'a AlignedHrtfFeature> {
    non_empty(train)?;
    let mut best: Option<(&AlignedHrtfFeature, f64)> = None;
    for subj in train {
        let f = subj.feature_at(doa)?;
        let d = mean_lre(truth, f)?;
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((f, d));
        }
    }
    Ok(best.expect("non-empty train set").0)
}

/// One method's estimate for one task, paired with the truth.
#[derive(Debug, Clone)]
pub struct EvalEntry {
    pub task_id: u64,
    pub subject_id: String,
    pub method: Method,
    pub doa: Doa,
    pub truth: AlignedHrtfFeature,
    pub estimate: AlignedHrtfFeature,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: u64,
    pub subject_id: String,
    pub method: Method,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub mean_lre_db: f64,
    pub mean_lmd_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub n_tasks: usize,
    pub mean_lre_db: f64,
    pub median_lre_db: f64,
    pub mean_lmd_db: f64,
    pub median_lmd_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_task: Vec<TaskMetrics>,
    pub aggregates: Vec<MethodAggregate>,
    /// per-task aggregation averages dB values, not linear ratios
    pub db_domain_averaging: bool,
}

impl MetricReport {
    pub fn aggregate(&self, method: Method) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-task metrics plus per-method aggregates. Each task must appear
/// exactly once per method present in the entry list.
pub fn evaluate(entries: &[EvalEntry]) -> Result<MetricReport> {
    if entries.is_empty() {
        return Err(Error::EmptyInput("evaluation entries".into()));
    }
    let mut per_task: Vec<TaskMetrics> = Vec::with_capacity(entries.len());
    for e in entries {
        if per_task
            .iter()
            .any(|t| t.task_id == e.task_id && t.method == e.method)
        {
            return Err(Error::InvalidData(format!(
                "duplicate entry for task {} method {}",
                e.task_id, e.method
            )));
        }
        per_task.push(TaskMetrics {
            task_id: e.task_id,
            subject_id: e.subject_id.clone(),
            method: e.method,
            azimuth_deg: e.doa.azimuth_deg,
            elevation_deg: e.doa.elevation_deg,
            mean_lre_db: mean_lre(&e.truth, &e.estimate)?,
            mean_lmd_db: mean_lmd(&e.truth, &e.estimate)?,
        });
    }
    per_task.sort_by(|a, b| (a.task_id, a.method as u8).cmp(&(b.task_id, b.method as u8)));
    let mut methods: Vec<Method> = Vec::new();
    for t in &per_task {
        if !methods.contains(&t.method) {
            methods.push(t.method);
        }
    }
    let n_tasks_per_method = per_task.len() / methods.len();
    let mut aggregates = Vec::with_capacity(methods.len());
    for m in methods {
        let mut lres: Vec<f64> = Vec::new();
        let mut lmds: Vec<f64> = Vec::new();
        for t in per_task.iter().filter(|t| t.method == m) {
            lres.push(t.mean_lre_db);
            lmds.push(t.mean_lmd_db);
        }
        if lres.len() != n_tasks_per_method {
            return Err(Error::InvalidData(format!(
                "method {m} covers {} tasks, expected {n_tasks_per_method}",
                lres.len()
            )));
        }
        lres.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
        lmds.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
        aggregates.push(MethodAggregate {
            method: m,
            n_tasks: lres.len(),
            mean_lre_db: lres.iter().sum::<f64>() / lres.len() as f64,
            median_lre_db: median(&lres),
            mean_lmd_db: lmds.iter().sum::<f64>() / lmds.len() as f64,
            median_lmd_db: median(&lmds),
        });
    }
    aggregates.sort_by_key(|a| a.method as u8);
    Ok(MetricReport {
        per_task,
        aggregates,
        db_domain_averaging: true,
    })
}

pub fn results_csv(report: &MetricReport) -> String {
    let mut s = String::from("task_id,method,subject,azimuth_deg,elevation_deg,mean_lre_db,mean_lmd_db\n");
    for t in &report.per_task {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t.task_id,
            t.method,
            t.subject_id,
            t.azimuth_deg,
            t.elevation_deg,
            t.mean_lre_db,
            t.mean_lmd_db
        ));
    }
    s
}
