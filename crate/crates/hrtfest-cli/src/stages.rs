//! Pipeline stages: prepare-data, train, gen-tasks, estimate, evaluate,
//! plot. Each stage writes its artifacts plus a manifest under the run
//! root and refuses stale upstream artifacts unless forced.

use crate::config::RunConfig;
use crate::manifest::{require_upstream, sha256_hex, stage_dir, StageManifest};
use anyhow::Context;
use hrtfest::dataset::cache::{read_feature_cache, write_feature_cache};
use hrtfest::dataset::synthetic::synthetic_roster;
use hrtfest::dataset::{
    apply_norm, conform_hrir_set, extract_feature, fit_norm_stats, load_hrtf_set, make_splits,
    AlignedHrtfFeature, HrirSet, NormStats, SplitManifest, SAMPLE_RATE,
};
use hrtfest::eval::{
    baseline_generic, baseline_nearest, baseline_random, evaluate, results_csv, EvalEntry, Method,
    MetricReport, SubjectFeatures,
};
use hrtfest::posterior::{GuidanceConfig, Sampler};
use hrtfest::reverb::{OptConfig, ReverbOperator};
use hrtfest::room::{
    generate_tasks, load_task, manifest_csv, save_task, synthetic_utterances, EstimationTask,
};
use hrtfest::score::checkpoint::Checkpoint;
use hrtfest::score::train::{TrainItem, Trainer};
use hrtfest::score::{ScoreNetConfig, TrainConfig};
use hrtfest::util::seeded_rng;
use std::path::{Path, PathBuf};

pub const STAGE_DATA: &str = "data";
pub const STAGE_TRAIN: &str = "checkpoints";
pub const STAGE_TASKS: &str = "tasks";
pub const STAGE_ESTIMATE: &str = "estimates";
pub const STAGE_EVALUATE: &str = "results";
pub const STAGE_PLOT: &str = "plots";

const RESULT_FILES: [&str; 4] = ["estimate.hfc", "psi.json", "trace.csv", "fir.wav"];

fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(cfg.canonical().as_bytes())
}

fn ensure_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", path.display()))
}

fn load_roster(cfg: &RunConfig) -> anyhow::Result<Vec<HrirSet>> {
    if cfg.data.source == "synthetic" {
        return Ok(synthetic_roster(cfg.seeds.prepare_data, cfg.data.n_subjects));
    }
    let dir = PathBuf::from(&cfg.data.source);
    if !dir.is_dir() {
        anyhow::bail!(
            "data source directory {} does not exist; set [data].source to \
             \"synthetic\" or a directory of .sofa/.json HRTF sets",
            dir.display()
        );
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("sofa") | Some("json")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        anyhow::bail!("no .sofa/.json HRTF sets found in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let set = load_hrtf_set(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(conform_hrir_set(set)?)
        })
        .collect()
}

fn subject_features(set: &HrirSet) -> anyhow::Result<Vec<AlignedHrtfFeature>> {
    set.grid
        .iter()
        .zip(set.hrirs.iter())
        .map(|(doa, h)| Ok(extract_feature(h, *doa)?))
        .collect()
}

pub fn cmd_prepare_data(cfg: &RunConfig, _force: bool) -> anyhow::Result<()> {
    let hash = config_hash(cfg);
    let dir = stage_dir(&cfg.paths.root, STAGE_DATA);
    ensure_dir(&dir.join("features"))?;
    let roster = load_roster(cfg)?;
    let ids: Vec<String> = roster.iter().map(|s| s.subject_id.clone()).collect();
    let splits = make_splits(
        &ids,
        (cfg.data.train, cfg.data.val, cfg.data.test),
        &cfg.data.exclusions,
        cfg.seeds.prepare_data,
    )?;
    let mut manifest = StageManifest::new(STAGE_DATA, &hash, cfg.seeds.prepare_data);
    let mut train_features: Vec<AlignedHrtfFeature> = Vec::new();
    for set in &roster {
        let features = subject_features(set)?;
        if splits.train.contains(&set.subject_id) {
            train_features.extend(features.iter().cloned());
        }
        let rel = format!("features/{}.hfc", set.subject_id);
        write_feature_cache(&dir.join(&rel), &set.subject_id, &features)?;
        manifest.record_artifact(&cfg.paths.root, &rel)?;
    }
    let norm = fit_norm_stats(&train_features)?;
    std::fs::write(dir.join("norm.json"), serde_json::to_string_pretty(&norm)?)?;
    std::fs::write(
        dir.join("splits.json"),
        serde_json::to_string_pretty(&splits)?,
    )?;
    manifest.record_artifact(&cfg.paths.root, "norm.json")?;
    manifest.record_artifact(&cfg.paths.root, "splits.json")?;
    manifest.save(&cfg.paths.root)?;
    println!(
        "prepare-data: {} subjects ({} train / {} val / {} test), features cached",
        roster.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

fn load_splits(root: &Path) -> anyhow::Result<SplitManifest> {
    let text = std::fs::read_to_string(stage_dir(root, STAGE_DATA).join("splits.json"))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_norm(root: &Path) -> anyhow::Result<NormStats> {
    let text = std::fs::read_to_string(stage_dir(root, STAGE_DATA).join("norm.json"))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_split_features(
    root: &Path,
    subjects: &[String],
) -> anyhow::Result<Vec<SubjectFeatures>> {
    subjects
        .iter()
        .map(|id| {
            let path = stage_dir(root, STAGE_DATA).join(format!("features/{id}.hfc"));
            let (subject_id, features) = read_feature_cache(&path)?;
            Ok(SubjectFeatures {
                subject_id,
                features,
            })
        })
        .collect()
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let hash = config_hash(cfg);
    let data = require_upstream(&cfg.paths.root, STAGE_DATA, &hash, force)?;
    let dir = stage_dir(&cfg.paths.root, STAGE_TRAIN);
    ensure_dir(&dir)?;
    let splits = load_splits(&cfg.paths.root)?;
    let norm = load_norm(&cfg.paths.root)?;
    let train_set = load_split_features(&cfg.paths.root, &splits.train)?;
    let corpus: Vec<TrainItem> = train_set
        .iter()
        .enumerate()
        .flat_map(|(si, subj)| {
            let norm = &norm;
            subj.features.iter().enumerate().map(move |(fi, f)| {
                let nf = apply_norm(f, norm);
                TrainItem {
                    item_id: (si * 10_000 + fi) as u64,
                    doa: f.doa,
                    feature: nf.values,
                }
            })
        })
        .collect();
    let mut trainer = Trainer::new(
        ScoreNetConfig {
            hidden_features: cfg.training.hidden_features,
            seed: cfg.seeds.train,
            ..Default::default()
        },
        TrainConfig {
            steps: cfg.training.steps,
            batch_size: cfg.training.batch_size,
            lr: cfg.training.lr,
            ema_decay: cfg.training.ema_decay,
            doa_noise_sigma: cfg.training.doa_noise_sigma,
            doa_dropout_p: cfg.training.doa_dropout_p,
            seed: cfg.seeds.train,
        },
        cfg.diffusion_schedule(),
    );
    for step in 0..cfg.training.steps {
        let loss = trainer.train_step(&corpus)?;
        if step % 100 == 0 || step + 1 == cfg.training.steps {
            println!("train: step {step}/{} loss {loss:.5}", cfg.training.steps);
        }
    }
    let ck = Checkpoint {
        net: trainer.net,
        ema: trainer.ema,
        schedule: trainer.schedule,
        norm,
        step: cfg.training.steps as u64,
    };
    ck.save(&dir.join("checkpoint.json"))?;
    let mut losses = String::from("step,loss\n");
    for (i, l) in trainer.losses.iter().enumerate() {
        losses.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(dir.join("losses.csv"), losses)?;
    let mut manifest = StageManifest::new(STAGE_TRAIN, &hash, cfg.seeds.train);
    manifest.record_input(&data);
    manifest.record_artifact(&cfg.paths.root, "checkpoint.json")?;
    manifest.record_artifact(&cfg.paths.root, "losses.csv")?;
    manifest.save(&cfg.paths.root)?;
    println!("train: checkpoint saved after {} steps", cfg.training.steps);
    Ok(())
}

fn task_dir_name(task_id: u64) -> String {
    format!("task_{task_id:04}")
}

pub fn cmd_gen_tasks(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let hash = config_hash(cfg);
    let data = require_upstream(&cfg.paths.root, STAGE_DATA, &hash, force)?;
    let dir = stage_dir(&cfg.paths.root, STAGE_TASKS);
    ensure_dir(&dir)?;
    let splits = load_splits(&cfg.paths.root)?;
    let roster = load_roster(cfg)?;
    let test_sets: Vec<&HrirSet> = roster
        .iter()
        .filter(|s| splits.test.contains(&s.subject_id))
        .collect();
    if test_sets.is_empty() {
        anyhow::bail!("no test subjects in the split manifest");
    }
    let n_samples = (cfg.tasks.utterance_seconds * SAMPLE_RATE as f64) as usize;
    let utterances =
        synthetic_utterances(cfg.seeds.gen_tasks, cfg.tasks.utterance_pool, n_samples);
    let per_subject = cfg.tasks.count.div_ceil(test_sets.len());
    let mut tasks = generate_tasks(&test_sets, &utterances, per_subject, cfg.seeds.gen_tasks)?;
    tasks.truncate(cfg.tasks.count);
    let mut manifest = StageManifest::new(STAGE_TASKS, &hash, cfg.seeds.gen_tasks);
    manifest.record_input(&data);
    for task in &tasks {
        let rel = task_dir_name(task.task_id);
        save_task(task, &dir.join(&rel))?;
        manifest.record_artifact(&cfg.paths.root, &format!("{rel}/meta.json"))?;
    }
    std::fs::write(dir.join("manifest.csv"), manifest_csv(&tasks))?;
    manifest.record_artifact(&cfg.paths.root, "manifest.csv")?;
    manifest.save(&cfg.paths.root)?;
    println!(
        "gen-tasks: {} tasks over {} test subjects",
        tasks.len(),
        test_sets.len()
    );
    Ok(())
}

fn list_task_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let dir = stage_dir(root, STAGE_TASKS);
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| anyhow::anyhow!("cannot read task dir {}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn per_task_seed(base: u64, task_id: u64) -> u64 {
    base ^ task_id.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn result_complete(dir: &Path) -> bool {
    RESULT_FILES.iter().all(|f| dir.join(f).is_file())
}

pub fn cmd_estimate(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let hash = config_hash(cfg);
    let train = require_upstream(&cfg.paths.root, STAGE_TRAIN, &hash, force)?;
    let tasks_manifest = require_upstream(&cfg.paths.root, STAGE_TASKS, &hash, force)?;
    let dir = stage_dir(&cfg.paths.root, STAGE_ESTIMATE);
    ensure_dir(&dir)?;
    let ck = Checkpoint::load(
        &stage_dir(&cfg.paths.root, STAGE_TRAIN).join("checkpoint.json"),
    )?;
    let op = ReverbOperator::with_frames(cfg.operator.n_late_frames)?;
    let guidance = GuidanceConfig {
        zeta0: cfg.inference.zeta0,
        inner: OptConfig {
            lr: cfg.inference.inner_lr,
            iters: cfg.inference.inner_iters,
            ..Default::default()
        },
    };
    let sampler = Sampler::from_checkpoint(&ck, &op, guidance, cfg.schedule.n_steps);
    let task_dirs = list_task_dirs(&cfg.paths.root)?;
    let mut manifest = StageManifest::new(STAGE_ESTIMATE, &hash, cfg.seeds.estimate);
    manifest.record_input(&train);
    manifest.record_input(&tasks_manifest);
    let mut done = 0usize;
    let mut skipped = 0usize;
    for task_path in &task_dirs {
        let task = load_task(task_path)?;
        let rel = task_dir_name(task.task_id);
        let out = dir.join(&rel);
        if result_complete(&out) && !force {
            skipped += 1;
        } else {
            let seed = per_task_seed(cfg.seeds.estimate, task.task_id);
            let result = sampler.run_inference(&task, seed)?;
            hrtfest::posterior::save_result(&result, &task.subject_id, &out)?;
            done += 1;
            let last = result.trace.last().map(|e| e.distance).unwrap_or(f64::NAN);
            println!(
                "estimate: task {} done ({done} new, {skipped} resumed), final distance {last:.3}",
                task.task_id
            );
        }
        for f in RESULT_FILES {
            manifest.record_artifact(&cfg.paths.root, &format!("{rel}/{f}"))?;
        }
    }
    manifest.save(&cfg.paths.root)?;
    println!(
        "estimate: {} tasks complete ({done} computed, {skipped} reused)",
        task_dirs.len()
    );
    Ok(())
}

/// Truths, proposed estimates, and the three baselines for every task.
/// Shared by evaluate and plot so both see identical entries.
pub fn build_eval_entries(cfg: &RunConfig) -> anyhow::Result<Vec<EvalEntry>> {
    let splits = load_splits(&cfg.paths.root)?;
    let train_set = load_split_features(&cfg.paths.root, &splits.train)?;
    let generic_idx = baseline_generic(&train_set)?;
    let task_dirs = list_task_dirs(&cfg.paths.root)?;
    let mut missing: Vec<u64> = Vec::new();
    let mut entries: Vec<EvalEntry> = Vec::new();
    for task_path in &task_dirs {
        let task: EstimationTask = load_task(task_path)?;
        let result_dir =
            stage_dir(&cfg.paths.root, STAGE_ESTIMATE).join(task_dir_name(task.task_id));
        if !result_complete(&result_dir) {
            missing.push(task.task_id);
            continue;
        }
        let (_, mut est_features) = read_feature_cache(&result_dir.join("estimate.hfc"))?;
        let proposed = est_features
            .pop()
            .ok_or_else(|| anyhow::anyhow!("empty estimate cache for task {}", task.task_id))?;
        let mut rng = seeded_rng(cfg.seeds.evaluate, &format!("random-{}", task.task_id));
        let random = baseline_random(&train_set, &task.doa, &mut rng)?.clone();
        let generic = train_set[generic_idx].feature_at(&task.doa)?.clone();
        let nearest = baseline_nearest(&train_set, &task.truth_feature, &task.doa)?.clone();
        for (method, estimate) in [
            (Method::Proposed, proposed),
            (Method::Random, random),
            (Method::Generic, generic),
            (Method::Nearest, nearest),
        ] {
            entries.push(EvalEntry {
                task_id: task.task_id,
                subject_id: task.subject_id.clone(),
                method,
                doa: task.doa,
                truth: task.truth_feature.clone(),
                estimate,
            });
        }
    }
    if !missing.is_empty() {
        anyhow::bail!(
            "missing estimates for task ids {:?}; run `hrtfest estimate` first",
            missing
        );
    }
    if entries.is_empty() {
        anyhow::bail!("no tasks found; run `hrtfest gen-tasks` first");
    }
    Ok(entries)
}

pub fn cmd_evaluate(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let hash = config_hash(cfg);
    let data = require_upstream(&cfg.paths.root, STAGE_DATA, &hash, force)?;
    let tasks_manifest = require_upstream(&cfg.paths.root, STAGE_TASKS, &hash, force)?;
    let estimates = require_upstream(&cfg.paths.root, STAGE_ESTIMATE, &hash, force)?;
    let dir = stage_dir(&cfg.paths.root, STAGE_EVALUATE);
    ensure_dir(&dir)?;
    let entries = build_eval_entries(cfg)?;
    let report = evaluate(&entries)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(dir.join("results.csv"), results_csv(&report))?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&report.aggregates)?,
    )?;
    let mut manifest = StageManifest::new(STAGE_EVALUATE, &hash, cfg.seeds.evaluate);
    manifest.record_input(&data);
    manifest.record_input(&tasks_manifest);
    manifest.record_input(&estimates);
    for f in ["report.json", "results.csv", "summary.json"] {
        manifest.record_artifact(&cfg.paths.root, f)?;
    }
    manifest.save(&cfg.paths.root)?;
    for a in &report.aggregates {
        println!(
            "evaluate: {:<9} mean LRE {:7.2} dB, mean LMD {:6.2} dB over {} tasks",
            a.method.to_string(),
            a.mean_lre_db,
            a.mean_lmd_db,
            a.n_tasks
        );
    }
    Ok(())
}

pub fn cmd_plot(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let hash = config_hash(cfg);
    let results = require_upstream(&cfg.paths.root, STAGE_EVALUATE, &hash, force)?;
    let dir = stage_dir(&cfg.paths.root, STAGE_PLOT);
    ensure_dir(&dir)?;
    let text =
        std::fs::read_to_string(stage_dir(&cfg.paths.root, STAGE_EVALUATE).join("report.json"))?;
    let report: MetricReport = serde_json::from_str(&text)?;
    let entries = build_eval_entries(cfg)?;
    crate::plot::lre_box_plot(&report, &dir.join("lre_by_method.png"))?;
    crate::plot::lmd_frequency_curves(&entries, &dir.join("lmd_per_frequency.png"))?;
    let mut manifest = StageManifest::new(STAGE_PLOT, &hash, cfg.seeds.evaluate);
    manifest.record_input(&results);
    manifest.record_artifact(&cfg.paths.root, "lre_by_method.png")?;
    manifest.record_artifact(&cfg.paths.root, "lmd_per_frequency.png")?;
    manifest.save(&cfg.paths.root)?;
    println!("plot: wrote {}", dir.display());
    Ok(())
}
