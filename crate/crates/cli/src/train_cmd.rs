use std::collections::BTreeSet;
use std::path::Path;

use physio_core::ingest::FeatureSession;
use physio_core::training::{fit_hr, fit_vo2, make_cv_splits, TrainConfig, TrainReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{create_dir, feature_mode, write_json, ModelSpec, RunConfig};
use crate::data::{features, load_sessions};
use crate::error::CliError;

/// One cross-validation split as recorded in `splits.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub index: usize,
    pub seed: u64,
    pub held_out_runner_ids: Vec<String>,
    pub val_runner_ids: Vec<String>,
    pub train_session_ids: Vec<String>,
    pub val_session_ids: Vec<String>,
    pub test_session_ids: Vec<String>,
}

impl SplitRecord {
    pub fn dir(&self, root: &Path) -> std::path::PathBuf {
        root.join(format!("split_{:02}", self.index))
    }

    pub fn checkpoint(&self, root: &Path) -> std::path::PathBuf {
        self.dir(root).join("model.json")
    }
}

#[derive(Serialize)]
struct TrainSettings<'a> {
    train: &'a TrainConfig,
    model: &'a ModelSpec,
}

#[derive(Serialize, Deserialize)]
pub struct SplitSummary {
    pub index: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_mae: f64,
}

fn split_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Adds validation runners to each split: the `val_runners` training
/// runners following split `i`'s rotation point in sorted order.
fn plan_splits(
    sessions: &[FeatureSession],
    k: usize,
    val_runners: usize,
    seed: u64,
) -> Result<Vec<SplitRecord>, CliError> {
    let keys: Vec<(String, String)> = sessions
        .iter()
        .map(|s| (s.session_id.clone(), s.runner_id.clone()))
        .collect();
    let splits = make_cv_splits(&keys, k, seed)?;
    let mut out = Vec::with_capacity(splits.len());
    for (i, s) in splits.into_iter().enumerate() {
        let held: BTreeSet<&str> = s.held_out_runner_ids.iter().map(String::as_str).collect();
        let train_runners: Vec<&str> = sessions
            .iter()
            .map(|fs| fs.runner_id.as_str())
            .filter(|r| !held.contains(r))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if val_runners >= train_runners.len() {
            return Err(CliError::Config(format!(
                "split {i}: {} training runners cannot spare {val_runners} for validation",
                train_runners.len()
            )));
        }
        let val: BTreeSet<&str> = (0..val_runners)
            .map(|j| train_runners[(i + j) % train_runners.len()])
            .collect();
        let runner_of = |id: &str| {
            sessions
                .iter()
                .find(|fs| fs.session_id == id)
                .map(|fs| fs.runner_id.as_str())
                .unwrap_or_default()
        };
        let (val_ids, train_ids): (Vec<String>, Vec<String>) = s
            .train_session_ids
            .into_iter()
            .partition(|id| val.contains(runner_of(id)));
        out.push(SplitRecord {
            index: i,
            seed: split_seed(seed, i),
            held_out_runner_ids: s.held_out_runner_ids,
            val_runner_ids: val.iter().map(|r| r.to_string()).collect(),
            train_session_ids: train_ids,
            val_session_ids: val_ids,
            test_session_ids: s.test_session_ids,
        });
    }
    Ok(out)
}

fn pick(sessions: &[FeatureSession], ids: &[String]) -> Vec<FeatureSession> {
    ids.iter()
        .filter_map(|id| sessions.iter().find(|s| &s.session_id == id).cloned())
        .collect()
}

fn train_split(
    split: &SplitRecord,
    sessions: &[FeatureSession],
    spec: &ModelSpec,
    base: &TrainConfig,
    root: &Path,
) -> Result<SplitSummary, CliError> {
    let train = pick(sessions, &split.train_session_ids);
    let val = pick(sessions, &split.val_session_ids);
    let tc = TrainConfig {
        seed: split.seed,
        ..base.clone()
    };
    let dir = split.dir(root);
    create_dir(&dir)?;
    let report: TrainReport = match spec {
        ModelSpec::Hr(c) => {
            let (model, report) = fit_hr(c.clone(), &train, &val, &tc)?;
            model.save(&split.checkpoint(root))?;
            report
        }
        ModelSpec::Vo2(c) => {
            let (model, report) = fit_vo2(c.clone(), &train, &val, &tc)?;
            model.save(&split.checkpoint(root))?;
            report
        }
    };
    let path = dir.join("report.jsonl");
    std::fs::write(&path, report.to_jsonl()).map_err(CliError::write(&path))?;
    let best = report
        .best()
        .ok_or_else(|| CliError::Runtime(format!("split {} ran no epochs", split.index)))?;
    eprintln!(
        "split {:02}: {} epochs, best epoch {} val_mae {:.4}",
        split.index,
        report.records.len(),
        best.epoch,
        best.val_mae
    );
    Ok(SplitSummary {
        index: split.index,
        epochs: report.records.len(),
        best_epoch: best.epoch,
        best_val_loss: best.val_loss,
        best_val_mae: best.val_mae,
    })
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    cfg.resolve_training();
    let out = cfg.out_dir()?.to_path_buf();
    let tc = cfg.train_config();
    tc.validate()?;
    let mode = feature_mode(cfg.model.kind);
    let raws = load_sessions(cfg.data_dir()?)?;
    let sessions = raws
        .iter()
        .map(|r| features(r, mode, tc.window_len))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = cfg.model.build(sessions[0].dim())?;
    let splits = plan_splits(
        &sessions,
        cfg.train.k_holdout.unwrap_or(1),
        cfg.train.val_runners.unwrap_or(1),
        cfg.seed,
    )?;
    create_dir(&out)?;
    cfg.write(&out)?;
    write_json(
        &out.join("train_config.json"),
        &TrainSettings {
            train: &tc,
            model: &spec,
        },
    )?;
    write_json(&out.join("splits.json"), &splits)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<Result<SplitSummary, CliError>> = pool.install(|| {
        splits
            .par_iter()
            .map(|s| train_split(s, &sessions, &spec, &tc, &out))
            .collect()
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_json(&out.join("summary.json"), &summaries)?;
    Ok(())
}
