use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use physio_core::hr_models::{HrMode, HrModel, HrPredictOptions};
use physio_core::ingest::{FeatureMode, RawSession, HR_CHANNEL};
use physio_core::training::{
    evaluate, persistence_baseline, window_mean_baseline, EvalSeries, Metrics, ModelKind,
};
use physio_core::vo2_model::Vo2Model;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{create_dir, read_json, write_json, HrSource, RunConfig};
use crate::data::{features, load_sessions};
use crate::error::CliError;
use crate::predict_cmd::write_prediction_csv;
use crate::train_cmd::SplitRecord;

/// One per-runner line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunnerRow {
    pub runner_id: String,
    pub sessions: usize,
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rows: Vec<RunnerRow>,
    /// Pooled over every held-out sample.
    pub aggregate: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: ModelKind,
    pub hr_source: HrSource,
    pub window_len: usize,
    /// `standard` and `generative` for HR models, `vo2` for the VO₂ model.
    pub tables: BTreeMap<String, Table>,
    /// Reference predictors scored on the same samples.
    pub baselines: BTreeMap<String, Table>,
}

struct SessionResult {
    session_id: String,
    runner_id: String,
    t: Vec<i64>,
    truth: Vec<f64>,
    mask: Vec<f64>,
    preds: Vec<(String, Vec<f64>)>,
}

/// A finished training run: its resolved config and splits.
struct TrainedRun {
    root: PathBuf,
    config: RunConfig,
    splits: Vec<SplitRecord>,
}

impl TrainedRun {
    fn open(root: &Path) -> Result<Self, CliError> {
        Ok(Self {
            root: root.to_path_buf(),
            config: read_json(&root.join("config.json"))?,
            splits: read_json(&root.join("splits.json"))?,
        })
    }

    fn window_len(&self) -> usize {
        self.config.train.window_len.unwrap_or(60)
    }

    /// First split holding out `runner`.
    fn split_for(&self, runner: &str) -> Option<&SplitRecord> {
        self.splits
            .iter()
            .find(|s| s.held_out_runner_ids.iter().any(|r| r == runner))
    }
}

/// Generative HR predictions from the split that never saw the runner.
struct HrSupplier {
    window_len: usize,
    carry_hidden: bool,
    models: HashMap<usize, HrModel>,
    run: TrainedRun,
}

impl HrSupplier {
    fn open(source: HrSource, dir: &Path, carry_hidden: bool) -> Result<Self, CliError> {
        let run = TrainedRun::open(dir)?;
        let want = source.model_kind().expect("predicted source");
        if run.config.model.kind != want {
            return Err(CliError::Config(format!(
                "hr_source {source:?} needs a {want:?} run, {} holds {:?}",
                dir.display(),
                run.config.model.kind
            )));
        }
        let mut models = HashMap::new();
        for s in &run.splits {
            models.insert(s.index, HrModel::load(&s.checkpoint(dir))?);
        }
        Ok(Self {
            window_len: run.window_len(),
            carry_hidden,
            models,
            run,
        })
    }

    fn predict(&self, raw: &RawSession) -> Result<Vec<f64>, CliError> {
        let runner = &raw.meta.runner_id;
        let split = self.run.split_for(runner).ok_or_else(|| {
            CliError::Config(format!(
                "no HR split in {} holds out runner `{runner}`",
                self.run.root.display()
            ))
        })?;
        let fs = features(raw, FeatureMode::Hr, self.window_len)?;
        let opts = HrPredictOptions {
            window_len: self.window_len,
            carry_hidden: self.carry_hidden,
        };
        Ok(self.models[&split.index].predict_session(&fs, HrMode::Generative, opts)?)
    }
}

fn eval_split(
    run: &TrainedRun,
    split: &SplitRecord,
    sessions: &[&RawSession],
    cfg: &RunConfig,
    hr: Option<&HrSupplier>,
) -> Result<Vec<SessionResult>, CliError> {
    let kind = run.config.model.kind;
    let window_len = run.window_len();
    let ck = split.checkpoint(&run.root);
    let mut out = Vec::with_capacity(sessions.len());
    match kind {
        ModelKind::Vo2 => {
            let model = Vo2Model::load(&ck)?;
            for raw in sessions {
                let mut fs = features(raw, FeatureMode::Vo2, window_len)?;
                if let Some(h) = hr {
                    fs.replace_feature(HR_CHANNEL, &h.predict(raw)?)?;
                }
                let pred = model.predict_session(&fs, window_len)?;
                out.push(SessionResult {
                    session_id: fs.session_id.clone(),
                    runner_id: fs.runner_id.clone(),
                    t: raw.t.clone(),
                    truth: fs.vo2.clone().expect("VO2 features carry a target"),
                    mask: fs.mask.clone(),
                    preds: vec![("vo2".into(), pred)],
                });
            }
        }
        ModelKind::HrOde | ModelKind::HrKalman => {
            let model = HrModel::load(&ck)?;
            let opts = HrPredictOptions {
                window_len,
                carry_hidden: cfg.eval.carry_hidden,
            };
            for raw in sessions {
                let fs = features(raw, FeatureMode::Hr, window_len)?;
                let standard = model.predict_session(&fs, HrMode::Standard, opts)?;
                let generative = model.predict_session(&fs, HrMode::Generative, opts)?;
                out.push(SessionResult {
                    session_id: fs.session_id.clone(),
                    runner_id: fs.runner_id.clone(),
                    t: raw.t.clone(),
                    truth: fs.hr.clone(),
                    mask: fs.mask.clone(),
                    preds: vec![
                        ("standard".into(), standard),
                        ("generative".into(), generative),
                    ],
                });
            }
        }
    }
    Ok(out)
}

/// Per-runner rows plus the pooled aggregate.
pub fn build_table(series: &[(String, EvalSeries)]) -> Result<Table, CliError> {
    let mut by_runner: BTreeMap<&str, Vec<EvalSeries>> = BTreeMap::new();
    for (runner, s) in series {
        by_runner.entry(runner).or_default().push(s.clone());
    }
    let mut rows = Vec::with_capacity(by_runner.len());
    for (runner, list) in &by_runner {
        let m = evaluate(list)?;
        rows.push(RunnerRow {
            runner_id: runner.to_string(),
            sessions: list.len(),
            n: m.n,
            mae: m.mae,
            rmse: m.rmse,
            mape_pct: m.mape_pct,
        });
    }
    let all: Vec<EvalSeries> = series.iter().map(|(_, s)| s.clone()).collect();
    Ok(Table {
        rows,
        aggregate: evaluate(&all)?,
    })
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let out = cfg.out_dir()?;
    let ck_dir = cfg.eval.checkpoints.as_deref().ok_or_else(|| {
        CliError::Config("no training run to evaluate (use --checkpoints)".into())
    })?;
    let run = TrainedRun::open(ck_dir)?;
    let kind = run.config.model.kind;
    let data = match (&cfg.data, &run.config.data) {
        (Some(d), _) | (None, Some(d)) => d.clone(),
        (None, None) => return Err(CliError::Config("no dataset directory (use --data)".into())),
    };
    let hr = match cfg.eval.hr_source {
        HrSource::True => None,
        source => {
            if kind != ModelKind::Vo2 {
                return Err(CliError::Config(
                    "hr_source applies to VO2 runs only".into(),
                ));
            }
            let dir = cfg.eval.hr_checkpoints.as_deref().ok_or_else(|| {
                CliError::Config(format!("hr_source {source:?} needs --hr-checkpoints"))
            })?;
            Some(HrSupplier::open(source, dir, cfg.eval.carry_hidden)?)
        }
    };
    let raws = load_sessions(&data)?;

    // every held-out session is scored once, by the first split holding it out
    let mut seen = std::collections::BTreeSet::new();
    let mut work: Vec<(&SplitRecord, Vec<&RawSession>)> = Vec::new();
    for split in &run.splits {
        let mine: Vec<&RawSession> = split
            .test_session_ids
            .iter()
            .filter(|id| seen.insert(id.as_str()))
            .map(|id| {
                raws.iter()
                    .find(|r| &r.meta.session_id == id)
                    .ok_or_else(|| {
                        CliError::Data(format!("session `{id}` not found in {}", data.display()))
                    })
            })
            .collect::<Result<_, _>>()?;
        work.push((split, mine));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<Result<Vec<SessionResult>, CliError>> = pool.install(|| {
        work.par_iter()
            .map(|(split, sessions)| eval_split(&run, split, sessions, cfg, hr.as_ref()))
            .collect()
    });
    let mut results: Vec<SessionResult> = results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    results.sort_by(|a, b| a.session_id.cmp(&b.session_id));

    create_dir(out)?;
    let target = if kind == ModelKind::Vo2 { "vo2" } else { "hr" };
    let mut tables = BTreeMap::new();
    let table_names: Vec<String> = results
        .first()
        .map(|r| r.preds.iter().map(|p| p.0.clone()).collect())
        .unwrap_or_default();
    for (k, name) in table_names.iter().enumerate() {
        let dir = out.join("predictions").join(name);
        create_dir(&dir)?;
        let mut series = Vec::with_capacity(results.len());
        for r in &results {
            let pred = &r.preds[k].1;
            write_prediction_csv(
                &dir.join(format!("{}.csv", r.session_id)),
                target,
                &r.t,
                &r.truth,
                &r.mask,
                pred,
            )?;
            series.push((
                r.runner_id.clone(),
                EvalSeries::new(pred.clone(), r.truth.clone(), r.mask.clone())?,
            ));
        }
        tables.insert(name.clone(), build_table(&series)?);
    }
    let window_len = run.window_len();
    let mut baselines = BTreeMap::new();
    for name in ["persistence", "window_mean"] {
        let series = results
            .iter()
            .map(|r| {
                let pred = if name == "persistence" {
                    persistence_baseline(&r.truth)
                } else {
                    window_mean_baseline(&r.truth, &r.mask, window_len)
                };
                Ok((
                    r.runner_id.clone(),
                    EvalSeries::new(pred, r.truth.clone(), r.mask.clone())?,
                ))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        baselines.insert(name.to_string(), build_table(&series)?);
    }
    let report = MetricsReport {
        model: kind,
        hr_source: cfg.eval.hr_source,
        window_len,
        tables,
        baselines,
    };
    write_json(&out.join("metrics.json"), &report)?;
    let mut resolved = cfg.clone();
    resolved.data = Some(data);
    resolved.write(out)?;
    for (name, t) in &report.tables {
        eprintln!(
            "{name}: MAE {:.4}  RMSE {:.4}  MAPE {:.3}%  ({} samples)",
            t.aggregate.mae, t.aggregate.rmse, t.aggregate.mape_pct, t.aggregate.n
        );
    }
    Ok(())
}
