use std::path::Path;

use physio_core::hr_models::{HrModel, HrPredictOptions};
use physio_core::ingest::{load_session, FeatureMode};
use physio_core::training::{evaluate, EvalSeries, Metrics};
use physio_core::vo2_model::Vo2Model;
use serde::Serialize;

use crate::config::{create_dir, write_json, RunConfig};
use crate::data::features;
use crate::error::CliError;

/// Writes `t,<target>_true,<target>_pred`; the truth cell is blank where
/// the sample was not observed.
pub fn write_prediction_csv(
    path: &Path,
    target: &str,
    t: &[i64],
    truth: &[f64],
    mask: &[f64],
    pred: &[f64],
) -> Result<(), CliError> {
    let mut s = format!("t,{target}_true,{target}_pred\n");
    for i in 0..pred.len() {
        let y = if mask[i] > 0.0 {
            truth[i].to_string()
        } else {
            String::new()
        };
        s.push_str(&format!("{},{y},{}\n", t[i], pred[i]));
    }
    std::fs::write(path, s).map_err(CliError::write(path))
}

#[derive(Serialize)]
struct Summary<'a> {
    session_id: &'a str,
    runner_id: &'a str,
    model: &'a str,
    mode: Option<physio_core::hr_models::HrMode>,
    metrics: Metrics,
}

fn checkpoint_kind(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::read(path))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    v.get("kind")
        .and_then(|k| k.as_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Data(format!("{}: not a model checkpoint", path.display())))
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let p = &cfg.predict;
    let ck = p
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Config("no checkpoint (use --checkpoint)".into()))?;
    let session = p
        .session
        .as_deref()
        .ok_or_else(|| CliError::Config("no session (use --session)".into()))?;
    let raw = load_session(session)?;
    let kind = checkpoint_kind(ck)?;
    let (target, mode, truth, mask, pred) = match kind.as_str() {
        "vo2" => {
            let model = Vo2Model::load(ck)?;
            let fs = features(&raw, FeatureMode::Vo2, p.window_len)?;
            let pred = model.predict_session(&fs, p.window_len)?;
            (
                "vo2",
                None,
                fs.vo2.clone().unwrap_or_default(),
                fs.mask,
                pred,
            )
        }
        "hr" => {
            let model = HrModel::load(ck)?;
            let fs = features(&raw, FeatureMode::Hr, p.window_len)?;
            let opts = HrPredictOptions {
                window_len: p.window_len,
                carry_hidden: cfg.eval.carry_hidden,
            };
            let pred = model.predict_session(&fs, p.mode, opts)?;
            ("hr", Some(p.mode), fs.hr.clone(), fs.mask, pred)
        }
        other => {
            return Err(CliError::Data(format!(
                "{}: unknown model kind `{other}`",
                ck.display()
            )))
        }
    };
    create_dir(out)?;
    let csv = out.join(format!("{}.pred.csv", raw.meta.session_id));
    write_prediction_csv(&csv, target, &raw.t, &truth, &mask, &pred)?;
    let metrics = evaluate(&[EvalSeries::new(pred, truth, mask)?])?;
    let summary = Summary {
        session_id: &raw.meta.session_id,
        runner_id: &raw.meta.runner_id,
        model: target,
        mode,
        metrics,
    };
    write_json(&out.join("summary.json"), &summary)?;
    cfg.write(out)?;
    println!(
        "{}: n {}  MAE {:.4}  RMSE {:.4}  MAPE {:.3}%",
        summary.session_id,
        summary.metrics.n,
        summary.metrics.mae,
        summary.metrics.rmse,
        summary.metrics.mape_pct
    );
    Ok(())
}
