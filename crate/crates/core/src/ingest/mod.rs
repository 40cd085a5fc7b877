//! Session loading, unit transforms, target smoothing and windowing.
//!
//! A session lives on disk as three files sharing a stem:
//!
//! - `<stem>.csv`: 1 Hz rows `t,pace_mps,cadence_spm,vertical_oscillation_mm,
//!   altitude_m,stance_time_pct,vertical_ratio,step_length_mm,hr_bpm[,vo2_mlmin]`
//! - `<stem>.json`: `{"runner_id","session_id","age_years","sex","height_m","weight_kg"}`
//! - `<stem>.breath.csv` (optional): breath-level `t_s,vo2_mlmin`

mod savgol;

pub use savgol::savgol_smooth;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub const TIME_COLUMN: &str = "t";
pub const HR_CHANNEL: &str = "hr_bpm";
pub const VO2_CHANNEL: &str = "vo2_mlmin";
/// Biomechanical input channels in file order.
pub const INPUT_CHANNELS: [&str; 7] = [
    "pace_mps",
    "cadence_spm",
    "vertical_oscillation_mm",
    "altitude_m",
    "stance_time_pct",
    "vertical_ratio",
    "step_length_mm",
];
pub const BREATH_COLUMNS: [&str; 2] = ["t_s", "vo2_mlmin"];

/// Feature columns shared by both modes, in order.
pub const BIOMECH_FEATURES: [&str; 8] = [
    "pace_sec_km",
    "cadence_full_spm",
    "vertical_oscillation_rel",
    "altitude_abs_m",
    "altitude_gain_m",
    "stance_time_frac",
    "vertical_ratio",
    "step_length_m",
];
/// Extra VO₂-mode columns appended after [`BIOMECH_FEATURES`].
pub const VO2_EXTRA_FEATURES: [&str; 7] = [
    "hr_bpm",
    "window_position",
    "elapsed_frac",
    "age_z",
    "sex",
    "height_z",
    "weight_z",
];
/// Elapsed-time normaliser for the positional encoding, in seconds.
pub const ELAPSED_SCALE_S: f64 = 7200.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("time not strictly increasing at row {row}: {prev} then {next}")]
    Ordering { row: usize, prev: f64, next: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("missing target: {0}")]
    MissingTarget(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub runner_id: String,
    pub session_id: String,
    pub age_years: f64,
    /// 0 or 1.
    pub sex: u8,
    pub height_m: f64,
    pub weight_kg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSession {
    pub meta: SessionMeta,
    /// Seconds since start.
    pub t: Vec<i64>,
    /// Channel name → 1 Hz series; `None` marks a blank cell.
    pub channels: BTreeMap<String, Vec<Option<f64>>>,
    /// Breath-level `(seconds, ml/min)` samples.
    pub breath: Option<Vec<(f64, f64)>>,
}

impl RawSession {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[Option<f64>]> {
        self.channels.get(name).map(Vec::as_slice)
    }

    /// Checks the invariants a loaded session guarantees.
    pub fn validate(&self) -> Result<(), IngestError> {
        for name in INPUT_CHANNELS.iter().chain([&HR_CHANNEL]) {
            if !self.channels.contains_key(*name) {
                return Err(IngestError::Schema(format!("missing column `{name}`")));
            }
        }
        for (name, series) in &self.channels {
            if series.len() != self.t.len() {
                return Err(IngestError::Schema(format!(
                    "channel `{name}` has {} samples, time has {}",
                    series.len(),
                    self.t.len()
                )));
            }
        }
        check_increasing(self.t.iter().map(|&v| v as f64))?;
        if let Some(b) = &self.breath {
            check_increasing(b.iter().map(|s| s.0))?;
        }
        if self.meta.sex > 1 {
            return Err(IngestError::Schema(format!(
                "sex must be 0 or 1, got {}",
                self.meta.sex
            )));
        }
        if self.meta.height_m <= 0.0 {
            return Err(IngestError::Schema(format!(
                "height_m must be positive, got {}",
                self.meta.height_m
            )));
        }
        Ok(())
    }
}

fn check_increasing(ts: impl Iterator<Item = f64>) -> Result<(), IngestError> {
    let mut prev: Option<f64> = None;
    for (row, t) in ts.enumerate() {
        if let Some(p) = prev {
            if t <= p {
                return Err(IngestError::Ordering {
                    row,
                    prev: p,
                    next: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<Option<f64>, IngestError> {
    let s = cell.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| IngestError::Parse {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })
}

/// Parses the 1 Hz session table. Returns time and channels.
pub fn parse_session_csv(
    input: impl Read,
) -> Result<(Vec<i64>, BTreeMap<String, Vec<Option<f64>>>), IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    for h in &headers {
        let known = h == TIME_COLUMN
            || h == HR_CHANNEL
            || h == VO2_CHANNEL
            || INPUT_CHANNELS.contains(&h.as_str());
        if !known {
            return Err(IngestError::Schema(format!("unknown column `{h}`")));
        }
    }
    for required in std::iter::once(&TIME_COLUMN)
        .chain(INPUT_CHANNELS.iter())
        .chain([&HR_CHANNEL])
    {
        if !headers.iter().any(|h| h == required) {
            return Err(IngestError::Schema(format!("missing column `{required}`")));
        }
    }
    let mut t = Vec::new();
    let mut channels: BTreeMap<String, Vec<Option<f64>>> = headers
        .iter()
        .filter(|h| *h != TIME_COLUMN)
        .map(|h| (h.clone(), Vec::new()))
        .collect();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (h, cell) in headers.iter().zip(rec.iter()) {
            if h == TIME_COLUMN {
                let v = parse_cell(cell, row, h)?.ok_or_else(|| IngestError::Parse {
                    row,
                    column: h.clone(),
                    value: String::new(),
                })?;
                if v.fract() != 0.0 {
                    return Err(IngestError::Parse {
                        row,
                        column: h.clone(),
                        value: cell.to_string(),
                    });
                }
                if let Some(&prev) = t.last() {
                    if v as i64 <= prev {
                        return Err(IngestError::Ordering {
                            row,
                            prev: prev as f64,
                            next: v,
                        });
                    }
                }
                t.push(v as i64);
            } else {
                channels.get_mut(h).unwrap().push(parse_cell(cell, row, h)?);
            }
        }
    }
    Ok((t, channels))
}

/// Parses a breath-level `t_s,vo2_mlmin` table.
pub fn parse_breath_csv(input: impl Read) -> Result<Vec<(f64, f64)>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers != BREATH_COLUMNS {
        return Err(IngestError::Schema(format!(
            "breath file header must be `t_s,vo2_mlmin`, got `{}`",
            headers.join(",")
        )));
    }
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let (Some(ts), Some(v)) = (
            parse_cell(&rec[0], row, "t_s")?,
            parse_cell(&rec[1], row, "vo2_mlmin")?,
        ) else {
            continue;
        };
        if let Some(&(prev, _)) = out.last() {
            if ts <= prev {
                return Err(IngestError::Ordering {
                    row,
                    prev,
                    next: ts,
                });
            }
        }
        out.push((ts, v));
    }
    Ok(out)
}

/// Sidecar path for a session CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Breath file path for a session CSV.
pub fn breath_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("breath.csv")
}

/// Loads a session CSV, its sidecar, and its breath file when one exists.
pub fn load_session(path: &Path) -> Result<RawSession, IngestError> {
    let f = File::open(path).map_err(io_err(path))?;
    let (t, channels) = parse_session_csv(f)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
    let meta: SessionMeta = serde_json::from_str(&text)?;
    let bp = breath_path(path);
    let breath = if bp.exists() {
        Some(parse_breath_csv(File::open(&bp).map_err(io_err(&bp))?)?)
    } else {
        None
    };
    let raw = RawSession {
        meta,
        t,
        channels,
        breath,
    };
    raw.validate()?;
    Ok(raw)
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `raw` as `<dir>/<session_id>.csv` plus sidecar and breath file;
/// returns the CSV path.
pub fn write_session(raw: &RawSession, dir: &Path) -> Result<PathBuf, IngestError> {
    raw.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(format!("{}.csv", raw.meta.session_id));
    let mut columns: Vec<&str> = INPUT_CHANNELS.to_vec();
    columns.push(HR_CHANNEL);
    if raw.channels.contains_key(VO2_CHANNEL) {
        columns.push(VO2_CHANNEL);
    }
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec![TIME_COLUMN];
    header.extend(&columns);
    w.write_record(&header)?;
    for (i, t) in raw.t.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(columns.iter().map(|c| fmt_cell(raw.channels[*c][i])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(&path))?;

    let side = sidecar_path(&path);
    let mut f = File::create(&side).map_err(io_err(&side))?;
    serde_json::to_writer_pretty(&mut f, &raw.meta)?;
    f.write_all(b"\n").map_err(io_err(&side))?;

    if let Some(b) = &raw.breath {
        let bp = breath_path(&path);
        let mut w = csv::Writer::from_path(&bp)?;
        w.write_record(BREATH_COLUMNS)?;
        for (ts, v) in b {
            w.write_record([ts.to_string(), v.to_string()])?;
        }
        w.flush().map_err(io_err(&bp))?;
    }
    Ok(path)
}

/// Resamples breath-level samples onto a 1 Hz grid of length `len`.
///
/// `out[i]` is the value of the last sample with time `≤ i`; grid points
/// before the first sample are `None`.
pub fn zero_order_hold(
    samples: &[(f64, f64)],
    len: usize,
) -> Result<Vec<Option<f64>>, IngestError> {
    if samples.is_empty() {
        return Err(IngestError::EmptyInput(
            "zero_order_hold needs at least one sample",
        ));
    }
    check_increasing(samples.iter().map(|s| s.0))?;
    let mut out = Vec::with_capacity(len);
    let mut j = 0;
    let mut current = None;
    for i in 0..len {
        while j < samples.len() && samples[j].0 <= i as f64 {
            current = Some(samples[j].1);
            j += 1;
        }
        out.push(current);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Biomechanics only; HR is the target.
    Hr,
    /// Biomechanics, HR, positional encodings and anthropometrics; VO₂ is the target.
    Vo2,
}

/// Fixed z-score constants for anthropometric features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnthroNorm {
    pub age_mean: f64,
    pub age_sd: f64,
    pub height_mean: f64,
    pub height_sd: f64,
    pub weight_mean: f64,
    pub weight_sd: f64,
}

impl Default for AnthroNorm {
    fn default() -> Self {
        Self {
            age_mean: 35.0,
            age_sd: 10.0,
            height_mean: 1.72,
            height_sd: 0.09,
            weight_mean: 68.0,
            weight_sd: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    /// Window length used by the positional encoding.
    pub window_len: usize,
    pub savgol_window: usize,
    pub savgol_order: usize,
    pub anthro: AnthroNorm,
}

impl FeatureConfig {
    pub fn new(mode: FeatureMode) -> Self {
        Self {
            mode,
            window_len: 60,
            savgol_window: 15,
            savgol_order: 3,
            anthro: AnthroNorm::default(),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = BIOMECH_FEATURES.iter().map(|s| s.to_string()).collect();
        if self.mode == FeatureMode::Vo2 {
            names.extend(VO2_EXTRA_FEATURES.iter().map(|s| s.to_string()));
        }
        names
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSession {
    pub session_id: String,
    pub runner_id: String,
    pub feature_names: Vec<String>,
    /// `[T, D]`.
    pub x: Tensor,
    /// Observed HR with gaps filled from neighbours (see `mask`).
    pub hr: Vec<f64>,
    /// Smoothed 1 Hz VO₂ when a source exists; entries before the first
    /// breath sample are filled and masked.
    pub vo2: Option<Vec<f64>>,
    /// 1 where every channel this mode consumes was observed.
    pub mask: Vec<f64>,
}

impl FeatureSession {
    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.x.values()[i * d..(i + 1) * d]
    }

    /// Overwrites feature column `name` with `values`.
    pub fn replace_feature(&mut self, name: &str, values: &[f64]) -> Result<(), IngestError> {
        let j = self
            .feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| IngestError::Schema(format!("no feature column `{name}`")))?;
        if values.len() != self.len() {
            return Err(IngestError::Parameter(format!(
                "replacement for `{name}` has {} samples, session has {}",
                values.len(),
                self.len()
            )));
        }
        let d = self.dim();
        for (i, v) in values.iter().enumerate() {
            self.x.values_mut()[i * d + j] = *v;
        }
        Ok(())
    }
}

/// Fills gaps from the previous observation (from the next one at the head).
fn fill_gaps(series: &[Option<f64>], name: &str) -> Result<Vec<f64>, IngestError> {
    let first = series
        .iter()
        .find_map(|v| *v)
        .ok_or_else(|| IngestError::Schema(format!("channel `{name}` has no observed samples")))?;
    let mut last = first;
    Ok(series
        .iter()
        .map(|v| {
            if let Some(x) = v {
                last = *x;
            }
            last
        })
        .collect())
}

fn smoothed_vo2(
    raw: &RawSession,
    cfg: &FeatureConfig,
) -> Result<Option<(Vec<f64>, Vec<bool>)>, IngestError> {
    let t_len = raw.len();
    let held: Vec<Option<f64>> = if let Some(col) = raw.channel(VO2_CHANNEL) {
        col.to_vec()
    } else if let Some(b) = &raw.breath {
        zero_order_hold(b, t_len)?
    } else {
        return Ok(None);
    };
    let observed: Vec<bool> = held.iter().map(Option::is_some).collect();
    let Some(first) = held.iter().position(Option::is_some) else {
        return Ok(None);
    };
    let filled = fill_gaps(&held, VO2_CHANNEL)?;
    let mut out = filled.clone();
    let tail = &filled[first..];
    if tail.len() >= cfg.savgol_window {
        let s = savgol_smooth(tail, cfg.savgol_window, cfg.savgol_order)?;
        out[first..].copy_from_slice(&s);
    }
    Ok(Some((out, observed)))
}

/// Converts raw channels to model features for `cfg.mode`.
///
/// Unit transforms: pace m/s → s/km, cadence doubled, vertical
/// oscillation mm → fraction of height, stance % → fraction, step length
/// mm → m, altitude split into level and one-second gain. Samples with any
/// consumed channel blank, or with pace ≤ 0, get mask 0.
pub fn transform_features(
    raw: &RawSession,
    cfg: &FeatureConfig,
) -> Result<FeatureSession, IngestError> {
    raw.validate()?;
    let t_len = raw.len();
    if t_len == 0 {
        return Err(IngestError::EmptyInput("session has no rows"));
    }
    let mut mask = vec![1.0; t_len];
    let mut filled: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for name in INPUT_CHANNELS.iter().chain([&HR_CHANNEL]) {
        let col = raw.channel(name).unwrap();
        for (m, v) in mask.iter_mut().zip(col) {
            if v.is_none() {
                *m = 0.0;
            }
        }
        filled.insert(name, fill_gaps(col, name)?);
    }
    let pace_raw = raw.channel("pace_mps").unwrap();
    for (m, v) in mask.iter_mut().zip(pace_raw) {
        if matches!(v, Some(p) if *p <= 0.0) {
            *m = 0.0;
        }
    }
    // standing samples would map to infinite s/km; reuse the last moving pace
    let mut last_pace = pace_raw
        .iter()
        .flatten()
        .copied()
        .find(|p| *p > 0.0)
        .ok_or_else(|| IngestError::Schema("pace has no positive samples".into()))?;
    let pace: Vec<f64> = filled["pace_mps"]
        .iter()
        .map(|&p| {
            if p > 0.0 {
                last_pace = p;
            }
            1000.0 / last_pace
        })
        .collect();

    let vo2 = smoothed_vo2(raw, cfg)?;
    if cfg.mode == FeatureMode::Vo2 {
        let Some((_, observed)) = &vo2 else {
            return Err(IngestError::MissingTarget(format!(
                "session `{}` has no VO2 column or breath file",
                raw.meta.session_id
            )));
        };
        for (m, o) in mask.iter_mut().zip(observed) {
            if !o {
                *m = 0.0;
            }
        }
    }

    let names = cfg.feature_names();
    let d = names.len();
    let height = raw.meta.height_m;
    let alt = &filled["altitude_m"];
    let n_windows = t_len.div_ceil(cfg.window_len.max(1)) as f64;
    let a = &cfg.anthro;
    let mut x = Vec::with_capacity(t_len * d);
    for i in 0..t_len {
        x.push(pace[i]);
        x.push(filled["cadence_spm"][i] * 2.0);
        x.push(filled["vertical_oscillation_mm"][i] / 1000.0 / height);
        x.push(alt[i]);
        x.push(if i == 0 { 0.0 } else { alt[i] - alt[i - 1] });
        x.push(filled["stance_time_pct"][i] / 100.0);
        x.push(filled["vertical_ratio"][i]);
        x.push(filled["step_length_mm"][i] / 1000.0);
        if cfg.mode == FeatureMode::Vo2 {
            let w = (i / cfg.window_len) as f64;
            x.push(filled[HR_CHANNEL][i]);
            x.push(w / n_windows);
            x.push(w * cfg.window_len as f64 / ELAPSED_SCALE_S);
            x.push((raw.meta.age_years - a.age_mean) / a.age_sd);
            x.push(f64::from(raw.meta.sex));
            x.push((raw.meta.height_m - a.height_mean) / a.height_sd);
            x.push((raw.meta.weight_kg - a.weight_mean) / a.weight_sd);
        }
    }
    Ok(FeatureSession {
        session_id: raw.meta.session_id.clone(),
        runner_id: raw.meta.runner_id.clone(),
        feature_names: names,
        x: Tensor::matrix(t_len, d, x),
        hr: filled.remove(HR_CHANNEL).unwrap(),
        vo2: vo2.map(|v| v.0),
        mask,
    })
}

/// Writes a feature table: `t`, the feature columns, `hr`, `vo2`, `mask`.
pub fn write_features(fs: &FeatureSession, path: &Path) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(fs.feature_names.iter().cloned());
    header.extend(["hr".to_string(), "vo2".to_string(), "mask".to_string()]);
    w.write_record(&header)?;
    for i in 0..fs.len() {
        let mut rec = vec![i.to_string()];
        rec.extend(fs.row(i).iter().map(f64::to_string));
        rec.push(fs.hr[i].to_string());
        rec.push(
            fs.vo2
                .as_ref()
                .map(|v| v[i].to_string())
                .unwrap_or_default(),
        );
        rec.push(fs.mask[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Per-feature z-score statistics fitted on training sessions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Statistics over the masked-in rows of `sessions` (two-pass).
    /// Near-constant features get unit scale.
    pub fn fit<'a, I>(sessions: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = &'a FeatureSession> + Clone,
    {
        let mut n = 0.0;
        let mut sum: Vec<f64> = Vec::new();
        for fs in sessions.clone() {
            if sum.is_empty() {
                sum = vec![0.0; fs.dim()];
            }
            if fs.dim() != sum.len() {
                return Err(IngestError::Schema(
                    "sessions have different feature sets".into(),
                ));
            }
            for i in (0..fs.len()).filter(|&i| fs.mask[i] > 0.0) {
                n += 1.0;
                sum.iter_mut().zip(fs.row(i)).for_each(|(s, v)| *s += v);
            }
        }
        if n == 0.0 {
            return Err(IngestError::EmptyInput(
                "no observed rows to fit feature statistics",
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0; mean.len()];
        for fs in sessions {
            for i in (0..fs.len()).filter(|&i| fs.mask[i] > 0.0) {
                for (j, v) in fs.row(i).iter().enumerate() {
                    sq[j] += (v - mean[j]).powi(2);
                }
            }
        }
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n).sqrt();
                if sd <= 1e-9 * m.abs().max(1.0) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, fs: &FeatureSession) -> FeatureSession {
        let mut out = fs.clone();
        let d = self.mean.len();
        for (k, v) in out.x.values_mut().iter_mut().enumerate() {
            let j = k % d;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        out
    }
}

/// Mean and population SD of a target over masked-in samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    pub fn fit<'a>(
        series: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
    ) -> Result<Self, IngestError> {
        let (mut n, mut s, mut q) = (0.0, 0.0, 0.0);
        for (y, m) in series {
            for (v, w) in y.iter().zip(m) {
                if *w > 0.0 {
                    n += 1.0;
                    s += v;
                    q += v * v;
                }
            }
        }
        if n == 0.0 {
            return Err(IngestError::EmptyInput("no observed target samples"));
        }
        let mean = s / n;
        let std = (q / n - mean * mean).max(0.0).sqrt().max(1e-8);
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start_index: usize,
    /// `[L, D]`.
    pub x: Tensor,
    pub hr: Vec<f64>,
    pub vo2: Option<Vec<f64>>,
    pub mask: Vec<f64>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }
}

/// Copies the samples `[start, start + len)` of `fs` into a window.
pub fn slice_window(fs: &FeatureSession, start: usize, len: usize) -> Window {
    let d = fs.dim();
    let end = start + len;
    Window {
        start_index: start,
        x: Tensor::matrix(len, d, fs.x.values()[start * d..end * d].to_vec()),
        hr: fs.hr[start..end].to_vec(),
        vo2: fs.vo2.as_ref().map(|v| v[start..end].to_vec()),
        mask: fs.mask[start..end].to_vec(),
    }
}

/// Full-length windows at `0, stride, 2·stride, …`; a trailing remainder
/// shorter than `length` is dropped.
pub fn segment_windows(
    fs: &FeatureSession,
    length: usize,
    stride: usize,
) -> Result<Vec<Window>, IngestError> {
    if length < 2 || stride == 0 || stride > length {
        return Err(IngestError::Parameter(format!(
            "need length >= 2 and 1 <= stride <= length, got length {length}, stride {stride}"
        )));
    }
    let t_len = fs.len();
    if t_len < length {
        return Ok(Vec::new());
    }
    Ok((0..=(t_len - length) / stride)
        .map(|k| slice_window(fs, k * stride, length))
        .collect())
}

/// `(start, len)` spans tiling all of `[0, t_len)` with consecutive windows
/// of `length`; the last span may be shorter.
pub fn covering_spans(t_len: usize, length: usize) -> Vec<(usize, usize)> {
    (0..t_len.div_ceil(length.max(1)))
        .map(|k| {
            let s = k * length;
            (s, length.min(t_len - s))
        })
        .collect()
}
