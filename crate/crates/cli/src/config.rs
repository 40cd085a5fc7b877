//! Run configuration: one JSON document, overridden by command-line flags,
//! fully resolved and written next to every command's outputs.

use std::path::{Path, PathBuf};

use physio_core::hr_models::{HrConfig, HrMode, HrModelKind, HrPreset};
use physio_core::ingest::FeatureMode;
use physio_core::synth::CohortConfig;
use physio_core::training::{ModelKind, TrainConfig};
use physio_core::vo2_model::{Vo2Config, Vo2Preset};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where the VO₂ model's HR input comes from at evaluation time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrSource {
    /// The measured HR channel.
    #[default]
    True,
    /// Generative-mode predictions of an ODE HR model.
    OdePred,
    /// Generative-mode predictions of a Kalman HR model.
    KalmanPred,
}

impl HrSource {
    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            HrSource::True => None,
            HrSource::OdePred => Some(ModelKind::HrOde),
            HrSource::KalmanPred => Some(ModelKind::HrKalman),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_runners: usize,
    pub sessions_per_runner: usize,
    pub min_duration_s: usize,
    pub max_duration_s: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = CohortConfig::default();
        Self {
            n_runners: c.n_runners,
            sessions_per_runner: c.sessions_per_runner,
            min_duration_s: c.min_duration_s,
            max_duration_s: c.max_duration_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub mode: FeatureMode,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Vo2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// `128-2` / `64-3` for HR, `128-4` / `256-2` for VO₂.
    pub preset: Option<String>,
    pub hidden_dim: Option<usize>,
    pub num_layers: Option<usize>,
    pub head_hidden: Option<usize>,
    pub dropout: Option<f64>,
    /// RK4 step of the HR ODE model, in units of the ODE's unit time constant.
    pub ode_dt: Option<f64>,
    pub learned_schedules: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Vo2,
            preset: None,
            hidden_dim: None,
            num_layers: None,
            head_hidden: None,
            dropout: None,
            ode_dt: None,
            learned_schedules: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Runners held out per split; 1 for VO₂ and 3 for HR when unset.
    pub k_holdout: Option<usize>,
    /// Training runners set aside per split for early stopping.
    pub val_runners: Option<usize>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub window_len: Option<usize>,
    pub train_stride: Option<usize>,
    pub lr: Option<f64>,
    pub early_stop_patience: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Output directory of a `train` run.
    pub checkpoints: Option<PathBuf>,
    pub hr_source: HrSource,
    /// Output directory of an HR `train` run; needed unless `hr_source` is `true`.
    pub hr_checkpoints: Option<PathBuf>,
    /// Carry the GRU state across windows in generative HR prediction.
    pub carry_hidden: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub checkpoint: Option<PathBuf>,
    pub session: Option<PathBuf>,
    /// HR models only; VO₂ prediction is always anchored on the first second.
    pub mode: HrMode,
    pub window_len: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            session: None,
            mode: HrMode::Generative,
            window_len: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Splits processed in parallel.
    pub jobs: usize,
    pub out: Option<PathBuf>,
    /// Dataset directory read by `preprocess`, `train` and `eval`.
    pub data: Option<PathBuf>,
    pub synth: SynthSection,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub predict: PredictSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            out: None,
            data: None,
            synth: SynthSection::default(),
            preprocess: PreprocessSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            predict: PredictSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::read(path))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory (use --out)".into()))
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Config("no dataset directory (use --data)".into()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// Fills every model-dependent default so the written config is complete.
    pub fn resolve_training(&mut self) {
        let kind = self.model.kind;
        let tc = TrainConfig::for_kind(kind);
        let t = &mut self.train;
        t.k_holdout.get_or_insert(match kind {
            ModelKind::Vo2 => 1,
            _ => 3,
        });
        t.val_runners.get_or_insert(1);
        t.max_epochs.get_or_insert(tc.max_epochs);
        t.batch_size.get_or_insert(tc.batch_size);
        t.window_len.get_or_insert(tc.window_len);
        t.train_stride.get_or_insert(tc.train_stride);
        t.lr.get_or_insert(tc.lr);
        t.early_stop_patience.get_or_insert(tc.early_stop_patience);
        self.model.preset.get_or_insert_with(|| {
            match kind {
                ModelKind::Vo2 => "128-4",
                _ => "128-2",
            }
            .to_string()
        });
    }

    /// Training settings for `kind` with this config's overrides applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut tc = TrainConfig::for_kind(self.model.kind);
        let t = &self.train;
        tc.max_epochs = t.max_epochs.unwrap_or(tc.max_epochs);
        tc.batch_size = t.batch_size.unwrap_or(tc.batch_size);
        tc.window_len = t.window_len.unwrap_or(tc.window_len);
        tc.train_stride = t.train_stride.unwrap_or(tc.train_stride);
        tc.lr = t.lr.unwrap_or(tc.lr);
        tc.early_stop_patience = t.early_stop_patience.unwrap_or(tc.early_stop_patience);
        tc.seed = self.seed;
        tc
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("config.json"), self)
    }
}

pub fn feature_mode(kind: ModelKind) -> FeatureMode {
    match kind {
        ModelKind::Vo2 => FeatureMode::Vo2,
        ModelKind::HrOde | ModelKind::HrKalman => FeatureMode::Hr,
    }
}

pub fn hr_kind(kind: ModelKind) -> Option<HrModelKind> {
    match kind {
        ModelKind::HrOde => Some(HrModelKind::Ode),
        ModelKind::HrKalman => Some(HrModelKind::Kalman),
        ModelKind::Vo2 => None,
    }
}

/// Architecture chosen by a model section, for either family.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Hr(HrConfig),
    Vo2(Vo2Config),
}

impl ModelSection {
    pub fn build(&self, input_dim: usize) -> Result<ModelSpec, CliError> {
        let preset = self.preset.as_deref();
        let spec = match hr_kind(self.kind) {
            Some(kind) => {
                let p = match preset.unwrap_or("128-2") {
                    "128-2" | "large" => HrPreset::Large,
                    "64-3" | "small" => HrPreset::Small,
                    other => {
                        return Err(CliError::Config(format!(
                            "unknown HR preset `{other}` (expected 128-2 or 64-3)"
                        )))
                    }
                };
                let (h, l) = p.shape();
                let mut c = HrConfig::new(
                    kind,
                    input_dim,
                    self.hidden_dim.unwrap_or(h),
                    self.num_layers.unwrap_or(l),
                );
                if let Some(hh) = self.head_hidden {
                    c.head_hidden = hh;
                }
                if let Some(d) = self.dropout {
                    c.backbone.dropout = d;
                }
                if let Some(dt) = self.ode_dt {
                    c.dt = dt;
                }
                c.validate()?;
                ModelSpec::Hr(c)
            }
            None => {
                let p: Vo2Preset = preset.unwrap_or("128-4").parse()?;
                let (h, l) = p.shape();
                let mut c = Vo2Config::new(
                    input_dim,
                    self.hidden_dim.unwrap_or(h),
                    self.num_layers.unwrap_or(l),
                );
                if let Some(hh) = self.head_hidden {
                    c.head_hidden = hh;
                }
                if let Some(d) = self.dropout {
                    c.backbone.dropout = d;
                }
                c.learned_schedules = self.learned_schedules;
                c.validate()?;
                ModelSpec::Vo2(c)
            }
        };
        Ok(spec)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(CliError::write(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::read(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::write(dir))
}
