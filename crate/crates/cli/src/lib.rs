//! `physio` command line: synthetic cohorts, preprocessing, cross-validated
//! training, evaluation and single-session prediction.

pub mod config;
pub mod data;
pub mod error;
pub mod eval_cmd;
pub mod predict_cmd;
pub mod preprocess_cmd;
pub mod synth_cmd;
pub mod train_cmd;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use physio_core::hr_models::HrMode;
use physio_core::ingest::FeatureMode;
use physio_core::training::ModelKind;
use serde::de::DeserializeOwned;

pub use config::{HrSource, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "physio",
    version,
    about = "Heart-rate and VO2 state-estimation pipeline"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Cross-validation splits processed in parallel.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort in the ingest format.
    Synth(SynthArgs),
    /// Validate sessions and write model-ready feature tables.
    Preprocess(PreprocessArgs),
    /// Leave-k-runner-out training with per-split checkpoints.
    Train(TrainArgs),
    /// Score a training run's held-out sessions.
    Eval(EvalArgs),
    /// Predict one session with one checkpoint.
    Predict(PredictArgs),
}

/// Parses a value by its JSON (snake_case) name.
fn by_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub runners: Option<usize>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub min_duration: Option<usize>,
    #[arg(long)]
    pub max_duration: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `hr` or `vo2`.
    #[arg(long, value_parser = by_name::<FeatureMode>)]
    pub mode: Option<FeatureMode>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `hr_ode`, `hr_kalman` or `vo2`.
    #[arg(long, value_parser = by_name::<ModelKind>)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Integration step of the HR ODE model.
    #[arg(long)]
    pub ode_dt: Option<f64>,
    #[arg(long)]
    pub learned_schedules: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub k_holdout: Option<usize>,
    #[arg(long)]
    pub val_runners: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory; defaults to the one the run was trained on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory of a `train` run.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// `true`, `ode_pred` or `kalman_pred`.
    #[arg(long, value_parser = by_name::<HrSource>)]
    pub hr_source: Option<HrSource>,
    /// Output directory of the HR `train` run supplying predicted HR.
    #[arg(long)]
    pub hr_checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub carry_hidden: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Session CSV (sidecar and breath file alongside).
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// `standard` or `generative` (HR models).
    #[arg(long, value_parser = by_name::<HrMode>)]
    pub mode: Option<HrMode>,
    #[arg(long)]
    pub window: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl Cli {
    /// The file config (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        set(&mut c.jobs, self.jobs);
        set_opt(&mut c.out, self.out.clone());
        match &self.command {
            Command::Synth(a) => {
                set(&mut c.synth.n_runners, a.runners);
                set(&mut c.synth.sessions_per_runner, a.sessions);
                set(&mut c.synth.min_duration_s, a.min_duration);
                set(&mut c.synth.max_duration_s, a.max_duration);
            }
            Command::Preprocess(a) => {
                set_opt(&mut c.data, a.data.clone());
                set(&mut c.preprocess.mode, a.mode);
            }
            Command::Train(a) => {
                set_opt(&mut c.data, a.data.clone());
                let m = &mut c.model;
                set(&mut m.kind, a.model);
                set_opt(&mut m.preset, a.preset.clone());
                set_opt(&mut m.hidden_dim, a.hidden);
                set_opt(&mut m.num_layers, a.layers);
                set_opt(&mut m.head_hidden, a.head_hidden);
                set_opt(&mut m.dropout, a.dropout);
                set_opt(&mut m.ode_dt, a.ode_dt);
                m.learned_schedules |= a.learned_schedules;
                let t = &mut c.train;
                set_opt(&mut t.max_epochs, a.epochs);
                set_opt(&mut t.batch_size, a.batch_size);
                set_opt(&mut t.window_len, a.window);
                set_opt(&mut t.train_stride, a.stride);
                set_opt(&mut t.lr, a.lr);
                set_opt(&mut t.early_stop_patience, a.patience);
                set_opt(&mut t.k_holdout, a.k_holdout);
                set_opt(&mut t.val_runners, a.val_runners);
            }
            Command::Eval(a) => {
                set_opt(&mut c.data, a.data.clone());
                set_opt(&mut c.eval.checkpoints, a.checkpoints.clone());
                set(&mut c.eval.hr_source, a.hr_source);
                set_opt(&mut c.eval.hr_checkpoints, a.hr_checkpoints.clone());
                c.eval.carry_hidden |= a.carry_hidden;
            }
            Command::Predict(a) => {
                set_opt(&mut c.predict.checkpoint, a.checkpoint.clone());
                set_opt(&mut c.predict.session, a.session.clone());
                set(&mut c.predict.mode, a.mode);
                set(&mut c.predict.window_len, a.window);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Runs the parsed command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Synth(_) => synth_cmd::run(&cfg),
        Command::Preprocess(_) => preprocess_cmd::run(&cfg),
        Command::Train(_) => train_cmd::run(&cfg),
        Command::Eval(_) => eval_cmd::run(&cfg),
        Command::Predict(_) => predict_cmd::run(&cfg),
    }
}
