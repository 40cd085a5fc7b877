use std::path::{Path, PathBuf};

use physio_core::checkpoint::CheckpointError;
use physio_core::hr_models::HrError;
use physio_core::ingest::IngestError;
use physio_core::synth::SynthError;
use physio_core::training::TrainError;
use physio_core::vo2_model::Vo2Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 config, 3 data (including unreadable inputs), 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Read { .. } => 3,
            CliError::Runtime(_) | CliError::Write { .. } => 4,
        }
    }

    pub fn read(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Read {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn write(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Write {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Parameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Parameter(_) => CliError::Config(e.to_string()),
            SynthError::Ingest(inner) => inner.into(),
            SynthError::Io { .. } | SynthError::Json(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Params(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<HrError> for CliError {
    fn from(e: HrError) -> Self {
        match e {
            HrError::Config(_) => CliError::Config(e.to_string()),
            HrError::Anchor(_) => CliError::Data(e.to_string()),
            HrError::Ingest(inner) => inner.into(),
            HrError::Checkpoint(inner) => inner.into(),
            HrError::Autodiff(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<Vo2Error> for CliError {
    fn from(e: Vo2Error) -> Self {
        match e {
            Vo2Error::Config(_) => CliError::Config(e.to_string()),
            Vo2Error::Initialization(_) | Vo2Error::SequenceLength(_) => {
                CliError::Data(e.to_string())
            }
            Vo2Error::Ingest(inner) => inner.into(),
            Vo2Error::Checkpoint(inner) => inner.into(),
            Vo2Error::Autodiff(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Ingest(inner) => inner.into(),
            TrainError::Hr(inner) => inner.into(),
            TrainError::Vo2(inner) => inner.into(),
            TrainError::Alignment(_)
            | TrainError::DegenerateMask
            | TrainError::SequenceLength { .. } => CliError::Data(e.to_string()),
            TrainError::Autodiff(_) | TrainError::Diverged(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}
