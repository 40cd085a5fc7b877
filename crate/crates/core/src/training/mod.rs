//! Losses, schedules, optimizers, the epoch loop, runner-grouped
//! cross-validation and evaluation metrics.

mod cv;
mod fit;
mod losses;
mod metrics;
mod optim;
mod schedule;

pub use cv::{make_cv_splits, CvSplit};
pub use fit::{
    fit_hr, fit_vo2, hr_windows, vo2_windows, ClipRule, EpochRecord, LrSchedule, ModelKind,
    StopMetric, TrainConfig, TrainReport,
};
pub use losses::{
    aux_loss_vo2, dynamic_loss, hr_total_loss, masked_mae, masked_row_moments, nearest_rank,
    window_moments, SIGN_SHARPNESS,
};
pub use metrics::{
    evaluate, is_transition, persistence_baseline, window_mean_baseline, EvalSeries, Metrics,
    StabilityMae, ZoneMae, MAPE_FLOOR_FRAC, STABILITY_LEAD, STABILITY_THRESHOLD,
};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use schedule::{
    clip_value, curriculum, CosineWarmRestarts, EarlyStopping, LossWeights, ReduceOnPlateau,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::hr_models::HrError;
use crate::ingest::IngestError;
use crate::vo2_model::Vo2Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Hr(#[from] HrError),
    #[error(transparent)]
    Vo2(#[from] Vo2Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("misaligned series: {0}")]
    Alignment(String),
    #[error("mask selects no samples")]
    DegenerateMask,
    #[error("sequence needs at least {needed} steps, got {got}")]
    SequenceLength { needed: usize, got: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
}
