//! Heart-rate and oxygen-uptake state estimation from running wearables.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: tensors, a reverse-mode tape, MLP and GRU layers.
//! - [`ingest`]: session CSV loading, unit transforms, smoothing, windowing.
//! - [`synth`]: seeded synthetic runners with known HR/VO₂ kinetics.
//! - [`hr_models`]: the ODE and 2-D Kalman heart-rate predictors.
//! - [`vo2_model`]: the Kalman VO₂ sequence model.
//! - [`training`]: losses, schedules, optimizers, cross-validation, metrics.
//! - [`checkpoint`]: parameters bundled with config and normalisation.

pub mod autodiff;
pub mod checkpoint;
pub mod hr_models;
pub mod ingest;
pub mod synth;
pub mod training;
pub mod vo2_model;
