use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{aux_loss_vo2, dynamic_loss, hr_total_loss, masked_mae};
use super::optim::{clip_grad_norm, Adam, AdamConfig};
use super::schedule::{
    clip_value, curriculum, CosineWarmRestarts, EarlyStopping, LossWeights, ReduceOnPlateau,
};
use super::TrainError;
use crate::autodiff::{ParamStore, ParamVars, Tape, Tensor, Var};
use crate::hr_models::{hr_forward, HrBounds, HrConfig, HrInit, HrModel, HrModelKind};
use crate::ingest::{segment_windows, FeatureSession, Standardizer, TargetStats, Window};
use crate::vo2_model::{vo2_forward, Vo2Config, Vo2Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    HrOde,
    HrKalman,
    Vo2,
}

impl std::str::FromStr for ModelKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hr_ode" => Ok(Self::HrOde),
            "hr_kalman" => Ok(Self::HrKalman),
            "vo2" => Ok(Self::Vo2),
            other => Err(TrainError::Config(format!(
                "unknown model kind `{other}` (expected hr_ode, hr_kalman or vo2)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    /// Reduce on a validation-loss plateau.
    Plateau {
        factor: f64,
        patience: usize,
        cooldown: usize,
        min_lr: f64,
    },
    CosineRestarts {
        t0: usize,
        t_mult: usize,
        eta_min: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "max_norm")]
pub enum ClipRule {
    Fixed(f64),
    /// `clip_value(epoch)`.
    Adaptive,
}

/// Validation quantity watched by early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    ValLoss,
    ValMae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub window_len: usize,
    /// Training windows overlap when this is below `window_len`.
    pub train_stride: usize,
    pub lr: f64,
    pub optimizer: AdamConfig,
    pub schedule: LrSchedule,
    pub clip: ClipRule,
    /// Epochs without improvement before stopping.
    pub early_stop_patience: usize,
    pub stop_metric: StopMetric,
    /// VO₂ only: phase in the shape and moment losses.
    pub curriculum: bool,
    pub alpha_dyn: f64,
    pub lambda_hr: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::HrKalman => Self::hr(HrModelKind::Kalman),
            ModelKind::HrOde => Self::hr(HrModelKind::Ode),
            ModelKind::Vo2 => Self::vo2(),
        }
    }

    pub fn hr(kind: HrModelKind) -> Self {
        let (schedule, patience) = match kind {
            HrModelKind::Kalman => (
                LrSchedule::Plateau {
                    factor: 0.5,
                    patience: 10,
                    cooldown: 0,
                    min_lr: 0.0,
                },
                100,
            ),
            HrModelKind::Ode => (
                LrSchedule::Plateau {
                    factor: 0.2,
                    patience: 10,
                    cooldown: 3,
                    min_lr: 1e-6,
                },
                20,
            ),
        };
        Self {
            max_epochs: 300,
            batch_size: 32,
            window_len: 60,
            train_stride: 30,
            lr: 1e-3,
            optimizer: AdamConfig::adam(1e-5),
            schedule,
            clip: ClipRule::Fixed(1.0),
            early_stop_patience: patience,
            stop_metric: StopMetric::ValLoss,
            curriculum: false,
            alpha_dyn: 0.5,
            lambda_hr: 0.1,
            seed: 0,
        }
    }

    pub fn vo2() -> Self {
        Self {
            max_epochs: 300,
            batch_size: 32,
            window_len: 60,
            train_stride: 30,
            lr: 4e-3,
            optimizer: AdamConfig::adamw(1e-5),
            schedule: LrSchedule::CosineRestarts {
                t0: 10,
                t_mult: 2,
                eta_min: 1e-6,
            },
            clip: ClipRule::Adaptive,
            early_stop_patience: 50,
            stop_metric: StopMetric::ValMae,
            curriculum: true,
            alpha_dyn: 0.5,
            lambda_hr: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "max_epochs and batch_size must be positive".into(),
            ));
        }
        if self.window_len < 3 || self.train_stride == 0 || self.train_stride > self.window_len {
            return Err(TrainError::Config(format!(
                "need window_len >= 3 and 1 <= train_stride <= window_len, got {} / {}",
                self.window_len, self.train_stride
            )));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    fn weights(&self, epoch: usize) -> LossWeights {
        let mut w = if self.curriculum {
            curriculum(epoch)
        } else {
            LossWeights {
                w_base: 1.0,
                w_dynamic: 0.0,
                w_aux: 0.0,
                alpha_dyn: self.alpha_dyn,
                lambda_hr: self.lambda_hr,
            }
        };
        w.alpha_dyn = self.alpha_dyn;
        w.lambda_hr = self.lambda_hr;
        w
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub w_base: f64,
    pub w_dynamic: f64,
    pub w_aux: f64,
    pub clip: f64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation MAE in target units (bpm or ml/min).
    pub val_mae: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Standardized training windows; `target` holds the normalized HR or VO₂.
struct Batchable {
    x: Tensor,
    target: Vec<f64>,
    mask: Vec<f64>,
}

fn check_schema(sessions: &[FeatureSession]) -> Result<Vec<String>, TrainError> {
    let Some(first) = sessions.first() else {
        return Err(TrainError::Config("training split is empty".into()));
    };
    if sessions
        .iter()
        .any(|s| s.feature_names != first.feature_names)
    {
        return Err(TrainError::Config(
            "sessions disagree on feature columns".into(),
        ));
    }
    Ok(first.feature_names.clone())
}

/// HR windows that start on an observed sample.
pub fn hr_windows(
    fs: &FeatureSession,
    length: usize,
    stride: usize,
) -> Result<Vec<Window>, TrainError> {
    Ok(segment_windows(fs, length, stride)?
        .into_iter()
        .filter(|w| w.mask[0] > 0.0)
        .collect())
}

/// VO₂ windows whose every sample is observed.
pub fn vo2_windows(
    fs: &FeatureSession,
    length: usize,
    stride: usize,
) -> Result<Vec<Window>, TrainError> {
    if fs.vo2.is_none() {
        return Err(TrainError::Config(format!(
            "session `{}` has no VO2 target",
            fs.session_id
        )));
    }
    Ok(segment_windows(fs, length, stride)?
        .into_iter()
        .filter(|w| w.mask.iter().all(|m| *m > 0.0))
        .collect())
}

fn batchable(windows: Vec<Window>, target: &TargetStats, vo2: bool) -> Vec<Batchable> {
    windows
        .into_iter()
        .map(|w| {
            let raw = if vo2 {
                w.vo2.clone().unwrap()
            } else {
                w.hr.clone()
            };
            Batchable {
                x: w.x,
                target: raw.iter().map(|v| target.normalize(*v)).collect(),
                mask: w.mask,
            }
        })
        .collect()
}

struct Batch {
    steps: Vec<Tensor>,
    target: Tensor,
    mask: Tensor,
    first: Tensor,
}

fn stack(items: &[&Batchable]) -> Batch {
    let b = items.len();
    let (t_len, d) = items[0].x.dims2();
    let steps = (0..t_len)
        .map(|t| {
            let mut v = Vec::with_capacity(b * d);
            for w in items {
                v.extend_from_slice(&w.x.values()[t * d..(t + 1) * d]);
            }
            Tensor::matrix(b, d, v)
        })
        .collect();
    Batch {
        steps,
        target: Tensor::matrix(
            b,
            t_len,
            items
                .iter()
                .flat_map(|w| w.target.iter().copied())
                .collect(),
        ),
        mask: Tensor::matrix(
            b,
            t_len,
            items.iter().flat_map(|w| w.mask.iter().copied()).collect(),
        ),
        first: Tensor::matrix(b, 1, items.iter().map(|w| w.target[0]).collect()),
    }
}

/// Loss and the predicted `[B, T]` sequence (normalized) for one batch.
type BatchFn<'a> =
    dyn Fn(&mut Tape, &ParamVars, &Batch, &LossWeights) -> Result<(Var, Var), TrainError> + 'a;

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_loop(
    params: &mut ParamStore,
    tc: &TrainConfig,
    train: &[Batchable],
    val: &[Batchable],
    target_std: f64,
    batch_fn: &BatchFn<'_>,
) -> Result<TrainReport, TrainError> {
    if train.is_empty() {
        return Err(TrainError::Config("no usable training windows".into()));
    }
    let val = if val.is_empty() { train } else { val };
    let mut adam = Adam::new(tc.optimizer);
    let mut cosine = None;
    let mut plateau = None;
    match tc.schedule {
        LrSchedule::CosineRestarts {
            t0,
            t_mult,
            eta_min,
        } => {
            cosine = Some(CosineWarmRestarts::new(tc.lr, t0, t_mult, eta_min));
        }
        LrSchedule::Plateau {
            factor,
            patience,
            cooldown,
            min_lr,
        } => {
            plateau = Some(ReduceOnPlateau::new(
                tc.lr, factor, patience, cooldown, min_lr,
            ))
        }
    }
    let mut stopper = EarlyStopping::new(tc.early_stop_patience);
    let mut best_params = params.clone();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..tc.max_epochs {
        let lr = match (&cosine, &plateau) {
            (Some(c), _) => c.lr(),
            (_, Some(p)) => p.lr,
            _ => unreachable!(),
        };
        let weights = tc.weights(epoch);
        let clip = match tc.clip {
            ClipRule::Fixed(v) => v,
            ClipRule::Adaptive => clip_value(epoch),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, epoch as u64, 0));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut count) = (0.0, 0.0);
        for (bi, chunk) in order.chunks(tc.batch_size).enumerate() {
            let items: Vec<&Batchable> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = stack(&items);
            let mut tape = Tape::training(mix_seed(tc.seed, epoch as u64, bi as u64 + 1));
            let pv = params.bind(&mut tape);
            let (loss, _) = batch_fn(&mut tape, &pv, &batch, &weights)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(TrainError::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}"
                )));
            }
            tape.backward(loss)?;
            let mut grads = pv.grads(&tape);
            clip_grad_norm(&mut grads, clip);
            adam.step(params, &grads, lr);
            loss_sum += lv * items.len() as f64;
            count += items.len() as f64;
        }
        let train_loss = loss_sum / count;

        let (mut vl, mut vn, mut abs, mut obs) = (0.0, 0.0, 0.0, 0.0);
        let val_refs: Vec<&Batchable> = val.iter().collect();
        for chunk in val_refs.chunks(tc.batch_size) {
            let batch = stack(chunk);
            let mut tape = Tape::new();
            let pv = params.bind(&mut tape);
            let (loss, pred) = batch_fn(&mut tape, &pv, &batch, &weights)?;
            vl += tape.value(loss).item() * chunk.len() as f64;
            vn += chunk.len() as f64;
            for ((p, y), m) in tape
                .value(pred)
                .values()
                .iter()
                .zip(batch.target.values())
                .zip(batch.mask.values())
            {
                abs += m * (p - y).abs();
                obs += m;
            }
        }
        let val_loss = vl / vn;
        let val_mae = abs / obs.max(1.0) * target_std;
        report.records.push(EpochRecord {
            epoch,
            w_base: weights.w_base,
            w_dynamic: weights.w_dynamic,
            w_aux: if tc.curriculum {
                weights.w_aux
            } else {
                weights.lambda_hr
            },
            clip,
            lr,
            train_loss,
            val_loss,
            val_mae,
        });
        let score = match tc.stop_metric {
            StopMetric::ValLoss => val_loss,
            StopMetric::ValMae => val_mae,
        };
        if stopper.observe(epoch, score) {
            best_params = params.clone();
        }
        if let Some(c) = cosine.as_mut() {
            c.step();
        }
        if let Some(p) = plateau.as_mut() {
            p.step(val_loss);
        }
        if stopper.should_stop() {
            break;
        }
    }
    report.best_epoch = stopper.best_epoch.unwrap_or(0);
    *params = best_params;
    Ok(report)
}

/// Trains an HR model in standard mode (every window anchored on its first
/// observed HR). `val` may be empty, in which case the training windows
/// double as validation.
pub fn fit_hr(
    config: HrConfig,
    train: &[FeatureSession],
    val: &[FeatureSession],
    tc: &TrainConfig,
) -> Result<(HrModel, TrainReport), TrainError> {
    tc.validate()?;
    config.validate()?;
    let names = check_schema(train)?;
    if config.backbone.input_dim != names.len() {
        return Err(TrainError::Config(format!(
            "model expects {} features, sessions have {}",
            config.backbone.input_dim,
            names.len()
        )));
    }
    let features = Standardizer::fit(train.iter())?;
    let target = TargetStats::fit(train.iter().map(|s| (s.hr.as_slice(), s.mask.as_slice())))?;
    let windows =
        |sessions: &[FeatureSession], stride: usize| -> Result<Vec<Batchable>, TrainError> {
            let mut out = Vec::new();
            for s in sessions {
                let z = features.apply(s);
                out.extend(batchable(
                    hr_windows(&z, tc.window_len, stride)?,
                    &target,
                    false,
                ));
            }
            Ok(out)
        };
    let train_w = windows(train, tc.train_stride)?;
    let val_w = windows(val, tc.window_len)?;
    let bounds = HrBounds::new(&config, &target);
    let mut params = config.init_params(tc.seed);
    let cfg = config.clone();
    let batch_fn = move |tape: &mut Tape, pv: &ParamVars, b: &Batch, w: &LossWeights| {
        let steps: Vec<Var> = b.steps.iter().map(|s| tape.constant(s.clone())).collect();
        let init = HrInit {
            h0: b.first.clone(),
            hdot0: None,
        };
        let f = hr_forward(tape, &cfg, pv, &steps, &init, bounds, None)?;
        let loss = hr_total_loss(tape, f.pred, &b.target, &b.mask, f.mu, f.sigma, w.lambda_hr)?;
        Ok((loss, f.pred))
    };
    let report = run_loop(&mut params, tc, &train_w, &val_w, target.std, &batch_fn)?;
    Ok((
        HrModel {
            config,
            params,
            features,
            target,
            feature_names: names,
        },
        report,
    ))
}

/// Trains the VO₂ model on fully observed windows, each started from its
/// true first value.
pub fn fit_vo2(
    config: Vo2Config,
    train: &[FeatureSession],
    val: &[FeatureSession],
    tc: &TrainConfig,
) -> Result<(Vo2Model, TrainReport), TrainError> {
    tc.validate()?;
    config.validate()?;
    let names = check_schema(train)?;
    if config.backbone.input_dim != names.len() {
        return Err(TrainError::Config(format!(
            "model expects {} features, sessions have {}",
            config.backbone.input_dim,
            names.len()
        )));
    }
    let features = Standardizer::fit(train.iter())?;
    let mut series = Vec::new();
    for s in train {
        let Some(v) = &s.vo2 else {
            return Err(TrainError::Config(format!(
                "session `{}` has no VO2 target",
                s.session_id
            )));
        };
        series.push((v.as_slice(), s.mask.as_slice()));
    }
    let target = TargetStats::fit(series)?;
    let windows =
        |sessions: &[FeatureSession], stride: usize| -> Result<Vec<Batchable>, TrainError> {
            let mut out = Vec::new();
            for s in sessions {
                let z = features.apply(s);
                out.extend(batchable(
                    vo2_windows(&z, tc.window_len, stride)?,
                    &target,
                    true,
                ));
            }
            Ok(out)
        };
    let train_w = windows(train, tc.train_stride)?;
    let val_w = windows(val, tc.window_len)?;
    let delta_floor = config.delta_floor_mlmin / target.std;
    let mut params = config.init_params(tc.seed);
    let cfg = config.clone();
    let batch_fn = move |tape: &mut Tape, pv: &ParamVars, b: &Batch, w: &LossWeights| {
        let steps: Vec<Var> = b.steps.iter().map(|s| tape.constant(s.clone())).collect();
        let out = vo2_forward(tape, &cfg, pv, &steps, Some(&b.first), delta_floor)?;
        let base = masked_mae(tape, out.y_seq, &b.target, &b.mask)?;
        let mut loss = tape.scale(base, w.w_base);
        if w.w_dynamic > 0.0 {
            let d = dynamic_loss(tape, out.y_seq, &b.target, w.alpha_dyn)?;
            let d = tape.scale(d, w.w_dynamic);
            loss = tape.add(loss, d);
        }
        if w.w_aux > 0.0 {
            let a = aux_loss_vo2(tape, &out, &b.target)?;
            let a = tape.scale(a, w.w_aux);
            loss = tape.add(loss, a);
        }
        Ok((loss, out.y_seq))
    };
    let report = run_loop(&mut params, tc, &train_w, &val_w, target.std, &batch_fn)?;
    Ok((
        Vo2Model {
            config,
            params,
            features,
            target,
            feature_names: names,
        },
        report,
    ))
}
