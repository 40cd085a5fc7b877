//! Sequence-to-sequence VO₂ estimation with a learned scalar Kalman filter.
//!
//! A biGRU summary of the window predicts the filter parameters (noise
//! variances, initial state, innovation limit). Each step then forms a
//! dynamics-adjusted neural measurement, a trend-aware prediction, a
//! clamped Kalman update, and over the first steps a blend with a direct
//! regression head. Everything runs on standardized VO₂.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, OutputTransform, ParamStore, ParamVars, Tape, Tensor, Var};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::hr_models::{backbone_forward, BackboneSpec, Head};
use crate::ingest::{covering_spans, FeatureSession, IngestError, Standardizer, TargetStats};

#[derive(Debug, Error)]
pub enum Vo2Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("sequence needs at least 2 steps, got {0}")]
    SequenceLength(usize),
    #[error("initialization: {0}")]
    Initialization(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vo2Preset {
    /// Hidden 128, four biGRU layers.
    #[serde(rename = "128-4")]
    H128L4,
    /// Hidden 256, two biGRU layers.
    #[serde(rename = "256-2")]
    H256L2,
}

impl Vo2Preset {
    pub fn shape(self) -> (usize, usize) {
        match self {
            Vo2Preset::H128L4 => (128, 4),
            Vo2Preset::H256L2 => (256, 2),
        }
    }
}

impl std::str::FromStr for Vo2Preset {
    type Err = Vo2Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "128-4" => Ok(Self::H128L4),
            "256-2" => Ok(Self::H256L2),
            other => Err(Vo2Error::Config(format!(
                "unknown preset `{other}` (expected 128-4 or 256-2)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vo2Config {
    pub backbone: BackboneSpec,
    pub head_hidden: usize,
    pub trend_weight: f64,
    pub blend_horizon: usize,
    pub blend_scale: f64,
    pub gain_eps: f64,
    /// Floor on `Q`, `R`, `P₀` and `σ` (standardized units).
    pub variance_floor: f64,
    /// Floor on the innovation limit in ml/min; divided by the target SD.
    pub delta_floor_mlmin: f64,
    /// Learned trend weight, blend weight and asymmetric innovation limits
    /// in place of the fixed schedules.
    pub learned_schedules: bool,
}

impl Vo2Config {
    pub fn new(input_dim: usize, hidden_dim: usize, num_layers: usize) -> Self {
        Self {
            backbone: BackboneSpec {
                input_dim,
                hidden_dim,
                num_layers,
                bidirectional: true,
                dropout: 0.1,
            },
            head_hidden: hidden_dim,
            trend_weight: 0.5,
            blend_horizon: 10,
            blend_scale: 0.6,
            gain_eps: 1e-6,
            variance_floor: 0.1,
            delta_floor_mlmin: 20.0,
            learned_schedules: false,
        }
    }

    pub fn preset(preset: Vo2Preset, input_dim: usize) -> Self {
        let (h, l) = preset.shape();
        Self::new(input_dim, h, l)
    }

    pub fn validate(&self) -> Result<(), Vo2Error> {
        let b = &self.backbone;
        if b.input_dim == 0 || b.hidden_dim == 0 || b.num_layers == 0 || self.head_hidden == 0 {
            return Err(Vo2Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&b.dropout) {
            return Err(Vo2Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                b.dropout
            )));
        }
        if self.variance_floor <= 0.0 || self.delta_floor_mlmin <= 0.0 {
            return Err(Vo2Error::Config("floors must be positive".into()));
        }
        Ok(())
    }

    fn head(&self, prefix: &str, input: usize, out: OutputTransform) -> Head {
        Head::new(
            prefix,
            input,
            self.head_hidden,
            1,
            self.backbone.dropout,
            out,
        )
    }

    pub fn heads(&self) -> Vo2Heads {
        let d = self.backbone.state_dim();
        let sp = OutputTransform::Softplus;
        let id = OutputTransform::Identity;
        let learned = self.learned_schedules.then(|| LearnedHeads {
            trend: self.head("trend", d, OutputTransform::Sigmoid),
            blend: self.head("blend", d, OutputTransform::Sigmoid),
            delta_min: self.head("delta_min", d, sp),
        });
        Vo2Heads {
            q: self.head("q", d, sp),
            r: self.head("r", d, sp),
            init: self.head("init", d, id),
            p0: self.head("p0", d, sp),
            mu: self.head("mu", d, id),
            sigma: self.head("sigma", d, sp),
            delta: self.head("delta", d, sp),
            observation: self.head("obs", d, id),
            dynamics: self.head("dyn", 2 * d, OutputTransform::Sigmoid),
            direct: self.head("direct", d, id),
            learned,
        }
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        self.backbone.init(&mut store, &mut rng);
        for h in self.heads().all() {
            h.init(&mut store, &mut rng);
        }
        store
    }

    /// Blend weight of the direct head at step `t`.
    pub fn blend_alpha(&self, t: usize) -> f64 {
        blend_alpha(t, self.blend_horizon, self.blend_scale)
    }
}

/// `scale·(1 − t/horizon)` for `t < horizon`, else 0.
pub fn blend_alpha(t: usize, horizon: usize, scale: f64) -> f64 {
    if t < horizon {
        scale * (1.0 - t as f64 / horizon as f64)
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct LearnedHeads {
    pub trend: Head,
    pub blend: Head,
    /// Lower innovation limit; the symmetric `delta` head gives the upper.
    pub delta_min: Head,
}

#[derive(Clone, Debug)]
pub struct Vo2Heads {
    pub q: Head,
    pub r: Head,
    pub init: Head,
    pub p0: Head,
    pub mu: Head,
    pub sigma: Head,
    pub delta: Head,
    pub observation: Head,
    pub dynamics: Head,
    pub direct: Head,
    pub learned: Option<LearnedHeads>,
}

impl Vo2Heads {
    pub fn all(&self) -> Vec<&Head> {
        let mut v = vec![
            &self.q,
            &self.r,
            &self.init,
            &self.p0,
            &self.mu,
            &self.sigma,
            &self.delta,
            &self.observation,
            &self.dynamics,
            &self.direct,
        ];
        if let Some(l) = &self.learned {
            v.extend([&l.trend, &l.blend, &l.delta_min]);
        }
        v
    }
}

/// Per-sequence filter parameters, `[B, 1]` each, standardized units.
#[derive(Clone, Copy, Debug)]
pub struct Vo2FilterParams {
    pub q: Var,
    pub r: Var,
    pub y0_init: Var,
    pub p0: Var,
    pub mu: Var,
    pub sigma: Var,
    /// Upper innovation limit (and lower, unless `delta_min` is set).
    pub delta_max: Var,
    pub delta_min: Option<Var>,
}

/// Parameter heads on the window summary. `delta_floor` is the innovation
/// floor in standardized units.
pub fn predict_params(
    tape: &mut Tape,
    cfg: &Vo2Config,
    params: &ParamVars,
    s_final: Var,
    delta_floor: f64,
) -> Result<Vo2FilterParams, AutodiffError> {
    let h = cfg.heads();
    let fl = cfg.variance_floor;
    Ok(Vo2FilterParams {
        q: h.q.floored(tape, params, s_final, fl)?,
        r: h.r.floored(tape, params, s_final, fl)?,
        y0_init: h.init.forward(tape, params, s_final)?,
        p0: h.p0.floored(tape, params, s_final, fl)?,
        mu: h.mu.forward(tape, params, s_final)?,
        sigma: h.sigma.floored(tape, params, s_final, fl)?,
        delta_max: h.delta.floored(tape, params, s_final, delta_floor)?,
        delta_min: match &h.learned {
            Some(l) => Some(l.delta_min.floored(tape, params, s_final, delta_floor)?),
            None => None,
        },
    })
}

/// Neural measurement `f_obs(s_t)`, scaled by the dynamics factor
/// `σ(f_dyn([s_t, s_{t−1}]))` when a previous state exists.
pub fn measure(
    tape: &mut Tape,
    heads: &Vo2Heads,
    params: &ParamVars,
    s_t: Var,
    s_prev: Option<Var>,
) -> Result<Var, AutodiffError> {
    let z = heads.observation.forward(tape, params, s_t)?;
    match s_prev {
        None => Ok(z),
        Some(p) => {
            let ctx = tape.concat(&[s_t, p]);
            let gamma = heads.dynamics.forward(tape, params, ctx)?;
            Ok(tape.mul(z, gamma))
        }
    }
}

/// Filter state after step `t`.
#[derive(Clone, Copy, Debug)]
pub struct Vo2State {
    pub y_hat: Var,
    pub y_prev: Option<Var>,
    pub p: Var,
    pub t: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum TrendWeight {
    Fixed(f64),
    Learned(Var),
}

/// Prediction for step `t + 1`: `ŷ_t + w·(ŷ_t − ŷ_{t−1})`, or `ŷ_t` when
/// there is no earlier estimate.
pub fn trend_predict(tape: &mut Tape, state: &Vo2State, weight: TrendWeight) -> Var {
    let Some(prev) = state.y_prev else {
        return state.y_hat;
    };
    let diff = tape.sub(state.y_hat, prev);
    let push = match weight {
        TrendWeight::Fixed(w) => tape.scale(diff, w),
        TrendWeight::Learned(w) => tape.mul(diff, w),
    };
    tape.add(state.y_hat, push)
}

/// Quantities of one filter step, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct Vo2StepDiag {
    pub y_pred: Var,
    pub p_prior: Var,
    pub gain: Var,
    pub innovation: Var,
    pub clamped_innovation: Var,
    /// Kalman estimate before blending.
    pub y_kf: Var,
}

/// `P⁻ = P + Q`, `K = P⁻/(P⁻ + R + ε)`, `ŷ = y_pred + K·clamp(z − y_pred)`,
/// `P = (1 − K)·P⁻`.
pub fn kalman_vo2_step(
    tape: &mut Tape,
    state: &Vo2State,
    z: Var,
    fp: &Vo2FilterParams,
    trend: TrendWeight,
    eps: f64,
) -> Result<(Vo2State, Vo2StepDiag), AutodiffError> {
    let y_pred = trend_predict(tape, state, trend);
    let p_prior = tape.add(state.p, fp.q);
    let pr = tape.add(p_prior, fp.r);
    let denom = tape.add_scalar(pr, eps);
    let gain = tape.div(p_prior, denom);
    let innovation = tape.sub(z, y_pred);
    let lo = tape.scale(fp.delta_min.unwrap_or(fp.delta_max), -1.0);
    let clamped = tape.clamp(innovation, lo, fp.delta_max)?;
    let step = tape.mul(gain, clamped);
    let y_kf = tape.add(y_pred, step);
    let keep = tape.one_minus(gain);
    let p = tape.mul(keep, p_prior);
    Ok((
        Vo2State {
            y_hat: y_kf,
            y_prev: Some(state.y_hat),
            p,
            t: state.t + 1,
        },
        Vo2StepDiag {
            y_pred,
            p_prior,
            gain,
            innovation,
            clamped_innovation: clamped,
            y_kf,
        },
    ))
}

/// `(1 − α)·y_kf + α·y_direct`; returns `y_kf` itself when `α = 0`.
pub fn blend(tape: &mut Tape, y_kf: Var, y_direct: Var, alpha: f64) -> Var {
    if alpha == 0.0 {
        return y_kf;
    }
    let a = tape.scale(y_kf, 1.0 - alpha);
    let b = tape.scale(y_direct, alpha);
    tape.add(a, b)
}

#[derive(Clone, Debug)]
pub struct Vo2Output {
    /// `[B, T]`, standardized.
    pub y_seq: Var,
    pub params: Vo2FilterParams,
    pub diag: Vec<Vo2StepDiag>,
    pub posterior_var: Vec<Var>,
}

/// Full window pass. `y0_true` (`[B, 1]`, standardized) replaces the
/// predicted initial state when given.
pub fn vo2_forward(
    tape: &mut Tape,
    cfg: &Vo2Config,
    params: &ParamVars,
    steps: &[Var],
    y0_true: Option<&Tensor>,
    delta_floor: f64,
) -> Result<Vo2Output, Vo2Error> {
    if steps.len() < 2 {
        return Err(Vo2Error::SequenceLength(steps.len()));
    }
    let heads = cfg.heads();
    let bb = backbone_forward(tape, &cfg.backbone, params, steps, None)?;
    let fp = predict_params(tape, cfg, params, bb.final_state, delta_floor)?;
    let y0 = match y0_true {
        Some(y) => tape.constant(y.clone()),
        None => fp.y0_init,
    };
    let mut state = Vo2State {
        y_hat: y0,
        y_prev: None,
        p: fp.p0,
        t: 0,
    };
    let mut ys = vec![y0];
    let mut diag = Vec::with_capacity(steps.len() - 1);
    let mut posterior_var = vec![fp.p0];
    for t in 1..steps.len() {
        let s_t = bb.states[t];
        let z = measure(tape, &heads, params, s_t, Some(bb.states[t - 1]))?;
        let trend = match &heads.learned {
            Some(l) => TrendWeight::Learned(l.trend.forward(tape, params, s_t)?),
            None => TrendWeight::Fixed(cfg.trend_weight),
        };
        let (next, d) = kalman_vo2_step(tape, &state, z, &fp, trend, cfg.gain_eps)?;
        let y = match &heads.learned {
            Some(l) => {
                let ramp = (1.0 - t as f64 / cfg.blend_horizon as f64).max(0.0);
                if ramp == 0.0 {
                    next.y_hat
                } else {
                    let beta = l.blend.forward(tape, params, s_t)?;
                    let beta = tape.scale(beta, ramp);
                    let direct = heads.direct.forward(tape, params, s_t)?;
                    let diff = tape.sub(direct, next.y_hat);
                    let mix = tape.mul(beta, diff);
                    tape.add(next.y_hat, mix)
                }
            }
            None => {
                let alpha = cfg.blend_alpha(t);
                if alpha == 0.0 {
                    next.y_hat
                } else {
                    let direct = heads.direct.forward(tape, params, s_t)?;
                    blend(tape, next.y_hat, direct, alpha)
                }
            }
        };
        state = Vo2State { y_hat: y, ..next };
        ys.push(y);
        diag.push(d);
        posterior_var.push(next.p);
    }
    let y_seq = tape.concat(&ys);
    Ok(Vo2Output {
        y_seq,
        params: fp,
        diag,
        posterior_var,
    })
}

#[derive(Clone, Debug)]
pub struct Vo2Model {
    pub config: Vo2Config,
    pub params: ParamStore,
    pub features: Standardizer,
    pub target: TargetStats,
    pub feature_names: Vec<String>,
}

pub const VO2_CHECKPOINT_KIND: &str = "vo2";

impl Vo2Model {
    /// Innovation floor in standardized units.
    pub fn delta_floor(&self) -> f64 {
        self.config.delta_floor_mlmin / self.target.std
    }

    /// Predicted VO₂ in ml/min for every second of `fs` (raw features).
    ///
    /// Only the first observed second of VO₂ is read: the first window
    /// starts there, and every later window starts from the previous
    /// window's last estimate.
    pub fn predict_session(
        &self,
        fs: &FeatureSession,
        window_len: usize,
    ) -> Result<Vec<f64>, Vo2Error> {
        if fs.feature_names != self.feature_names {
            return Err(Vo2Error::Config(format!(
                "session `{}` features do not match the model schema",
                fs.session_id
            )));
        }
        let y0 = match &fs.vo2 {
            Some(v) if !v.is_empty() && fs.mask[0] > 0.0 => v[0],
            _ => {
                return Err(Vo2Error::Initialization(format!(
                    "session `{}` has no VO2 observation at second 0",
                    fs.session_id
                )))
            }
        };
        let z = self.features.apply(fs);
        let mut carry = self.target.normalize(y0);
        let mut out = Vec::with_capacity(fs.len());
        for (start, len) in covering_spans(fs.len(), window_len) {
            if len < 2 {
                out.push(self.target.denormalize(carry));
                continue;
            }
            let mut tape = Tape::new();
            let pv = self.params.bind(&mut tape);
            let steps: Vec<Var> = crate::hr_models::step_tensors(&z, start, len)
                .into_iter()
                .map(|t| tape.constant(t))
                .collect();
            let y0 = Tensor::matrix(1, 1, vec![carry]);
            let o = vo2_forward(
                &mut tape,
                &self.config,
                &pv,
                &steps,
                Some(&y0),
                self.delta_floor(),
            )?;
            let ys = tape.value(o.y_seq).values();
            out.extend(ys.iter().map(|v| self.target.denormalize(*v)));
            carry = *ys.last().unwrap();
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<Vo2Config>, Vo2Error> {
        Ok(Checkpoint::new(
            VO2_CHECKPOINT_KIND,
            self.config.clone(),
            self.feature_names.clone(),
            self.features.clone(),
            self.target,
            &self.params,
        )?)
    }

    pub fn from_checkpoint(ck: Checkpoint<Vo2Config>) -> Result<Self, Vo2Error> {
        ck.expect_kind(VO2_CHECKPOINT_KIND)?;
        ck.config.validate()?;
        let params = ck.params()?;
        Ok(Self {
            config: ck.config,
            params,
            features: ck.features,
            target: ck.target,
            feature_names: ck.feature_names,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), Vo2Error> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, Vo2Error> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
