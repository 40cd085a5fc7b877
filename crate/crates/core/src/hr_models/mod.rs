//! Heart-rate predictors: a shared encoder + GRU backbone, per-window moment
//! heads for affine decoding, and either RK4-integrated latent dynamics or a
//! 2-D neural Kalman filter over `(g, ġ)`.
//!
//! All model arithmetic runs on HR standardized with dataset statistics;
//! [`HrModel::predict_session`] converts back to bpm.

mod backbone;
mod kalman;
mod ode;

pub use backbone::{
    backbone_forward, BackboneOut, BackboneSpec, Head, ENCODER_PREFIX, TEMPORAL_PREFIX,
};
pub use kalman::{kalman_hr_step, kalman_hr_update, KalmanHeads, KalmanHrState, VELOCITY_DAMPING};
pub use ode::{ode_integrate, rk4_step};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, OutputTransform, ParamStore, ParamVars, Tape, Tensor, Var};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::ingest::{covering_spans, FeatureSession, IngestError, Standardizer, TargetStats};

#[derive(Debug, Error)]
pub enum HrError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("anchoring: {0}")]
    Anchor(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrModelKind {
    Ode,
    Kalman,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrPreset {
    /// Hidden 128, two GRU layers.
    Large,
    /// Hidden 64, three GRU layers.
    Small,
}

impl HrPreset {
    pub fn shape(self) -> (usize, usize) {
        match self {
            HrPreset::Large => (128, 2),
            HrPreset::Small => (64, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrConfig {
    pub kind: HrModelKind,
    pub backbone: BackboneSpec,
    pub head_hidden: usize,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    /// Floor added to the softplus SD head (standardized units).
    pub sigma_floor: f64,
    /// Floor added to the Kalman noise and covariance heads.
    pub noise_floor: f64,
    /// ODE step in seconds.
    pub dt: f64,
    /// Predict `ġ₀` from the window instead of starting at rest.
    pub predict_initial_velocity: bool,
}

impl HrConfig {
    pub fn new(kind: HrModelKind, input_dim: usize, hidden_dim: usize, num_layers: usize) -> Self {
        Self {
            kind,
            backbone: BackboneSpec {
                input_dim,
                hidden_dim,
                num_layers,
                bidirectional: false,
                dropout: 0.1,
            },
            head_hidden: hidden_dim,
            hr_min_bpm: 30.0,
            hr_max_bpm: 220.0,
            sigma_floor: 0.01,
            noise_floor: 1e-3,
            dt: 1.0,
            predict_initial_velocity: false,
        }
    }

    pub fn preset(kind: HrModelKind, preset: HrPreset, input_dim: usize) -> Self {
        let (h, l) = preset.shape();
        Self::new(kind, input_dim, h, l)
    }

    pub fn validate(&self) -> Result<(), HrError> {
        if self.hr_min_bpm >= self.hr_max_bpm {
            return Err(HrError::Config(format!(
                "hr_min_bpm {} must be below hr_max_bpm {}",
                self.hr_min_bpm, self.hr_max_bpm
            )));
        }
        if self.dt <= 0.0 {
            return Err(HrError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        let b = &self.backbone;
        if b.input_dim == 0 || b.hidden_dim == 0 || b.num_layers == 0 || self.head_hidden == 0 {
            return Err(HrError::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&b.dropout) {
            return Err(HrError::Config(format!(
                "dropout must be in [0, 1), got {}",
                b.dropout
            )));
        }
        Ok(())
    }

    fn head(&self, prefix: &str, input: usize, output: usize, out: OutputTransform) -> Head {
        Head::new(
            prefix,
            input,
            self.head_hidden,
            output,
            self.backbone.dropout,
            out,
        )
    }

    pub fn mu_head(&self) -> Head {
        self.head(
            "mu",
            self.backbone.state_dim(),
            1,
            OutputTransform::Identity,
        )
    }

    pub fn sigma_head(&self) -> Head {
        self.head(
            "sigma",
            self.backbone.state_dim(),
            1,
            OutputTransform::Softplus,
        )
    }

    pub fn demand_head(&self) -> Head {
        self.head(
            "demand",
            self.backbone.state_dim(),
            1,
            OutputTransform::Identity,
        )
    }

    pub fn kalman_heads(&self) -> KalmanHeads {
        let d = self.backbone.state_dim();
        KalmanHeads {
            transition: self.head("tr", d + 2, 2, OutputTransform::Identity),
            observation: self.head("obs", d, 1, OutputTransform::Identity),
            gain: self.head("gain", 3, 1, OutputTransform::Sigmoid),
            process_noise: self.head("noise", d, 2, OutputTransform::Softplus),
            measurement_noise: self.head("meas", d, 1, OutputTransform::Softplus),
            initial_cov: self.head("p0", d, 2, OutputTransform::Softplus),
            initial_velocity: self
                .predict_initial_velocity
                .then(|| self.head("v0", d, 1, OutputTransform::Identity)),
            floor: self.noise_floor,
        }
    }

    /// Fresh parameters, uniform `±1/√fan_in`, seeded.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        self.backbone.init(&mut store, &mut rng);
        self.mu_head().init(&mut store, &mut rng);
        self.sigma_head().init(&mut store, &mut rng);
        match self.kind {
            HrModelKind::Ode => self.demand_head().init(&mut store, &mut rng),
            HrModelKind::Kalman => self.kalman_heads().init(&mut store, &mut rng),
        }
        store
    }
}

/// HR limits in standardized units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HrBounds {
    pub lo: f64,
    pub hi: f64,
}

impl HrBounds {
    pub fn new(cfg: &HrConfig, target: &TargetStats) -> Self {
        Self {
            lo: target.normalize(cfg.hr_min_bpm),
            hi: target.normalize(cfg.hr_max_bpm),
        }
    }
}

/// Window start condition in standardized HR units, `[B, 1]` each.
#[derive(Clone, Debug)]
pub struct HrInit {
    pub h0: Tensor,
    /// HR velocity carried from the previous window (Kalman only).
    pub hdot0: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct HrForward {
    /// Decoded standardized HR, `[B, T]`.
    pub pred: Var,
    /// Latent `g_t`, one `[B, 1]` per step.
    pub latent: Vec<Var>,
    pub mu: Var,
    pub sigma: Var,
    /// Per-window latent bounds `(lo, hi)`, `[B, 1]` each.
    pub latent_bounds: (Var, Var),
    /// Kalman states after each update (empty for the ODE model).
    pub kalman_states: Vec<KalmanHrState>,
    /// Decoded state one step past the window: the next window's anchor in
    /// generative mode.
    pub next_h: Var,
    pub next_hdot: Option<Var>,
    pub gru_carry: Vec<Var>,
}

/// `ĥ = σ̂·g + μ̂`, per batch row.
pub fn decode_hr(tape: &mut Tape, g: Var, mu: Var, sigma: Var) -> Var {
    let sg = tape.mul(g, sigma);
    tape.add(sg, mu)
}

/// `(h − μ̂)/σ̂`, the inverse of [`decode_hr`].
pub fn encode_hr(tape: &mut Tape, h: Var, mu: Var, sigma: Var) -> Var {
    let c = tape.sub(h, mu);
    tape.div(c, sigma)
}

fn const_col(tape: &mut Tape, batch: usize, v: f64) -> Var {
    tape.constant(Tensor::full(&[batch, 1], v))
}

/// Full window rollout. `steps` are standardized `[B, D]` features.
pub fn hr_forward(
    tape: &mut Tape,
    cfg: &HrConfig,
    params: &ParamVars,
    steps: &[Var],
    init: &HrInit,
    bounds: HrBounds,
    gru_carry: Option<&[Var]>,
) -> Result<HrForward, HrError> {
    let bb = backbone_forward(tape, &cfg.backbone, params, steps, gru_carry)?;
    let batch = tape.value(bb.final_state).dims2().0;
    if init.h0.dims2() != (batch, 1) {
        return Err(HrError::Anchor(format!(
            "anchor shape {:?} does not match batch {batch}",
            init.h0.shape()
        )));
    }
    let mu = cfg.mu_head().forward(tape, params, bb.final_state)?;
    let sigma = cfg
        .sigma_head()
        .floored(tape, params, bb.final_state, cfg.sigma_floor)?;
    let lo_h = const_col(tape, batch, bounds.lo);
    let hi_h = const_col(tape, batch, bounds.hi);
    let lo = encode_hr(tape, lo_h, mu, sigma);
    let hi = encode_hr(tape, hi_h, mu, sigma);
    let h0 = tape.constant(init.h0.clone());
    let g0 = encode_hr(tape, h0, mu, sigma);
    let g0 = tape.clamp(g0, lo, hi)?;

    let t_len = steps.len();
    let mut latent = Vec::with_capacity(t_len);
    latent.push(g0);
    let mut kalman_states = Vec::new();
    let (g_next, gdot_next) = match cfg.kind {
        HrModelKind::Ode => {
            let head = cfg.demand_head();
            let mut g = g0;
            for (t, s) in bb.states.iter().enumerate() {
                let d = head.forward(tape, params, *s)?;
                let stepped = rk4_step(tape, g, d, cfg.dt);
                g = tape.clamp(stepped, lo, hi)?;
                if t + 1 < t_len {
                    latent.push(g);
                }
            }
            (g, None)
        }
        HrModelKind::Kalman => {
            let heads = cfg.kalman_heads();
            let gdot0 = match (&init.hdot0, &heads.initial_velocity) {
                (Some(v), _) => {
                    let v = tape.constant(v.clone());
                    tape.div(v, sigma)
                }
                (None, Some(h)) => h.forward(tape, params, bb.final_state)?,
                (None, None) => const_col(tape, batch, 0.0),
            };
            let p0 = heads
                .initial_cov
                .floored(tape, params, bb.final_state, heads.floor)?;
            let mut state = KalmanHrState::initial(g0, gdot0, p0);
            for (t, s) in bb.states.iter().enumerate() {
                state = kalman_hr_step(tape, &heads, params, &state, *s, lo, hi)?;
                kalman_states.push(state);
                if t + 1 < t_len {
                    latent.push(state.g);
                }
            }
            let hdot = tape.mul(state.gdot, sigma);
            (state.g, Some(hdot))
        }
    };
    let decoded: Vec<Var> = latent
        .iter()
        .map(|g| decode_hr(tape, *g, mu, sigma))
        .collect();
    let pred = tape.concat(&decoded);
    let next_h = decode_hr(tape, g_next, mu, sigma);
    Ok(HrForward {
        pred,
        latent,
        mu,
        sigma,
        latent_bounds: (lo, hi),
        kalman_states,
        next_h,
        next_hdot: gdot_next,
        gru_carry: bb.carry,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrMode {
    /// Every window is anchored on its own first observed HR.
    Standard,
    /// Only the first second of the session is observed; later windows
    /// start from the model's own carried state.
    Generative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrPredictOptions {
    pub window_len: usize,
    /// Feed each window's final GRU state into the next window.
    pub carry_hidden: bool,
}

impl Default for HrPredictOptions {
    fn default() -> Self {
        Self {
            window_len: 60,
            carry_hidden: false,
        }
    }
}

/// Trained HR model with its input and target normalisation.
#[derive(Clone, Debug)]
pub struct HrModel {
    pub config: HrConfig,
    pub params: ParamStore,
    pub features: Standardizer,
    pub target: TargetStats,
    pub feature_names: Vec<String>,
}

pub const HR_CHECKPOINT_KIND: &str = "hr";

/// `[1, D]` step tensors of a standardized session slice.
pub(crate) fn step_tensors(fs: &FeatureSession, start: usize, len: usize) -> Vec<Tensor> {
    (start..start + len)
        .map(|i| Tensor::matrix(1, fs.dim(), fs.row(i).to_vec()))
        .collect()
}

impl HrModel {
    pub fn bounds(&self) -> HrBounds {
        HrBounds::new(&self.config, &self.target)
    }

    /// Predicted HR in bpm for every second of `fs` (raw, unstandardized
    /// features). Windows of `opts.window_len` tile the session; the last
    /// may be shorter.
    pub fn predict_session(
        &self,
        fs: &FeatureSession,
        mode: HrMode,
        opts: HrPredictOptions,
    ) -> Result<Vec<f64>, HrError> {
        if fs.is_empty() {
            return Err(HrError::Anchor(format!(
                "session `{}` is empty",
                fs.session_id
            )));
        }
        if fs.feature_names != self.feature_names {
            return Err(HrError::Config(format!(
                "session `{}` features do not match the model schema",
                fs.session_id
            )));
        }
        let z = self.features.apply(fs);
        let bounds = self.bounds();
        let mut out = Vec::with_capacity(fs.len());
        let mut carry_h: Option<f64> = None;
        let mut carry_hdot: Option<f64> = None;
        let mut gru_state: Option<Vec<Tensor>> = None;
        for (start, len) in covering_spans(fs.len(), opts.window_len) {
            let h0 = match (mode, carry_h) {
                (HrMode::Generative, Some(h)) => h,
                _ => {
                    if fs.mask[start] == 0.0 {
                        return Err(HrError::Anchor(format!(
                            "session `{}` has no observed HR at second {start}",
                            fs.session_id
                        )));
                    }
                    self.target.normalize(fs.hr[start])
                }
            };
            let hdot0 = match mode {
                HrMode::Generative => carry_hdot.map(|v| Tensor::matrix(1, 1, vec![v])),
                HrMode::Standard => None,
            };
            let mut tape = Tape::new();
            let pv = self.params.bind(&mut tape);
            let steps: Vec<Var> = step_tensors(&z, start, len)
                .into_iter()
                .map(|t| tape.constant(t))
                .collect();
            let carry_vars: Option<Vec<Var>> = gru_state
                .as_ref()
                .map(|c| c.iter().map(|t| tape.constant(t.clone())).collect());
            let init = HrInit {
                h0: Tensor::matrix(1, 1, vec![h0]),
                hdot0,
            };
            let f = hr_forward(
                &mut tape,
                &self.config,
                &pv,
                &steps,
                &init,
                bounds,
                carry_vars.as_deref(),
            )?;
            out.extend(
                tape.value(f.pred)
                    .values()
                    .iter()
                    .map(|v| self.target.denormalize(*v)),
            );
            carry_h = Some(tape.value(f.next_h).item());
            carry_hdot = f.next_hdot.map(|v| tape.value(v).item());
            if opts.carry_hidden {
                gru_state = Some(f.gru_carry.iter().map(|v| tape.value(*v).clone()).collect());
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<HrConfig>, HrError> {
        Ok(Checkpoint::new(
            HR_CHECKPOINT_KIND,
            self.config.clone(),
            self.feature_names.clone(),
            self.features.clone(),
            self.target,
            &self.params,
        )?)
    }

    pub fn from_checkpoint(ck: Checkpoint<HrConfig>) -> Result<Self, HrError> {
        ck.expect_kind(HR_CHECKPOINT_KIND)?;
        let params = ck.params()?;
        ck.config.validate()?;
        Ok(Self {
            config: ck.config,
            params,
            features: ck.features,
            target: ck.target,
            feature_names: ck.feature_names,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HrError> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, HrError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
