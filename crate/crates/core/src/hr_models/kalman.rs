use rand::Rng;

use super::Head;
use crate::autodiff::{AutodiffError, ParamStore, ParamVars, Tape, Var};

/// Damping applied to the velocity correction.
pub const VELOCITY_DAMPING: f64 = 0.5;
/// Gain is kept inside `[ε, 1 − ε]` so the covariance stays positive even
/// when the sigmoid saturates in floating point.
pub const GAIN_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct KalmanHeads {
    /// `f_tr(s_t, g, ġ) → (Δg, Δġ)`.
    pub transition: Head,
    /// `f_obs(s_t) → g` observation.
    pub observation: Head,
    /// `f_gain(P⁺, R) → k ∈ (0, 1)`.
    pub gain: Head,
    /// Diagonal process noise `Q`.
    pub process_noise: Head,
    /// Scalar measurement noise `R`.
    pub measurement_noise: Head,
    /// Initial diagonal covariance from the window summary.
    pub initial_cov: Head,
    pub initial_velocity: Option<Head>,
    pub floor: f64,
}

impl KalmanHeads {
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for h in [
            &self.transition,
            &self.observation,
            &self.gain,
            &self.process_noise,
            &self.measurement_noise,
            &self.initial_cov,
        ] {
            h.init(store, rng);
        }
        if let Some(h) = &self.initial_velocity {
            h.init(store, rng);
        }
    }
}

/// Latent `(g, ġ)` with diagonal covariance `P` (`[B, 2]`); the noise terms
/// and gain of the step that produced the state are kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct KalmanHrState {
    pub g: Var,
    pub gdot: Var,
    pub p: Var,
    pub q: Option<Var>,
    pub r: Option<Var>,
    pub gain: Option<Var>,
    /// `P + Q` before the update.
    pub p_pred: Option<Var>,
}

impl KalmanHrState {
    pub fn initial(g: Var, gdot: Var, p: Var) -> Self {
        Self {
            g,
            gdot,
            p,
            q: None,
            r: None,
            gain: None,
            p_pred: None,
        }
    }
}

/// Measurement update given the predicted state, the gain `k` and an
/// observation of `g`:
/// `g' = g⁺ + kν`, `ġ' = ġ⁺ + γkν`, `P' = P⁺ ⊙ (1 − k, 1 − γk)`.
pub fn kalman_hr_update(
    tape: &mut Tape,
    g_pred: Var,
    gdot_pred: Var,
    p_pred: Var,
    k: Var,
    obs: Var,
) -> (Var, Var, Var) {
    let nu = tape.sub(obs, g_pred);
    let knu = tape.mul(k, nu);
    let g = tape.add(g_pred, knu);
    let vk = tape.scale(knu, VELOCITY_DAMPING);
    let gdot = tape.add(gdot_pred, vk);
    let m_g = tape.one_minus(k);
    let gk = tape.scale(k, VELOCITY_DAMPING);
    let m_v = tape.one_minus(gk);
    let mult = tape.concat(&[m_g, m_v]);
    let p = tape.mul(p_pred, mult);
    (g, gdot, p)
}

/// Predict with the learned transition and noise heads, update against the
/// learned observation, then clip `g` to `[lo, hi]`.
pub fn kalman_hr_step(
    tape: &mut Tape,
    heads: &KalmanHeads,
    params: &ParamVars,
    state: &KalmanHrState,
    s_t: Var,
    lo: Var,
    hi: Var,
) -> Result<KalmanHrState, AutodiffError> {
    let tr_in = tape.concat(&[s_t, state.g, state.gdot]);
    let delta = heads.transition.forward(tape, params, tr_in)?;
    let dg = tape.slice_cols(delta, 0, 1);
    let dv = tape.slice_cols(delta, 1, 1);
    let g_pred = tape.add(state.g, dg);
    let gdot_pred = tape.add(state.gdot, dv);

    let q = heads
        .process_noise
        .floored(tape, params, s_t, heads.floor)?;
    let r = heads
        .measurement_noise
        .floored(tape, params, s_t, heads.floor)?;
    let p_pred = tape.add(state.p, q);
    let gain_in = tape.concat(&[p_pred, r]);
    let k = heads.gain.forward(tape, params, gain_in)?;
    let k = tape.clamp(k, GAIN_EPS, 1.0 - GAIN_EPS)?;
    let obs = heads.observation.forward(tape, params, s_t)?;

    let (g, gdot, p) = kalman_hr_update(tape, g_pred, gdot_pred, p_pred, k, obs);
    let g = tape.clamp(g, lo, hi)?;
    Ok(KalmanHrState {
        g,
        gdot,
        p,
        q: Some(q),
        r: Some(r),
        gain: Some(k),
        p_pred: Some(p_pred),
    })
}
