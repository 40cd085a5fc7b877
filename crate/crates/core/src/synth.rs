//! Seeded synthetic runners with first-order HR kinetics and two-component
//! VO₂ kinetics driven by an intensity profile `u(t) ∈ [0, 1]`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, IngestError, RawSession, SessionMeta, HR_CHANNEL, INPUT_CHANNELS};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Affine response of the running-dynamics channels to intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiomechCoeffs {
    pub speed_base_mps: f64,
    pub speed_gain_mps: f64,
    pub cadence_base_spm: f64,
    pub cadence_gain_spm: f64,
    pub oscillation_base_mm: f64,
    pub oscillation_gain_mm: f64,
    pub stance_base_pct: f64,
    pub stance_gain_pct: f64,
    pub step_base_mm: f64,
    pub step_gain_mm: f64,
    pub ratio_base: f64,
    pub ratio_gain: f64,
    /// Relative SD of the multiplicative channel noise.
    pub noise_frac: f64,
    /// Peak-to-mean altitude swing of the course.
    pub terrain_amp_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunnerProfile {
    pub runner_id: String,
    pub age_years: f64,
    pub sex: u8,
    pub height_m: f64,
    pub weight_kg: f64,
    pub hr_rest: f64,
    pub hr_max: f64,
    pub tau_hr: f64,
    /// ml/min.
    pub vo2_base: f64,
    /// ml/min per unit intensity.
    pub vo2_gain: f64,
    pub tau_fast: f64,
    pub tau_slow: f64,
    pub slow_fraction: f64,
    pub noise_sd_hr: f64,
    pub noise_sd_vo2: f64,
    pub biomech: BiomechCoeffs,
}

impl RunnerProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| {
            Err(SynthError::Parameter(format!(
                "runner {}: {m}",
                self.runner_id
            )))
        };
        if self.hr_rest >= self.hr_max {
            return bad("hr_rest must be below hr_max");
        }
        if self.tau_hr <= 0.0 || self.tau_fast <= 0.0 || self.tau_slow <= 0.0 {
            return bad("time constants must be positive");
        }
        if !(0.0..=1.0).contains(&self.slow_fraction) {
            return bad("slow_fraction must lie in [0, 1]");
        }
        if self.noise_sd_hr < 0.0 || self.noise_sd_vo2 < 0.0 {
            return bad("noise SDs must be nonnegative");
        }
        Ok(())
    }

    /// Draws a runner with moderate between-runner spread.
    pub fn sample(runner_id: impl Into<String>, rng: &mut impl Rng) -> Self {
        let sex = rng.gen_range(0..2u8);
        let height_m = if sex == 0 {
            rng.gen_range(1.60..1.76)
        } else {
            rng.gen_range(1.70..1.90)
        };
        let weight_kg = height_m * height_m * rng.gen_range(19.5..23.0);
        let mass_fit = rng.gen_range(0.9..1.1);
        let speed_base = rng.gen_range(2.2..2.7);
        let step_base = rng.gen_range(750.0..900.0) * height_m / 1.75;
        Self {
            runner_id: runner_id.into(),
            age_years: rng.gen_range(20.0..50.0f64).round(),
            sex,
            height_m,
            weight_kg,
            hr_rest: rng.gen_range(55.0..65.0),
            hr_max: rng.gen_range(185.0..195.0),
            tau_hr: rng.gen_range(20.0..40.0),
            vo2_base: 5.0 * weight_kg,
            vo2_gain: 40.0 * mass_fit * weight_kg,
            tau_fast: rng.gen_range(15.0..30.0),
            tau_slow: rng.gen_range(60.0..120.0),
            slow_fraction: rng.gen_range(0.1..0.25),
            noise_sd_hr: 1.5,
            noise_sd_vo2: 1.5 * weight_kg,
            biomech: BiomechCoeffs {
                speed_base_mps: speed_base,
                speed_gain_mps: rng.gen_range(2.6..3.2),
                cadence_base_spm: rng.gen_range(76.0..82.0),
                cadence_gain_spm: rng.gen_range(10.0..16.0),
                oscillation_base_mm: rng.gen_range(85.0..100.0),
                oscillation_gain_mm: rng.gen_range(-12.0..-4.0),
                stance_base_pct: rng.gen_range(34.0..38.0),
                stance_gain_pct: rng.gen_range(-7.0..-4.0),
                step_base_mm: step_base,
                step_gain_mm: rng.gen_range(700.0..900.0),
                ratio_base: rng.gen_range(8.5..10.0),
                ratio_gain: rng.gen_range(-2.5..-1.0),
                noise_frac: 0.01,
                terrain_amp_m: rng.gen_range(2.0..10.0),
            },
        }
    }

    /// Same runner with every noise source and the terrain switched off.
    pub fn noise_free(mut self) -> Self {
        self.noise_sd_hr = 0.0;
        self.noise_sd_vo2 = 0.0;
        self.biomech.noise_frac = 0.0;
        self.biomech.terrain_amp_m = 0.0;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Steady,
    Intervals,
    Incremental,
    Ramp,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 4] =
        [Self::Steady, Self::Intervals, Self::Incremental, Self::Ramp];
}

impl FromStr for ProfileKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "steady" => Ok(Self::Steady),
            "intervals" => Ok(Self::Intervals),
            "incremental" => Ok(Self::Incremental),
            "ramp" => Ok(Self::Ramp),
            other => Err(SynthError::Parameter(format!(
                "unknown profile kind `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityProfile {
    pub kind: ProfileKind,
    pub duration_s: usize,
    pub u: Vec<f64>,
}

pub const MIN_DURATION_S: usize = 120;

impl IntensityProfile {
    pub fn steady(level: f64, duration_s: usize) -> Self {
        Self {
            kind: ProfileKind::Steady,
            duration_s,
            u: vec![level.clamp(0.0, 1.0); duration_s],
        }
    }

    /// Stepwise-increasing plateaus of equal length separated by 10 s dips.
    pub fn incremental(duration_s: usize, steps: usize, start: f64, end: f64) -> Self {
        let steps = steps.max(1);
        let plateau = duration_s.div_ceil(steps);
        let u = (0..duration_s)
            .map(|t| {
                let k = (t / plateau).min(steps - 1);
                let in_step = t - k * plateau;
                if k > 0 && in_step < 10 {
                    0.05
                } else {
                    start + (end - start) * k as f64 / (steps - 1).max(1) as f64
                }
            })
            .collect();
        Self {
            kind: ProfileKind::Incremental,
            duration_s,
            u,
        }
    }
}

/// Seeded intensity profile. Every kind opens with an easy warm-up.
pub fn gen_profile(
    kind: ProfileKind,
    duration_s: usize,
    seed: u64,
) -> Result<IntensityProfile, SynthError> {
    if duration_s < MIN_DURATION_S {
        return Err(SynthError::Parameter(format!(
            "profile duration must be at least {MIN_DURATION_S} s, got {duration_s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warmup = 60.min(duration_s / 4);
    let easy = rng.gen_range(0.15..0.3);
    let mut u = vec![easy; duration_s];
    match kind {
        ProfileKind::Steady => {
            let level = rng.gen_range(0.45..0.8);
            u[warmup..].iter_mut().for_each(|v| *v = level);
        }
        ProfileKind::Intervals => {
            let mut t = warmup;
            let mut work = true;
            while t < duration_s {
                let (len, level) = if work {
                    (rng.gen_range(40..150), rng.gen_range(0.7..0.95))
                } else {
                    (rng.gen_range(40..120), rng.gen_range(0.15..0.4))
                };
                let end = (t + len).min(duration_s);
                u[t..end].iter_mut().for_each(|v| *v = level);
                t = end;
                work = !work;
            }
        }
        ProfileKind::Incremental => {
            let steps = ((duration_s - warmup) / 150).clamp(3, 8);
            let inc = IntensityProfile::incremental(
                duration_s - warmup,
                steps,
                rng.gen_range(0.35..0.5),
                rng.gen_range(0.85..1.0),
            );
            u[warmup..].copy_from_slice(&inc.u);
        }
        ProfileKind::Ramp => {
            let top = rng.gen_range(0.8..1.0);
            let n = (duration_s - warmup) as f64;
            for (i, v) in u[warmup..].iter_mut().enumerate() {
                *v = easy + (top - easy) * i as f64 / n;
            }
        }
    }
    Ok(IntensityProfile {
        kind,
        duration_s,
        u,
    })
}

fn gaussian(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).unwrap().sample(rng)
    }
}

/// HR demand at intensity `u`.
pub fn hr_demand(runner: &RunnerProfile, u: f64) -> f64 {
    runner.hr_rest + (runner.hr_max - runner.hr_rest) * u
}

/// Noise-free HR: Euler steps of `dh/dt = (demand(u) − h)/τ` from rest.
pub fn simulate_hr_clean(profile: &IntensityProfile, runner: &RunnerProfile) -> Vec<f64> {
    let mut h = runner.hr_rest;
    profile
        .u
        .iter()
        .map(|&u| {
            let out = h;
            h += (hr_demand(runner, u) - h) / runner.tau_hr;
            out
        })
        .collect()
}

/// Observed HR: clean trajectory plus Gaussian noise, clipped to
/// `[0.9·hr_rest, hr_max]`.
pub fn simulate_hr(profile: &IntensityProfile, runner: &RunnerProfile, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_hr_clean(profile, runner)
        .into_iter()
        .map(|h| {
            (h + gaussian(&mut rng, runner.noise_sd_hr)).clamp(0.9 * runner.hr_rest, runner.hr_max)
        })
        .collect()
}

/// Noise-free two-component VO₂ in ml/min; both components chase
/// `vo2_gain·u` with their own time constant (Euler, from baseline).
pub fn simulate_vo2_clean(profile: &IntensityProfile, runner: &RunnerProfile) -> Vec<f64> {
    let (mut fast, mut slow) = (0.0, 0.0);
    let w = runner.slow_fraction;
    profile
        .u
        .iter()
        .map(|&u| {
            let out = runner.vo2_base + (1.0 - w) * fast + w * slow;
            let target = runner.vo2_gain * u;
            fast += (target - fast) / runner.tau_fast;
            slow += (target - slow) / runner.tau_slow;
            out
        })
        .collect()
}

/// 1 Hz VO₂ with Gaussian noise, floored at zero.
pub fn simulate_vo2(profile: &IntensityProfile, runner: &RunnerProfile, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_vo2_clean(profile, runner)
        .into_iter()
        .map(|v| (v + gaussian(&mut rng, runner.noise_sd_vo2)).max(0.0))
        .collect()
}

/// Breath-by-breath samples at 0.3–0.5 Hz drawn from a 1 Hz clean series.
pub fn sample_breaths(clean: &[f64], runner: &RunnerProfile, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut t: f64 = 0.0;
    while (t as usize) < clean.len() {
        let v = clean[t as usize] + gaussian(&mut rng, runner.noise_sd_vo2);
        out.push(((t * 100.0).round() / 100.0, v.max(0.0)));
        t += rng.gen_range(2.0..3.3);
    }
    out
}

/// Running-dynamics channels as affine functions of intensity with
/// multiplicative noise, plus a smooth course altitude profile.
pub fn simulate_biomech(
    profile: &IntensityProfile,
    runner: &RunnerProfile,
    seed: u64,
) -> BTreeMap<String, Vec<Option<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &runner.biomech;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let period = rng.gen_range(300.0..900.0);
    let base_alt = rng.gen_range(20.0..400.0f64).round();
    let mut cols: BTreeMap<String, Vec<Option<f64>>> = INPUT_CHANNELS
        .iter()
        .map(|c| (c.to_string(), Vec::with_capacity(profile.duration_s)))
        .collect();
    for (t, &u) in profile.u.iter().enumerate() {
        let mut noisy = |v: f64| v * (1.0 + gaussian(&mut rng, b.noise_frac));
        let vals = [
            ("pace_mps", noisy(b.speed_base_mps + b.speed_gain_mps * u)),
            (
                "cadence_spm",
                noisy(b.cadence_base_spm + b.cadence_gain_spm * u),
            ),
            (
                "vertical_oscillation_mm",
                noisy(b.oscillation_base_mm + b.oscillation_gain_mm * u),
            ),
            (
                "stance_time_pct",
                noisy(b.stance_base_pct + b.stance_gain_pct * u),
            ),
            ("vertical_ratio", noisy(b.ratio_base + b.ratio_gain * u)),
            ("step_length_mm", noisy(b.step_base_mm + b.step_gain_mm * u)),
            (
                "altitude_m",
                base_alt
                    + b.terrain_amp_m * (std::f64::consts::TAU * t as f64 / period + phase).sin(),
            ),
        ];
        for (name, v) in vals {
            cols.get_mut(name).unwrap().push(Some(round_to(v, 4)));
        }
    }
    cols
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

/// One complete session: running dynamics, HR at 1 Hz and breath-level VO₂.
pub fn simulate_session(
    runner: &RunnerProfile,
    profile: &IntensityProfile,
    session_id: impl Into<String>,
    seed: u64,
) -> Result<RawSession, SynthError> {
    runner.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s_bio, s_hr, s_vo2) = (rng.gen(), rng.gen(), rng.gen());
    let mut channels = simulate_biomech(profile, runner, s_bio);
    let hr = simulate_hr(profile, runner, s_hr);
    channels.insert(
        HR_CHANNEL.to_string(),
        hr.into_iter().map(|h| Some(round_to(h, 2))).collect(),
    );
    let breath = sample_breaths(&simulate_vo2_clean(profile, runner), runner, s_vo2)
        .into_iter()
        .map(|(t, v)| (t, round_to(v, 2)))
        .collect();
    let raw = RawSession {
        meta: SessionMeta {
            runner_id: runner.runner_id.clone(),
            session_id: session_id.into(),
            age_years: runner.age_years,
            sex: runner.sex,
            height_m: round_to(runner.height_m, 3),
            weight_kg: round_to(runner.weight_kg, 1),
        },
        t: (0..profile.duration_s as i64).collect(),
        channels,
        breath: Some(breath),
    };
    raw.validate()?;
    Ok(raw)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_runners: usize,
    pub sessions_per_runner: usize,
    pub min_duration_s: usize,
    pub max_duration_s: usize,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_runners: 10,
            sessions_per_runner: 8,
            min_duration_s: 600,
            max_duration_s: 1800,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cohort {
    pub runners: Vec<RunnerProfile>,
    pub sessions: Vec<RawSession>,
}

/// Seeded cohort. Session kinds rotate through all profile kinds so every
/// runner sees each kind when it has at least four sessions.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Cohort, SynthError> {
    if cfg.n_runners == 0 || cfg.sessions_per_runner == 0 {
        return Err(SynthError::Parameter(
            "cohort needs at least one runner and one session".into(),
        ));
    }
    if cfg.min_duration_s < MIN_DURATION_S || cfg.max_duration_s < cfg.min_duration_s {
        return Err(SynthError::Parameter(format!(
            "durations must satisfy {MIN_DURATION_S} <= min <= max, got {}..{}",
            cfg.min_duration_s, cfg.max_duration_s
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut runners = Vec::with_capacity(cfg.n_runners);
    let mut sessions = Vec::new();
    for r in 0..cfg.n_runners {
        let runner = RunnerProfile::sample(format!("r{r:02}"), &mut rng);
        let offset = rng.gen_range(0..ProfileKind::ALL.len());
        for s in 0..cfg.sessions_per_runner {
            let kind = ProfileKind::ALL[(offset + s) % ProfileKind::ALL.len()];
            let duration = rng.gen_range(cfg.min_duration_s..=cfg.max_duration_s);
            let profile = gen_profile(kind, duration, rng.gen())?;
            sessions.push(simulate_session(
                &runner,
                &profile,
                format!("r{r:02}_s{s:02}"),
                rng.gen(),
            )?);
        }
        runners.push(runner);
    }
    Ok(Cohort { runners, sessions })
}

/// Writes every session in the ingest layout plus `runners.json` holding
/// the generating parameters.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let paths = cohort
        .sessions
        .iter()
        .map(|s| ingest::write_session(s, dir))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = dir.join("runners.json");
    let text = serde_json::to_string_pretty(&cohort.runners)? + "\n";
    std::fs::write(&manifest, text).map_err(|source| SynthError::Io {
        path: manifest,
        source,
    })?;
    Ok(paths)
}
