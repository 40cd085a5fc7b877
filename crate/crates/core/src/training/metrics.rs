use serde::{Deserialize, Serialize};

use super::TrainError;

/// Lead, in samples, over which a change counts toward "transition".
pub const STABILITY_LEAD: usize = 5;
/// Change over [`STABILITY_LEAD`] samples above which a sample is a transition.
pub const STABILITY_THRESHOLD: f64 = 5.0;
/// Samples with `|true|` under this fraction of the session mean are left
/// out of MAPE.
pub const MAPE_FLOOR_FRAC: f64 = 0.01;

/// One session's aligned predictions; `mask` selects the scored samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSeries {
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    pub mask: Vec<f64>,
}

impl EvalSeries {
    pub fn new(pred: Vec<f64>, truth: Vec<f64>, mask: Vec<f64>) -> Result<Self, TrainError> {
        if pred.len() != truth.len() || truth.len() != mask.len() {
            return Err(TrainError::Alignment(format!(
                "pred {}, true {}, mask {} samples",
                pred.len(),
                truth.len(),
                mask.len()
            )));
        }
        Ok(Self { pred, truth, mask })
    }

    pub fn unmasked(pred: Vec<f64>, truth: Vec<f64>) -> Result<Self, TrainError> {
        let n = truth.len();
        Self::new(pred, truth, vec![1.0; n])
    }
}

/// MAE per stratum; `None` when the stratum is empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZoneMae {
    pub low: Option<f64>,
    pub medium: Option<f64>,
    pub high: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityMae {
    pub transition: Option<f64>,
    pub steady: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape_pct: f64,
    /// `None` when either series is constant.
    pub pearson_r: Option<f64>,
    /// `None` when the truth is constant.
    pub r2: Option<f64>,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub zones: ZoneMae,
    pub stability: StabilityMae,
}

#[derive(Default)]
struct Acc {
    n: f64,
    sum: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0.0).then(|| self.sum / self.n)
    }
}

/// Sorted-value tertile cut points `(t1, t2)` of `v`.
fn tertiles(v: &[f64]) -> (f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let at = |q: f64| s[((q * s.len() as f64).floor() as usize).min(s.len() - 1)];
    (at(1.0 / 3.0), at(2.0 / 3.0))
}

/// Whether sample `i` sits in a transition: the truth moves by more than the
/// threshold over the next [`STABILITY_LEAD`] samples (the previous ones at
/// the tail).
pub fn is_transition(truth: &[f64], i: usize) -> bool {
    let j = if i + STABILITY_LEAD < truth.len() {
        i + STABILITY_LEAD
    } else {
        i.saturating_sub(STABILITY_LEAD)
    };
    (truth[j] - truth[i]).abs() > STABILITY_THRESHOLD
}

/// Pooled metrics over every masked-in sample of `series`.
pub fn evaluate(series: &[EvalSeries]) -> Result<Metrics, TrainError> {
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    let mut ape = Acc::default();
    let mut zones = [Acc::default(), Acc::default(), Acc::default()];
    let mut stab = [Acc::default(), Acc::default()];
    for s in series {
        if s.pred.len() != s.truth.len() || s.truth.len() != s.mask.len() {
            return Err(TrainError::Alignment(format!(
                "pred {}, true {}, mask {} samples",
                s.pred.len(),
                s.truth.len(),
                s.mask.len()
            )));
        }
        let idx: Vec<usize> = (0..s.truth.len()).filter(|&i| s.mask[i] > 0.0).collect();
        if idx.is_empty() {
            continue;
        }
        let observed: Vec<f64> = idx.iter().map(|&i| s.truth[i]).collect();
        let session_mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let (t1, t2) = tertiles(&observed);
        for &i in &idx {
            let (p, y) = (s.pred[i], s.truth[i]);
            let e = (p - y).abs();
            if y != 0.0 && y.abs() >= MAPE_FLOOR_FRAC * session_mean.abs() {
                ape.push(e / y.abs());
            }
            let zone = if y <= t1 {
                0
            } else if y <= t2 {
                1
            } else {
                2
            };
            zones[zone].push(e);
            stab[usize::from(!is_transition(&s.truth, i))].push(e);
            pred.push(p);
            truth.push(y);
        }
    }
    if pred.is_empty() {
        return Err(TrainError::DegenerateMask);
    }
    let nf = pred.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / nf;
    let diffs: Vec<f64> = pred.iter().zip(&truth).map(|(p, y)| p - y).collect();
    let mae = diffs.iter().map(|d| d.abs()).sum::<f64>() / nf;
    let sse = diffs.iter().map(|d| d * d).sum::<f64>();
    let rmse = (sse / nf).sqrt();
    let mean_diff = mean(&diffs);
    let sd_diff = (diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / nf).sqrt();
    let (mp, mt) = (mean(&pred), mean(&truth));
    let spp: f64 = pred.iter().map(|p| (p - mp).powi(2)).sum();
    let stt: f64 = truth.iter().map(|y| (y - mt).powi(2)).sum();
    let spt: f64 = pred
        .iter()
        .zip(&truth)
        .map(|(p, y)| (p - mp) * (y - mt))
        .sum();
    let pearson_r = (spp > 0.0 && stt > 0.0).then(|| (spt / (spp * stt).sqrt()).clamp(-1.0, 1.0));
    let r2 = (stt > 0.0).then(|| 1.0 - sse / stt);
    let m = Metrics {
        n: pred.len(),
        mae,
        rmse,
        mape_pct: 100.0 * ape.mean().unwrap_or(0.0),
        pearson_r,
        r2,
        mean_diff,
        sd_diff,
        zones: ZoneMae {
            low: zones[0].mean(),
            medium: zones[1].mean(),
            high: zones[2].mean(),
        },
        stability: StabilityMae {
            transition: stab[0].mean(),
            steady: stab[1].mean(),
        },
    };
    assert!(
        m.rmse >= m.mae * (1.0 - 1e-12),
        "rmse {} below mae {}",
        m.rmse,
        m.mae
    );
    Ok(m)
}

/// Every sample predicted as the first observed value of the session.
pub fn persistence_baseline(truth: &[f64]) -> Vec<f64> {
    vec![truth.first().copied().unwrap_or(0.0); truth.len()]
}

/// Each window of `window_len` predicted as the mean of its observed truth
/// (an oracle level with no dynamics).
pub fn window_mean_baseline(truth: &[f64], mask: &[f64], window_len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(truth.len());
    for (y, m) in truth
        .chunks(window_len.max(1))
        .zip(mask.chunks(window_len.max(1)))
    {
        let n: f64 = m.iter().sum();
        let mean = if n > 0.0 {
            y.iter().zip(m).map(|(v, w)| v * w).sum::<f64>() / n
        } else {
            y.iter().sum::<f64>() / y.len() as f64
        };
        out.extend(std::iter::repeat(mean).take(y.len()));
    }
    out
}
