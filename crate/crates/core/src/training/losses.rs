use crate::autodiff::{Tape, Tensor, Var};
use crate::vo2_model::Vo2Output;

use super::TrainError;

/// Steepness of the sigmoid standing in for the sign of a predicted change.
pub const SIGN_SHARPNESS: f64 = 10.0;

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), TrainError> {
    if a != b {
        return Err(TrainError::Alignment(format!(
            "{op}: shapes {a:?} and {b:?} differ"
        )));
    }
    Ok(())
}

/// `Σ|p − y|·m / Σm`.
pub fn masked_mae(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    mask: &Tensor,
) -> Result<Var, TrainError> {
    check_same("masked_mae", tape.value(pred).shape(), target.shape())?;
    check_same("masked_mae", target.shape(), mask.shape())?;
    let total: f64 = mask.values().iter().sum();
    if total <= 0.0 {
        return Err(TrainError::DegenerateMask);
    }
    let y = tape.constant(target.clone());
    let m = tape.constant(mask.clone());
    let d = tape.sub(pred, y);
    let a = tape.abs(d);
    let am = tape.mul(a, m);
    let s = tape.sum(am);
    Ok(tape.scale(s, 1.0 / total))
}

/// Column differences `x[:, 1:] − x[:, :−1]` of a `[B, T]` tensor.
fn diff_var(tape: &mut Tape, x: Var, t_len: usize) -> Var {
    let hi = tape.slice_cols(x, 1, t_len - 1);
    let lo = tape.slice_cols(x, 0, t_len - 1);
    tape.sub(hi, lo)
}

fn diff_tensor(x: &Tensor) -> Tensor {
    let (b, t) = x.dims2();
    let v = x.values();
    let mut out = Vec::with_capacity(b * (t - 1));
    for r in 0..b {
        for c in 0..t - 1 {
            out.push(v[r * t + c + 1] - v[r * t + c]);
        }
    }
    Tensor::matrix(b, t - 1, out)
}

fn mean_abs_diff(tape: &mut Tape, a: Var, b: &Tensor) -> Var {
    let bv = tape.constant(b.clone());
    let d = tape.sub(a, bv);
    let ad = tape.abs(d);
    tape.mean(ad)
}

/// Shape-aware loss on `[B, T]` sequences:
/// `α·MAE + (1 − α)·(0.5·L_vel + 0.3·L_acc + 0.2·L_sign)`.
///
/// `L_sign` is the binary cross-entropy of `sigmoid(k·Δŷ)` against
/// `1{Δy > 0}`, computed from logits as `softplus(l) − y·l`.
pub fn dynamic_loss(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    alpha: f64,
) -> Result<Var, TrainError> {
    check_same("dynamic_loss", tape.value(pred).shape(), target.shape())?;
    let (_, t_len) = target.dims2();
    if t_len < 3 {
        return Err(TrainError::SequenceLength {
            needed: 3,
            got: t_len,
        });
    }
    let mae = mean_abs_diff(tape, pred, target);

    let dp = diff_var(tape, pred, t_len);
    let dy = diff_tensor(target);
    let vel = mean_abs_diff(tape, dp, &dy);

    let ddp = diff_var(tape, dp, t_len - 1);
    let ddy = diff_tensor(&dy);
    let acc = mean_abs_diff(tape, ddp, &ddy);

    let logits = tape.scale(dp, SIGN_SHARPNESS);
    let up = Tensor::new(
        dy.shape().to_vec(),
        dy.values()
            .iter()
            .map(|v| if *v > 0.0 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    let sp = tape.softplus(logits);
    let upv = tape.constant(up);
    let yl = tape.mul(upv, logits);
    let bce = tape.sub(sp, yl);
    let sign = tape.mean(bce);

    let v = tape.scale(vel, 0.5);
    let a = tape.scale(acc, 0.3);
    let s = tape.scale(sign, 0.2);
    let va = tape.add(v, a);
    let shape = tape.add(va, s);
    let shape = tape.scale(shape, 1.0 - alpha);
    let base = tape.scale(mae, alpha);
    Ok(tape.add(base, shape))
}

/// Nearest-rank percentile: the `⌈q·n⌉`-th smallest value (1-based).
pub fn nearest_rank(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Window mean, population SD and 95th-percentile absolute step of a series.
pub fn window_moments(y: &[f64]) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let steps: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    (mean, sd, nearest_rank(&steps, 0.95))
}

/// `|μ − μ_true| + |σ − σ_true| + 0.5·|Δmax − Δ_true|`, averaged over the batch.
pub fn aux_loss_vo2(tape: &mut Tape, out: &Vo2Output, target: &Tensor) -> Result<Var, TrainError> {
    let (b, t_len) = target.dims2();
    if t_len < 2 {
        return Err(TrainError::SequenceLength {
            needed: 2,
            got: t_len,
        });
    }
    check_same("aux_loss_vo2", tape.value(out.params.mu).shape(), &[b, 1])?;
    let mut mu = Vec::with_capacity(b);
    let mut sd = Vec::with_capacity(b);
    let mut dl = Vec::with_capacity(b);
    for row in target.values().chunks(t_len) {
        let (m, s, d) = window_moments(row);
        mu.push(m);
        sd.push(s);
        dl.push(d);
    }
    let terms = [
        (out.params.mu, mu, 1.0),
        (out.params.sigma, sd, 1.0),
        (out.params.delta_max, dl, 0.5),
    ];
    let mut total: Option<Var> = None;
    for (v, t, w) in terms {
        let tv = tape.constant(Tensor::matrix(b, 1, t));
        let d = tape.sub(v, tv);
        let a = tape.abs(d);
        let s = tape.sum(a);
        let s = tape.scale(s, w / b as f64);
        total = Some(match total {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    Ok(total.unwrap())
}

/// Masked mean and population SD of each row.
pub fn masked_row_moments(target: &Tensor, mask: &Tensor) -> Vec<(f64, f64)> {
    let (_, t_len) = target.dims2();
    target
        .values()
        .chunks(t_len)
        .zip(mask.values().chunks(t_len))
        .map(|(y, m)| {
            let n: f64 = m.iter().sum();
            if n == 0.0 {
                return (0.0, 0.0);
            }
            let mean = y.iter().zip(m).map(|(v, w)| v * w).sum::<f64>() / n;
            let var = y
                .iter()
                .zip(m)
                .map(|(v, w)| w * (v - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// `masked_mae + λ·mean_b(|μ̂ − μ_obs| + |σ̂ − σ_obs|)`. Rows with no
/// observed sample contribute no moment term.
pub fn hr_total_loss(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    mask: &Tensor,
    mu: Var,
    sigma: Var,
    lambda: f64,
) -> Result<Var, TrainError> {
    let base = masked_mae(tape, pred, target, mask)?;
    if lambda == 0.0 {
        return Ok(base);
    }
    let (b, t_len) = target.dims2();
    check_same("hr_total_loss", tape.value(mu).shape(), &[b, 1])?;
    let moments = masked_row_moments(target, mask);
    let present: Vec<f64> = mask
        .values()
        .chunks(t_len)
        .map(|m| if m.iter().any(|w| *w > 0.0) { 1.0 } else { 0.0 })
        .collect();
    let rows: f64 = present.iter().sum();
    let pv = tape.constant(Tensor::matrix(b, 1, present));
    let mut aux = None;
    for (v, t) in [
        (mu, moments.iter().map(|m| m.0).collect::<Vec<_>>()),
        (sigma, moments.iter().map(|m| m.1).collect()),
    ] {
        let tv = tape.constant(Tensor::matrix(b, 1, t));
        let d = tape.sub(v, tv);
        let a = tape.abs(d);
        let a = tape.mul(a, pv);
        let s = tape.sum(a);
        aux = Some(match aux {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    let aux = tape.scale(aux.unwrap(), lambda / rows);
    Ok(tape.add(base, aux))
}
