//! Plain-f64 re-implementation of the VO₂ model for a single sequence,
//! reading weights straight from the parameter store. Shares no code with
//! the tape implementation.

use physio_core::autodiff::ParamStore;
use physio_core::vo2_model::Vo2Config;

fn weights(store: &ParamStore, name: &str) -> (Vec<f64>, Vec<usize>) {
    let t = store.get(name).unwrap_or_else(|| panic!("missing {name}"));
    (t.values().to_vec(), t.shape().to_vec())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · W + b` with `W` stored row-major `[in, out]`.
fn dense(store: &ParamStore, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
    let (wv, ws) = weights(store, w);
    let (bv, _) = weights(store, b);
    let (n_in, n_out) = (ws[0], ws[1]);
    assert_eq!(x.len(), n_in);
    (0..n_out)
        .map(|j| bv[j] + (0..n_in).map(|i| x[i] * wv[i * n_out + j]).sum::<f64>())
        .collect()
}

enum Out {
    Id,
    Softplus,
    Sigmoid,
}

fn two_layer(store: &ParamStore, prefix: &str, x: &[f64], out: Out) -> Vec<f64> {
    let h: Vec<f64> = dense(
        store,
        &format!("{prefix}.l0.weight"),
        &format!("{prefix}.l0.bias"),
        x,
    )
    .into_iter()
    .map(|v| if v > 0.0 { v } else { 0.01 * v })
    .collect();
    let y = dense(
        store,
        &format!("{prefix}.l1.weight"),
        &format!("{prefix}.l1.bias"),
        &h,
    );
    y.into_iter()
        .map(|v| match out {
            Out::Id => v,
            Out::Softplus => softplus(v),
            Out::Sigmoid => sigmoid(v),
        })
        .collect()
}

fn scalar_head(store: &ParamStore, prefix: &str, x: &[f64], out: Out) -> f64 {
    two_layer(store, prefix, x, out)[0]
}

fn gru_cell(store: &ParamStore, p: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = h.len();
    let gx = dense(store, &format!("{p}.w_ih"), &format!("{p}.b_ih"), x);
    let gh = dense(store, &format!("{p}.w_hh"), &format!("{p}.b_hh"), h);
    (0..hd)
        .map(|j| {
            let r = sigmoid(gx[j] + gh[j]);
            let z = sigmoid(gx[hd + j] + gh[hd + j]);
            let n = (gx[2 * hd + j] + r * gh[2 * hd + j]).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

/// Returns the standardized output sequence.
pub fn oracle_forward(
    store: &ParamStore,
    cfg: &Vo2Config,
    xs: &[Vec<f64>],
    y0_true: Option<f64>,
    delta_floor: f64,
) -> Vec<f64> {
    let b = &cfg.backbone;
    let hd = b.hidden_dim;
    let t_len = xs.len();
    let mut layer_in: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| two_layer(store, "enc", x, Out::Id))
        .collect();
    let mut fwd_last = Vec::new();
    let mut bwd_first = Vec::new();
    for layer in 0..b.num_layers {
        let mut fwd = vec![vec![0.0; hd]; t_len];
        let mut h = vec![0.0; hd];
        for t in 0..t_len {
            h = gru_cell(store, &format!("temp.l{layer}.fwd"), &layer_in[t], &h);
            fwd[t] = h.clone();
        }
        let mut out = fwd.clone();
        if b.bidirectional {
            let mut bwd = vec![vec![0.0; hd]; t_len];
            let mut h = vec![0.0; hd];
            for t in (0..t_len).rev() {
                h = gru_cell(store, &format!("temp.l{layer}.bwd"), &layer_in[t], &h);
                bwd[t] = h.clone();
            }
            for t in 0..t_len {
                out[t].extend_from_slice(&bwd[t]);
            }
            bwd_first = bwd[0].clone();
        }
        fwd_last = fwd[t_len - 1].clone();
        layer_in = out;
    }
    let states = layer_in;
    let mut summary = fwd_last;
    summary.extend_from_slice(&bwd_first);

    let fl = cfg.variance_floor;
    let q = scalar_head(store, "q", &summary, Out::Softplus) + fl;
    let r = scalar_head(store, "r", &summary, Out::Softplus) + fl;
    let p0 = scalar_head(store, "p0", &summary, Out::Softplus) + fl;
    let dmax = scalar_head(store, "delta", &summary, Out::Softplus) + delta_floor;
    let dmin = if cfg.learned_schedules {
        scalar_head(store, "delta_min", &summary, Out::Softplus) + delta_floor
    } else {
        dmax
    };
    let y0 = y0_true.unwrap_or_else(|| scalar_head(store, "init", &summary, Out::Id));

    let mut ys = vec![y0];
    let mut p = p0;
    for t in 1..t_len {
        let mut ctx = states[t].clone();
        ctx.extend_from_slice(&states[t - 1]);
        let z = scalar_head(store, "obs", &states[t], Out::Id)
            * scalar_head(store, "dyn", &ctx, Out::Sigmoid);
        let w = if cfg.learned_schedules {
            scalar_head(store, "trend", &states[t], Out::Sigmoid)
        } else {
            cfg.trend_weight
        };
        let y_pred = if t == 1 {
            ys[0]
        } else {
            ys[t - 1] + w * (ys[t - 1] - ys[t - 2])
        };
        let p_prior = p + q;
        let k = p_prior / (p_prior + r + cfg.gain_eps);
        let nu = (z - y_pred).clamp(-dmin, dmax);
        let y_kf = y_pred + k * nu;
        p = (1.0 - k) * p_prior;
        let frac = 1.0 - t as f64 / cfg.blend_horizon as f64;
        let y = if frac > 0.0 {
            let direct = scalar_head(store, "direct", &states[t], Out::Id);
            let a = if cfg.learned_schedules {
                scalar_head(store, "blend", &states[t], Out::Sigmoid) * frac
            } else {
                cfg.blend_scale * frac
            };
            (1.0 - a) * y_kf + a * direct
        } else {
            y_kf
        };
        ys.push(y);
    }
    ys
}
