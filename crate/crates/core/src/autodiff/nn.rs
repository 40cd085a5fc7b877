use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore, ParamVars, Tape, Tensor, Var};

/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTransform {
    Identity,
    Softplus,
    Sigmoid,
}

/// Dense network: LeakyReLU between layers, dropout after each hidden
/// activation, and an optional squashing transform on the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub output_transform: OutputTransform,
}

impl MlpSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        dropout_rate: f64,
        output_transform: OutputTransform,
    ) -> Self {
        assert!(
            layer_widths.len() >= 2,
            "an MLP needs input and output widths"
        );
        assert!(
            layer_widths.iter().all(|w| *w > 0),
            "MLP widths must be positive"
        );
        assert!(
            (0.0..1.0).contains(&dropout_rate),
            "dropout rate must be in [0, 1)"
        );
        Self {
            layer_widths,
            dropout_rate,
            output_transform,
        }
    }

    /// `input → hidden → output` with LeakyReLU and the given dropout.
    pub fn two_layer(
        input: usize,
        hidden: usize,
        output: usize,
        dropout_rate: f64,
        out: OutputTransform,
    ) -> Self {
        Self::new(vec![input, hidden, output], dropout_rate, out)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Uniform `±1/√fan_in` initialization of every layer.
    pub fn init(&self, prefix: &str, store: &mut ParamStore, rng: &mut impl Rng) {
        for (i, w) in self.layer_widths.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            store.insert_uniform(format!("{prefix}.l{i}.weight"), &[w[0], w[1]], bound, rng);
            store.insert_uniform(format!("{prefix}.l{i}.bias"), &[w[1]], bound, rng);
        }
    }
}

/// Runs `input: [B, D_in]` through the network described by `spec`, whose
/// parameters live under `prefix`.
pub fn mlp_forward(
    tape: &mut Tape,
    spec: &MlpSpec,
    params: &ParamVars,
    prefix: &str,
    input: Var,
) -> Result<Var, AutodiffError> {
    let (_, d_in) = tape.value(input).dims2();
    if d_in != spec.input_dim() {
        return Err(AutodiffError::Shape {
            op: "mlp_forward",
            left: tape.value(input).shape().to_vec(),
            right: vec![spec.input_dim(), spec.layer_widths[1]],
        });
    }
    let n_layers = spec.layer_widths.len() - 1;
    let mut h = input;
    for i in 0..n_layers {
        let w = params.get(&format!("{prefix}.l{i}.weight"))?;
        let b = params.get(&format!("{prefix}.l{i}.bias"))?;
        let wd = tape.value(w).dims2();
        if wd != (spec.layer_widths[i], spec.layer_widths[i + 1]) {
            return Err(AutodiffError::Shape {
                op: "mlp_forward",
                left: vec![spec.layer_widths[i], spec.layer_widths[i + 1]],
                right: vec![wd.0, wd.1],
            });
        }
        h = tape.affine(h, w, b);
        if i + 1 < n_layers {
            h = tape.leaky_relu(h, LEAKY_SLOPE);
            h = tape.dropout(h, spec.dropout_rate);
        }
    }
    Ok(match spec.output_transform {
        OutputTransform::Identity => h,
        OutputTransform::Softplus => tape.softplus(h),
        OutputTransform::Sigmoid => tape.sigmoid(h),
    })
}

/// A named MLP head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub spec: MlpSpec,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, spec: MlpSpec) -> Self {
        Self {
            prefix: prefix.into(),
            spec,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.spec.init(&self.prefix, store, rng);
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        input: Var,
    ) -> Result<Var, AutodiffError> {
        mlp_forward(tape, &self.spec, params, &self.prefix, input)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
}

impl GruSpec {
    pub fn num_directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of each per-step output state.
    pub fn output_dim(&self) -> usize {
        self.hidden_dim * self.num_directions()
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.output_dim()
        }
    }

    fn dir_name(d: usize) -> &'static str {
        if d == 0 {
            "fwd"
        } else {
            "bwd"
        }
    }

    /// Gate weights `[in, 3H]` / `[H, 3H]` in (reset, update, candidate) order.
    pub fn init(&self, prefix: &str, store: &mut ParamStore, rng: &mut impl Rng) {
        let h = self.hidden_dim;
        for layer in 0..self.num_layers {
            let d_in = self.layer_input(layer);
            for d in 0..self.num_directions() {
                let p = format!("{prefix}.l{layer}.{}", Self::dir_name(d));
                let bh = 1.0 / (h as f64).sqrt();
                store.insert_uniform(
                    format!("{p}.w_ih"),
                    &[d_in, 3 * h],
                    1.0 / (d_in as f64).sqrt(),
                    rng,
                );
                store.insert_uniform(format!("{p}.w_hh"), &[h, 3 * h], bh, rng);
                store.insert_uniform(format!("{p}.b_ih"), &[3 * h], bh, rng);
                store.insert_uniform(format!("{p}.b_hh"), &[3 * h], bh, rng);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct GruOutput {
    /// Per-step top-layer states, `[B, D_h']` each.
    pub states: Vec<Var>,
    /// Forward state at `T−1` concatenated with the backward state at `0`
    /// (just the last state when unidirectional).
    pub final_state: Var,
    /// Last hidden state of every layer and direction, layer-major; feeds
    /// the next window as carry.
    pub carry: Vec<Var>,
}

struct CellVars {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
}

fn gru_cell(tape: &mut Tape, c: &CellVars, x: Var, h: Var, hd: usize) -> Var {
    let xw = tape.affine(x, c.w_ih, c.b_ih);
    let hw = tape.affine(h, c.w_hh, c.b_hh);
    let x_rz = tape.slice_cols(xw, 0, 2 * hd);
    let h_rz = tape.slice_cols(hw, 0, 2 * hd);
    let pre_rz = tape.add(x_rz, h_rz);
    let rz = tape.sigmoid(pre_rz);
    let r = tape.slice_cols(rz, 0, hd);
    let z = tape.slice_cols(rz, hd, hd);
    let x_n = tape.slice_cols(xw, 2 * hd, hd);
    let h_n = tape.slice_cols(hw, 2 * hd, hd);
    let rh = tape.mul(r, h_n);
    let pre_n = tape.add(x_n, rh);
    let n = tape.tanh(pre_n);
    // h' = (1 − z)·n + z·h = n + z·(h − n)
    let diff = tape.sub(h, n);
    let zd = tape.mul(z, diff);
    tape.add(n, zd)
}

/// Multi-layer (bi)GRU over a time-major sequence of `[B, D_in]` steps.
///
/// `h0`, when given, holds one `[B, H]` state per layer and direction in
/// the same order as [`GruOutput::carry`]; otherwise all start at zero.
pub fn gru_forward(
    tape: &mut Tape,
    spec: &GruSpec,
    params: &ParamVars,
    prefix: &str,
    seq: &[Var],
    h0: Option<&[Var]>,
) -> Result<GruOutput, AutodiffError> {
    let Some(first) = seq.first() else {
        return Err(AutodiffError::EmptySequence);
    };
    let (batch, d_in) = tape.value(*first).dims2();
    if d_in != spec.input_dim {
        return Err(AutodiffError::Shape {
            op: "gru_forward",
            left: tape.value(*first).shape().to_vec(),
            right: vec![batch, spec.input_dim],
        });
    }
    let nd = spec.num_directions();
    if let Some(h0) = h0 {
        if h0.len() != spec.num_layers * nd {
            return Err(AutodiffError::Shape {
                op: "gru_forward(h0)",
                left: vec![h0.len()],
                right: vec![spec.num_layers * nd],
            });
        }
    }
    let hd = spec.hidden_dim;
    let t_len = seq.len();
    let mut inputs: Vec<Var> = seq.to_vec();
    let mut carry = Vec::with_capacity(spec.num_layers * nd);
    let mut last_dirs: Vec<Vec<Var>> = Vec::new();

    for layer in 0..spec.num_layers {
        let mut dir_states: Vec<Vec<Var>> = Vec::with_capacity(nd);
        for d in 0..nd {
            let p = format!("{prefix}.l{layer}.{}", GruSpec::dir_name(d));
            let cell = CellVars {
                w_ih: params.get(&format!("{p}.w_ih"))?,
                w_hh: params.get(&format!("{p}.w_hh"))?,
                b_ih: params.get(&format!("{p}.b_ih"))?,
                b_hh: params.get(&format!("{p}.b_hh"))?,
            };
            let mut h = match h0 {
                Some(h0) => h0[layer * nd + d],
                None => tape.constant(Tensor::zeros(&[batch, hd])),
            };
            let mut states = vec![h; t_len];
            let order: Box<dyn Iterator<Item = usize>> = if d == 0 {
                Box::new(0..t_len)
            } else {
                Box::new((0..t_len).rev())
            };
            for t in order {
                h = gru_cell(tape, &cell, inputs[t], h, hd);
                states[t] = h;
            }
            carry.push(h);
            dir_states.push(states);
        }
        inputs = if nd == 1 {
            dir_states[0].clone()
        } else {
            (0..t_len)
                .map(|t| tape.concat(&[dir_states[0][t], dir_states[1][t]]))
                .collect()
        };
        last_dirs = dir_states;
    }

    let final_state = if nd == 1 {
        last_dirs[0][t_len - 1]
    } else {
        tape.concat(&[last_dirs[0][t_len - 1], last_dirs[1][0]])
    };
    Ok(GruOutput {
        states: inputs,
        final_state,
        carry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![3, 3], 0.0, OutputTransform::Identity);
        let mut store = ParamStore::new(0);
        store.insert(
            "m.l0.weight",
            Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]),
        );
        store.insert("m.l0.bias", Tensor::zeros(&[3]));
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(1, 3, vec![1., 2., 3.]));
        let y = mlp_forward(&mut tape, &spec, &pv, "m", x).unwrap();
        assert_eq!(tape.value(y).values(), &[1., 2., 3.]);
    }

    #[test]
    fn softplus_at_zero_preactivation_is_ln2() {
        let spec = MlpSpec::two_layer(2, 4, 3, 0.0, OutputTransform::Softplus);
        let mut store = ParamStore::new(0);
        spec.init("m", &mut store, &mut ChaCha8Rng::seed_from_u64(1));
        store.zero_all();
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.3, -0.7]));
        let y = mlp_forward(&mut tape, &spec, &pv, "m", x).unwrap();
        for v in tape.value(y).values() {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_shape_error_names_both_shapes() {
        let spec = MlpSpec::two_layer(4, 4, 1, 0.0, OutputTransform::Identity);
        let mut store = ParamStore::new(0);
        spec.init("m", &mut store, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        let msg = mlp_forward(&mut tape, &spec, &pv, "m", x)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 4]"), "{msg}");
    }

    fn gru_store(spec: &GruSpec, seed: u64) -> ParamStore {
        let mut store = ParamStore::new(seed);
        spec.init("g", &mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        store
    }

    #[test]
    fn zero_gru_stays_at_zero() {
        let spec = GruSpec {
            input_dim: 3,
            hidden_dim: 4,
            num_layers: 2,
            bidirectional: true,
        };
        let mut store = gru_store(&spec, 3);
        store.zero_all();
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let seq: Vec<Var> = (0..5)
            .map(|t| {
                tape.constant(Tensor::matrix(
                    2,
                    3,
                    vec![t as f64, 1.0, -2.0, 0.5, 0.1, 3.0],
                ))
            })
            .collect();
        let out = gru_forward(&mut tape, &spec, &pv, "g", &seq, None).unwrap();
        for s in &out.states {
            assert!(tape.value(*s).values().iter().all(|v| *v == 0.0));
        }
        assert_eq!(tape.value(out.final_state).shape(), &[2, 8]);
    }

    #[test]
    fn single_step_final_equals_state() {
        let spec = GruSpec {
            input_dim: 2,
            hidden_dim: 3,
            num_layers: 1,
            bidirectional: false,
        };
        let store = gru_store(&spec, 5);
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.4, -0.2]));
        let out = gru_forward(&mut tape, &spec, &pv, "g", &[x], None).unwrap();
        assert_eq!(tape.value(out.states[0]), tape.value(out.final_state));
    }

    #[test]
    fn empty_sequence_rejected() {
        let spec = GruSpec {
            input_dim: 2,
            hidden_dim: 3,
            num_layers: 1,
            bidirectional: false,
        };
        let store = gru_store(&spec, 5);
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        assert!(matches!(
            gru_forward(&mut tape, &spec, &pv, "g", &[], None),
            Err(AutodiffError::EmptySequence)
        ));
    }

    #[test]
    fn bigru_direction_symmetry() {
        let spec = GruSpec {
            input_dim: 2,
            hidden_dim: 3,
            num_layers: 1,
            bidirectional: true,
        };
        let mut store = gru_store(&spec, 9);
        // tie the backward cell to the forward one
        for w in ["w_ih", "w_hh", "b_ih", "b_hh"] {
            let t = store.get(&format!("g.l0.fwd.{w}")).unwrap().clone();
            store.insert(format!("g.l0.bwd.{w}"), t);
        }
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|t| vec![(t as f64 * 0.7).sin(), (t as f64).cos()])
            .collect();
        let run = |inputs: Vec<Vec<f64>>| {
            let mut tape = Tape::new();
            let pv = store.bind(&mut tape);
            let seq: Vec<Var> = inputs
                .into_iter()
                .map(|x| tape.constant(Tensor::matrix(1, 2, x)))
                .collect();
            let out = gru_forward(&mut tape, &spec, &pv, "g", &seq, None).unwrap();
            out.states
                .iter()
                .map(|s| tape.value(*s).values().to_vec())
                .collect::<Vec<_>>()
        };
        let fwd = run(xs.clone());
        let rev = run(xs.iter().rev().cloned().collect());
        for t in 0..6 {
            assert_eq!(&fwd[t][..3], &rev[5 - t][3..]);
            assert_eq!(&fwd[t][3..], &rev[5 - t][..3]);
        }
    }
}
