use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    gru_forward, mlp_forward, AutodiffError, GruSpec, MlpSpec, OutputTransform, ParamStore,
    ParamVars, Tape, Var,
};

/// Per-step encoder MLP followed by a (bi)GRU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
    pub dropout: f64,
}

pub const ENCODER_PREFIX: &str = "enc";
pub const TEMPORAL_PREFIX: &str = "temp";

impl BackboneSpec {
    pub fn encoder(&self) -> MlpSpec {
        MlpSpec::two_layer(
            self.input_dim,
            self.hidden_dim,
            self.hidden_dim,
            self.dropout,
            OutputTransform::Identity,
        )
    }

    pub fn gru(&self) -> GruSpec {
        GruSpec {
            input_dim: self.hidden_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            bidirectional: self.bidirectional,
        }
    }

    /// Width of each `s_t`.
    pub fn state_dim(&self) -> usize {
        self.gru().output_dim()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.encoder().init(ENCODER_PREFIX, store, rng);
        self.gru().init(TEMPORAL_PREFIX, store, rng);
    }
}

#[derive(Clone, Debug)]
pub struct BackboneOut {
    /// `s_t`, one `[B, state_dim]` per step.
    pub states: Vec<Var>,
    pub final_state: Var,
    /// GRU hidden states after the last step, for the next window.
    pub carry: Vec<Var>,
}

/// Encodes each `[B, D_in]` step and runs the GRU; `carry` seeds the GRU
/// (zeros when absent).
pub fn backbone_forward(
    tape: &mut Tape,
    spec: &BackboneSpec,
    params: &ParamVars,
    steps: &[Var],
    carry: Option<&[Var]>,
) -> Result<BackboneOut, AutodiffError> {
    let enc = spec.encoder();
    let encoded = steps
        .iter()
        .map(|x| mlp_forward(tape, &enc, params, ENCODER_PREFIX, *x))
        .collect::<Result<Vec<_>, _>>()?;
    let out = gru_forward(tape, &spec.gru(), params, TEMPORAL_PREFIX, &encoded, carry)?;
    Ok(BackboneOut {
        states: out.states,
        final_state: out.final_state,
        carry: out.carry,
    })
}

/// Two-layer head `input → hidden → output`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub prefix: String,
    pub spec: MlpSpec,
}

impl Head {
    pub fn new(
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        dropout: f64,
        out: OutputTransform,
    ) -> Self {
        Self {
            prefix: prefix.to_string(),
            spec: MlpSpec::two_layer(input, hidden, output, dropout, out),
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

    /// `softplus(MLP(input)) + floor`; the head must use a softplus output.
    pub fn floored(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        input: Var,
        floor: f64,
    ) -> Result<Var, AutodiffError> {
        debug_assert_eq!(self.spec.output_transform, OutputTransform::Softplus);
        let y = self.forward(tape, params, input)?;
        Ok(tape.add_scalar(y, floor))
    }
}
