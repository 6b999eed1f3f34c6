//! Encoder–decoder forecaster with additive attention, its attention-free
//! variant, and the single-LSTM baseline.
//!
//! The encoder is a stack of bidirectional LSTM layers whose top-layer outputs
//! `h_j` are the annotations. A tanh bridge maps the final forward and
//! backward states of the top layer to the decoder's initial hidden state
//! (cell state zero). At decode step `i` the attention variant scores every
//! annotation against the previous decoder output,
//!
//! ```text
//! e_ij = v · tanh(W_s s_{i-1} + W_h h_j + b)
//! α_ij = softmax_j(e_ij)
//! c_i  = Σ_j α_ij h_j
//! ```
//!
//! feeds `concat(x_in, c_i)` to the decoder LSTM and reads the next scaled ILI
//! value out of `concat(s_i, c_i)`. The first decoder input is the ILI value of
//! the last observed week; later inputs are either the previous prediction or,
//! during training, the true previous value (see [`teacher_forcing_select`]).

mod baseline;
pub mod checkpoint;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{
    bidirectional_stack_forward, dense_forward, lstm_cell_forward, Activation, BiLstmParams, BiLstmVars, DenseParams,
    DenseVars, LstmParams, LstmState, LstmVars, Mode,
};

pub use baseline::simple_lstm_forecast;
pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, FORMAT_VERSION};

/// Index of the ILI channel within a feature row.
pub const ILI_CHANNEL: usize = 0;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SimpleLstm,
    #[serde(rename = "seq2seq")]
    Seq2Seq,
    #[serde(rename = "seq2seq_attention")]
    Seq2SeqAttention,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::SimpleLstm, ModelKind::Seq2Seq, ModelKind::Seq2SeqAttention];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SimpleLstm => "simple_lstm",
            ModelKind::Seq2Seq => "seq2seq",
            ModelKind::Seq2SeqAttention => "seq2seq_attention",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub in_len: usize,
    pub out_len: usize,
}

impl Default for Architecture {
    /// Three bidirectional 32-unit encoder layers, a 64-unit decoder, ten
    /// input weeks of (ILI, trends), four output weeks.
    fn default() -> Self {
        Architecture {
            kind: ModelKind::Seq2SeqAttention,
            feature_dim: 2,
            encoder_layers: 3,
            encoder_hidden: 32,
            decoder_hidden: 64,
            attention_dim: 64,
            in_len: 10,
            out_len: 4,
        }
    }
}

impl Architecture {
    pub fn with_kind(self, kind: ModelKind) -> Self {
        Architecture { kind, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("in_len", self.in_len),
            ("out_len", self.out_len),
        ];
        let mut named = positive.to_vec();
        if self.kind != ModelKind::SimpleLstm {
            named.extend([
                ("encoder_layers", self.encoder_layers),
                ("encoder_hidden", self.encoder_hidden),
            ]);
        }
        if self.kind == ModelKind::Seq2SeqAttention {
            named.push(("attention_dim", self.attention_dim));
        }
        for (name, value) in named {
            if value == 0 {
                return Err(Error::Config(format!("architecture.{name} must be positive")));
            }
        }
        if self.kind != ModelKind::SimpleLstm && self.decoder_hidden != 2 * self.encoder_hidden {
            return Err(Error::Config(format!(
                "decoder_hidden ({}) must equal 2 × encoder_hidden ({})",
                self.decoder_hidden, self.encoder_hidden
            )));
        }
        Ok(())
    }

    /// Width of each annotation `h_j`.
    pub fn annotation_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    fn decoder_input_dim(&self) -> usize {
        match self.kind {
            ModelKind::SimpleLstm => self.feature_dim,
            ModelKind::Seq2Seq => 1,
            ModelKind::Seq2SeqAttention => 1 + self.annotation_dim(),
        }
    }

    fn readout_input_dim(&self) -> usize {
        match self.kind {
            ModelKind::Seq2SeqAttention => self.decoder_hidden + self.annotation_dim(),
            _ => self.decoder_hidden,
        }
    }
}

/// Additive attention: the score body `a(·)` is a tanh dense layer over
/// `concat(s_{i-1}, h_j)`, reduced to a scalar by `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `W` is attention_dim × (decoder_hidden + annotation_dim); the first
    /// `decoder_hidden` columns act on the decoder state.
    pub score: DenseParams,
    pub v: Tensor,
}

impl AttentionParams {
    fn zeros(arch: &Architecture) -> Self {
        AttentionParams {
            score: DenseParams::zeros(
                arch.decoder_hidden + arch.annotation_dim(),
                arch.attention_dim,
                Activation::Tanh,
            ),
            v: Tensor::zeros(Shape::Vector(arch.attention_dim)),
        }
    }

    fn init(arch: &Architecture, rng: &mut dyn RngCore) -> Self {
        let score = DenseParams::init(
            arch.decoder_hidden + arch.annotation_dim(),
            arch.attention_dim,
            Activation::Tanh,
            rng,
        );
        let v = crate::layers::glorot(1, arch.attention_dim, rng).into_values();
        AttentionParams {
            score,
            v: Tensor::vector(v),
        }
    }

    fn bind(&self, tape: &Tape, leaves: &mut Vec<Var>, query_dim: usize) -> Result<AttentionVars> {
        let score = self.score.bind(tape, leaves);
        let v = tape.leaf(self.v.clone());
        leaves.push(v);
        let width = self.score.w.cols();
        Ok(AttentionVars {
            w_query: tape.columns(score.w, 0, query_dim)?,
            w_key: tape.columns(score.w, query_dim, width)?,
            b: score.b,
            v,
        })
    }
}

#[derive(Copy, Clone, Debug)]
pub struct AttentionVars {
    pub w_query: Var,
    pub w_key: Var,
    pub b: Var,
    pub v: Var,
}

/// All learnable tensors of one forecaster.
///
/// For [`ModelKind::SimpleLstm`] the encoder is empty, there is no bridge and
/// `decoder` is the single LSTM run over the input window.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub encoder: Vec<BiLstmParams>,
    pub bridge: Option<DenseParams>,
    pub decoder: LstmParams,
    pub attention: Option<AttentionParams>,
    pub readout: DenseParams,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let seq = arch.kind != ModelKind::SimpleLstm;
        let encoder = if seq {
            (0..arch.encoder_layers)
                .map(|l| {
                    let input = if l == 0 {
                        arch.feature_dim
                    } else {
                        arch.annotation_dim()
                    };
                    BiLstmParams::zeros(input, arch.encoder_hidden)
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(ModelParams {
            arch,
            encoder,
            bridge: seq.then(|| DenseParams::zeros(arch.annotation_dim(), arch.decoder_hidden, Activation::Tanh)),
            decoder: LstmParams::zeros(arch.decoder_input_dim(), arch.decoder_hidden),
            attention: (arch.kind == ModelKind::Seq2SeqAttention).then(|| AttentionParams::zeros(&arch)),
            readout: DenseParams::zeros(arch.readout_input_dim(), 1, Activation::Identity),
        })
    }

    pub fn init(arch: Architecture, rng: &mut dyn RngCore) -> Result<Self> {
        arch.validate()?;
        let seq = arch.kind != ModelKind::SimpleLstm;
        let encoder = if seq {
            (0..arch.encoder_layers)
                .map(|l| {
                    let input = if l == 0 {
                        arch.feature_dim
                    } else {
                        arch.annotation_dim()
                    };
                    BiLstmParams::init(input, arch.encoder_hidden, rng)
                })
                .collect()
        } else {
            Vec::new()
        };
        let bridge = if seq {
            Some(DenseParams::init(
                arch.annotation_dim(),
                arch.decoder_hidden,
                Activation::Tanh,
                rng,
            ))
        } else {
            None
        };
        let decoder = LstmParams::init(arch.decoder_input_dim(), arch.decoder_hidden, rng);
        let attention = if arch.kind == ModelKind::Seq2SeqAttention {
            Some(AttentionParams::init(&arch, rng))
        } else {
            None
        };
        let readout = DenseParams::init(arch.readout_input_dim(), 1, Activation::Identity, rng);
        Ok(ModelParams {
            arch,
            encoder,
            bridge,
            decoder,
            attention,
            readout,
        })
    }

    /// Every tensor with a dotted name, in a fixed order shared by
    /// [`ModelParams::tensors_mut`], [`ModelParams::bind`] and checkpoints.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.iter().enumerate() {
            for (dir, p) in [("forward", &layer.forward), ("backward", &layer.backward)] {
                for (name, t) in p.tensors() {
                    out.push((format!("encoder.{l}.{dir}.{name}"), t));
                }
            }
        }
        if let Some(bridge) = &self.bridge {
            for (name, t) in bridge.tensors() {
                out.push((format!("bridge.{name}"), t));
            }
        }
        for (name, t) in self.decoder.tensors() {
            out.push((format!("decoder.{name}"), t));
        }
        if let Some(att) = &self.attention {
            for (name, t) in att.score.tensors() {
                out.push((format!("attention.score.{name}"), t));
            }
            out.push(("attention.v".to_string(), &att.v));
        }
        for (name, t) in self.readout.tensors() {
            out.push((format!("readout.{name}"), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.encoder {
            out.extend(layer.forward.tensors_mut());
            out.extend(layer.backward.tensors_mut());
        }
        if let Some(bridge) = &mut self.bridge {
            out.extend(bridge.tensors_mut());
        }
        out.extend(self.decoder.tensors_mut());
        if let Some(att) = &mut self.attention {
            out.extend(att.score.tensors_mut());
            out.push(&mut att.v);
        }
        out.extend(self.readout.tensors_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records all parameters on `tape`. The returned leaves follow
    /// [`ModelParams::tensors`] order.
    pub fn bind(&self, tape: &Tape) -> Result<(ModelVars, Vec<Var>)> {
        let mut leaves = Vec::new();
        let encoder = self.encoder.iter().map(|l| l.bind(tape, &mut leaves)).collect();
        let bridge = self.bridge.as_ref().map(|b| b.bind(tape, &mut leaves));
        let decoder = self.decoder.bind(tape, &mut leaves);
        let attention = match &self.attention {
            Some(a) => Some(a.bind(tape, &mut leaves, self.arch.decoder_hidden)?),
            None => None,
        };
        let readout = self.readout.bind(tape, &mut leaves);
        Ok((
            ModelVars {
                arch: self.arch,
                encoder,
                bridge,
                decoder,
                attention,
                readout,
            },
            leaves,
        ))
    }
}

/// Tape handles for a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub arch: Architecture,
    pub encoder: Vec<BiLstmVars>,
    pub bridge: Option<DenseVars>,
    pub decoder: LstmVars,
    pub attention: Option<AttentionVars>,
    pub readout: DenseVars,
}

/// Four (or `horizon`) scaled ILI predictions with their attention maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub values: Vec<f64>,
    /// One length-T weight vector per decode step; empty for models without
    /// attention.
    pub attention_maps: Vec<Vec<f64>>,
}

/// Encoder output.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Annotations `h_j`, one per input step.
    pub annotations: Vec<Var>,
    /// Decoder initial state `s_0`.
    pub init: LstmState,
}

pub(crate) fn window_leaves(tape: &Tape, window: &[Vec<f64>], feature_dim: usize) -> Result<Vec<Var>> {
    if window.is_empty() {
        return Err(Error::Domain("empty input window".into()));
    }
    window
        .iter()
        .map(|row| {
            if row.len() != feature_dim {
                return Err(Error::Config(format!(
                    "window rows have {} features, model expects {feature_dim}",
                    row.len()
                )));
            }
            Ok(tape.leaf(Tensor::vector(row.clone())))
        })
        .collect()
}

/// Runs the bidirectional encoder and the bridge.
pub fn encode(tape: &Tape, window: &[Vec<f64>], vars: &ModelVars, mode: &mut Mode<'_>) -> Result<Encoded> {
    let bridge = vars
        .bridge
        .as_ref()
        .ok_or_else(|| Error::Config("model has no encoder".into()))?;
    let xs = window_leaves(tape, window, vars.arch.feature_dim)?;
    let stack = bidirectional_stack_forward(tape, &xs, &vars.encoder, mode)?;
    let summary = tape.concat(stack.final_forward.y, stack.final_backward.y)?;
    let y0 = dense_forward(tape, summary, bridge)?;
    let c0 = tape.leaf(Tensor::zeros(Shape::Vector(vars.arch.decoder_hidden)));
    Ok(Encoded {
        annotations: stack.outputs,
        init: LstmState { y: y0, c: c0 },
    })
}

/// Precomputed `W_h h_j + b` for every annotation.
struct AttentionKeys {
    keys: Vec<Var>,
}

impl AttentionKeys {
    fn new(tape: &Tape, annotations: &[Var], p: &AttentionVars) -> Result<Self> {
        let keys = annotations
            .iter()
            .map(|&h| tape.add(tape.matmul(p.w_key, h)?, p.b))
            .collect::<Result<_>>()?;
        Ok(AttentionKeys { keys })
    }

    fn weights(&self, tape: &Tape, s_prev: &LstmState, p: &AttentionVars) -> Result<Var> {
        let query = tape.matmul(p.w_query, s_prev.y)?;
        let scores = self
            .keys
            .iter()
            .map(|&k| tape.dot(p.v, tape.tanh(tape.add(query, k)?)))
            .collect::<Result<Vec<_>>>()?;
        tape.softmax(tape.concat_all(&scores)?)
    }
}

/// `α_j = softmax_j(v · tanh(W_s s_prev.y + W_h h_j + b))`.
pub fn attention_weights(tape: &Tape, s_prev: &LstmState, annotations: &[Var], p: &AttentionVars) -> Result<Var> {
    if annotations.is_empty() {
        return Err(Error::Domain("attention over zero annotations".into()));
    }
    AttentionKeys::new(tape, annotations, p)?.weights(tape, s_prev, p)
}

/// `c = Σ_j α_j h_j`.
pub fn context_vector(tape: &Tape, alpha: Var, annotations: &[Var]) -> Result<Var> {
    tape.weighted_sum(alpha, annotations)
}

/// Output of one decoder step.
#[derive(Copy, Clone, Debug)]
pub struct DecodeStep {
    /// Length-1 scaled ILI prediction.
    pub prediction: Var,
    pub state: LstmState,
    pub alpha: Option<Var>,
}

struct Decoder<'v> {
    vars: &'v ModelVars,
    annotations: Vec<Var>,
    keys: Option<AttentionKeys>,
}

impl<'v> Decoder<'v> {
    fn new(tape: &Tape, vars: &'v ModelVars, encoded: &Encoded) -> Result<Self> {
        let keys = match &vars.attention {
            Some(p) => Some(AttentionKeys::new(tape, &encoded.annotations, p)?),
            None => None,
        };
        Ok(Decoder {
            vars,
            annotations: encoded.annotations.clone(),
            keys,
        })
    }

    fn step(&self, tape: &Tape, x_in: Var, s_prev: &LstmState, mode: &mut Mode<'_>) -> Result<DecodeStep> {
        let (input, context, alpha) = match (&self.keys, &self.vars.attention) {
            (Some(keys), Some(p)) => {
                let alpha = keys.weights(tape, s_prev, p)?;
                let c = context_vector(tape, alpha, &self.annotations)?;
                (tape.concat(x_in, c)?, Some(c), Some(alpha))
            }
            _ => (x_in, None, None),
        };
        let state = lstm_cell_forward(tape, input, s_prev, &self.vars.decoder)?;
        let out = mode.dropout(tape, state.y)?;
        let features = match context {
            Some(c) => tape.concat(out, c)?,
            None => out,
        };
        let prediction = dense_forward(tape, features, &self.vars.readout)?;
        Ok(DecodeStep {
            prediction,
            state,
            alpha,
        })
    }
}

/// Single decoder step: attend, update the decoder LSTM, read out `x̂`.
pub fn decode_step(
    tape: &Tape,
    x_in: Var,
    s_prev: &LstmState,
    encoded: &Encoded,
    vars: &ModelVars,
    mode: &mut Mode<'_>,
) -> Result<DecodeStep> {
    Decoder::new(tape, vars, encoded)?.step(tape, x_in, s_prev, mode)
}

/// Picks the decoder input: the model's own output when `k >= threshold`,
/// the teacher signal when `k < threshold`.
pub fn teacher_forcing_select<T>(k: f64, threshold: f64, model_output: T, teacher_signal: T) -> Result<T> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "teacher forcing threshold {threshold} outside [0, 1]"
        )));
    }
    Ok(if k >= threshold { model_output } else { teacher_signal })
}

/// Teacher-forcing inputs for one rollout: `draws[i]` decides the input of
/// decode step `i`, `targets[i]` is the true scaled value at step `i`.
#[derive(Copy, Clone, Debug)]
pub struct TeacherForcing<'a> {
    pub threshold: f64,
    pub targets: &'a [f64],
    pub draws: &'a [f64],
}

/// Predictions (and attention weights) of an unrolled forecast on a tape.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub predictions: Vec<Var>,
    pub attention: Vec<Var>,
}

/// Chooses the input for decode step `step > 0`.
pub(crate) fn next_input(tape: &Tape, step: usize, previous: Var, teacher: Option<&TeacherForcing<'_>>) -> Result<Var> {
    match teacher {
        Some(t) => {
            let k = *t
                .draws
                .get(step)
                .ok_or_else(|| Error::Domain(format!("missing teacher draw for step {step}")))?;
            let truth = *t
                .targets
                .get(step - 1)
                .ok_or_else(|| Error::Domain(format!("missing target for step {step}")))?;
            teacher_forcing_select(k, t.threshold, Choice::Model, Choice::Teacher).map(|c| match c {
                Choice::Model => previous,
                Choice::Teacher => tape.leaf(Tensor::scalar(truth)),
            })
        }
        None => Ok(previous),
    }
}

enum Choice {
    Model,
    Teacher,
}

/// Unrolls `horizon` predictions for one window on `tape`.
pub fn rollout(
    tape: &Tape,
    vars: &ModelVars,
    window: &[Vec<f64>],
    horizon: usize,
    teacher: Option<&TeacherForcing<'_>>,
    mode: &mut Mode<'_>,
) -> Result<Rollout> {
    if horizon < 1 {
        return Err(Error::Domain("forecast horizon must be at least 1".into()));
    }
    if let Some(t) = teacher {
        if !(0.0..=1.0).contains(&t.threshold) {
            return Err(Error::Config(format!(
                "teacher forcing threshold {} outside [0, 1]",
                t.threshold
            )));
        }
    }
    if vars.arch.kind == ModelKind::SimpleLstm {
        return baseline::rollout(tape, vars, window, horizon, teacher, mode);
    }
    let encoded = encode(tape, window, vars, mode)?;
    let decoder = Decoder::new(tape, vars, &encoded)?;
    let last = window.last().expect("encode checked non-empty");
    let mut input = tape.leaf(Tensor::scalar(last[ILI_CHANNEL]));
    let mut state = encoded.init;
    let mut out = Rollout {
        predictions: Vec::with_capacity(horizon),
        attention: Vec::with_capacity(horizon),
    };
    for step in 0..horizon {
        if step > 0 {
            input = next_input(tape, step, out.predictions[step - 1], teacher)?;
        }
        let s = decoder.step(tape, input, &state, mode)?;
        state = s.state;
        out.predictions.push(s.prediction);
        out.attention.extend(s.alpha);
    }
    Ok(out)
}

/// Inference-mode autoregressive forecast of `horizon` scaled ILI values.
pub fn forecast(params: &ModelParams, window: &[Vec<f64>], horizon: usize) -> Result<Forecast> {
    let tape = Tape::new();
    let (vars, _) = params.bind(&tape)?;
    let r = rollout(&tape, &vars, window, horizon, None, &mut Mode::Inference)?;
    Ok(Forecast {
        values: r.predictions.iter().map(|&p| tape.scalar(p)).collect(),
        attention_maps: r.attention.iter().map(|&a| tape.value(a).into_values()).collect(),
    })
}
