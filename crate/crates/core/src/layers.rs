//! LSTM cell, bidirectional stacks, dense layers and inverted dropout.
//!
//! The cell follows the standard Hochreiter–Schmidhuber formulation:
//!
//! ```text
//! z = tanh(W_z x + R_z y_prev + b_z)        block input
//! i = σ(W_in x + R_in y_prev + b_in)        input gate
//! f = σ(W_for x + R_for y_prev + b_for)     forget gate
//! o = σ(W_out x + R_out y_prev + b_out)     output gate
//! c = i ∘ z + f ∘ c_prev
//! y = o ∘ tanh(c)
//! ```
//!
//! The block input uses tanh rather than a sigmoid so the cell can write
//! signed values into its memory.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// The four affine blocks of an LSTM cell, in parameter order.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Gate {
    Block,
    Input,
    Forget,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Block, Gate::Input, Gate::Forget, Gate::Output];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Block => "z",
            Gate::Input => "in",
            Gate::Forget => "for",
            Gate::Output => "out",
        }
    }
}

/// Forward pass mode. Training mode carries the dropout generator.
pub enum Mode<'a> {
    Inference,
    Training { rng: &'a mut dyn RngCore, dropout: f64 },
}

impl Mode<'_> {
    pub fn reborrow(&mut self) -> Mode<'_> {
        match self {
            Mode::Inference => Mode::Inference,
            Mode::Training { rng, dropout } => Mode::Training {
                rng: &mut **rng,
                dropout: *dropout,
            },
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Training { .. })
    }

    /// Applies dropout in training mode, identity otherwise.
    pub fn dropout(&mut self, tape: &Tape, x: Var) -> Result<Var> {
        match self {
            Mode::Inference => Ok(x),
            Mode::Training { rng, dropout } => dropout_apply(tape, x, *dropout, &mut **rng, true),
        }
    }
}

/// Glorot-uniform matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::matrix(rows, cols, values).expect("rows * cols values")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// Input weights `W_z, W_in, W_for, W_out`, each hidden × input.
    pub w: [Tensor; 4],
    /// Recurrent weights `R_*`, each hidden × hidden.
    pub r: [Tensor; 4],
    /// Biases `b_*`, each of length hidden.
    pub b: [Tensor; 4],
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w: std::array::from_fn(|_| Tensor::zeros(Shape::Matrix(hidden, input))),
            r: std::array::from_fn(|_| Tensor::zeros(Shape::Matrix(hidden, hidden))),
            b: std::array::from_fn(|_| Tensor::zeros(Shape::Vector(hidden))),
        }
    }

    /// Glorot-uniform weights, zero biases except the forget gate at +1.
    pub fn init(input: usize, hidden: usize, rng: &mut dyn RngCore) -> Self {
        let mut p = LstmParams::zeros(input, hidden);
        for g in 0..4 {
            p.w[g] = glorot(hidden, input, rng);
            p.r[g] = glorot(hidden, hidden, rng);
        }
        p.b[2] = Tensor::vector(vec![1.0; hidden]);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w[0].rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        for (g, gate) in Gate::ALL.iter().enumerate() {
            let checks = [
                (&self.w[g], Shape::Matrix(h, d), "W"),
                (&self.r[g], Shape::Matrix(h, h), "R"),
                (&self.b[g], Shape::Vector(h), "b"),
            ];
            for (t, want, sym) in checks {
                if t.shape() != want {
                    return Err(Error::Config(format!(
                        "{sym}_{} has shape {:?}, expected {:?}",
                        gate.suffix(),
                        t.shape().dims(),
                        want.dims()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(12);
        for (sym, group) in [("w", &self.w), ("r", &self.r), ("b", &self.b)] {
            for (gate, t) in Gate::ALL.iter().zip(group) {
                out.push((format!("{sym}_{}", gate.suffix()), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.w
            .iter_mut()
            .chain(self.r.iter_mut())
            .chain(self.b.iter_mut())
            .collect()
    }

    /// Records every tensor as a tape leaf, in [`LstmParams::tensors`] order.
    pub fn bind(&self, tape: &Tape, leaves: &mut Vec<Var>) -> LstmVars {
        let vars: Vec<Var> = self.tensors().into_iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        leaves.extend_from_slice(&vars);
        LstmVars {
            w: [vars[0], vars[1], vars[2], vars[3]],
            r: [vars[4], vars[5], vars[6], vars[7]],
            b: [vars[8], vars[9], vars[10], vars[11]],
            input_dim: self.input_dim(),
            hidden: self.hidden_dim(),
        }
    }
}

/// Tape handles for an [`LstmParams`].
#[derive(Clone, Debug)]
pub struct LstmVars {
    pub w: [Var; 4],
    pub r: [Var; 4],
    pub b: [Var; 4],
    pub input_dim: usize,
    pub hidden: usize,
}

/// Hidden output `y` and memory cell `c`.
#[derive(Copy, Clone, Debug)]
pub struct LstmState {
    pub y: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &Tape, hidden: usize) -> Self {
        LstmState {
            y: tape.leaf(Tensor::zeros(Shape::Vector(hidden))),
            c: tape.leaf(Tensor::zeros(Shape::Vector(hidden))),
        }
    }
}

fn gate_preactivation(tape: &Tape, x: Var, y_prev: Var, p: &LstmVars, g: usize) -> Result<Var> {
    let name = Gate::ALL[g].suffix();
    let wx = tape
        .matmul(p.w[g], x)
        .map_err(|e| Error::Config(format!("gate {name}: input weights: {e}")))?;
    let ry = tape
        .matmul(p.r[g], y_prev)
        .map_err(|e| Error::Config(format!("gate {name}: recurrent weights: {e}")))?;
    let sum = tape.add(wx, ry)?;
    tape.add(sum, p.b[g])
        .map_err(|e| Error::Config(format!("gate {name}: bias: {e}")))
}

pub fn lstm_cell_forward(tape: &Tape, x: Var, prev: &LstmState, p: &LstmVars) -> Result<LstmState> {
    let z = tape.tanh(gate_preactivation(tape, x, prev.y, p, 0)?);
    let i = tape.sigmoid(gate_preactivation(tape, x, prev.y, p, 1)?);
    let f = tape.sigmoid(gate_preactivation(tape, x, prev.y, p, 2)?);
    let o = tape.sigmoid(gate_preactivation(tape, x, prev.y, p, 3)?);
    let write = tape.hadamard(i, z)?;
    let keep = tape.hadamard(f, prev.c)?;
    let c = tape.add(write, keep)?;
    let y = tape.hadamard(o, tape.tanh(c))?;
    Ok(LstmState { y, c })
}

/// Unrolls the cell over `xs`, returning one state per input.
pub fn lstm_sequence_forward(tape: &Tape, xs: &[Var], p: &LstmVars, init: LstmState) -> Result<Vec<LstmState>> {
    if xs.is_empty() {
        return Err(Error::Domain("LSTM over an empty sequence".into()));
    }
    let mut states = Vec::with_capacity(xs.len());
    let mut state = init;
    for &x in xs {
        state = lstm_cell_forward(tape, x, &state, p)?;
        states.push(state);
    }
    Ok(states)
}

/// One bidirectional layer: a left-to-right and a right-to-left LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiLstmParams {
            forward: LstmParams::zeros(input, hidden),
            backward: LstmParams::zeros(input, hidden),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut dyn RngCore) -> Self {
        let forward = LstmParams::init(input, hidden, rng);
        let backward = LstmParams::init(input, hidden, rng);
        BiLstmParams { forward, backward }
    }

    pub fn bind(&self, tape: &Tape, leaves: &mut Vec<Var>) -> BiLstmVars {
        BiLstmVars {
            forward: self.forward.bind(tape, leaves),
            backward: self.backward.bind(tape, leaves),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmVars {
    pub forward: LstmVars,
    pub backward: LstmVars,
}

#[derive(Clone, Debug)]
pub struct BiStackOutput {
    /// `concat(forward_y[t], backward_y[t])` of the top layer, per step.
    pub outputs: Vec<Var>,
    /// Top-layer forward state after the last step.
    pub final_forward: LstmState,
    /// Top-layer backward state after reaching the first step.
    pub final_backward: LstmState,
}

/// Runs a stack of bidirectional layers. Dropout (training mode only) is
/// applied to the outputs passed from one layer to the next.
pub fn bidirectional_stack_forward(
    tape: &Tape,
    xs: &[Var],
    layers: &[BiLstmVars],
    mode: &mut Mode<'_>,
) -> Result<BiStackOutput> {
    if layers.is_empty() {
        return Err(Error::Config("bidirectional stack needs at least one layer".into()));
    }
    if xs.is_empty() {
        return Err(Error::Domain("bidirectional stack over an empty sequence".into()));
    }
    let mut input_dim = match tape.shape(xs[0]) {
        Shape::Vector(d) => d,
        s => return Err(Error::shape("bidirectional_stack", &s.dims(), &[])),
    };
    let mut inputs = xs.to_vec();
    let mut result = None;
    for (l, layer) in layers.iter().enumerate() {
        for (dir, p) in [("forward", &layer.forward), ("backward", &layer.backward)] {
            if p.input_dim != input_dim {
                return Err(Error::Config(format!(
                    "layer {l} {dir} expects input dim {}, got {input_dim}",
                    p.input_dim
                )));
            }
        }
        if layer.backward.hidden != layer.forward.hidden {
            return Err(Error::Config(format!(
                "layer {l}: forward hidden {} != backward hidden {}",
                layer.forward.hidden, layer.backward.hidden
            )));
        }
        let h = layer.forward.hidden;
        let fwd = lstm_sequence_forward(tape, &inputs, &layer.forward, LstmState::zeros(tape, h))?;
        let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
        let mut bwd = lstm_sequence_forward(tape, &reversed, &layer.backward, LstmState::zeros(tape, h))?;
        bwd.reverse();
        let mut outputs = Vec::with_capacity(inputs.len());
        for (f, b) in fwd.iter().zip(&bwd) {
            outputs.push(tape.concat(f.y, b.y)?);
        }
        let last = l + 1 == layers.len();
        if !last {
            for o in &mut outputs {
                *o = mode.dropout(tape, *o)?;
            }
        }
        input_dim = 2 * h;
        result = Some(BiStackOutput {
            final_forward: *fwd.last().expect("non-empty"),
            final_backward: bwd[0],
            outputs: outputs.clone(),
        });
        inputs = outputs;
    }
    Ok(result.expect("at least one layer"))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseParams {
            w: Tensor::zeros(Shape::Matrix(output, input)),
            b: Tensor::zeros(Shape::Vector(output)),
            activation,
        }
    }

    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut dyn RngCore) -> Self {
        DenseParams {
            w: glorot(output, input, rng),
            b: Tensor::zeros(Shape::Vector(output)),
            activation,
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w".to_string(), &self.w), ("b".to_string(), &self.b)]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn bind(&self, tape: &Tape, leaves: &mut Vec<Var>) -> DenseVars {
        let w = tape.leaf(self.w.clone());
        let b = tape.leaf(self.b.clone());
        leaves.extend([w, b]);
        DenseVars {
            w,
            b,
            activation: self.activation,
        }
    }
}

#[derive(Copy, Clone, Debug)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
    pub activation: Activation,
}

/// `activation(W x + b)`.
pub fn dense_forward(tape: &Tape, x: Var, p: &DenseVars) -> Result<Var> {
    let affine = tape.add(tape.matmul(p.w, x)?, p.b)?;
    Ok(match p.activation {
        Activation::Tanh => tape.tanh(affine),
        Activation::Identity => affine,
    })
}

/// Inverted-dropout mask: zero with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

pub fn dropout_apply(tape: &Tape, x: Var, rate: f64, rng: &mut dyn RngCore, training: bool) -> Result<Var> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(tape.shape(x).numel(), rate, rng)?;
    let mask = tape.leaf(Tensor::new(tape.shape(x), mask)?);
    tape.hadamard(x, mask)
}
