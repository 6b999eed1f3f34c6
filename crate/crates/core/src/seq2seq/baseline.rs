//! Next-step LSTM baseline without an encoder/decoder split. Multi-week
//! forecasts feed each prediction back as the next ILI input while the other
//! channels are held at their last observed values.

use super::{next_input, window_leaves, ModelKind, ModelParams, ModelVars, Rollout, TeacherForcing, ILI_CHANNEL};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{dense_forward, lstm_cell_forward, lstm_sequence_forward, LstmState, Mode};

pub(super) fn rollout(
    tape: &Tape,
    vars: &ModelVars,
    window: &[Vec<f64>],
    horizon: usize,
    teacher: Option<&TeacherForcing<'_>>,
    mode: &mut Mode<'_>,
) -> Result<Rollout> {
    let xs = window_leaves(tape, window, vars.arch.feature_dim)?;
    let init = LstmState::zeros(tape, vars.arch.decoder_hidden);
    let states = lstm_sequence_forward(tape, &xs, &vars.decoder, init)?;
    let mut state = *states.last().expect("non-empty window");
    let held: Vec<Var> = window
        .last()
        .expect("non-empty window")
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != ILI_CHANNEL)
        .map(|(_, &v)| tape.leaf(Tensor::scalar(v)))
        .collect();

    let mut predictions: Vec<Var> = Vec::with_capacity(horizon);
    for step in 0..horizon {
        if step > 0 {
            let ili = next_input(tape, step, predictions[step - 1], teacher)?;
            let mut parts = Vec::with_capacity(vars.arch.feature_dim);
            let mut others = held.iter();
            for c in 0..vars.arch.feature_dim {
                parts.push(if c == ILI_CHANNEL {
                    ili
                } else {
                    *others.next().expect("held channel")
                });
            }
            let x = tape.concat_all(&parts)?;
            state = lstm_cell_forward(tape, x, &state, &vars.decoder)?;
        }
        let out = mode.dropout(tape, state.y)?;
        predictions.push(dense_forward(tape, out, &vars.readout)?);
    }
    Ok(Rollout {
        predictions,
        attention: Vec::new(),
    })
}

/// Inference-mode forecast of `horizon` scaled ILI values with the baseline
/// LSTM.
pub fn simple_lstm_forecast(params: &ModelParams, window: &[Vec<f64>], horizon: usize) -> Result<Vec<f64>> {
    if params.arch.kind != ModelKind::SimpleLstm {
        return Err(Error::Config(format!(
            "simple_lstm_forecast called with a {} model",
            params.arch.kind.name()
        )));
    }
    Ok(super::forecast(params, window, horizon)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture {
            kind: ModelKind::SimpleLstm,
            decoder_hidden: 5,
            ..Architecture::default()
        }
    }

    #[test]
    fn zero_params_predict_zero() {
        let params = ModelParams::zeros(arch()).unwrap();
        let out = simple_lstm_forecast(&params, &vec![vec![0.5, 0.5]; 10], 4).unwrap();
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn horizon_one_reads_out_the_final_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(arch(), &mut rng).unwrap();
        let window: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 0.3]).collect();
        let got = simple_lstm_forecast(&params, &window, 1).unwrap();

        let tape = Tape::new();
        let (vars, _) = params.bind(&tape).unwrap();
        let xs = window_leaves(&tape, &window, 2).unwrap();
        let states = lstm_sequence_forward(&tape, &xs, &vars.decoder, LstmState::zeros(&tape, 5)).unwrap();
        let y = dense_forward(&tape, states[9].y, &vars.readout).unwrap();
        assert_eq!(got, vec![tape.scalar(y)]);
    }

    #[test]
    fn rejects_seq2seq_params() {
        let params = ModelParams::zeros(Architecture::default()).unwrap();
        assert!(simple_lstm_forecast(&params, &vec![vec![0.0, 0.0]; 10], 4).is_err());
    }
}
