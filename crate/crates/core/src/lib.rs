//! Weekly influenza-like-illness forecasting with LSTM encoder-decoder models.
//!
//! Everything numeric is built here: a reverse-mode tape ([`autodiff`]), LSTM
//! and dense layers ([`layers`]), the bidirectional encoder with an attentive
//! decoder ([`seq2seq`]), and Adam training with teacher forcing
//! ([`training`]). [`data`] ingests CDC ILINet and Google Trends exports and
//! [`eval`] scores forecasts per horizon against simple baselines.

pub mod autodiff;
pub mod data;
mod error;
pub mod eval;
pub mod layers;
pub mod seq2seq;
pub mod synthetic;
pub mod training;

pub use error::{CheckpointError, DataError, Error, Result};
