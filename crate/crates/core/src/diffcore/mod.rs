//! Rank-3 tensors and a reverse-mode tape covering the operators used by
//! the forecaster: batched matmul, causal convolution, elementwise maps,
//! softmax, moving average, reshaping, and an LSTM built from those.

mod affine;
mod lstm;
mod tape;
mod tensor;

pub use affine::Affine;
pub use lstm::{lstm_forward, LstmWeights};
pub use tape::{Tape, Var};
pub use tensor::Tensor3;
