//! Dense `f64` arrays, reverse-mode gradients, Adam and gradient checking.

mod array;
pub mod gradcheck;
pub mod nn;
mod rng;
mod store;
mod tape;

pub use array::DenseArray;
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use nn::{affine, init_lstm, lstm_step};
pub use rng::Rng;
pub use store::{AdamConfig, Param, ParamStore, DEFAULT_INIT_SCALE};
pub use tape::{Tape, Var, LOG_FLOOR};
