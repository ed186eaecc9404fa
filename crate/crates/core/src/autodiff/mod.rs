//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! Just enough machinery for the attention and convolution models in this
//! crate: a [`Tape`] of forward ops over 2-D `f64` [`Tensor`]s, a reverse
//! pass that accumulates gradients into parameter leaves, and an Adam
//! optimizer. A tape is single-threaded; distinct tapes are independent.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Mask, Tape, TapeError, VarId};
pub use tensor::Tensor;
