//! Dense tensors, reverse-mode differentiation, optimizer and RNG.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_tape_fn, finite_diff_check, GradCheckReport};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Activation, Binding, Init, LayerNorm, Linear, Mlp, ParamId, ParamStore};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
