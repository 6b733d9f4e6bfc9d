//! Dense tensors, a reverse-mode tape, layer helpers and optimizers.

mod array;
pub mod gradcheck;
pub mod nn;
mod optim;
mod tape;

pub use array::Tensor;
pub use nn::{Attention, MhaVars, Mode, RunningStats};
pub use optim::{Bound, OptimizerKind, OptimizerState, ParamId, ParamStore};
pub use tape::{BatchMoments, Gradients, Tape, Var};
