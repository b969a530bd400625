//! Dense tensors, reverse-mode differentiation, parameters and seeding.

pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use params::{Init, ParamEntry, ParamStore};
pub use rng::{RngStream, PRNG_NAME};
pub use tape::{sigmoid, Activation, Gradients, Reduce, Tape, Var};
pub use tensor::Tensor;
