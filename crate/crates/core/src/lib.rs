//! Cross-modal image/text embedding engine.
//!
//! Text is encoded by a bidirectional GRU whose two directions mine each
//! other through gated self-attention. Visual features (multiscale rows
//! and region rows) are fused by sigmoid-scored cross attention. Region
//! features also gate each text embedding. Training minimises a pair of
//! bidirectional hinge ranking losses. Everything runs on a small `f64`
//! reverse-mode tape in [`autograd`].

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod train;

pub use error::{Error, Result};
