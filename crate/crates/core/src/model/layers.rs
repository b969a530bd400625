//! Affine maps and two-layer perceptrons over named parameters.

use crate::autograd::{Init, ParamStore, Tape, Var};
use crate::config::HeadKind;
use crate::error::Result;

pub fn register_affine(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    store.register(&format!("{prefix}.w"), &[fan_in, fan_out], Init::Glorot)?;
    store.register(&format!("{prefix}.b"), &[1, fan_out], Init::Zeros)
}

/// `x·W + b` with `W = {prefix}.w`, `b = {prefix}.b`.
pub fn affine(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    tape.affine(x, w, b)
}

pub fn register_mlp(store: &mut ParamStore, prefix: &str, width: usize) -> Result<()> {
    register_affine(store, &format!("{prefix}.fc1"), width, width)?;
    register_affine(store, &format!("{prefix}.fc2"), width, width)
}

/// affine -> relu -> affine.
pub fn mlp(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let h = affine(tape, store, &format!("{prefix}.fc1"), x)?;
    let h = tape.relu(h);
    affine(tape, store, &format!("{prefix}.fc2"), h)
}

/// `mlp(x) + x`.
pub fn residual_mlp(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let y = mlp(tape, store, prefix, x)?;
    tape.add(y, x)
}

pub fn register_head(store: &mut ParamStore, prefix: &str, width: usize, kind: HeadKind) -> Result<()> {
    match kind {
        HeadKind::Linear => register_affine(store, prefix, width, width),
        HeadKind::Nonlinear => register_mlp(store, prefix, width),
    }
}

/// Linear head: one affine map. Nonlinear head: residual two-layer perceptron.
pub fn head(tape: &mut Tape, store: &ParamStore, prefix: &str, kind: HeadKind, x: Var) -> Result<Var> {
    match kind {
        HeadKind::Linear => affine(tape, store, prefix, x),
        HeadKind::Nonlinear => residual_mlp(tape, store, prefix, x),
    }
}
