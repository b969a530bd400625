//! Projection of ingested multiscale and region features to width `d`.

use super::layers::{affine, register_affine, register_mlp, residual_mlp};
use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub const MSV_ADAPTER: &str = "visual.msv.adapter";
pub const MSV_MLP: &str = "visual.msv.mlp";
pub const ROI_FC: &str = "visual.roi.fc";

/// The adapter is only registered when `d_in != d`.
pub fn register_visual(store: &mut ParamStore, d_in: usize, d_r: usize, d: usize) -> Result<()> {
    if d_in != d {
        register_affine(store, MSV_ADAPTER, d_in, d)?;
    }
    register_mlp(store, MSV_MLP, d)?;
    register_affine(store, ROI_FC, d_r, d)
}

fn check_finite(tape: &Tape, x: Var) -> Result<()> {
    match tape.value(x).values().iter().position(|v| !v.is_finite()) {
        Some(offset) => Err(Error::NonFinite { offset }),
        None => Ok(()),
    }
}

/// `F_M = MLP(M) + M`, with `M` first mapped to width `d` if needed.
pub fn msv_project(tape: &mut Tape, store: &ParamStore, m_v: Var) -> Result<Var> {
    check_finite(tape, m_v)?;
    let x = if store.contains(&format!("{MSV_ADAPTER}.w")) { affine(tape, store, MSV_ADAPTER, m_v)? } else { m_v };
    residual_mlp(tape, store, MSV_MLP, x)
}

/// `F_R = R·W_r + b_r`.
pub fn roi_project(tape: &mut Tape, store: &ParamStore, r_v: Var) -> Result<Var> {
    check_finite(tape, r_v)?;
    let expected = store.get(&format!("{ROI_FC}.w"))?.rows();
    if tape.value(r_v).cols() != expected {
        return Err(Error::dim("roi_project", format!("region width {} vs expected {expected}", tape.value(r_v).cols())));
    }
    affine(tape, store, ROI_FC, r_v)
}
