//! Region-oriented fusion (IFA) and region-guided text gating (IGA), plus pooling.

use super::layers::{affine, head, mlp, register_affine, register_head};
use crate::autograd::{ParamStore, Tape, Var};
use crate::config::HeadKind;
use crate::error::{Error, Result};

pub const IFA: &str = "roam.ifa";
pub const IGA: &str = "roam.iga";

pub fn register_ifa(store: &mut ParamStore, d: usize, kind: HeadKind) -> Result<()> {
    register_affine(store, &format!("{IFA}.fm"), d, d)?;
    register_affine(store, &format!("{IFA}.fr"), d, d)?;
    register_head(store, &format!("{IFA}.head"), d, kind)
}

#[derive(Clone, Copy, Debug)]
pub struct IfaOutput {
    pub f_mr: Var,
    /// `N_m x N_r` sigmoid scores.
    pub s_mr: Var,
    /// Multiscale rows activated by regions (`N_m x d`).
    pub region_into_msv: Var,
    /// Region rows activated by multiscale features (`N_r x d`).
    pub msv_into_region: Var,
}

pub fn ifa_fuse(tape: &mut Tape, store: &ParamStore, f_m: Var, f_r: Var, kind: HeadKind) -> Result<IfaOutput> {
    if tape.value(f_m).cols() != tape.value(f_r).cols() {
        return Err(Error::dim(
            "ifa_fuse",
            format!("widths {} and {}", tape.value(f_m).cols(), tape.value(f_r).cols()),
        ));
    }
    let fm = affine(tape, store, &format!("{IFA}.fm"), f_m)?;
    let fr = affine(tape, store, &format!("{IFA}.fr"), f_r)?;
    let fr_t = tape.transpose(fr)?;
    let s = tape.matmul(fm, fr_t)?;
    let s_mr = tape.sigmoid(s);
    let sr = tape.matmul_unordered(s_mr, fr)?;
    let region_into_msv = tape.add(sr, fm)?;
    let s_t = tape.transpose(s_mr)?;
    let sm = tape.matmul_unordered(s_t, fm)?;
    let msv_into_region = tape.add(sm, fr)?;
    let cat = tape.concat_rows(&[region_into_msv, msv_into_region])?;
    let f_mr = head(tape, store, &format!("{IFA}.head"), kind, cat)?;
    Ok(IfaOutput { f_mr, s_mr, region_into_msv, msv_into_region })
}

/// Plain row concatenation used when fusion is ablated.
pub fn concat_visual(tape: &mut Tape, f_m: Var, f_r: Var) -> Result<Var> {
    tape.concat_rows(&[f_m, f_r])
}

pub fn register_iga(store: &mut ParamStore, d: usize, kind: HeadKind) -> Result<()> {
    register_affine(store, &format!("{IGA}.fr"), d, d)?;
    register_affine(store, &format!("{IGA}.fg"), d, d)?;
    register_head(store, &format!("{IGA}.head"), d, kind)
}

/// `f_R = E_R·W_R + b_R`; depends on the image only.
pub fn iga_region(tape: &mut Tape, store: &ParamStore, e_r: Var) -> Result<Var> {
    affine(tape, store, &format!("{IGA}.fr"), e_r)
}

/// `f_G = E_G·W_G + b_G`; depends on the text only.
pub fn iga_text(tape: &mut Tape, store: &ParamStore, e_g: Var) -> Result<Var> {
    affine(tape, store, &format!("{IGA}.fg"), e_g)
}

#[derive(Clone, Copy, Debug)]
pub struct IgaOutput {
    pub t_rg: Var,
    /// Scalar gate, `1 x 1`.
    pub gate: Var,
    /// `g·f_G + f_G`.
    pub u: Var,
}

/// Gates the projected text vector by its agreement with the projected region vector.
pub fn iga_pair(tape: &mut Tape, store: &ParamStore, f_r: Var, f_g: Var, kind: HeadKind) -> Result<IgaOutput> {
    if tape.value(f_r).shape() != tape.value(f_g).shape() {
        return Err(Error::dim(
            "iga_guide",
            format!("{:?} vs {:?}", tape.value(f_r).shape(), tape.value(f_g).shape()),
        ));
    }
    let prod = tape.mul(f_r, f_g)?;
    let dot = tape.sum(prod);
    let gate = tape.sigmoid(dot);
    let gated = tape.scale_by(gate, f_g)?;
    let u = tape.add(gated, f_g)?;
    let prefix = format!("{IGA}.head");
    let mapped = match kind {
        HeadKind::Linear => affine(tape, store, &prefix, u)?,
        HeadKind::Nonlinear => mlp(tape, store, &prefix, u)?,
    };
    let t_rg = tape.add(mapped, u)?;
    Ok(IgaOutput { t_rg, gate, u })
}

pub fn iga_guide(tape: &mut Tape, store: &ParamStore, e_r: Var, e_g: Var, kind: HeadKind) -> Result<IgaOutput> {
    if tape.value(e_r).shape() != tape.value(e_g).shape() {
        return Err(Error::dim("iga_guide", format!("{:?} vs {:?}", tape.value(e_r).shape(), tape.value(e_g).shape())));
    }
    let f_r = iga_region(tape, store, e_r)?;
    let f_g = iga_text(tape, store, e_g)?;
    iga_pair(tape, store, f_r, f_g, kind)
}

/// Column mean, `n x d -> 1 x d`.
pub fn pool(tape: &mut Tape, x: Var) -> Result<Var> {
    if tape.value(x).rows() == 0 {
        return Err(Error::Invalid("cannot pool an empty matrix".into()));
    }
    tape.mean_rows(x)
}
