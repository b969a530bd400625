//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::rng::RngStream;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a - f| / max(1, |a|, |f|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per parameter tensor, chosen
    /// deterministically from `seed`. `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, max_coords_per_param: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_param: BTreeMap<String, f64>,
    pub coords_checked: usize,
}

fn eval_loss<F>(store: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let t = tape.value(loss);
    if t.len() != 1 {
        return Err(Error::Evaluation(format!("loss has shape {:?}", t.shape())));
    }
    let v = t.item();
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

fn pick_coords(len: usize, cap: Option<usize>, rng: &mut RngStream) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    match cap {
        Some(k) if k < len => {
            rng.shuffle(&mut all);
            all.truncate(k);
            all.sort_unstable();
            all
        }
        _ => all,
    }
}

/// Compares backward-pass gradients of `loss_fn` with central differences
/// for every parameter in `store`.
pub fn grad_check<F>(store: &ParamStore, opts: &GradCheckOptions, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Evaluation(format!("loss evaluated to {value}")));
    }
    let analytic = tape.backward(loss)?.params(&tape);

    let mut work = store.clone();
    let mut rng = RngStream::labeled(opts.seed, "gradcheck");
    let mut report = GradCheckReport { max_rel_error: 0.0, per_param: BTreeMap::new(), coords_checked: 0 };

    for name in store.names() {
        let base = store.get(&name)?.values().to_vec();
        let zeros = vec![0.0; base.len()];
        let grad = analytic.get(&name).unwrap_or(&zeros);
        let mut worst: f64 = 0.0;
        for i in pick_coords(base.len(), opts.max_coords_per_param, &mut rng) {
            let orig = base[i];
            work.get_mut(&name)?.values_mut()[i] = orig + opts.eps;
            let up = eval_loss(&work, &loss_fn)?;
            work.get_mut(&name)?.values_mut()[i] = orig - opts.eps;
            let down = eval_loss(&work, &loss_fn)?;
            work.get_mut(&name)?.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            worst = worst.max(relative_error(grad[i], numeric));
            report.coords_checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.insert(name, worst);
    }
    Ok(report)
}
