//! Similarity, ranking loss, the Adam optimizer and the step-decay schedule.

use std::collections::BTreeMap;

use crate::autograd::tape::{triplet_value, MIN_NORM};
use crate::autograd::ParamStore;
use crate::config::TrainConfig;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Cosine similarity of two equal-length vectors.
pub fn cosine(v: &[f64], t: &[f64]) -> Result<f64> {
    if v.len() != t.len() {
        return Err(Error::dim("cosine", format!("{} vs {}", v.len(), t.len())));
    }
    let dot: f64 = v.iter().zip(t).map(|(a, b)| a * b).sum();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nt = t.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nv < MIN_NORM || nt < MIN_NORM {
        return Err(Error::Degenerate(format!("cosine operand norms {nv:e}, {nt:e}")));
    }
    Ok(dot / (nv * nt))
}

/// Bidirectional hinge loss summed over all in-batch negatives. `s` is row-major `B x B`.
pub fn triplet_loss(s: &[f64], b: usize, alpha: f64) -> Result<f64> {
    if b * b != s.len() {
        return Err(Error::dim("triplet_loss", format!("{} entries is not {b}x{b}", s.len())));
    }
    Ok(triplet_value(s, b, alpha))
}

pub fn total_loss(s_final: &[f64], s_global: &[f64], b: usize, alpha: f64, lambda_g: f64) -> Result<f64> {
    Ok(triplet_loss(s_final, b, alpha)? + lambda_g * triplet_loss(s_global, b, alpha)?)
}

/// `lr0 · factor^⌊epoch / every⌋`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every.max(1)) as i32)
}

/// Adam moments for every parameter, keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|e| (e.name.clone(), vec![0.0; e.tensor.len()])).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything is modified.
pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, state: &mut OptState, lr: f64) -> Result<()> {
    for entry in params.iter() {
        let g = grads
            .get(&entry.name)
            .ok_or_else(|| Error::Invalid(format!("no gradient for parameter `{}`", entry.name)))?;
        if g.len() != entry.tensor.len() {
            return Err(Error::dim("adam_step", format!("{}: {} grads for {} values", entry.name, g.len(), entry.tensor.len())));
        }
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{}[{k}]", entry.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for entry in params.iter_mut() {
        let g = &grads[&entry.name];
        let n = g.len();
        let m = state.m.entry(entry.name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(entry.name.clone()).or_insert_with(|| vec![0.0; n]);
        let w = entry.tensor.values_mut();
        for k in 0..n {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            w[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Init;

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[0.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn fixtures() {
        assert!((triplet_loss(&[0.5, 0.6, 0.4, 0.7], 2, 0.2).unwrap() - 0.5).abs() < 1e-15);
        assert!((triplet_loss(&[0.3; 4], 2, 0.2).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(triplet_loss(&[1.0, 0.8, 0.5, 1.0], 2, 0.2).unwrap(), 0.0);
        assert!(triplet_loss(&[0.0; 6], 2, 0.2).is_err());
        assert!((total_loss(&[0.5, 0.6, 0.4, 0.7], &[1.0, 0.0, 0.0, 1.0], 2, 0.2, 0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 0.0002);
        assert_eq!(lr_at(&cfg, 19), 0.0002);
        assert!((lr_at(&cfg, 20) - 0.00014).abs() < 1e-18);
        assert!((lr_at(&cfg, 40) - 0.000098).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = ParamStore::new(1);
        p.register("w", &[2, 2], Init::Glorot).unwrap();
        let before = p.get("w").unwrap().clone();
        let mut st = OptState::new(&p);
        let grads = BTreeMap::from([("w".to_string(), vec![0.0; 4])]);
        adam_step(&mut p, &grads, &mut st, 0.1).unwrap();
        assert_eq!(p.get("w").unwrap(), &before);
        assert!(st.m["w"].iter().chain(&st.v["w"]).all(|x| *x == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new(1);
        p.register("w", &[1, 1], Init::Constant(1.0)).unwrap();
        let mut st = OptState::new(&p);
        let grads = BTreeMap::from([("w".to_string(), vec![-3.0])]);
        adam_step(&mut p, &grads, &mut st, 0.01).unwrap();
        assert!((p.get("w").unwrap().item() - 1.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = ParamStore::new(1);
        p.register("enc.w", &[1, 2], Init::Constant(1.0)).unwrap();
        let mut st = OptState::new(&p);
        let grads = BTreeMap::from([("enc.w".to_string(), vec![0.0, f64::NAN])]);
        let err = adam_step(&mut p, &grads, &mut st, 0.01).unwrap_err();
        assert!(err.to_string().contains("enc.w"));
        assert_eq!(st.step, 0);
        assert_eq!(p.get("enc.w").unwrap().values(), &[1.0, 1.0]);
    }
}
