//! Word-vector lookup and the bidirectional GRU.
//!
//! Per step, with `e` the word vector and `h` the previous state:
//!
//! ```text
//! z  = sigmoid(e·W_z + h·U_z + b_z)
//! r  = sigmoid(e·W_r + h·U_r + b_r)
//! h~ = tanh(e·W_h + (r ⊙ h)·U_h + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ h~
//! ```
//!
//! Both directions start from a zero state. Row `i` of each output holds
//! the state produced at token position `i`.

use crate::autograd::{Init, ParamStore, Tape, Tensor, Var};
use crate::data::EmbeddingTable;
use crate::error::{Error, Result};

pub const FORWARD: &str = "text.gru.fwd";
pub const BACKWARD: &str = "text.gru.bwd";

/// Forward and backward hidden sequences, both `N_c x d`.
#[derive(Clone, Copy, Debug)]
pub struct HiddenStates {
    pub h_forward: Var,
    pub h_backward: Var,
}

pub fn embed_tokens(ids: &[usize], table: &EmbeddingTable) -> Result<Tensor> {
    table.embed(ids)
}

pub fn register_direction(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<()> {
    for gate in ["z", "r", "h"] {
        store.register(&format!("{prefix}.w_{gate}"), &[input, hidden], Init::Glorot)?;
        store.register(&format!("{prefix}.u_{gate}"), &[hidden, hidden], Init::Glorot)?;
        store.register(&format!("{prefix}.b_{gate}"), &[1, hidden], Init::Zeros)?;
    }
    Ok(())
}

pub fn register_bigru(store: &mut ParamStore, input: usize, hidden: usize) -> Result<()> {
    register_direction(store, FORWARD, input, hidden)?;
    register_direction(store, BACKWARD, input, hidden)
}

/// Runs one direction over the `N_c x input` node `e`.
pub fn gru_direction(tape: &mut Tape, store: &ParamStore, prefix: &str, e: Var, reverse: bool) -> Result<Var> {
    let p = |name: &str| format!("{prefix}.{name}");
    let n_c = tape.value(e).rows();
    if n_c == 0 {
        return Err(Error::Invalid("empty token sequence".into()));
    }
    let (w_z, w_r, w_h) = (tape.param(store, &p("w_z"))?, tape.param(store, &p("w_r"))?, tape.param(store, &p("w_h"))?);
    let (u_z, u_r, u_h) = (tape.param(store, &p("u_z"))?, tape.param(store, &p("u_r"))?, tape.param(store, &p("u_h"))?);
    let (b_z, b_r, b_h) = (tape.param(store, &p("b_z"))?, tape.param(store, &p("b_r"))?, tape.param(store, &p("b_h"))?);
    let hidden = tape.value(u_z).rows();
    if tape.value(w_z).rows() != tape.value(e).cols() {
        return Err(Error::dim(
            "bigru",
            format!("input width {} vs weight rows {}", tape.value(e).cols(), tape.value(w_z).rows()),
        ));
    }

    // Input projections for all positions at once.
    let xz = tape.affine(e, w_z, b_z)?;
    let xr = tape.affine(e, w_r, b_r)?;
    let xh = tape.affine(e, w_h, b_h)?;

    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut states = vec![h; n_c];
    let positions: Vec<usize> = if reverse { (0..n_c).rev().collect() } else { (0..n_c).collect() };
    for i in positions {
        let xz_i = tape.slice_rows(xz, i, 1)?;
        let xr_i = tape.slice_rows(xr, i, 1)?;
        let xh_i = tape.slice_rows(xh, i, 1)?;

        let hz = tape.matmul(h, u_z)?;
        let z = tape.add(xz_i, hz)?;
        let z = tape.sigmoid(z);
        let hr = tape.matmul(h, u_r)?;
        let r = tape.add(xr_i, hr)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let rh = tape.matmul(rh, u_h)?;
        let cand = tape.add(xh_i, rh)?;
        let cand = tape.tanh(cand);

        // (1 - z) ⊙ h + z ⊙ h~  ==  h + z ⊙ (h~ - h)
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        h = tape.add(h, step)?;
        states[i] = h;
    }
    tape.concat_rows(&states)
}

pub fn bigru(tape: &mut Tape, store: &ParamStore, e: Var) -> Result<HiddenStates> {
    Ok(HiddenStates {
        h_forward: gru_direction(tape, store, FORWARD, e, false)?,
        h_backward: gru_direction(tape, store, BACKWARD, e, true)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(input: usize, hidden: usize, init: Init) -> ParamStore {
        let mut s = ParamStore::new(5);
        for prefix in [FORWARD, BACKWARD] {
            for gate in ["z", "r", "h"] {
                s.register(&format!("{prefix}.w_{gate}"), &[input, hidden], init).unwrap();
                s.register(&format!("{prefix}.u_{gate}"), &[hidden, hidden], init).unwrap();
                s.register(&format!("{prefix}.b_{gate}"), &[1, hidden], init).unwrap();
            }
        }
        s
    }

    fn input(rows: usize, cols: usize) -> Tensor {
        Tensor::new(&[rows, cols], (0..rows * cols).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect()).unwrap()
    }

    #[test]
    fn zero_weights_keep_state_at_zero() {
        let s = store(5, 4, Init::Zeros);
        let mut tape = Tape::new();
        let e = tape.constant(input(3, 5));
        let h = bigru(&mut tape, &s, e).unwrap();
        assert!(tape.value(h.h_forward).values().iter().all(|v| *v == 0.0));
        assert!(tape.value(h.h_backward).values().iter().all(|v| *v == 0.0));
        assert_eq!(tape.value(h.h_forward).shape(), &[3, 4]);
    }

    #[test]
    fn single_token_with_shared_weights_is_symmetric() {
        let mut s = store(5, 4, Init::Glorot);
        for name in s.names().into_iter().filter(|n| n.starts_with(FORWARD)) {
            let vals = s.get(&name).unwrap().values().to_vec();
            s.set(&name.replace(FORWARD, BACKWARD), &vals).unwrap();
        }
        let mut tape = Tape::new();
        let e = tape.constant(input(1, 5));
        let h = bigru(&mut tape, &s, e).unwrap();
        assert_eq!(tape.value(h.h_forward), tape.value(h.h_backward));
    }

    #[test]
    fn order_matters() {
        let s = store(5, 4, Init::Glorot);
        let x = input(3, 5);
        let mut swapped = x.clone();
        let (a, b) = (x.row(0).to_vec(), x.row(2).to_vec());
        swapped.values_mut()[..5].copy_from_slice(&b);
        swapped.values_mut()[10..].copy_from_slice(&a);
        let run = |t: Tensor| {
            let mut tape = Tape::new();
            let e = tape.constant(t);
            let h = bigru(&mut tape, &s, e).unwrap();
            let m = tape.mean_rows(h.h_forward).unwrap();
            tape.value(m).clone()
        };
        assert!(run(x).max_abs_diff(&run(swapped)) > 1e-6);
    }

    #[test]
    fn width_mismatch() {
        let s = store(5, 4, Init::Glorot);
        let mut tape = Tape::new();
        let e = tape.constant(input(2, 6));
        assert!(bigru(&mut tape, &s, e).is_err());
    }
}
