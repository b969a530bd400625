//! Gated self-attention and the dual-branch text block built on it.

use super::layers::{affine, register_affine, register_mlp, residual_mlp};
use super::text_encoder::HiddenStates;
use crate::autograd::{ParamStore, Tape, Var};
use crate::config::DtgaInputs;
use crate::error::{Error, Result};

pub const DTGA: &str = "text.dtga";

fn head_width(d: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::dim("gated_self_attention", format!("width {d} not divisible by {heads} heads")));
    }
    Ok(d / heads)
}

pub fn register_ga(store: &mut ParamStore, prefix: &str, d: usize, heads: usize) -> Result<()> {
    let dh = head_width(d, heads)?;
    for h in 0..heads {
        let p = format!("{prefix}.head{h}");
        register_affine(store, &format!("{p}.q"), d, dh)?;
        register_affine(store, &format!("{p}.k"), d, dh)?;
        register_affine(store, &format!("{p}.v"), d, dh)?;
        register_affine(store, &format!("{p}.gate"), dh, dh)?;
    }
    Ok(())
}

/// One attention head on `x` (`N_c x d`), returning `N_c x d/h`.
fn ga_head(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let q = affine(tape, store, &format!("{prefix}.q"), x)?;
    let k = affine(tape, store, &format!("{prefix}.k"), x)?;
    let v = affine(tape, store, &format!("{prefix}.v"), x)?;
    let qk = tape.mul(q, k)?;
    let g = affine(tape, store, &format!("{prefix}.gate"), qk)?;
    let g = tape.sigmoid(g);
    let q = tape.mul(g, q)?;
    let k = tape.mul(g, k)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let dh = tape.value(v).cols();
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let attn = tape.softmax_rows(scores)?;
    tape.matmul(attn, v)
}

/// Multi-head gated self-attention; heads are concatenated without an output projection.
pub fn gated_self_attention(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let d = tape.value(x).cols();
    head_width(d, heads)?;
    if tape.value(x).rows() == 0 {
        return Err(Error::Invalid("attention over an empty sequence".into()));
    }
    let outs = (0..heads)
        .map(|h| ga_head(tape, store, &format!("{prefix}.head{h}"), x))
        .collect::<Result<Vec<_>>>()?;
    if outs.len() == 1 {
        return Ok(outs[0]);
    }
    tape.concat_cols(&outs)
}

/// Intermediate nodes of one [`dtga`] evaluation. Branch `a` attends over the
/// first input and is gated by the second; branch `b` the other way round.
#[derive(Clone, Copy, Debug)]
pub struct DtgaTrace {
    pub attended_a: Var,
    pub joint_a: Var,
    pub prob_b: Var,
    pub attended_b: Var,
    pub joint_b: Var,
    pub prob_a: Var,
    pub gated_a: Var,
    pub gated_b: Var,
    pub combined: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DtgaOutput {
    pub f_g: Var,
    pub trace: DtgaTrace,
}

pub fn register_dtga(store: &mut ParamStore, d: usize, heads: usize) -> Result<()> {
    for branch in ["branch_a", "branch_b"] {
        let p = format!("{DTGA}.{branch}");
        register_ga(store, &format!("{p}.ga_main"), d, heads)?;
        register_ga(store, &format!("{p}.ga_mine"), d, heads)?;
        register_affine(store, &format!("{p}.prob.fc1"), d, d)?;
        register_affine(store, &format!("{p}.prob.fc2"), d, d)?;
    }
    register_mlp(store, &format!("{DTGA}.decode"), d)
}

/// affine -> relu -> affine -> sigmoid.
fn probability(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let h = affine(tape, store, &format!("{prefix}.fc1"), x)?;
    let h = tape.relu(h);
    let h = affine(tape, store, &format!("{prefix}.fc2"), h)?;
    Ok(tape.sigmoid(h))
}

/// Returns `(attended, joint, prob, gated)` for one branch.
fn branch(tape: &mut Tape, store: &ParamStore, prefix: &str, a: Var, b: Var, heads: usize) -> Result<[Var; 4]> {
    let attended = gated_self_attention(tape, store, &format!("{prefix}.ga_main"), a, heads)?;
    let joint = tape.add(attended, a)?;
    let mined = gated_self_attention(tape, store, &format!("{prefix}.ga_mine"), b, heads)?;
    let prob = probability(tape, store, &format!("{prefix}.prob"), mined)?;
    let gated = tape.mul(joint, prob)?;
    Ok([attended, joint, prob, gated])
}

/// The two branch inputs selected by `mode`.
pub fn dtga_inputs(tape: &mut Tape, h: HiddenStates, mode: DtgaInputs) -> Result<(Var, Var)> {
    if tape.value(h.h_forward).shape() != tape.value(h.h_backward).shape() {
        return Err(Error::dim(
            "dtga",
            format!("{:?} vs {:?}", tape.value(h.h_forward).shape(), tape.value(h.h_backward).shape()),
        ));
    }
    Ok(match mode {
        DtgaInputs::Ff => (h.h_forward, h.h_forward),
        DtgaInputs::Bb => (h.h_backward, h.h_backward),
        DtgaInputs::Fb => (h.h_forward, h.h_backward),
        DtgaInputs::Avg => {
            let m = average_states(tape, h)?;
            (m, m)
        }
    })
}

/// `(H_f + H_b) / 2`.
pub fn average_states(tape: &mut Tape, h: HiddenStates) -> Result<Var> {
    let s = tape.add(h.h_forward, h.h_backward)?;
    Ok(tape.scale(s, 0.5))
}

pub fn dtga(tape: &mut Tape, store: &ParamStore, h: HiddenStates, mode: DtgaInputs, heads: usize) -> Result<DtgaOutput> {
    let (a, b) = dtga_inputs(tape, h, mode)?;
    let [attended_a, joint_a, prob_b, gated_a] = branch(tape, store, &format!("{DTGA}.branch_a"), a, b, heads)?;
    let [attended_b, joint_b, prob_a, gated_b] = branch(tape, store, &format!("{DTGA}.branch_b"), b, a, heads)?;
    let combined = tape.add(gated_a, gated_b)?;
    let f_g = residual_mlp(tape, store, &format!("{DTGA}.decode"), combined)?;
    Ok(DtgaOutput {
        f_g,
        trace: DtgaTrace { attended_a, joint_a, prob_b, attended_b, joint_b, prob_a, gated_a, gated_b, combined },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = crate::autograd::RngStream::new(seed);
        Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn single_position_returns_its_value() {
        let mut s = ParamStore::new(3);
        register_ga(&mut s, "ga", 4, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(rand_tensor(1, 4, 1));
        let y = gated_self_attention(&mut tape, &s, "ga", x, 1).unwrap();
        let v = affine(&mut tape, &s, "ga.head0.v", x).unwrap();
        assert!(tape.value(y).max_abs_diff(tape.value(v)) < 1e-15);
    }

    #[test]
    fn zero_query_key_gives_mean_of_values() {
        let mut s = ParamStore::new(3);
        register_ga(&mut s, "ga", 4, 2).unwrap();
        for name in s.names() {
            if name.contains(".q.") || name.contains(".k.") {
                let n = s.get(&name).unwrap().len();
                s.set(&name, &vec![0.0; n]).unwrap();
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(rand_tensor(3, 4, 2));
        let y = gated_self_attention(&mut tape, &s, "ga", x, 2).unwrap();
        let v0 = affine(&mut tape, &s, "ga.head0.v", x).unwrap();
        let v1 = affine(&mut tape, &s, "ga.head1.v", x).unwrap();
        let v = tape.concat_cols(&[v0, v1]).unwrap();
        let mean = tape.mean_rows(v).unwrap();
        let y = tape.value(y).clone();
        for r in 0..3 {
            for c in 0..4 {
                assert!((y.get(r, c) - tape.value(mean).get(0, c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn indivisible_heads() {
        let mut s = ParamStore::new(3);
        assert!(register_ga(&mut s, "ga", 6, 4).is_err());
    }

    #[test]
    fn symmetric_branches_agree() {
        let mut s = ParamStore::new(4);
        register_dtga(&mut s, 4, 2).unwrap();
        for name in s.names().into_iter().filter(|n| n.contains("branch_a")) {
            let vals = s.get(&name).unwrap().values().to_vec();
            s.set(&name.replace("branch_a", "branch_b"), &vals).unwrap();
        }
        let mut tape = Tape::new();
        let hf = tape.constant(rand_tensor(3, 4, 5));
        let hb = tape.constant(rand_tensor(3, 4, 6));
        let out = dtga(&mut tape, &s, HiddenStates { h_forward: hf, h_backward: hb }, DtgaInputs::Ff, 2).unwrap();
        let t = out.trace;
        assert_eq!(tape.value(t.gated_a), tape.value(t.gated_b));
        let doubled = tape.scale(t.gated_a, 2.0);
        assert!(tape.value(doubled).max_abs_diff(tape.value(t.combined)) < 1e-15);
        assert_eq!(tape.value(out.f_g).shape(), &[3, 4]);
        assert!(tape.value(t.prob_a).values().iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn mismatched_directions() {
        let mut s = ParamStore::new(4);
        register_dtga(&mut s, 4, 1).unwrap();
        let mut tape = Tape::new();
        let hf = tape.constant(rand_tensor(3, 4, 5));
        let hb = tape.constant(rand_tensor(2, 4, 6));
        assert!(dtga(&mut tape, &s, HiddenStates { h_forward: hf, h_backward: hb }, DtgaInputs::Fb, 1).is_err());
    }
}
