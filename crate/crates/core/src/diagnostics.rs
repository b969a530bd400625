//! Finite-difference gradient checks over every primitive and module on tiny shapes.

use crate::autograd::{grad_check, GradCheckOptions, GradCheckReport, Init, ParamStore, RngStream, Tape, Tensor, Var};
use crate::config::{DtgaInputs, HeadKind, TrainConfig};
use crate::data::{Batch, EmbeddingTable};
use crate::error::Result;
use crate::model::{attention, roam, text_encoder, visual, batch_loss, ModelConfig, Net};

/// Micro extents: batch 2, captions of at most 3 tokens, 2 multiscale rows,
/// 3 regions, width 8.
pub const MICRO_D: usize = 8;
pub const MICRO_HEADS: usize = 2;
pub const MICRO_BATCH: usize = 2;
pub const MICRO_N_M: usize = 2;
pub const MICRO_N_R: usize = 3;
pub const MICRO_D_IN: usize = 6;
pub const MICRO_EMBED: usize = 5;
pub const MICRO_VOCAB: usize = 7;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| scale * rng.normal()).collect()).expect("finite")
}

/// `sum(x ⊙ W)` for a fixed random `W`, so every output entry gets a distinct weight.
fn project_to_scalar(tape: &mut Tape, x: Var, rng_seed: u64) -> Result<Var> {
    let (r, c) = tape.value(x).dims2()?;
    let mut rng = RngStream::labeled(rng_seed, "projection");
    let w = tape.constant(rand_tensor(&mut rng, r, c, 1.0));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn store_with(seed: u64, entries: &[(&str, usize, usize, f64)]) -> Result<ParamStore> {
    let mut s = ParamStore::new(seed);
    let mut rng = RngStream::labeled(seed, "leaves");
    for &(name, r, c, scale) in entries {
        s.register(name, &[r, c], Init::Zeros)?;
        s.set(name, rand_tensor(&mut rng, r, c, scale).values())?;
    }
    Ok(s)
}

/// Every tape primitive, each wired into a scalar loss over parameter leaves.
fn primitive_checks(seed: u64, opts: &GradCheckOptions) -> Result<Vec<CheckResult>> {
    type Build = fn(&mut Tape, &ParamStore) -> Result<Var>;
    let cases: Vec<(&str, Build)> = vec![
        ("matmul", |t, s| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            t.matmul(a, b)
        }),
        ("matmul_unordered", |t, s| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            t.matmul_unordered(a, b)
        }),
        ("add", |t, s| {
            let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
            t.add(a, c)
        }),
        ("sub", |t, s| {
            let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
            t.sub(a, c)
        }),
        ("mul", |t, s| {
            let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
            t.mul(a, c)
        }),
        ("scale_shift", |t, s| {
            let a = t.param(s, "a")?;
            let x = t.scale(a, -1.7);
            Ok(t.shift(x, 0.3))
        }),
        ("scale_by", |t, s| {
            let (g, a) = (t.param(s, "g")?, t.param(s, "a")?);
            t.scale_by(g, a)
        }),
        ("add_row", |t, s| {
            let (a, r) = (t.param(s, "a")?, t.param(s, "r")?);
            t.add_row(a, r)
        }),
        ("affine", |t, s| {
            let (a, b, r) = (t.param(s, "a")?, t.param(s, "b")?, t.param(s, "bias")?);
            t.affine(a, b, r)
        }),
        ("sigmoid", |t, s| {
            let a = t.param(s, "a")?;
            Ok(t.sigmoid(a))
        }),
        ("tanh", |t, s| {
            let a = t.param(s, "a")?;
            Ok(t.tanh(a))
        }),
        ("relu", |t, s| {
            let a = t.param(s, "a")?;
            Ok(t.relu(a))
        }),
        ("softmax_rows", |t, s| {
            let a = t.param(s, "a")?;
            t.softmax_rows(a)
        }),
        ("mean_rows", |t, s| {
            let a = t.param(s, "a")?;
            t.mean_rows(a)
        }),
        ("concat_rows", |t, s| {
            let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
            t.concat_rows(&[a, c])
        }),
        ("concat_cols", |t, s| {
            let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
            t.concat_cols(&[a, c])
        }),
        ("slice_rows", |t, s| {
            let a = t.param(s, "a")?;
            t.slice_rows(a, 1, 2)
        }),
        ("transpose", |t, s| {
            let a = t.param(s, "a")?;
            t.transpose(a)
        }),
        ("cosine", |t, s| {
            let (r, q) = (t.param(s, "r")?, t.param(s, "q")?);
            t.cosine(r, q)
        }),
        ("triplet_loss", |t, s| {
            let m = t.param(s, "m")?;
            t.triplet_loss(m, 0.2)
        }),
    ];
    let store = store_with(
        seed,
        &[("a", 3, 4, 1.0), ("b", 4, 2, 1.0), ("c", 3, 4, 1.0), ("g", 1, 1, 1.0), ("r", 1, 4, 1.0), ("q", 1, 4, 1.0), ("m", 3, 3, 0.3), ("bias", 1, 2, 1.0)],
    )?;
    let mut out = Vec::new();
    for (name, build) in cases {
        // Each case only differentiates the leaves it touches; the rest report zero error.
        let report = grad_check(&store, opts, |t, s| {
            let y = build(t, s)?;
            if t.value(y).len() == 1 {
                Ok(y)
            } else {
                project_to_scalar(t, y, seed)
            }
        })?;
        out.push(CheckResult { name: format!("primitive/{name}"), report });
    }
    // sum reduction on its own
    let report = grad_check(&store, opts, |t, s| {
        let a = t.param(s, "a")?;
        let sq = t.mul(a, a)?;
        Ok(t.sum(sq))
    })?;
    out.push(CheckResult { name: "primitive/sum".into(), report });
    Ok(out)
}

fn micro_model(seed: u64, ifa_head: HeadKind, iga_head: HeadKind, mode: DtgaInputs) -> Result<(ModelConfig, ParamStore)> {
    let cfg = ModelConfig {
        d: MICRO_D,
        d_in: MICRO_D_IN,
        d_r: MICRO_D / 2,
        embed_dim: MICRO_EMBED,
        heads: MICRO_HEADS,
        dtga_inputs: mode,
        no_dtga: false,
        no_ifa: false,
        no_iga: false,
        ifa_head,
        iga_head,
    };
    let params = cfg.init_params(seed)?;
    Ok((cfg, params))
}

fn micro_batch(seed: u64) -> Result<(Batch, EmbeddingTable)> {
    let mut rng = RngStream::labeled(seed, "micro-batch");
    let table = EmbeddingTable::new(
        MICRO_VOCAB,
        MICRO_EMBED,
        (0..MICRO_VOCAB * MICRO_EMBED).map(|_| rng.normal()).collect(),
    )?;
    let msv = (0..MICRO_BATCH).map(|_| rand_tensor(&mut rng, MICRO_N_M, MICRO_D_IN, 1.0)).collect();
    let roi = (0..MICRO_BATCH).map(|_| rand_tensor(&mut rng, MICRO_N_R, MICRO_D / 2, 1.0)).collect();
    let captions = vec![vec![1, 4, 2], vec![3, 6]];
    Ok((Batch { msv, roi, captions, image_ids: vec![0, 1] }, table))
}

/// Runs the whole suite. `max_coords` caps coordinates per parameter tensor.
pub fn gradcheck_suite(seed: u64, max_coords: Option<usize>) -> Result<Vec<CheckResult>> {
    let opts = GradCheckOptions { max_coords_per_param: max_coords, seed, ..Default::default() };
    let mut out = primitive_checks(seed, &opts)?;
    let mut rng = RngStream::labeled(seed, "module-inputs");
    let words = rand_tensor(&mut rng, 3, MICRO_EMBED, 1.0);
    let hidden_f = rand_tensor(&mut rng, 3, MICRO_D, 0.5);
    let hidden_b = rand_tensor(&mut rng, 3, MICRO_D, 0.5);
    let msv = rand_tensor(&mut rng, MICRO_N_M, MICRO_D_IN, 1.0);
    let roi = rand_tensor(&mut rng, MICRO_N_R, MICRO_D / 2, 1.0);
    let f_m = rand_tensor(&mut rng, MICRO_N_M, MICRO_D, 0.5);
    let f_r = rand_tensor(&mut rng, MICRO_N_R, MICRO_D, 0.5);
    let e_r = rand_tensor(&mut rng, 1, MICRO_D, 0.5);
    let e_g = rand_tensor(&mut rng, 1, MICRO_D, 0.5);

    let (_, params) = micro_model(seed, HeadKind::Linear, HeadKind::Nonlinear, DtgaInputs::Fb)?;
    let only = |prefix: &str| -> Result<ParamStore> {
        let mut s = ParamStore::new(seed);
        for e in params.iter().filter(|e| e.name.starts_with(prefix)) {
            s.insert_loaded(&e.name, e.tensor.clone())?;
        }
        Ok(s)
    };

    let gru = only("text.gru")?;
    out.push(CheckResult {
        name: "gru".into(),
        report: grad_check(&gru, &opts, |t, s| {
            let e = t.constant(words.clone());
            let h = text_encoder::bigru(t, s, e)?;
            let both = t.concat_cols(&[h.h_forward, h.h_backward])?;
            project_to_scalar(t, both, seed)
        })?,
    });

    let dt = only("text.dtga")?;
    out.push(CheckResult {
        name: "gated_attention".into(),
        report: grad_check(&dt, &opts, |t, s| {
            let x = t.constant(hidden_f.clone());
            let y = attention::gated_self_attention(t, s, "text.dtga.branch_a.ga_main", x, MICRO_HEADS)?;
            project_to_scalar(t, y, seed)
        })?,
    });
    for mode in [DtgaInputs::Fb, DtgaInputs::Avg] {
        out.push(CheckResult {
            name: format!("dtga/{mode}"),
            report: grad_check(&dt, &opts, |t, s| {
                let h = text_encoder::HiddenStates {
                    h_forward: t.constant(hidden_f.clone()),
                    h_backward: t.constant(hidden_b.clone()),
                };
                let y = attention::dtga(t, s, h, mode, MICRO_HEADS)?.f_g;
                project_to_scalar(t, y, seed)
            })?,
        });
    }

    let vis = only("visual")?;
    out.push(CheckResult {
        name: "visual".into(),
        report: grad_check(&vis, &opts, |t, s| {
            let m = t.constant(msv.clone());
            let r = t.constant(roi.clone());
            let fm = visual::msv_project(t, s, m)?;
            let fr = visual::roi_project(t, s, r)?;
            let y = t.concat_rows(&[fm, fr])?;
            project_to_scalar(t, y, seed)
        })?,
    });

    for kind in [HeadKind::Linear, HeadKind::Nonlinear] {
        let (_, p) = micro_model(seed, kind, kind, DtgaInputs::Fb)?;
        let ifa = {
            let mut s = ParamStore::new(seed);
            for e in p.iter().filter(|e| e.name.starts_with("roam.ifa")) {
                s.insert_loaded(&e.name, e.tensor.clone())?;
            }
            s
        };
        out.push(CheckResult {
            name: format!("ifa/{kind}"),
            report: grad_check(&ifa, &opts, |t, s| {
                let a = t.constant(f_m.clone());
                let b = t.constant(f_r.clone());
                let y = roam::ifa_fuse(t, s, a, b, kind)?.f_mr;
                project_to_scalar(t, y, seed)
            })?,
        });
        let iga = {
            let mut s = ParamStore::new(seed);
            for e in p.iter().filter(|e| e.name.starts_with("roam.iga")) {
                s.insert_loaded(&e.name, e.tensor.clone())?;
            }
            s
        };
        out.push(CheckResult {
            name: format!("iga/{kind}"),
            report: grad_check(&iga, &opts, |t, s| {
                let a = t.constant(e_r.clone());
                let b = t.constant(e_g.clone());
                let y = roam::iga_guide(t, s, a, b, kind)?.t_rg;
                project_to_scalar(t, y, seed)
            })?,
        });
    }

    let (cfg, full) = micro_model(seed, HeadKind::Linear, HeadKind::Nonlinear, DtgaInputs::Fb)?;
    let (batch, table) = micro_batch(seed)?;
    let train = TrainConfig::default();
    out.push(CheckResult {
        name: "total_loss".into(),
        report: grad_check(&full, &opts, |t, s| {
            let net = Net { cfg: &cfg, params: s };
            Ok(batch_loss(t, net, &table, &batch, train.alpha, train.lambda_g)?.total)
        })?,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass() {
        let opts = GradCheckOptions { seed: 3, ..Default::default() };
        for r in primitive_checks(3, &opts).unwrap() {
            assert!(r.report.max_rel_error < 1e-6, "{}: {}", r.name, r.report.max_rel_error);
        }
    }
}
