//! Plain nested-`Vec` reference implementations of the network blocks,
//! written with explicit loops and no use of the tape.

#![allow(dead_code)]

use dove::autograd::{ParamStore, RngStream, Tape, Tensor};
use dove::config::{DtgaInputs, HeadKind};
use dove::model::attention::{self, register_dtga, register_ga};
use dove::model::roam::{self, register_ifa, register_iga};
use dove::model::text_encoder::{self, register_bigru, BACKWARD, FORWARD};
use dove::objective::{adam_step, OptState};

pub type Mat = Vec<Vec<f64>>;

pub const SEEDS: u64 = 10;

pub fn rand_mat(rng: &mut RngStream, rows: usize, cols: usize) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.normal()).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    let rows: Vec<&[f64]> = m.iter().map(Vec::as_slice).collect();
    Tensor::matrix(&rows).unwrap()
}

pub fn max_diff(t: &Tensor, m: &Mat) -> f64 {
    assert_eq!(t.shape(), &[m.len(), m[0].len()]);
    let mut worst: f64 = 0.0;
    for (r, row) in m.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((t.get(r, c) - v).abs());
        }
    }
    worst
}

/// Overwrites every parameter (biases included) with scaled normal draws.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = RngStream::new(seed ^ 0x5eed);
    for name in store.names() {
        let n = store.get(&name).unwrap().len();
        let vals: Vec<f64> = (0..n).map(|_| scale * rng.normal()).collect();
        store.set(&name, &vals).unwrap();
    }
}

fn param(store: &ParamStore, name: &str) -> Mat {
    let t = store.get(name).unwrap();
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn tr(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

fn zip(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect()).collect()
}

fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|row| row.iter().map(|v| f(*v)).collect()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x·W + b`, with `b` broadcast over rows.
fn lin(store: &ParamStore, prefix: &str, x: &Mat) -> Mat {
    let w = param(store, &format!("{prefix}.w"));
    let b = param(store, &format!("{prefix}.b"));
    let y = mm(x, &w);
    y.iter().map(|row| row.iter().zip(&b[0]).map(|(v, c)| v + c).collect()).collect()
}

fn two_layer(store: &ParamStore, prefix: &str, x: &Mat) -> Mat {
    let h = map(&lin(store, &format!("{prefix}.fc1"), x), |v| v.max(0.0));
    lin(store, &format!("{prefix}.fc2"), &h)
}

fn mean_cols(x: &Mat) -> Mat {
    let n = x.len() as f64;
    vec![(0..x[0].len()).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / n).collect()]
}

// ---- gated self-attention ----

pub fn ga(store: &ParamStore, prefix: &str, x: &Mat, heads: usize) -> Mat {
    let mut out: Mat = vec![Vec::new(); x.len()];
    for h in 0..heads {
        let p = format!("{prefix}.head{h}");
        let q = lin(store, &format!("{p}.q"), x);
        let k = lin(store, &format!("{p}.k"), x);
        let v = lin(store, &format!("{p}.v"), x);
        let g = map(&lin(store, &format!("{p}.gate"), &zip(&q, &k, |a, b| a * b)), sig);
        let q2 = zip(&g, &q, |a, b| a * b);
        let k2 = zip(&g, &k, |a, b| a * b);
        let dh = q[0].len() as f64;
        let n = x.len();
        for i in 0..n {
            let logits: Vec<f64> =
                (0..n).map(|j| q2[i].iter().zip(&k2[j]).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt()).collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut acc = vec![0.0; v[0].len()];
            for (j, vj) in v.iter().enumerate() {
                for (a, x) in acc.iter_mut().zip(vj) {
                    *a += e[j] / z * x;
                }
            }
            out[i].extend(acc);
        }
    }
    out
}

pub fn dtga(store: &ParamStore, hf: &Mat, hb: &Mat, mode: DtgaInputs, heads: usize) -> Mat {
    let avg = zip(hf, hb, |a, b| (a + b) / 2.0);
    let (a, b) = match mode {
        DtgaInputs::Ff => (hf.clone(), hf.clone()),
        DtgaInputs::Bb => (hb.clone(), hb.clone()),
        DtgaInputs::Fb => (hf.clone(), hb.clone()),
        DtgaInputs::Avg => (avg.clone(), avg),
    };
    let branch = |name: &str, main: &Mat, other: &Mat| {
        let p = format!("text.dtga.{name}");
        let joint = zip(&ga(store, &format!("{p}.ga_main"), main, heads), main, |x, y| x + y);
        let mined = ga(store, &format!("{p}.ga_mine"), other, heads);
        let prob = map(&two_layer(store, &format!("{p}.prob"), &mined), sig);
        zip(&joint, &prob, |x, y| x * y)
    };
    let t = zip(&branch("branch_a", &a, &b), &branch("branch_b", &b, &a), |x, y| x + y);
    zip(&two_layer(store, "text.dtga.decode", &t), &t, |x, y| x + y)
}

// ---- GRU ----

pub fn gru(store: &ParamStore, prefix: &str, e: &Mat, reverse: bool) -> Mat {
    let w = |g: &str| param(store, &format!("{prefix}.w_{g}"));
    let u = |g: &str| param(store, &format!("{prefix}.u_{g}"));
    let b = |g: &str| param(store, &format!("{prefix}.b_{g}"));
    let d = u("z").len();
    let mut h = vec![vec![0.0; d]];
    let mut out = vec![Vec::new(); e.len()];
    let order: Vec<usize> = if reverse { (0..e.len()).rev().collect() } else { (0..e.len()).collect() };
    for t in order {
        let x = vec![e[t].clone()];
        let pre = |g: &str, state: &Mat| zip(&zip(&mm(&x, &w(g)), &mm(state, &u(g)), |p, q| p + q), &b(g), |p, q| p + q);
        let z = map(&pre("z", &h), sig);
        let r = map(&pre("r", &h), sig);
        let rh = zip(&r, &h, |p, q| p * q);
        let cand = map(&pre("h", &rh), f64::tanh);
        h = vec![(0..d).map(|c| (1.0 - z[0][c]) * h[0][c] + z[0][c] * cand[0][c]).collect()];
        out[t] = h[0].clone();
    }
    out
}

// ---- region-oriented attention ----

fn head(store: &ParamStore, prefix: &str, kind: HeadKind, x: &Mat) -> Mat {
    match kind {
        HeadKind::Linear => lin(store, prefix, x),
        HeadKind::Nonlinear => zip(&two_layer(store, prefix, x), x, |a, b| a + b),
    }
}

pub fn ifa(store: &ParamStore, f_m: &Mat, f_r: &Mat, kind: HeadKind) -> Mat {
    let fm = lin(store, "roam.ifa.fm", f_m);
    let fr = lin(store, "roam.ifa.fr", f_r);
    let s = map(&mm(&fm, &tr(&fr)), sig);
    let top = zip(&mm(&s, &fr), &fm, |a, b| a + b);
    let bottom = zip(&mm(&tr(&s), &fm), &fr, |a, b| a + b);
    let stacked: Mat = top.into_iter().chain(bottom).collect();
    head(store, "roam.ifa.head", kind, &stacked)
}

/// Returns `T_RG` for pooled region rows `e_r` and pooled text `e_g`.
pub fn iga(store: &ParamStore, e_r: &Mat, e_g: &Mat, kind: HeadKind) -> Mat {
    let fr = lin(store, "roam.iga.fr", e_r);
    let fg = lin(store, "roam.iga.fg", e_g);
    let g = sig(fr[0].iter().zip(&fg[0]).map(|(a, b)| a * b).sum());
    let u = map(&fg, |v| g * v + v);
    let raw = match kind {
        HeadKind::Linear => lin(store, "roam.iga.head", &u),
        HeadKind::Nonlinear => two_layer(store, "roam.iga.head", &u),
    };
    zip(&raw, &u, |a, b| a + b)
}

pub fn pool(x: &Mat) -> Mat {
    mean_cols(x)
}

// ---- seeded comparisons, each returning the worst absolute difference ----

const D: usize = 8;
const HEADS: usize = 2;

pub fn ga_error() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut store = ParamStore::new(seed);
        register_ga(&mut store, "ga", D, HEADS).unwrap();
        randomize(&mut store, seed, 0.5);
        let mut rng = RngStream::new(100 + seed);
        let x = rand_mat(&mut rng, 2 + seed as usize % 4, D);
        let mut tape = Tape::new();
        let xv = tape.constant(to_tensor(&x));
        let y = attention::gated_self_attention(&mut tape, &store, "ga", xv, HEADS).unwrap();
        worst = worst.max(max_diff(tape.value(y), &ga(&store, "ga", &x, HEADS)));
    }
    worst
}

pub fn dtga_error() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut store = ParamStore::new(seed);
        register_dtga(&mut store, D, HEADS).unwrap();
        randomize(&mut store, seed, 0.4);
        let mut rng = RngStream::new(200 + seed);
        let n = 2 + seed as usize % 3;
        let (hf, hb) = (rand_mat(&mut rng, n, D), rand_mat(&mut rng, n, D));
        for mode in [DtgaInputs::Ff, DtgaInputs::Bb, DtgaInputs::Fb, DtgaInputs::Avg] {
            let mut tape = Tape::new();
            let h = text_encoder::HiddenStates {
                h_forward: tape.constant(to_tensor(&hf)),
                h_backward: tape.constant(to_tensor(&hb)),
            };
            let out = attention::dtga(&mut tape, &store, h, mode, HEADS).unwrap();
            worst = worst.max(max_diff(tape.value(out.f_g), &dtga(&store, &hf, &hb, mode, HEADS)));
        }
    }
    worst
}

pub fn gru_error() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let input = 5;
        let mut store = ParamStore::new(seed);
        register_bigru(&mut store, input, D).unwrap();
        randomize(&mut store, seed, 0.5);
        let mut rng = RngStream::new(300 + seed);
        let e = rand_mat(&mut rng, 1 + seed as usize % 5, input);
        let mut tape = Tape::new();
        let ev = tape.constant(to_tensor(&e));
        let h = text_encoder::bigru(&mut tape, &store, ev).unwrap();
        worst = worst.max(max_diff(tape.value(h.h_forward), &gru(&store, FORWARD, &e, false)));
        worst = worst.max(max_diff(tape.value(h.h_backward), &gru(&store, BACKWARD, &e, true)));
    }
    worst
}

pub fn ifa_error() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        for kind in [HeadKind::Linear, HeadKind::Nonlinear] {
            let mut store = ParamStore::new(seed);
            register_ifa(&mut store, D, kind).unwrap();
            randomize(&mut store, seed, 0.3);
            let mut rng = RngStream::new(400 + seed);
            let (f_m, f_r) = (rand_mat(&mut rng, 2, D), rand_mat(&mut rng, 3 + seed as usize % 3, D));
            let mut tape = Tape::new();
            let (a, b) = (tape.constant(to_tensor(&f_m)), tape.constant(to_tensor(&f_r)));
            let out = roam::ifa_fuse(&mut tape, &store, a, b, kind).unwrap();
            worst = worst.max(max_diff(tape.value(out.f_mr), &ifa(&store, &f_m, &f_r, kind)));
        }
    }
    worst
}

pub fn iga_error() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        for kind in [HeadKind::Linear, HeadKind::Nonlinear] {
            let mut store = ParamStore::new(seed);
            register_iga(&mut store, D, kind).unwrap();
            randomize(&mut store, seed, 0.3);
            let mut rng = RngStream::new(500 + seed);
            let (regions, words) = (rand_mat(&mut rng, 3, D), rand_mat(&mut rng, 4, D));
            let (e_r, e_g) = (pool(&regions), pool(&words));
            let mut tape = Tape::new();
            let (a, b) = (tape.constant(to_tensor(&e_r)), tape.constant(to_tensor(&e_g)));
            let out = roam::iga_guide(&mut tape, &store, a, b, kind).unwrap();
            worst = worst.max(max_diff(tape.value(out.t_rg), &iga(&store, &e_r, &e_g, kind)));
        }
    }
    worst
}

/// Two Adam steps on `f(w) = sum(w^2)` against the update written out by hand.
pub fn adam_error() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = RngStream::new(600 + seed);
        let w0: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let lr = 0.01 * (1.0 + seed as f64);
        let mut store = ParamStore::new(seed);
        store.register("w", &[1, 4], dove::autograd::Init::Zeros).unwrap();
        store.set("w", &w0).unwrap();
        let mut state = OptState::new(&store);

        let (mut w, mut m, mut v) = (w0.clone(), vec![0.0; 4], vec![0.0; 4]);
        for t in 1..=2 {
            let g: Vec<f64> = store.get("w").unwrap().values().iter().map(|x| 2.0 * x).collect();
            adam_step(&mut store, &[("w".to_string(), g)].into_iter().collect(), &mut state, lr).unwrap();
            for k in 0..4 {
                let g = 2.0 * w[k];
                m[k] = 0.9 * m[k] + 0.1 * g;
                v[k] = 0.999 * v[k] + 0.001 * g * g;
                let mh = m[k] / (1.0 - 0.9f64.powi(t));
                let vh = v[k] / (1.0 - 0.999f64.powi(t));
                w[k] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        for (a, b) in store.get("w").unwrap().values().iter().zip(&w) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Recall@k by fully sorting every query's score list (descending score, then ascending index).
pub fn brute_recall(scores: &[f64], n_i: usize, n_t: usize, gt: &[usize], k: usize, image_query: bool) -> f64 {
    let ranked = |mut idx: Vec<usize>, score: &dyn Fn(usize) -> f64| {
        idx.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).unwrap().then(a.cmp(&b)));
        idx
    };
    let mut hits = 0;
    if image_query {
        for i in 0..n_i {
            let order = ranked((0..n_t).collect(), &|j| scores[i * n_t + j]);
            if order.iter().take(k).any(|&j| gt[j] == i) {
                hits += 1;
            }
        }
        100.0 * hits as f64 / n_i as f64
    } else {
        for j in 0..n_t {
            let order = ranked((0..n_i).collect(), &|i| scores[i * n_t + j]);
            if order.iter().take(k).any(|&i| i == gt[j]) {
                hits += 1;
            }
        }
        100.0 * hits as f64 / n_t as f64
    }
}
