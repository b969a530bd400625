mod common;

use dove::autograd::RngStream;
use dove::config::{HeadKind, TrainConfig};
use dove::eval::{mean_recall, recall_at_k, Direction, SimilarityMatrix};
use dove::model::{image_vectors, pair_vector, text_vectors, Model, ModelConfig};
use dove::objective::{cosine, lr_at, triplet_loss};
use proptest::prelude::*;

fn square(max: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2..=max).prop_flat_map(|b| (Just(b), prop::collection::vec(-1.0f64..1.0, b * b)))
}

fn permute(s: &[f64], b: usize, p: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            out[i * b + j] = s[p[i] * b + p[j]];
        }
    }
    out
}

fn small_model(ifa_head: HeadKind, iga_head: HeadKind, seed: u64) -> Model {
    let cfg = TrainConfig { d: 8, heads: 2, ifa_head, iga_head, ..Default::default() };
    let mut model = Model::new(ModelConfig::from_train(&cfg, 6, 4, 5), seed).unwrap();
    common::randomize(&mut model.params, seed, 0.4);
    model
}

fn rows(rng: &mut RngStream, n: usize, c: usize) -> Vec<Vec<f64>> {
    common::rand_mat(rng, n, c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triplet_is_nonnegative((b, s) in square(6), alpha in 0.0f64..1.0) {
        prop_assert!(triplet_loss(&s, b, alpha).unwrap() >= 0.0);
    }

    #[test]
    fn triplet_ignores_batch_order((b, s) in square(6), seed in any::<u64>()) {
        let mut p: Vec<usize> = (0..b).collect();
        RngStream::new(seed).shuffle(&mut p);
        let a = triplet_loss(&s, b, 0.2).unwrap();
        let c = triplet_loss(&permute(&s, b, &p), b, 0.2).unwrap();
        prop_assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn triplet_ignores_a_common_shift((b, s) in square(6), c in -2.0f64..2.0) {
        let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
        let (x, y) = (triplet_loss(&s, b, 0.2).unwrap(), triplet_loss(&shifted, b, 0.2).unwrap());
        prop_assert!((x - y).abs() < 1e-9);
    }

    #[test]
    fn cosine_ignores_positive_scale(
        v in prop::collection::vec(-3.0f64..3.0, 6),
        t in prop::collection::vec(-3.0f64..3.0, 6),
        a in 1e-3f64..1e3,
        c in 1e-3f64..1e3,
    ) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3) && t.iter().any(|x| x.abs() > 1e-3));
        let sv: Vec<f64> = v.iter().map(|x| a * x).collect();
        let st: Vec<f64> = t.iter().map(|x| c * x).collect();
        prop_assert!((cosine(&v, &t).unwrap() - cosine(&sv, &st).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn recalls_match_full_sort_and_are_monotone(
        n_i in 1usize..8,
        per in 1usize..4,
        seed in any::<u64>(),
        coarse in any::<bool>(),
    ) {
        let n_t = n_i * per;
        let mut rng = RngStream::new(seed);
        // Coarse scores force many ties.
        let scores: Vec<f64> = (0..n_i * n_t)
            .map(|_| if coarse { rng.below(3) as f64 } else { rng.normal() })
            .collect();
        let mut gt: Vec<usize> = (0..n_t).map(|j| j % n_i).collect();
        rng.shuffle(&mut gt);
        let s = SimilarityMatrix::new(n_i, n_t, scores.clone(), gt.clone()).unwrap();
        for (dir, iq) in [(Direction::ImageToText, true), (Direction::TextToImage, false)] {
            let r: Vec<f64> = [1, 5, 10].iter().map(|&k| recall_at_k(&s, k, dir)).collect();
            prop_assert!(r[0] <= r[1] && r[1] <= r[2]);
            for (k, got) in [1, 5, 10].iter().zip(&r) {
                prop_assert_eq!(*got, common::brute_recall(&scores, n_i, n_t, &gt, *k, iq));
            }
        }
    }

    #[test]
    fn mean_recall_of_copies(x in 0.0f64..100.0) {
        prop_assert!((mean_recall([x; 6]) - x).abs() < 1e-9);
    }

    #[test]
    fn learning_rate_never_increases(lr0 in 1e-6f64..1e-1, factor in 0.01f64..1.0, every in 1usize..30) {
        let cfg = TrainConfig { lr0, decay_factor: factor, decay_every: every, ..Default::default() };
        for e in 0..200 {
            prop_assert!(lr_at(&cfg, e + 1) <= lr_at(&cfg, e));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn region_and_multiscale_order_do_not_change_embeddings(seed in any::<u64>(), nonlinear in any::<bool>()) {
        let kind = if nonlinear { HeadKind::Nonlinear } else { HeadKind::Linear };
        let model = small_model(kind, kind, seed % 1000);
        let mut rng = RngStream::new(seed);
        let msv = rows(&mut rng, 3, 6);
        let roi = rows(&mut rng, 5, 4);
        let words = common::to_tensor(&rows(&mut rng, 4, 5));
        let base = image_vectors(model.net(), &common::to_tensor(&msv), &common::to_tensor(&roi)).unwrap();
        let text = text_vectors(model.net(), &words).unwrap();
        let t_rg = pair_vector(model.net(), &base, &text).unwrap();

        let mut p_r: Vec<usize> = (0..5).collect();
        let mut p_m: Vec<usize> = (0..3).collect();
        rng.shuffle(&mut p_r);
        rng.shuffle(&mut p_m);
        let roi_p: Vec<Vec<f64>> = p_r.iter().map(|&i| roi[i].clone()).collect();
        let msv_p: Vec<Vec<f64>> = p_m.iter().map(|&i| msv[i].clone()).collect();
        let moved = image_vectors(model.net(), &common::to_tensor(&msv_p), &common::to_tensor(&roi_p)).unwrap();

        prop_assert_eq!(moved.v_mr.values(), base.v_mr.values());
        prop_assert_eq!(moved.v_r.values(), base.v_r.values());
        prop_assert_eq!(moved.v_m.values(), base.v_m.values());
        let moved_t_rg = pair_vector(model.net(), &moved, &text).unwrap();
        prop_assert_eq!(moved_t_rg.values(), t_rg.values());
    }
}

#[test]
fn token_order_matters() {
    let model = small_model(HeadKind::Linear, HeadKind::Nonlinear, 3);
    let mut rng = RngStream::new(9);
    let words = rows(&mut rng, 4, 5);
    let reversed: Vec<Vec<f64>> = words.iter().rev().cloned().collect();
    let a = text_vectors(model.net(), &common::to_tensor(&words)).unwrap();
    let b = text_vectors(model.net(), &common::to_tensor(&reversed)).unwrap();
    assert!(a.t_g.max_abs_diff(&b.t_g) > 1e-9);
}

