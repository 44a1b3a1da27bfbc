mod common;

use std::rc::Rc;

use common::*;
use condfip_core::attention::attention_matrix;
use condfip_core::eval::{mmd_rbf, rmse};
use condfip_core::sim::{sample_dag, sample_noise, sample_scm, DistributionTag, GraphScheme, MechanismMix, ScmDistributionConfig};
use condfip_core::{Mask, Normalizer, Tape, Tensor};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn logits(rows: usize, cols: usize, spread: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-spread..spread))
}

fn random_mask(rows: usize, cols: usize, seed: u64) -> Mask {
    let mut r = rng(seed ^ 0x55);
    let bits: Vec<bool> = (0..rows * cols).map(|_| r.gen_bool(0.6)).collect();
    Mask::from_fn(rows, cols, |i, j| bits[i * cols + j])
}

fn weights(l: &Array2<f64>, mask: &Mask, kind: Normalizer) -> Array2<f64> {
    // identity queries against `l` as keys reproduce `l` as the logit matrix
    let e = l.ncols();
    let q = Array2::from_shape_fn((l.nrows(), e), |(i, j)| l[[i, j]] * (e as f64).sqrt());
    let k = Array2::eye(e);
    attention_matrix(&q, &k, Some(mask), kind)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dag_rows_sum_within_unit_interval(seed: u64, rows in 1usize..6, cols in 1usize..6, spread in 0.1f64..8.0) {
        let mask = random_mask(rows, cols, seed);
        let w = weights(&logits(rows, cols, spread, seed), &mask, Normalizer::Dag);
        for (i, row) in w.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            prop_assert!((-1e-15..=1.0 + 1e-12).contains(&s));
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            for j in 0..cols {
                if !mask.allows(i, j) {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_unless_fully_masked(seed: u64, rows in 1usize..6, cols in 1usize..6, spread in 0.1f64..8.0) {
        let mask = random_mask(rows, cols, seed);
        let w = weights(&logits(rows, cols, spread, seed), &mask, Normalizer::Softmax);
        for (i, row) in w.rows().into_iter().enumerate() {
            let open = (0..cols).any(|j| mask.allows(i, j));
            let expect = if open { 1.0 } else { 0.0 };
            prop_assert!((row.sum() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn dag_rows_equal_softmax_rows_when_mass_reaches_one(seed: u64, rows in 1usize..6, cols in 1usize..6, spread in 0.1f64..8.0) {
        let l = logits(rows, cols, spread, seed);
        let mask = random_mask(rows, cols, seed);
        let dag = weights(&l, &mask, Normalizer::Dag);
        let soft = weights(&l, &mask, Normalizer::Softmax);
        for i in 0..rows {
            let mass: f64 = (0..cols).filter(|&j| mask.allows(i, j)).map(|j| l[[i, j]].exp()).sum();
            if mass >= 1.0 {
                for j in 0..cols {
                    prop_assert!((dag[[i, j]] - soft[[i, j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tape_dag_weights_match_definition(seed: u64, rows in 1usize..5, cols in 1usize..5, spread in 0.1f64..6.0, scale in 0.2f64..2.0) {
        let l = logits(rows, cols, spread, seed);
        let mask = random_mask(rows, cols, seed);
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::new(vec![1, rows, cols], l.iter().copied().collect()).unwrap()).unwrap();
        let w = tape.attention_weights(x, Some(Rc::new(mask.clone())), Normalizer::Dag, scale).unwrap();
        let expect = dag_attention_brute(&l, &|i, j| mask.allows(i, j), scale);
        for (a, b) in tape.value(w).data().iter().zip(expect.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rmse_matches_brute_force(seed: u64, n in 1usize..20, d in 1usize..8) {
        let mut r = rng(seed);
        let (y, y_hat) = (random_matrix(n, d, &mut r) * 3.0, random_matrix(n, d, &mut r));
        prop_assert!((rmse(&y, &y_hat).unwrap() - rmse_brute(&y, &y_hat)).abs() < 1e-12);
    }

    #[test]
    fn mmd_is_symmetric_and_nonnegative(seed: u64, na in 1usize..12, nb in 1usize..12, d in 1usize..4, shift in -2.0f64..2.0) {
        let mut r = rng(seed);
        let a = random_matrix(na, d, &mut r);
        let b = random_matrix(nb, d, &mut r) + shift;
        let ab = mmd_rbf(&a, &b, None).unwrap();
        let ba = mmd_rbf(&b, &a, None).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }
}

fn scheme(index: usize, d: usize) -> GraphScheme {
    match index {
        0 => GraphScheme::ErdosRenyi { edge_prob: 0.4 },
        1 => GraphScheme::ScaleFree { m: 2 },
        2 => GraphScheme::WattsStrogatz { k: 2 * (1 + d / 6), rewire: 0.3 },
        _ => GraphScheme::StochasticBlock { blocks: 2, p_within: 0.6, p_between: 0.1 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sampled_graphs_admit_a_topological_order(seed: u64, d in 1usize..16, s in 0usize..4) {
        let dag = sample_dag(&scheme(s, d), d, &mut rng(seed)).unwrap();
        let order = dag.topological_order().unwrap();
        let mut position = vec![usize::MAX; d];
        for (k, &node) in order.iter().enumerate() {
            position[node] = k;
        }
        prop_assert!(position.iter().all(|&p| p < d));
        for (parent, child) in dag.edges() {
            prop_assert!(position[parent] < position[child]);
        }
    }

    #[test]
    fn ancestral_generation_equals_fixed_point_and_abduction_recovers_noise(
        seed: u64, d in 2usize..10, out: bool, mix in 0usize..3,
    ) {
        let mix = [MechanismMix::Both, MechanismMix::Linear, MechanismMix::Rff][mix];
        let tag = if out { DistributionTag::Out } else { DistributionTag::In };
        let mut r = rng(seed);
        let scm = sample_scm(&ScmDistributionConfig::preset(tag, d, mix), &mut r).unwrap();
        let noise = sample_noise(scm.noise(), 16, &mut r).unwrap();
        let x = scm.generate(&noise).unwrap();
        let fp = scm.fixed_point(&noise, d).unwrap();
        prop_assert!((&x - &fp).iter().all(|e| e.abs() < 1e-9));
        let recovered = &x - &scm.eval(&x);
        prop_assert!((recovered - &noise).iter().all(|e| e.abs() < 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn softmax_attention_gradients(seed: u64) {
        let (name, err) = grad_attention(seed, Normalizer::Softmax);
        prop_assert!(err < GRAD_RTOL, "{}: {}", name, err);
    }

    #[test]
    fn dag_attention_gradients(seed: u64) {
        let (name, err) = grad_attention(seed, Normalizer::Dag);
        prop_assert!(err < GRAD_RTOL, "{}: {}", name, err);
    }
}
