mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stanlab::model::Mode;
use stanlab::tensor::{flat_index, multi_index, ops, Tape};
use stanlab::Tensor;

#[test]
fn every_op_passes_gradient_check_over_twenty_seeds() {
    for op in common::OPS {
        for seed in 0..20 {
            let r64 = common::check_op::<f64>(op, seed);
            assert!(r64.pass, "f64 {op} seed {seed}: {r64:?}");
            assert!(r64.checked > 0);
            let r32 = common::check_op::<f32>(op, seed);
            assert!(r32.pass, "f32 {op} seed {seed}: {r32:?}");
        }
    }
}

#[test]
fn full_model_passes_gradient_check_on_one_clip() {
    for mode in Mode::ALL {
        let (syn, clips) = common::tiny_clips(1, 1);
        let cfg = common::tiny_model(&syn, mode, 3);
        let r64 = common::check_stan::<f64>(&cfg, &clips);
        assert!(r64.pass, "{r64:?}");
        let r32 = common::check_stan::<f32>(&cfg, &clips);
        assert!(r32.pass, "{r32:?}");
    }
}

#[test]
fn separate_space_features_and_hidden_layers_pass_gradient_check() {
    let (syn, clips) = common::tiny_clips(2, 2);
    let cfg = stanlab::model::StanConfig {
        separate_space_features: true,
        mlp_hidden: true,
        gate_kernel: 3,
        visual_kernel: 3,
        ..common::tiny_model(&syn, Mode::AudioVisual, 5)
    };
    let r = common::check_stan::<f64>(&cfg, &clips);
    assert!(r.pass, "{r:?}");
}

#[test]
fn elementwise_mul_by_zero_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = Tensor::<f64>::randn(&[2, 2, 2, 3], 1.0, &mut rng);
    let up = Tensor::<f64>::randn(&[2, 2, 2, 3], 1.0, &mut rng);
    let mut tape = Tape::new();
    let x = tape.input(x0.clone());
    let a = tape.input(Tensor::zeros(&[2, 2, 2]));
    let y = tape.elementwise_mul(x, a).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    // scalar loss sum(up * y) has upstream gradient `up`
    let flat = tape.reshape(y, &[1, 24]).unwrap();
    let w = tape.input(up.reshape(&[24, 1]).unwrap());
    let b = tape.input(Tensor::zeros(&[1]));
    let s = tape.linear(flat, w, b).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
    let ga = g.wrt(a).unwrap();
    for p in 0..8 {
        let expect: f64 = (0..3).map(|c| up.data()[p * 3 + c] * x0.data()[p * 3 + c]).sum();
        assert!((ga.data()[p] - expect).abs() < 1e-12);
    }
}

#[test]
fn concat_with_empty_is_identity() {
    let x = Tensor::<f32>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
    let e = Tensor::<f32>::zeros(&[2, 0]);
    assert_eq!(ops::concat_channels(&x, &e).unwrap(), x);
    assert_eq!(ops::concat_channels(&e, &x).unwrap(), x);
}

#[test]
fn outer_product_bounded_by_factors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = Tensor::<f64>::uniform(&[3, 2, 2], 0.01, 0.99, &mut rng);
    let t = Tensor::<f64>::uniform(&[3], 0.01, 0.99, &mut rng);
    let out = ops::outer_product_st(&s, &t).unwrap();
    for (i, &v) in out.data().iter().enumerate() {
        assert!(v <= s.data()[i].min(t.data()[i / 4]));
    }
    assert!(ops::outer_product_st(&s, &Tensor::<f64>::ones(&[2])).is_err());
}

fn shape_and_index() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    proptest::collection::vec(1usize..5, 0..=5).prop_flat_map(|shape| {
        let idx: Vec<_> = shape.iter().map(|&d| 0..d).collect();
        (Just(shape), idx)
    })
}

proptest! {
    #[test]
    fn flat_index_round_trips_up_to_rank_five((shape, index) in shape_and_index()) {
        let flat = flat_index(&shape, &index);
        prop_assert!(flat < shape.iter().product::<usize>().max(1));
        prop_assert_eq!(multi_index(&shape, flat), index);
    }

    #[test]
    fn linear_map_matches_triple_loop(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[5], 1.0, &mut rng);
        let y = ops::linear_map(&x, &w, &b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = b.get(&[j]);
                for k in 0..4 {
                    acc += x.get(&[i, k]) * w.get(&[k, j]);
                }
                prop_assert!((y.get(&[i, j]) - acc).abs() < 1e-9);
            }
        }
    }
}
