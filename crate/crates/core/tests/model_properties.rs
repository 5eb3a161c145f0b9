mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stanlab::explain::AttentionPredictor;
use stanlab::model::{checkpoint, Mode, Stan, StanConfig};
use stanlab::tensor::Tape;
use stanlab::train::{adam_step, loss_on_tape, AdamConfig, AdamState, LossTerms};
use stanlab::Tensor;

/// A model with every parameter redrawn at scale `scale`.
fn random_model(cfg: StanConfig, rng: &mut ChaCha8Rng, scale: f64) -> Stan<f64> {
    let mut model = Stan::<f32>::new(cfg).unwrap().cast::<f64>();
    for p in model.params.params_mut() {
        p.value = Tensor::randn(p.value.shape(), scale, rng);
    }
    model
}

fn random_config(rng: &mut ChaCha8Rng) -> StanConfig {
    let mode = Mode::ALL[rng.random_range(0..3)];
    StanConfig {
        k: rng.random_range(1..=5),
        t: rng.random_range(1..=6),
        h: rng.random_range(1..=4),
        w: rng.random_range(1..=4),
        d_a: rng.random_range(1..=5),
        d_v: rng.random_range(1..=5),
        d: rng.random_range(1..=6),
        mode,
        separate_space_features: rng.random_bool(0.5),
        mlp_hidden: rng.random_bool(0.3),
        ..StanConfig::default()
    }
}

#[test]
fn space_time_attention_factorises_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for trial in 0..100 {
        let cfg = random_config(&mut rng);
        // large weights saturate some gates, which must not break the product
        let scale = if trial % 2 == 0 { 0.3 } else { 1.0 };
        let model = random_model(cfg.clone(), &mut rng, scale);
        let a = Tensor::randn(&[cfg.t, cfg.d_a], 1.0, &mut rng);
        let v = Tensor::randn(&[cfg.t, cfg.h, cfg.w, cfg.d_v], 1.0, &mut rng);
        let out = model.forward_features(&a, &v).unwrap();
        let att = &out.attention;
        assert_eq!(att.factorization_error(), 0.0, "trial {trial}");
        assert_eq!(att.space.is_some(), cfg.mode != Mode::Audio);
        if scale < 1.0 {
            for t in att.space.iter().chain([&att.time, &att.space_time]) {
                assert!(t.data().iter().all(|&x| x > 0.0 && x < 1.0), "trial {trial}");
            }
        }
    }
}

#[test]
fn fixed_attention_reclassification_matches_the_clean_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let cfg = random_config(&mut rng);
        let model = random_model(cfg.clone(), &mut rng, 0.5).cast::<f32>();
        let a = Tensor::randn(&[cfg.t, cfg.d_a], 1.0, &mut rng);
        let v = Tensor::randn(&[cfg.t, cfg.h, cfg.w, cfg.d_v], 1.0, &mut rng);
        let (p, a_st) = model.clean(&a, &v).unwrap();
        assert_eq!(model.with_attention(&a, &v, &a_st).unwrap(), p);
    }
}

#[test]
fn space_weights_get_no_gradient_from_the_cav_term() {
    let (syn, clips) = common::tiny_clips(3, 1);
    let model = Stan::<f32>::new(common::tiny_model(&syn, Mode::AudioVisual, 1)).unwrap().cast::<f64>();
    let clip = &clips[0];
    let grad = |terms: LossTerms| {
        let mut tape = Tape::new();
        let graph = model.build(&mut tape, &clip.audio.cast(), &clip.visual.cast()).unwrap();
        let loss = loss_on_tape(&mut tape, &graph, &clip.labels, terms).unwrap();
        let g = tape.backward(loss.total).unwrap();
        g.of_param("cam.weight").map(|t| t.data().iter().map(|v| v.abs()).sum::<f64>()).unwrap_or(0.0)
    };
    let only = |final_head, cam, cav| LossTerms { final_head, cam, cav };
    assert!(grad(only(true, false, false)) > 0.0);
    assert!(grad(only(false, true, false)) > 0.0);
    assert_eq!(grad(only(false, false, true)), 0.0);
}

#[test]
fn zero_learning_rate_and_zero_gradient_leave_parameters_unchanged() {
    let (syn, clips) = common::tiny_clips(4, 1);
    let mut model = Stan::<f32>::new(common::tiny_model(&syn, Mode::AudioVisual, 2)).unwrap();
    let before = model.clone();
    let cfg = AdamConfig::default();

    // zero gradient, positive learning rate
    let mut state = AdamState::new();
    model.params.zero_grad();
    adam_step(&mut model.params.params_mut(), &mut state, &cfg, cfg.lr).unwrap();
    assert_eq!(model, before);

    // real gradient, zero learning rate
    let mut tape = Tape::new();
    let graph = model.build(&mut tape, &clips[0].audio, &clips[0].visual).unwrap();
    let loss = loss_on_tape(&mut tape, &graph, &clips[0].labels, LossTerms::ALL).unwrap();
    tape.backward(loss.total).unwrap().accumulate_into(model.params.params_mut(), 1.0).unwrap();
    let mut state = AdamState::new();
    adam_step(&mut model.params.params_mut(), &mut state, &cfg, 0.0).unwrap();
    for (a, b) in model.params.params().iter().zip(before.params.params()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dir = tempfile::tempdir().unwrap();
    for (i, mode) in Mode::ALL.into_iter().enumerate() {
        let cfg = StanConfig { mode, ..random_config(&mut rng) };
        let model = random_model(cfg, &mut rng, 1.0).cast::<f32>();
        let path = dir.path().join(format!("m{i}.ckpt"));
        checkpoint::save(&model, serde_json::json!({ "i": i }), &path).unwrap();
        let (back, header) = checkpoint::load(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(header.meta["i"], i);
    }
}
