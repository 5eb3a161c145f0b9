#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stanlab::io::{generate_clips, ClipRecord, SynthConfig};
use stanlab::model::{Mode, Stan, StanConfig};
use stanlab::tensor::{check_gradients, GradCheckReport, Tape, Var};
use stanlab::train::{loss_on_tape, LossTerms};
use stanlab::{ParamTensor, Real, Result, Tensor};

pub const OPS: [&str; 13] = [
    "linear_map",
    "conv2d",
    "sigmoid",
    "relu",
    "avg_pool_spatial",
    "avg_pool_temporal",
    "tile_spatial",
    "outer_product_st",
    "elementwise_mul",
    "concat_channels",
    "add",
    "reshape",
    "bce",
];

/// Finite-difference settings per precision: `(eps, tol, floor)`. At 32 bits
/// a difference quotient over `2 * eps` carries about `1e-3` of rounding
/// noise, so gradients below the floor are compared in absolute terms.
pub fn fd_settings<T: Real>() -> (f64, f64, f64) {
    if std::mem::size_of::<T>() == 8 {
        (1e-5, 1e-4, 1e-6)
    } else {
        (1e-2, 1e-2, 1e-1)
    }
}

fn randn<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::randn(shape, 1.0, rng)
}

/// Values at least 0.2 away from zero, so relu kinks stay out of reach.
fn off_zero<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// Contract a tensor with fixed random weights so any op output becomes a scalar.
fn readout<T: Real>(tape: &mut Tape<T>, y: Var, seed: u64) -> Result<Var> {
    let n = tape.value(y).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let flat = tape.reshape(y, &[1, n])?;
    let w = tape.input(randn(&[n, 1], &mut rng));
    let b = tape.input(Tensor::zeros(&[1]));
    let s = tape.linear(flat, w, b)?;
    tape.reshape(s, &[1])
}

/// Gradient check of one op on random inputs drawn from `seed`. Every input
/// of the op is a checked parameter.
pub fn check_op<T: Real>(op: &str, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (eps, tol, floor) = fd_settings::<T>();
    let p = |name: &str, t: Tensor<T>| ParamTensor::new(name, t);
    let mut params: Vec<ParamTensor<T>> = match op {
        "linear_map" => vec![
            p("x", randn(&[3, 4], &mut rng)),
            p("w", randn(&[4, 2], &mut rng)),
            p("b", randn(&[2], &mut rng)),
        ],
        "conv2d" => vec![
            p("x", randn(&[2, 4, 4, 3], &mut rng)),
            p("w", randn(&[3, 3, 3, 2], &mut rng)),
            p("b", randn(&[2], &mut rng)),
        ],
        "sigmoid" => vec![p("x", randn(&[2, 3], &mut rng))],
        "add" => vec![p("x", randn(&[2, 3], &mut rng)), p("y", randn(&[2, 3], &mut rng))],
        "relu" => vec![p("x", off_zero(&[2, 3, 2], &mut rng))],
        "avg_pool_spatial" => vec![p("x", randn(&[2, 3, 3, 4], &mut rng))],
        "avg_pool_temporal" | "reshape" => vec![p("x", randn(&[4, 3], &mut rng))],
        "tile_spatial" => vec![p("x", randn(&[2, 3], &mut rng))],
        "outer_product_st" => vec![p("s", randn(&[2, 3, 3], &mut rng)), p("t", randn(&[2], &mut rng))],
        "elementwise_mul" => vec![p("x", randn(&[2, 3, 3, 4], &mut rng)), p("a", randn(&[2, 3, 3], &mut rng))],
        "concat_channels" => vec![p("x", randn(&[2, 3, 2], &mut rng)), p("y", randn(&[2, 3, 4], &mut rng))],
        "bce" => vec![p("p", Tensor::uniform(&[4], 0.1, 0.9, &mut rng))],
        other => panic!("unknown op {other}"),
    };
    let f = |tape: &mut Tape<T>, v: &[Var]| -> Result<Var> {
        let y = match op {
            "linear_map" => tape.linear(v[0], v[1], v[2])?,
            "conv2d" => tape.conv2d(v[0], v[1], v[2])?,
            "sigmoid" => tape.sigmoid(v[0]),
            "relu" => tape.relu(v[0]),
            "avg_pool_spatial" => tape.avg_pool_spatial(v[0])?,
            "avg_pool_temporal" => tape.avg_pool_temporal(v[0])?,
            "tile_spatial" => tape.tile_spatial(v[0], 2, 3)?,
            "outer_product_st" => tape.outer_product_st(v[0], v[1])?,
            "elementwise_mul" => tape.elementwise_mul(v[0], v[1])?,
            "concat_channels" => tape.concat_channels(v[0], v[1])?,
            "add" => tape.add(v[0], v[1])?,
            "reshape" => tape.reshape(v[0], &[3, 4])?,
            "bce" => return tape.bce(v[0], &[1.0, 0.0, 1.0, 0.0]),
            _ => unreachable!(),
        };
        readout(tape, y, seed)
    };
    check_gradients(op, &mut params, f, eps, tol, floor).unwrap()
}

/// A tiny generator setting for model-level checks.
pub fn tiny_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        k: 3,
        t: 3,
        h: 3,
        w: 3,
        d_a: 4,
        d_v: 4,
        clips_per_class: 2,
        min_window: 1,
        max_window: 2,
        min_block: 1,
        max_block: 2,
        seed,
        ..SynthConfig::default()
    }
}

pub fn tiny_model(syn: &SynthConfig, mode: Mode, seed: u64) -> StanConfig {
    StanConfig {
        k: syn.k,
        t: syn.t,
        h: syn.h,
        w: syn.w,
        d_a: syn.d_a,
        d_v: syn.d_v,
        d: 4,
        mode,
        init_seed: seed,
        ..StanConfig::default()
    }
}

/// Gradient check of the full model plus the three-term objective summed
/// over `clips`, with respect to every model parameter.
pub fn check_stan<T: Real>(cfg: &StanConfig, clips: &[ClipRecord]) -> GradCheckReport {
    let (eps, tol, floor) = fd_settings::<T>();
    let base = Stan::<f32>::new(cfg.clone()).unwrap().cast::<T>();
    let mut params: Vec<ParamTensor<T>> = base.params.params().into_iter().cloned().collect();
    let inputs: Vec<(Tensor<T>, Tensor<T>, Vec<u8>)> = clips
        .iter()
        .map(|c| (c.audio.cast(), c.visual.cast(), c.labels.clone()))
        .collect();
    let f = |tape: &mut Tape<T>, v: &[Var]| -> Result<Var> {
        let mut model = base.clone();
        for (p, &var) in model.params.params_mut().into_iter().zip(v) {
            p.value = tape.value(var).clone();
        }
        let mut total: Option<Var> = None;
        for (a, vis, y) in &inputs {
            let graph = model.build(tape, a, vis)?;
            let loss = loss_on_tape(tape, &graph, y, LossTerms::ALL)?.total;
            total = Some(match total {
                Some(t) => tape.add(t, loss)?,
                None => loss,
            });
        }
        Ok(total.expect("at least one clip"))
    };
    let name = format!("stan[{}]", cfg.mode);
    check_gradients(&name, &mut params, f, eps, tol, floor).unwrap()
}

pub fn tiny_clips(seed: u64, n: usize) -> (SynthConfig, Vec<ClipRecord>) {
    let syn = tiny_synth(seed);
    let data = generate_clips(&syn).unwrap();
    let clips = data.split("train").iter().take(n).cloned().collect();
    (syn, clips)
}

/// Brute-force top-1: the class that beats every other class outright or on
/// a lower index.
pub fn oracle_top1(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> f64 {
    let mut hits = 0.0;
    for (s, y) in scores.iter().zip(labels) {
        let top = (0..s.len())
            .find(|&c| (0..s.len()).all(|j| j == c || s[c] > s[j] || (s[c] == s[j] && c < j)))
            .unwrap();
        hits += y[top] as f64;
    }
    hits / scores.len() as f64
}

/// 1-based rank of class `c`: one plus the number of classes ahead of it.
fn rank_of(s: &[f64], c: usize) -> usize {
    1 + (0..s.len()).filter(|&j| s[j] > s[c] || (s[j] == s[c] && j < c)).count()
}

/// Brute-force mAP: precision at the rank of each relevant label, counted
/// by pairwise comparisons.
pub fn oracle_map(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> f64 {
    let mut total = 0.0;
    for (s, y) in scores.iter().zip(labels) {
        let relevant: Vec<usize> = (0..s.len()).filter(|&c| y[c] == 1).collect();
        let mut ap = 0.0;
        for &c in &relevant {
            let r = rank_of(s, c);
            let above = relevant.iter().filter(|&&d| rank_of(s, d) <= r).count();
            ap += above as f64 / r as f64;
        }
        total += ap / relevant.len() as f64;
    }
    total / scores.len() as f64
}

/// Brute-force F-score: harmonic mean of per-instance precision and recall.
pub fn oracle_f(scores: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> f64 {
    let mut total = 0.0;
    for (s, y) in scores.iter().zip(labels) {
        let predicted: Vec<usize> = (0..s.len()).filter(|&c| s[c] >= threshold).collect();
        let tp = predicted.iter().filter(|&&c| y[c] == 1).count() as f64;
        let relevant = y.iter().filter(|&&v| v == 1).count() as f64;
        if tp > 0.0 {
            let precision = tp / predicted.len() as f64;
            let recall = tp / relevant;
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / scores.len() as f64
}

/// A random metric problem with `K <= 6` classes. Scores come from a coarse
/// grid half of the time so ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<u8>>) {
    let k = rng.random_range(1..=6);
    let n = rng.random_range(1..=8);
    let coarse = rng.random_bool(0.5);
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let s: Vec<f64> = (0..k)
            .map(|_| {
                if coarse {
                    rng.random_range(0..5) as f64 / 4.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let mut y: Vec<u8> = (0..k).map(|_| rng.random_bool(0.4) as u8).collect();
        if !y.contains(&1) {
            y[rng.random_range(0..k)] = 1;
        }
        scores.push(s);
        labels.push(y);
    }
    (scores, labels)
}
