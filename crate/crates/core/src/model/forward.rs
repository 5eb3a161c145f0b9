//! Forward graph of the head.
//!
//! ```text
//! audio [T,Da] ──[a_t, mean(a)]──MLP──tile──┐
//!                                            ├─concat─> x_st [T,H,W,D'] ──┬──────────────> x_st * A_st ─pool─FC─σ─> p
//! visual [T,H,W,Dv] ─────────conv───────────┘                             └─conv─> CAM ─conv─σ─> A_s ─┐
//!                                                                                                     ├─ A_st = A_s ⊗ A_t
//! audio ─MLP─┐                                                                                        │
//!            + ─> x_t [T,D] ─> CAV ─FC─σ─> A_t ───────────────────────────────────────────────────────┘
//! visual ─pool(H,W)─MLP─┘
//! ```

use super::config::{Mode, StanConfig};
use super::params::{BoundAffine, BoundMlp, StanParams};
use crate::error::{Result, StanError};
use crate::io::ClipRecord;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Attention tensors of one clip. `space` is absent in audio-only mode,
/// where `space_time` is the time attention broadcast over `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle<T: Real = f32> {
    /// `[T, H, W]`
    pub space: Option<Tensor<T>>,
    /// `[T]`
    pub time: Tensor<T>,
    /// `[T, H, W]`
    pub space_time: Tensor<T>,
}

impl<T: Real> AttentionBundle<T> {
    /// Largest deviation of `space_time` from `space[t,h,w] * time[t]`.
    pub fn factorization_error(&self) -> f64 {
        let st = &self.space_time;
        let hw = st.shape()[1] * st.shape()[2];
        st.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = self.space.as_ref().map_or(T::one(), |s| s.data()[i]);
                (v - s * self.time.data()[i / hw]).abs().as_f64()
            })
            .fold(0.0, f64::max)
    }
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Real = f32> {
    /// Final-classifier probabilities `[K]`; the only head used for inference.
    pub p: Tensor<T>,
    /// CAM-head probabilities `[K]` (absent without a space path).
    pub p_cam: Option<Tensor<T>>,
    /// CAV-head probabilities `[K]`.
    pub p_cav: Tensor<T>,
    pub attention: AttentionBundle<T>,
    /// `[T, H, W, K]`
    pub cam: Option<Tensor<T>>,
    /// `[T, K]`
    pub cav: Tensor<T>,
    /// `[T, H, W, D']`
    pub x_st_weighted: Tensor<T>,
}

/// Handles of the interesting nodes of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct StanGraph {
    pub x_st: Var,
    pub cam: Option<Var>,
    pub a_s: Option<Var>,
    pub x_t: Var,
    pub cav: Var,
    pub a_t: Var,
    pub a_st: Var,
    pub x_st_weighted: Var,
    pub p: Var,
    pub p_cam: Option<Var>,
    pub p_cav: Var,
}

impl StanGraph {
    pub fn output<T: Real>(&self, tape: &Tape<T>) -> ForwardOutput<T> {
        let v = |x: Var| tape.value(x).clone();
        ForwardOutput {
            p: v(self.p),
            p_cam: self.p_cam.map(v),
            p_cav: v(self.p_cav),
            attention: AttentionBundle {
                space: self.a_s.map(v),
                time: v(self.a_t),
                space_time: v(self.a_st),
            },
            cam: self.cam.map(v),
            cav: v(self.cav),
            x_st_weighted: v(self.x_st_weighted),
        }
    }
}

/// Parameters bound to one tape.
struct Bound {
    audio_st: Option<BoundMlp>,
    visual_st: Option<BoundAffine>,
    audio_s: Option<BoundMlp>,
    visual_s: Option<BoundAffine>,
    audio_t: Option<BoundMlp>,
    visual_t: Option<BoundMlp>,
    cam: Option<BoundAffine>,
    space_gate: Option<BoundAffine>,
    cav: BoundAffine,
    time_gate: BoundAffine,
    classifier: BoundAffine,
}

impl Bound {
    fn new<T: Real>(p: &StanParams<T>, tape: &mut Tape<T>) -> Self {
        Self {
            audio_st: p.audio_st.as_ref().map(|m| m.bind(tape)),
            visual_st: p.visual_st.as_ref().map(|a| a.bind(tape)),
            audio_s: p.audio_s.as_ref().map(|m| m.bind(tape)),
            visual_s: p.visual_s.as_ref().map(|a| a.bind(tape)),
            audio_t: p.audio_t.as_ref().map(|m| m.bind(tape)),
            visual_t: p.visual_t.as_ref().map(|m| m.bind(tape)),
            cam: p.cam.as_ref().map(|a| a.bind(tape)),
            space_gate: p.space_gate.as_ref().map(|a| a.bind(tape)),
            cav: p.cav.bind(tape),
            time_gate: p.time_gate.bind(tape),
            classifier: p.classifier.bind(tape),
        }
    }
}

fn missing(what: &str, mode: Mode) -> StanError {
    StanError::Config(format!("{mode} mode parameters lack {what}"))
}

/// The attention head: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Stan<T: Real = f32> {
    pub config: StanConfig,
    pub params: StanParams<T>,
}

impl<T: Real> Stan<T> {
    pub fn new(config: StanConfig) -> Result<Self> {
        let params = StanParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Stan<U> {
        Stan {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn inputs(&self, tape: &mut Tape<T>, audio: &Tensor<T>, visual: &Tensor<T>) -> Result<(Var, Var)> {
        self.config.check_inputs(audio.shape(), visual.shape())?;
        Ok((tape.input(audio.clone()), tape.input(visual.clone())))
    }

    /// `[a_t, mean_t(a)]` for every step: `[T, 2 D_a]`.
    fn audio_with_context(&self, tape: &mut Tape<T>, audio: Var) -> Result<Var> {
        let (t, da) = (self.config.t, self.config.d_a);
        let mean = tape.avg_pool_temporal(audio)?;
        let mean = tape.reshape(mean, &[1, da])?;
        let spread = tape.tile_spatial(mean, t, 1)?;
        let spread = tape.reshape(spread, &[t, da])?;
        tape.concat_channels(audio, spread)
    }

    fn compose_with(
        &self,
        tape: &mut Tape<T>,
        audio_mlp: Option<&BoundMlp>,
        visual_conv: Option<&BoundAffine>,
        audio: Var,
        visual: Var,
    ) -> Result<Var> {
        let c = &self.config;
        let audio_part = match (c.mode.uses_audio(), audio_mlp) {
            (false, _) => None,
            (true, Some(mlp)) => {
                let ctx = self.audio_with_context(tape, audio)?;
                let proj = mlp.apply(tape, ctx)?;
                Some(tape.tile_spatial(proj, c.h, c.w)?)
            }
            (true, None) => return Err(missing("an audio projection", c.mode)),
        };
        let visual_part = match (c.mode.uses_visual(), visual_conv) {
            (false, _) => None,
            (true, Some(conv)) => Some(conv.conv(tape, visual)?),
            (true, None) => return Err(missing("a visual projection", c.mode)),
        };
        match (audio_part, visual_part) {
            (Some(a), Some(v)) => tape.concat_channels(a, v),
            (Some(a), None) => Ok(a),
            (None, Some(v)) => Ok(v),
            (None, None) => unreachable!("every mode uses a modality"),
        }
    }

    fn space_attention_on(&self, tape: &mut Tape<T>, b: &Bound, x_s: Var) -> Result<(Var, Var)> {
        let c = &self.config;
        let cam_conv = b.cam.ok_or_else(|| missing("a CAM convolution", c.mode))?;
        let gate = b.space_gate.ok_or_else(|| missing("a space gate", c.mode))?;
        let cam = cam_conv.conv(tape, x_s)?;
        let logits = gate.conv(tape, cam)?;
        let a = tape.sigmoid(logits);
        let a = tape.reshape(a, &[c.t, c.h, c.w])?;
        Ok((a, cam))
    }

    fn time_features_on(&self, tape: &mut Tape<T>, b: &Bound, audio: Var, visual: Var) -> Result<Var> {
        let c = &self.config;
        let audio_part = if c.mode.uses_audio() {
            let mlp = b.audio_t.as_ref().ok_or_else(|| missing("an audio time MLP", c.mode))?;
            let ctx = self.audio_with_context(tape, audio)?;
            Some(mlp.apply(tape, ctx)?)
        } else {
            None
        };
        let visual_part = if c.mode.uses_visual() {
            let mlp = b.visual_t.as_ref().ok_or_else(|| missing("a visual time MLP", c.mode))?;
            let pooled = tape.avg_pool_spatial(visual)?;
            Some(mlp.apply(tape, pooled)?)
        } else {
            None
        };
        match (audio_part, visual_part) {
            (Some(a), Some(v)) => tape.add(a, v),
            (Some(a), None) => Ok(a),
            (None, Some(v)) => Ok(v),
            (None, None) => unreachable!("every mode uses a modality"),
        }
    }

    fn time_attention_on(&self, tape: &mut Tape<T>, b: &Bound, x_t: Var) -> Result<(Var, Var)> {
        let cav = b.cav.linear(tape, x_t)?;
        let logits = b.time_gate.linear(tape, cav)?;
        let a = tape.sigmoid(logits);
        let a = tape.reshape(a, &[self.config.t])?;
        Ok((a, cav))
    }

    fn classify_on(&self, tape: &mut Tape<T>, b: &Bound, x_st: Var, a_st: Var) -> Result<(Var, Var)> {
        let weighted = tape.elementwise_mul(x_st, a_st)?;
        let pooled = tape.avg_pool_spatial(weighted)?;
        let pooled = tape.avg_pool_temporal(pooled)?;
        let logits = b.classifier.linear(tape, pooled)?;
        Ok((tape.sigmoid(logits), weighted))
    }

    /// Record the full forward pass of one clip on `tape`.
    pub fn build(&self, tape: &mut Tape<T>, audio: &Tensor<T>, visual: &Tensor<T>) -> Result<StanGraph> {
        let c = &self.config;
        let (audio, visual) = self.inputs(tape, audio, visual)?;
        let b = Bound::new(&self.params, tape);

        let x_st = self.compose_with(tape, b.audio_st.as_ref(), b.visual_st.as_ref(), audio, visual)?;

        let (a_s, cam) = if c.mode.has_space_path() {
            let x_s = if c.separate_space_features {
                self.compose_with(tape, b.audio_s.as_ref(), b.visual_s.as_ref(), audio, visual)?
            } else {
                x_st
            };
            let (a, cam) = self.space_attention_on(tape, &b, x_s)?;
            (Some(a), Some(cam))
        } else {
            (None, None)
        };

        let x_t = self.time_features_on(tape, &b, audio, visual)?;
        let (a_t, cav) = self.time_attention_on(tape, &b, x_t)?;

        let space = match a_s {
            Some(a) => a,
            None => tape.input(Tensor::ones(&[c.t, c.h, c.w])),
        };
        let a_st = tape.outer_product_st(space, a_t)?;
        let (p, x_st_weighted) = self.classify_on(tape, &b, x_st, a_st)?;

        let p_cam = match cam {
            Some(cam) => {
                let m = tape.avg_pool_spatial(cam)?;
                let m = tape.avg_pool_temporal(m)?;
                Some(tape.sigmoid(m))
            }
            None => None,
        };
        let v = tape.avg_pool_temporal(cav)?;
        let p_cav = tape.sigmoid(v);

        Ok(StanGraph {
            x_st,
            cam,
            a_s,
            x_t,
            cav,
            a_t,
            a_st,
            x_st_weighted,
            p,
            p_cam,
            p_cav,
        })
    }

    pub fn forward_features(&self, audio: &Tensor<T>, visual: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, audio, visual)?;
        Ok(g.output(&tape))
    }

    pub fn forward(&self, clip: &ClipRecord) -> Result<ForwardOutput<T>> {
        self.forward_features(&clip.audio.cast(), &clip.visual.cast())
    }

    /// Composed space-time features `x_st` `[T, H, W, D']`.
    pub fn compose_spacetime(&self, audio: &Tensor<T>, visual: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let (a, v) = self.inputs(&mut tape, audio, visual)?;
        let b = Bound::new(&self.params, &mut tape);
        let x = self.compose_with(&mut tape, b.audio_st.as_ref(), b.visual_st.as_ref(), a, v)?;
        Ok(tape.value(x).clone())
    }

    /// Space attention `[T, H, W]` and class activation maps `[T, H, W, K]`
    /// from space features `[T, H, W, D']`.
    pub fn space_attention(&self, x_s: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let b = Bound::new(&self.params, &mut tape);
        let x = tape.input(x_s.clone());
        let (a, cam) = self.space_attention_on(&mut tape, &b, x)?;
        Ok((tape.value(a).clone(), tape.value(cam).clone()))
    }

    /// Time features `x_t` `[T, D]`.
    pub fn time_features(&self, audio: &Tensor<T>, visual: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let (a, v) = self.inputs(&mut tape, audio, visual)?;
        let b = Bound::new(&self.params, &mut tape);
        let x = self.time_features_on(&mut tape, &b, a, v)?;
        Ok(tape.value(x).clone())
    }

    /// Time attention `[T]` and class activation values `[T, K]` from time features.
    pub fn time_attention(&self, x_t: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let b = Bound::new(&self.params, &mut tape);
        let x = tape.input(x_t.clone());
        let (a, cav) = self.time_attention_on(&mut tape, &b, x)?;
        Ok((tape.value(a).clone(), tape.value(cav).clone()))
    }

    /// Final-head probabilities for given space-time features and a fixed
    /// space-time attention.
    pub fn classify(&self, x_st: &Tensor<T>, a_st: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let b = Bound::new(&self.params, &mut tape);
        let x = tape.input(x_st.clone());
        let a = tape.input(a_st.clone());
        let (p, _) = self.classify_on(&mut tape, &b, x, a)?;
        Ok(tape.value(p).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(mode: Mode) -> StanConfig {
        StanConfig {
            k: 3,
            t: 4,
            h: 3,
            w: 3,
            d_a: 4,
            d_v: 5,
            d: 6,
            mode,
            ..StanConfig::default()
        }
    }

    fn inputs(c: &StanConfig, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Tensor::randn(&[c.t, c.d_a], 1.0, &mut rng),
            Tensor::randn(&[c.t, c.h, c.w, c.d_v], 1.0, &mut rng),
        )
    }

    fn zero_all(m: &mut Stan<f64>) {
        for p in m.params.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn output_shapes() {
        let c = cfg(Mode::AudioVisual);
        let m = Stan::<f64>::new(c.clone()).unwrap();
        let (a, v) = inputs(&c, 0);
        let out = m.forward_features(&a, &v).unwrap();
        assert_eq!(out.p.shape(), &[3]);
        assert_eq!(out.p_cam.as_ref().unwrap().shape(), &[3]);
        assert_eq!(out.p_cav.shape(), &[3]);
        assert_eq!(out.attention.space.as_ref().unwrap().shape(), &[4, 3, 3]);
        assert_eq!(out.attention.time.shape(), &[4]);
        assert_eq!(out.cam.as_ref().unwrap().shape(), &[4, 3, 3, 3]);
        assert_eq!(out.cav.shape(), &[4, 3]);
        assert_eq!(out.x_st_weighted.shape(), &[4, 3, 3, 12]);
        assert_eq!(out.attention.factorization_error(), 0.0);
    }

    #[test]
    fn single_step_context_duplicates_the_segment() {
        let c = StanConfig { t: 1, ..cfg(Mode::Audio) };
        let m = Stan::<f64>::new(c.clone()).unwrap();
        let (a, v) = inputs(&c, 1);
        let mut tape = Tape::new();
        let av = tape.input(a.clone());
        let ctx = m.audio_with_context(&mut tape, av).unwrap();
        let ctx = tape.value(ctx);
        assert_eq!(ctx.shape(), &[1, 8]);
        assert_eq!(&ctx.data()[..4], a.data());
        assert_eq!(&ctx.data()[4..], a.data());
        let _ = v;
    }

    #[test]
    fn zero_inputs_and_biases_give_zero_composition() {
        let c = cfg(Mode::AudioVisual);
        let m = Stan::<f64>::new(c.clone()).unwrap();
        let x = m
            .compose_spacetime(&Tensor::zeros(&[4, 4]), &Tensor::zeros(&[4, 3, 3, 5]))
            .unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn composed_halves_follow_their_modality() {
        let c = cfg(Mode::AudioVisual);
        let m = Stan::<f64>::new(c.clone()).unwrap();
        let (a, v) = inputs(&c, 2);
        let (a2, v2) = inputs(&c, 3);
        let base = m.compose_spacetime(&a, &v).unwrap();
        let audio_moved = m.compose_spacetime(&a2, &v).unwrap();
        let visual_moved = m.compose_spacetime(&a, &v2).unwrap();
        let half = |x: &Tensor<f64>, lo, hi| crate::tensor::ops::slice_channels(x, lo, hi).unwrap();
        assert_ne!(half(&audio_moved, 0, 6), half(&base, 0, 6));
        assert_eq!(half(&audio_moved, 6, 12), half(&base, 6, 12));
        assert_eq!(half(&visual_moved, 0, 6), half(&base, 0, 6));
        assert_ne!(half(&visual_moved, 6, 12), half(&base, 6, 12));
    }

    #[test]
    fn zero_gates_give_half_attention() {
        let c = cfg(Mode::AudioVisual);
        let mut m = Stan::<f64>::new(c.clone()).unwrap();
        for p in m.params.params_mut() {
            if p.name.starts_with("space_gate.") || p.name.starts_with("time_gate.") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (a, v) = inputs(&c, 4);
        let out = m.forward_features(&a, &v).unwrap();
        assert!(out.attention.space.unwrap().data().iter().all(|&x| x == 0.5));
        assert!(out.attention.time.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn space_attention_is_per_step() {
        let c = cfg(Mode::AudioVisual);
        let m = Stan::<f64>::new(c.clone()).unwrap();
        let (a, v) = inputs(&c, 5);
        let x = m.compose_spacetime(&a, &v).unwrap();
        let (att, _) = m.space_attention(&x).unwrap();
        // reverse the time axis
        let frame = 3 * 3 * 12;
        let mut rev = Vec::new();
        for t in (0..4).rev() {
            rev.extend_from_slice(&x.data()[t * frame..(t + 1) * frame]);
        }
        let (att_rev, _) = m.space_attention(&Tensor::new(x.shape(), rev).unwrap()).unwrap();
        for t in 0..4 {
            assert_eq!(
                &att.data()[t * 9..(t + 1) * 9],
                &att_rev.data()[(3 - t) * 9..(4 - t) * 9]
            );
        }
    }

    #[test]
    fn identical_steps_get_identical_time_attention() {
        let c = cfg(Mode::AudioVisual);
        let m = Stan::<f64>::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let row = Tensor::<f64>::randn(&[1, 6], 1.0, &mut rng);
        let x = crate::tensor::ops::tile_spatial(&row, 4, 1).unwrap().reshape(&[4, 6]).unwrap();
        let (att, _) = m.time_attention(&x).unwrap();
        assert!(att.data().iter().all(|&v| v == att.data()[0]));
    }

    #[test]
    fn constant_visual_pools_exactly() {
        let c = cfg(Mode::Visual);
        let mut m = Stan::<f64>::new(c.clone()).unwrap();
        // identity-like time MLP picks out the pooled vector
        let w = &mut m.params.visual_t.as_mut().unwrap().layers[0].weight;
        w.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        for i in 0..5 {
            w.value.set(&[i, i], 1.0);
        }
        let vec = [0.5, -1.0, 2.0, 0.25, 3.0];
        let mut v = Tensor::<f64>::zeros(&[4, 3, 3, 5]);
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = vec[i % 5];
        }
        let xt = m.time_features(&Tensor::zeros(&[4, 4]), &v).unwrap();
        for t in 0..4 {
            for (i, &e) in vec.iter().enumerate() {
                assert_eq!(xt.get(&[t, i]), e);
            }
            assert_eq!(xt.get(&[t, 5]), 0.0);
        }
    }

    #[test]
    fn zero_weights_give_zero_time_features() {
        let c = cfg(Mode::AudioVisual);
        let mut m = Stan::<f64>::new(c.clone()).unwrap();
        zero_all(&mut m);
        let (a, v) = inputs(&c, 7);
        assert!(m.time_features(&a, &v).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_features_and_biases_predict_one_half() {
        for mode in Mode::ALL {
            let c = cfg(mode);
            let m = Stan::<f64>::new(c.clone()).unwrap();
            let out = m
                .forward_features(&Tensor::zeros(&[4, 4]), &Tensor::zeros(&[4, 3, 3, 5]))
                .unwrap();
            assert!(out.p.data().iter().all(|&x| x == 0.5), "{mode}");
        }
    }

    #[test]
    fn saturated_time_gate_reduces_to_space_attention() {
        let c = cfg(Mode::AudioVisual);
        let mut m = Stan::<f64>::new(c.clone()).unwrap();
        m.params.time_gate.bias.value.data_mut()[0] = 1e4;
        let (a, v) = inputs(&c, 8);
        let out = m.forward_features(&a, &v).unwrap();
        assert!(out.attention.time.data().iter().all(|&x| x == 1.0));
        let x = m.compose_spacetime(&a, &v).unwrap();
        let p_space_only = m.classify(&x, out.attention.space.as_ref().unwrap()).unwrap();
        assert_eq!(out.p, p_space_only);
    }

    #[test]
    fn raising_time_gate_moves_space_time_towards_space() {
        let c = cfg(Mode::AudioVisual);
        let mut m = Stan::<f64>::new(c.clone()).unwrap();
        let (a, v) = inputs(&c, 9);
        let mut prev: Option<Tensor<f64>> = None;
        for bias in [-4.0, -1.0, 0.0, 2.0, 6.0, 20.0] {
            m.params.time_gate.bias.value.data_mut()[0] = bias;
            let out = m.forward_features(&a, &v).unwrap();
            let st = out.attention.space_time;
            let s = out.attention.space.unwrap();
            for (x, y) in st.data().iter().zip(s.data()) {
                assert!(x <= y);
            }
            if let Some(p) = prev {
                for (x, y) in st.data().iter().zip(p.data()) {
                    assert!(x > y);
                }
            }
            prev = Some(st);
        }
    }

    #[test]
    fn unimodal_modes_ignore_the_other_modality() {
        let c = cfg(Mode::Audio);
        let m = Stan::<f64>::new(c.clone()).unwrap();
        let (a, v) = inputs(&c, 10);
        let (_, v2) = inputs(&c, 11);
        let o1 = m.forward_features(&a, &v).unwrap();
        let o2 = m.forward_features(&a, &v2).unwrap();
        assert_eq!(o1.p, o2.p);
        assert!(o1.attention.space.is_none() && o1.p_cam.is_none());
        // any visual shape is accepted when it is unused
        m.forward_features(&a, &Tensor::zeros(&[1, 1, 1, 1])).unwrap();

        let c = cfg(Mode::Visual);
        let m = Stan::<f64>::new(c.clone()).unwrap();
        let (a2, _) = inputs(&c, 12);
        let o1 = m.forward_features(&a, &v).unwrap();
        let o2 = m.forward_features(&a2, &v).unwrap();
        assert_eq!(o1.p, o2.p);
        assert_eq!(o1.attention.time, o2.attention.time);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let c = cfg(Mode::AudioVisual);
        let m = Stan::<f64>::new(c).unwrap();
        let err = m.forward_features(&Tensor::zeros(&[4, 3]), &Tensor::zeros(&[4, 3, 3, 5]));
        assert!(matches!(err, Err(StanError::Config(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let c = cfg(Mode::AudioVisual);
        let m = Stan::<f32>::new(c.clone()).unwrap();
        let (a, v) = inputs(&c, 13);
        let (a, v) = (a.cast::<f32>(), v.cast::<f32>());
        let o1 = m.forward_features(&a, &v).unwrap();
        let o2 = m.forward_features(&a, &v).unwrap();
        assert_eq!(o1.p, o2.p);
        assert_eq!(o1.attention, o2.attention);
    }

    #[test]
    fn separate_space_features_flag() {
        let c = StanConfig {
            separate_space_features: true,
            ..cfg(Mode::AudioVisual)
        };
        let m = Stan::<f64>::new(c.clone()).unwrap();
        assert!(m.params.audio_s.is_some() && m.params.visual_s.is_some());
        let (a, v) = inputs(&c, 14);
        let out = m.forward_features(&a, &v).unwrap();
        assert_eq!(out.attention.factorization_error(), 0.0);
    }
}
