use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::StanConfig;
use crate::error::Result;
use crate::tensor::{ParamTensor, Real, Tape, Tensor, Var};

/// Weight and bias of one affine map or convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T: Real> {
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
}

impl<T: Real> Affine<T> {
    fn init(name: &str, weight_shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / fan_in as f64).sqrt();
        let out = *weight_shape.last().unwrap();
        Self {
            weight: ParamTensor::new(format!("{name}.weight"), Tensor::randn(weight_shape, std, rng)),
            bias: ParamTensor::new(format!("{name}.bias"), Tensor::zeros(&[out])),
        }
    }

    pub fn linear(name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(name, &[din, dout], din, rng)
    }

    pub fn conv(name: &str, k: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(name, &[k, k, cin, cout], k * k * cin, rng)
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundAffine {
        BoundAffine {
            w: tape.param(&self.weight),
            b: tape.param(&self.bias),
        }
    }

    fn params(&self) -> [&ParamTensor<T>; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut ParamTensor<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    fn cast<U: Real>(&self) -> Affine<U> {
        Affine {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundAffine {
    pub w: Var,
    pub b: Var,
}

impl BoundAffine {
    pub fn linear<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }

    pub fn conv<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.conv2d(x, self.w, self.b)
    }
}

/// Stack of affine layers with ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real> {
    pub layers: Vec<Affine<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn new(name: &str, din: usize, dout: usize, hidden: Option<usize>, rng: &mut ChaCha8Rng) -> Self {
        let layers = match hidden {
            None => vec![Affine::linear(name, din, dout, rng)],
            Some(h) => vec![
                Affine::linear(&format!("{name}.0"), din, h, rng),
                Affine::linear(&format!("{name}.1"), h, dout, rng),
            ],
        };
        Self { layers }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(Affine::cast).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundAffine>,
}

impl BoundMlp {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = tape.relu(x);
            }
            x = layer.linear(tape, x)?;
        }
        Ok(x)
    }
}

/// Every trainable weight of the head. Paths a mode does not use are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StanParams<T: Real = f32> {
    /// Audio projection of the space-time path: `[a_t, mean(a)]` (2 D_a) -> D.
    pub audio_st: Option<Mlp<T>>,
    /// Visual projection of the space-time path: conv D_v -> D.
    pub visual_st: Option<Affine<T>>,
    /// Separate space-path projections, only with `separate_space_features`.
    pub audio_s: Option<Mlp<T>>,
    pub visual_s: Option<Affine<T>>,
    /// Audio projection of the time path: 2 D_a -> D.
    pub audio_t: Option<Mlp<T>>,
    /// Visual projection of the time path (after spatial pooling): D_v -> D.
    pub visual_t: Option<Mlp<T>>,
    /// Class activation maps: conv D' -> K.
    pub cam: Option<Affine<T>>,
    /// Space gate: conv K -> 1, then sigmoid.
    pub space_gate: Option<Affine<T>>,
    /// Class activation values: D -> K.
    pub cav: Affine<T>,
    /// Time gate: K -> 1, then sigmoid.
    pub time_gate: Affine<T>,
    /// Final classifier on pooled reweighted features: D' -> K.
    pub classifier: Affine<T>,
}

impl<T: Real> StanParams<T> {
    pub fn init(cfg: &StanConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let hidden = cfg.mlp_hidden.then_some(cfg.d);
        let (audio, visual) = (cfg.mode.uses_audio(), cfg.mode.uses_visual());
        let sep = cfg.separate_space_features && cfg.mode.has_space_path();
        let dp = cfg.d_prime();

        let audio_st = audio.then(|| Mlp::new("audio_st", 2 * cfg.d_a, cfg.d, hidden, &mut rng));
        let visual_st =
            visual.then(|| Affine::conv("visual_st", cfg.visual_kernel, cfg.d_v, cfg.d, &mut rng));
        let audio_s =
            (sep && audio).then(|| Mlp::new("audio_s", 2 * cfg.d_a, cfg.d, hidden, &mut rng));
        let visual_s =
            sep.then(|| Affine::conv("visual_s", cfg.visual_kernel, cfg.d_v, cfg.d, &mut rng));
        let audio_t = audio.then(|| Mlp::new("audio_t", 2 * cfg.d_a, cfg.d, hidden, &mut rng));
        let visual_t = visual.then(|| Mlp::new("visual_t", cfg.d_v, cfg.d, hidden, &mut rng));
        let space = cfg.mode.has_space_path();
        let cam = space.then(|| Affine::conv("cam", cfg.cam_kernel, dp, cfg.k, &mut rng));
        let space_gate = space.then(|| Affine::conv("space_gate", cfg.gate_kernel, cfg.k, 1, &mut rng));
        let cav = Affine::linear("cav", cfg.d, cfg.k, &mut rng);
        let mut time_gate = Affine::linear("time_gate", cfg.k, 1, &mut rng);
        if let Some(b) = cfg.time_gate_bias_init {
            time_gate.weight.value = Tensor::zeros(&[cfg.k, 1]);
            time_gate.bias.value = Tensor::from_f64(&[1], &[b])?;
        }
        let classifier = Affine::linear("classifier", dp, cfg.k, &mut rng);
        Ok(Self {
            audio_st,
            visual_st,
            audio_s,
            visual_s,
            audio_t,
            visual_t,
            cam,
            space_gate,
            cav,
            time_gate,
            classifier,
        })
    }

    /// All parameters in a fixed order.
    pub fn params(&self) -> Vec<&ParamTensor<T>> {
        let mut out = Vec::new();
        fn mlp<'a, T: Real>(m: &'a Option<Mlp<T>>, out: &mut Vec<&'a ParamTensor<T>>) {
            for l in m.iter().flat_map(|m| &m.layers) {
                out.extend(l.params());
            }
        }
        mlp(&self.audio_st, &mut out);
        out.extend(self.visual_st.iter().flat_map(Affine::params));
        mlp(&self.audio_s, &mut out);
        out.extend(self.visual_s.iter().flat_map(Affine::params));
        mlp(&self.audio_t, &mut out);
        mlp(&self.visual_t, &mut out);
        out.extend(self.cam.iter().flat_map(Affine::params));
        out.extend(self.space_gate.iter().flat_map(Affine::params));
        out.extend(self.cav.params());
        out.extend(self.time_gate.params());
        out.extend(self.classifier.params());
        out
    }

    /// All parameters, mutably, in the same order as [`StanParams::params`].
    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut out: Vec<&mut ParamTensor<T>> = Vec::new();
        fn mlp<'a, T: Real>(m: &'a mut Option<Mlp<T>>, out: &mut Vec<&'a mut ParamTensor<T>>) {
            for l in m.iter_mut().flat_map(|m| &mut m.layers) {
                out.extend(l.params_mut());
            }
        }
        mlp(&mut self.audio_st, &mut out);
        out.extend(self.visual_st.iter_mut().flat_map(Affine::params_mut));
        mlp(&mut self.audio_s, &mut out);
        out.extend(self.visual_s.iter_mut().flat_map(Affine::params_mut));
        mlp(&mut self.audio_t, &mut out);
        mlp(&mut self.visual_t, &mut out);
        out.extend(self.cam.iter_mut().flat_map(Affine::params_mut));
        out.extend(self.space_gate.iter_mut().flat_map(Affine::params_mut));
        out.extend(self.cav.params_mut());
        out.extend(self.time_gate.params_mut());
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.is_finite())
    }

    pub fn cast<U: Real>(&self) -> StanParams<U> {
        StanParams {
            audio_st: self.audio_st.as_ref().map(Mlp::cast),
            visual_st: self.visual_st.as_ref().map(Affine::cast),
            audio_s: self.audio_s.as_ref().map(Mlp::cast),
            visual_s: self.visual_s.as_ref().map(Affine::cast),
            audio_t: self.audio_t.as_ref().map(Mlp::cast),
            visual_t: self.visual_t.as_ref().map(Mlp::cast),
            cam: self.cam.as_ref().map(Affine::cast),
            space_gate: self.space_gate.as_ref().map(Affine::cast),
            cav: self.cav.cast(),
            time_gate: self.time_gate.cast(),
            classifier: self.classifier.cast(),
        }
    }

    /// Parameter shapes a config implies, by name, in [`StanParams::params`] order.
    pub fn expected_shapes(cfg: &StanConfig) -> Result<Vec<(String, Vec<usize>)>> {
        let shadow = StanParams::<f32>::init(&StanConfig {
            init_seed: 0,
            ..cfg.clone()
        })?;
        Ok(shadow
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), p.shape().to_vec()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    fn cfg(mode: Mode) -> StanConfig {
        StanConfig {
            k: 3,
            t: 2,
            h: 3,
            w: 3,
            d_a: 4,
            d_v: 5,
            d: 6,
            mode,
            ..StanConfig::default()
        }
    }

    #[test]
    fn names_are_unique_and_shapes_match_mode() {
        for mode in Mode::ALL {
            let p = StanParams::<f32>::init(&cfg(mode)).unwrap();
            let names: Vec<_> = p.params().iter().map(|p| p.name.clone()).collect();
            let mut dedup = names.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), names.len());
            assert_eq!(p.cam.is_some(), mode != Mode::Audio);
            assert_eq!(p.audio_st.is_some(), mode != Mode::Visual);
            let dp = cfg(mode).d_prime();
            assert_eq!(p.classifier.weight.shape(), &[dp, 3]);
        }
        let av = StanParams::<f32>::init(&cfg(Mode::AudioVisual)).unwrap();
        assert_eq!(av.audio_st.as_ref().unwrap().layers[0].weight.shape(), &[8, 6]);
        assert_eq!(av.visual_st.as_ref().unwrap().weight.shape(), &[1, 1, 5, 6]);
        assert_eq!(av.cam.as_ref().unwrap().weight.shape(), &[1, 1, 12, 3]);
        assert_eq!(av.space_gate.as_ref().unwrap().weight.shape(), &[3, 3, 3, 1]);
        assert_eq!(av.cav.weight.shape(), &[6, 3]);
        assert_eq!(av.time_gate.weight.shape(), &[3, 1]);
    }

    #[test]
    fn init_is_seeded() {
        let a = StanParams::<f32>::init(&cfg(Mode::AudioVisual)).unwrap();
        let b = StanParams::<f32>::init(&cfg(Mode::AudioVisual)).unwrap();
        assert_eq!(a, b);
        let mut c2 = cfg(Mode::AudioVisual);
        c2.init_seed = 1;
        assert_ne!(a, StanParams::<f32>::init(&c2).unwrap());
    }

    #[test]
    fn hidden_layer_option() {
        let mut c = cfg(Mode::AudioVisual);
        c.mlp_hidden = true;
        let p = StanParams::<f32>::init(&c).unwrap();
        assert_eq!(p.audio_st.as_ref().unwrap().layers.len(), 2);
    }

    #[test]
    fn closed_time_gate_init() {
        let base = cfg(Mode::AudioVisual);
        let c = StanConfig {
            time_gate_bias_init: Some(-8.0),
            ..base.clone()
        };
        let p = StanParams::<f64>::init(&c).unwrap();
        assert!(p.time_gate.weight.value.data().iter().all(|&w| w == 0.0));
        assert_eq!(p.time_gate.bias.value.data(), &[-8.0]);
        // every other parameter is drawn exactly as without the option
        let q = StanParams::<f64>::init(&base).unwrap();
        assert_eq!(p.classifier, q.classifier);
        assert_eq!(p.cav, q.cav);
        let bad = StanConfig {
            time_gate_bias_init: Some(f64::NAN),
            ..base
        };
        assert!(StanParams::<f64>::init(&bad).is_err());
    }
}
