use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;

use super::config::{EncoderKind, SeparatorConfig};
use crate::error::{Error, Result};
use crate::nn::{
    multihead_self_attention, sinusoidal_positional_encoding, uniform_init, AttentionParams, Graph, ParamStore,
    Scalar, Tensor, Var,
};
use crate::signal::{StftPlan, Waveform};

const LN_EPS: f64 = 1e-5;
const FF_MULT: usize = 4;

/// Heart first, lung second.
pub const SOURCE_NAMES: [&str; 2] = ["heart", "lung"];

#[derive(Debug, Clone)]
struct BlockIds {
    w: usize,
    b: usize,
    norm_g: usize,
    norm_b: usize,
}

#[derive(Debug, Clone)]
struct LayerIds {
    norm1_g: usize,
    norm1_b: usize,
    attn: [usize; 8],
    norm2_g: usize,
    norm2_b: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

#[derive(Debug, Clone)]
struct SourceIds {
    layers: Vec<LayerIds>,
    out_w: usize,
    out_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Option<usize>,
    in_norm_g: usize,
    in_norm_b: usize,
    down_w: usize,
    down_b: usize,
    blocks: Vec<BlockIds>,
    sources: Vec<SourceIds>,
    decoder: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(usize),
    Ones,
    Zeros,
}

type Maker<'a, T> = dyn FnMut(&str, &[usize], Init) -> Result<Tensor<T>> + 'a;

fn register<T: Scalar>(cfg: &SeparatorConfig, store: &mut ParamStore<T>, mk: &mut Maker<'_, T>) -> Result<Layout> {
    let f = cfg.feature_bins();
    let d = cfg.mask_feature_size;
    let k = cfg.kernel_size;
    let mut add = |name: String, shape: &[usize], init: Init| -> Result<usize> {
        let t = mk(&name, shape, init)?;
        store.insert(name, t)
    };
    let learned = cfg.encoder_kind == EncoderKind::LearnedConv;
    let encoder = if learned {
        Some(add("encoder.weight".into(), &[f, 1, k], Init::Uniform(k))?)
    } else {
        None
    };
    let in_norm_g = add("mask.norm.gain".into(), &[f], Init::Ones)?;
    let in_norm_b = add("mask.norm.bias".into(), &[f], Init::Zeros)?;
    let down_w = add("mask.down.weight".into(), &[d, f, 1], Init::Uniform(f))?;
    let down_b = add("mask.down.bias".into(), &[d], Init::Uniform(f))?;
    let mut blocks = Vec::new();
    if cfg.use_conv_blocks {
        let ck = cfg.conv_kernel;
        for i in 0..cfg.conv_layers {
            let p = format!("mask.conv.{i}");
            blocks.push(BlockIds {
                w: add(format!("{p}.weight"), &[d, d, ck], Init::Uniform(d * ck))?,
                b: add(format!("{p}.bias"), &[d], Init::Uniform(d * ck))?,
                norm_g: add(format!("{p}.norm.gain"), &[d], Init::Ones)?,
                norm_b: add(format!("{p}.norm.bias"), &[d], Init::Zeros)?,
            });
        }
    }
    let h = FF_MULT * d;
    let mut sources = Vec::new();
    for s in 0..cfg.num_sources {
        let mut layers = Vec::new();
        for l in 0..cfg.transformer_depth {
            let p = format!("mask.src{s}.layer{l}");
            let norm1_g = add(format!("{p}.norm1.gain"), &[d], Init::Ones)?;
            let norm1_b = add(format!("{p}.norm1.bias"), &[d], Init::Zeros)?;
            let mut attn = [0; 8];
            for (j, proj) in ["q", "k", "v", "o"].iter().enumerate() {
                attn[2 * j] = add(format!("{p}.attn.{proj}.weight"), &[d, d], Init::Uniform(d))?;
                attn[2 * j + 1] = add(format!("{p}.attn.{proj}.bias"), &[d], Init::Uniform(d))?;
            }
            layers.push(LayerIds {
                norm1_g,
                norm1_b,
                attn,
                norm2_g: add(format!("{p}.norm2.gain"), &[d], Init::Ones)?,
                norm2_b: add(format!("{p}.norm2.bias"), &[d], Init::Zeros)?,
                ff1_w: add(format!("{p}.ff1.weight"), &[h, d], Init::Uniform(d))?,
                ff1_b: add(format!("{p}.ff1.bias"), &[h], Init::Uniform(d))?,
                ff2_w: add(format!("{p}.ff2.weight"), &[d, h], Init::Uniform(h))?,
                ff2_b: add(format!("{p}.ff2.bias"), &[d], Init::Uniform(h))?,
            });
        }
        sources.push(SourceIds {
            layers,
            out_w: add(format!("mask.src{s}.out.weight"), &[f, d], Init::Uniform(d))?,
            out_b: add(format!("mask.src{s}.out.bias"), &[f], Init::Uniform(d))?,
        });
    }
    let decoder = if learned {
        Some(add("decoder.weight".into(), &[f, 1, k], Init::Uniform(k))?)
    } else {
        None
    };
    Ok(Layout {
        encoder,
        in_norm_g,
        in_norm_b,
        down_w,
        down_b,
        blocks,
        sources,
        decoder,
    })
}

/// Parameters bound onto one graph.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Encoder output plus what the decoder needs to undo it.
#[derive(Debug, Clone)]
pub struct Encoding<T> {
    /// Feature map `(F, M)`.
    pub features: Tensor<T>,
    pub len: usize,
    phase: Option<Arc<Vec<Complex64>>>,
}

/// Non-negative masks `(sources, F, M)`.
#[derive(Debug, Clone)]
pub struct MaskSet<T> {
    pub values: Tensor<T>,
}

struct GraphEncoding {
    feat: Var,
    len: usize,
    phase: Option<Arc<Vec<Complex64>>>,
}

/// The mask-based separation network.
#[derive(Debug, Clone)]
pub struct Separator<T: Scalar = f32> {
    config: SeparatorConfig,
    params: ParamStore<T>,
    layout: Layout,
    plan: Option<Arc<StftPlan>>,
}

impl<T: Scalar> Separator<T> {
    /// Randomly initialized model.
    pub fn new<R: Rng + ?Sized>(config: SeparatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = register(&config, &mut params, &mut |_, shape, init| {
            Ok(match init {
                Init::Uniform(fan_in) => uniform_init(shape, fan_in, rng),
                Init::Ones => Tensor::full(shape, T::one()),
                Init::Zeros => Tensor::zeros(shape),
            })
        })?;
        Self::assemble(config, params, layout)
    }

    /// Model from named tensors; names and shapes must match the config exactly.
    pub fn from_named(config: SeparatorConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let total = tensors.len();
        let mut pool: std::collections::HashMap<String, Tensor<T>> = tensors.into_iter().collect();
        if pool.len() != total {
            return Err(Error::Format("duplicate tensor names".into()));
        }
        let mut params = ParamStore::new();
        let layout = register(&config, &mut params, &mut |name, shape, _| {
            let t = pool
                .remove(name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        })?;
        if let Some(extra) = pool.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        Self::assemble(config, params, layout)
    }

    fn assemble(config: SeparatorConfig, params: ParamStore<T>, layout: Layout) -> Result<Self> {
        let plan = match config.encoder_kind {
            EncoderKind::StftBaseline => Some(Arc::new(StftPlan::new(config.kernel_size, config.stride)?)),
            EncoderKind::LearnedConv => None,
        };
        Ok(Self { config, params, layout, plan })
    }

    pub fn config(&self) -> &SeparatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    pub fn cast<U: Scalar>(&self) -> Separator<U> {
        Separator {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            plan: self.plan.clone(),
        }
    }

    /// Registers every parameter as a gradient-tracking leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound((0..self.params.len()).map(|i| g.param(self.params.shared(i))).collect())
    }

    fn pad(&self, x: &[T]) -> Result<(Vec<T>, usize)> {
        let (padded, frames) = self.config.frames_for(x.len())?;
        let mut v = x.to_vec();
        v.resize(padded, T::zero());
        Ok((v, frames))
    }

    fn encode_graph(&self, g: &mut Graph<T>, b: &Bound, x: &[T]) -> Result<GraphEncoding> {
        let (padded, frames) = self.pad(x)?;
        match (&self.plan, self.layout.encoder) {
            (None, Some(enc)) => {
                let xv = g.constant(Tensor::new(&[1, padded.len()], padded)?)?;
                let feat = g.conv1d(xv, b.0[enc], None, self.config.stride, 0)?;
                Ok(GraphEncoding { feat, len: x.len(), phase: None })
            }
            (Some(plan), _) => {
                let xs: Vec<f64> = padded.iter().map(|v| v.as_f64()).collect();
                let spec = plan.analyze(&xs, crate::signal::SAMPLE_RATE_HZ);
                let nb = plan.n_bins();
                debug_assert_eq!(spec.n_frames(), frames);
                let mut mag = vec![T::zero(); nb * frames];
                let mut phase = Vec::with_capacity(nb * frames);
                for m in 0..frames {
                    for (k, c) in spec.frame(m).iter().enumerate() {
                        let r = c.norm();
                        mag[k * frames + m] = T::of(r);
                        phase.push(if r > 0.0 { c / r } else { Complex64::new(1.0, 0.0) });
                    }
                }
                let feat = g.constant(Tensor::new(&[nb, frames], mag)?)?;
                Ok(GraphEncoding { feat, len: x.len(), phase: Some(Arc::new(phase)) })
            }
            (None, None) => unreachable!("learned encoder without weights"),
        }
    }

    fn masks_graph(&self, g: &mut Graph<T>, b: &Bound, feat: Var) -> Result<Vec<Var>> {
        let p = |i: usize| b.0[i];
        let l = &self.layout;
        let mut h = g.layer_norm(feat, p(l.in_norm_g), p(l.in_norm_b), 0, LN_EPS)?;
        h = g.conv1d(h, p(l.down_w), Some(p(l.down_b)), 1, 0)?;
        let pad = self.config.conv_kernel / 2;
        for blk in &l.blocks {
            h = g.conv1d(h, p(blk.w), Some(p(blk.b)), 1, pad)?;
            h = g.layer_norm(h, p(blk.norm_g), p(blk.norm_b), 0, LN_EPS)?;
            h = g.gelu(h)?;
        }
        let mut z0 = g.transpose(h)?;
        let (m, d) = g.value(z0).dims2("positional encoding")?;
        let pe = g.constant(sinusoidal_positional_encoding(m, d))?;
        z0 = g.add(z0, pe)?;
        let mut masks = Vec::with_capacity(l.sources.len());
        for src in &l.sources {
            let mut z = z0;
            for ly in &src.layers {
                let a = g.layer_norm(z, p(ly.norm1_g), p(ly.norm1_b), 1, LN_EPS)?;
                let ap = AttentionParams {
                    wq: p(ly.attn[0]),
                    bq: p(ly.attn[1]),
                    wk: p(ly.attn[2]),
                    bk: p(ly.attn[3]),
                    wv: p(ly.attn[4]),
                    bv: p(ly.attn[5]),
                    wo: p(ly.attn[6]),
                    bo: p(ly.attn[7]),
                };
                let a = multihead_self_attention(g, a, &ap, self.config.num_heads)?;
                z = g.add(z, a)?;
                let f = g.layer_norm(z, p(ly.norm2_g), p(ly.norm2_b), 1, LN_EPS)?;
                let f = g.linear(f, p(ly.ff1_w), Some(p(ly.ff1_b)))?;
                let f = g.gelu(f)?;
                let f = g.linear(f, p(ly.ff2_w), Some(p(ly.ff2_b)))?;
                z = g.add(z, f)?;
            }
            let y = g.gelu(z)?;
            let y = g.linear(y, p(src.out_w), Some(p(src.out_b)))?;
            let y = g.transpose(y)?;
            masks.push(g.relu(y)?);
        }
        Ok(masks)
    }

    fn decode_graph(&self, g: &mut Graph<T>, b: &Bound, enc: &GraphEncoding, masked: Var) -> Result<Var> {
        match (&self.plan, &enc.phase, self.layout.decoder) {
            (None, _, Some(dec)) => {
                let y = g.conv_transpose1d(masked, b.0[dec], None, self.config.stride)?;
                g.narrow(y, 0, enc.len)
            }
            (Some(plan), Some(phase), _) => g.istft_magnitude(masked, Arc::clone(plan), Arc::clone(phase), enc.len),
            _ => Err(Error::invalid("encoding does not match the decoder kind")),
        }
    }

    /// Records the full network for one waveform. Returns one `(1, T)`
    /// estimate per source, heart first.
    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, x: &[T]) -> Result<Vec<Var>> {
        let enc = self.encode_graph(g, b, x)?;
        let masks = self.masks_graph(g, b, enc.feat)?;
        masks
            .into_iter()
            .map(|mk| {
                let masked = g.mul(mk, enc.feat)?;
                self.decode_graph(g, b, &enc, masked)
            })
            .collect()
    }

    fn input(x: &Waveform) -> Vec<T> {
        x.samples().iter().map(|&v| T::of(v)).collect()
    }

    pub fn encode(&self, x: &Waveform) -> Result<Encoding<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let enc = self.encode_graph(&mut g, &b, &Self::input(x))?;
        Ok(Encoding {
            features: g.value(enc.feat).clone(),
            len: enc.len,
            phase: enc.phase,
        })
    }

    pub fn generate_masks(&self, features: &Tensor<T>) -> Result<MaskSet<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let f = g.constant(features.clone())?;
        let masks = self.masks_graph(&mut g, &b, f)?;
        let (fb, m) = features.dims2("generate_masks")?;
        let mut values = Vec::with_capacity(masks.len() * fb * m);
        for mk in masks {
            values.extend_from_slice(g.value(mk).data());
        }
        Ok(MaskSet { values: Tensor::new(&[self.config.num_sources, fb, m], values)? })
    }

    /// Synthesizes a waveform from a (masked) feature map of `enc`'s shape.
    pub fn decode(&self, masked: &Tensor<T>, enc: &Encoding<T>) -> Result<Waveform> {
        if masked.shape() != enc.features.shape() {
            return Err(Error::shape(
                "decode",
                format!("{:?} vs encoding {:?}", masked.shape(), enc.features.shape()),
            ));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let ge = GraphEncoding {
            feat: g.constant(enc.features.clone())?,
            len: enc.len,
            phase: enc.phase.clone(),
        };
        let mv = g.constant(masked.clone())?;
        let y = self.decode_graph(&mut g, &b, &ge, mv)?;
        Waveform::at_canonical_rate(g.value(y).data().iter().map(|v| v.as_f64()).collect())
    }

    /// Splits a mixture into `[heart, lung]` of the input's length.
    pub fn separate(&self, x: &Waveform) -> Result<[Waveform; 2]> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let outs = self.forward(&mut g, &b, &Self::input(x))?;
        let wav = |v: Var| -> Result<Waveform> {
            Waveform::new(g.value(v).data().iter().map(|s| s.as_f64()).collect(), x.sample_rate_hz())
        };
        Ok([wav(outs[0])?, wav(outs[1])?])
    }

    /// `(B, T)` to `(B, 2, T)`, processed in order.
    pub fn separate_batch(&self, xs: &[Waveform]) -> Result<Vec<[Waveform; 2]>> {
        xs.iter().map(|x| self.separate(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> SeparatorConfig {
        SeparatorConfig {
            kernel_size: 16,
            stride: 8,
            feature_size: 8,
            mask_feature_size: 8,
            conv_layers: 2,
            num_heads: 2,
            transformer_depth: 1,
            ..SeparatorConfig::default()
        }
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::at_canonical_rate((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn parameter_count_of_default_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Separator::<f32>::new(SeparatorConfig::default(), &mut rng).unwrap();
        let (f, d, k, h) = (512usize, 256usize, 512usize, 1024usize);
        let layer = 4 * d + 4 * (d * d + d) + (h * d + h) + (d * h + d);
        let want = 2 * f * k + 2 * f + (f * d + d) + 6 * (d * d * 3 + 3 * d) + 2 * (4 * layer + f * d + f);
        assert_eq!(m.num_parameters(), want);
        assert_eq!(want, 8_422_144);
    }

    #[test]
    fn output_shapes_and_mask_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [EncoderKind::LearnedConv, EncoderKind::StftBaseline] {
            let cfg = SeparatorConfig { encoder_kind: kind, ..tiny() };
            let m = Separator::<f64>::new(cfg, &mut rng).unwrap();
            for len in [16, 17, 23, 100] {
                let x = noise(len, len as u64);
                let [h, l] = m.separate(&x).unwrap();
                assert_eq!((h.len(), l.len()), (len, len));
                assert!(h.samples().iter().chain(l.samples()).all(|v| v.is_finite()));
                let enc = m.encode(&x).unwrap();
                let masks = m.generate_masks(&enc.features).unwrap();
                let (_, frames) = m.config().frames_for(len).unwrap();
                assert_eq!(masks.values.shape(), &[2, m.config().feature_bins(), frames]);
                assert!(masks.values.data().iter().all(|&v| v >= 0.0));
            }
            assert!(m.separate(&noise(15, 0)).is_err());
        }
    }

    #[test]
    fn zero_features_decode_to_silence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Separator::<f32>::new(tiny(), &mut rng).unwrap();
        let enc = m.encode(&noise(50, 3)).unwrap();
        let y = m.decode(&Tensor::zeros(enc.features.shape()), &enc).unwrap();
        assert_eq!(y.len(), 50);
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stft_decode_with_unit_mask_reconstructs_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SeparatorConfig { encoder_kind: EncoderKind::StftBaseline, ..tiny() };
        let m = Separator::<f64>::new(cfg, &mut rng).unwrap();
        let x = noise(96, 4);
        let enc = m.encode(&x).unwrap();
        let y = m.decode(&enc.features, &enc).unwrap();
        for i in 16..80 {
            assert!((y.samples()[i] - x.samples()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn source_stacks_are_isolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Separator::<f64>::new(tiny(), &mut rng).unwrap();
        let enc = m.encode(&noise(64, 5)).unwrap();
        let before = m.generate_masks(&enc.features).unwrap();
        let id = m.params().id("mask.src0.layer0.ff2.weight").unwrap();
        m.params_mut().tensor_mut(id).data_mut().iter_mut().for_each(|v| *v += 0.5);
        let after = m.generate_masks(&enc.features).unwrap();
        let half = before.values.numel() / 2;
        assert_ne!(before.values.data()[..half], after.values.data()[..half]);
        assert_eq!(before.values.data()[half..], after.values.data()[half..]);
    }

    #[test]
    fn named_round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Separator::<f32>::new(tiny(), &mut rng).unwrap();
        let named: Vec<(String, Tensor<f32>)> =
            m.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let back = Separator::from_named(tiny(), named.clone()).unwrap();
        assert_eq!(back.params().names(), m.params().names());
        let wider = SeparatorConfig { feature_size: 10, ..tiny() };
        assert!(matches!(Separator::from_named(wider, named.clone()), Err(Error::Format(_))));
        let mut missing = named;
        missing.pop();
        assert!(Separator::from_named(tiny(), missing).is_err());
    }

    #[test]
    fn no_conv_variant_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SeparatorConfig { use_conv_blocks: false, transformer_depth: 3, ..tiny() };
        let m = Separator::<f32>::new(cfg, &mut rng).unwrap();
        assert!(m.params().names().iter().all(|n| !n.starts_with("mask.conv")));
        let [h, _] = m.separate(&noise(40, 1)).unwrap();
        assert_eq!(h.len(), 40);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in [EncoderKind::LearnedConv, EncoderKind::StftBaseline] {
            let m = Separator::<f64>::new(SeparatorConfig { encoder_kind: kind, ..tiny() }, &mut rng).unwrap();
            let mut g = Graph::new();
            let b = m.bind(&mut g);
            let x = noise(80, 8);
            let outs = m.forward(&mut g, &b, &Separator::<f64>::input(&x)).unwrap();
            let t0 = noise(80, 9).into_samples();
            let t1 = noise(80, 10).into_samples();
            let l0 = g.neg_si_sdr(outs[0], &t0).unwrap();
            let l1 = g.neg_si_sdr(outs[1], &t1).unwrap();
            let loss = g.mean(&[l0, l1]).unwrap();
            g.backward(loss).unwrap();
            for (i, v) in b.vars().iter().enumerate() {
                let gr = g.grad(*v).unwrap_or_else(|| panic!("no grad for {}", m.params().name(i)));
                assert!(gr.sum_sq() > 0.0, "zero grad for {}", m.params().name(i));
            }
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Separator::<f32>::new(tiny(), &mut rng).unwrap();
        let x = noise(77, 2);
        let a = m.separate(&x).unwrap();
        let b = m.separate(&x).unwrap();
        assert_eq!(a[0].samples(), b[0].samples());
        assert_eq!(a[1].samples(), b[1].samples());
    }
}
