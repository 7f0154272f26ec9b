//! Networks: the VGG-style embedding backbone (optionally behind nine-palace
//! attention), the 5-way category network, and the baseline classifiers.

mod bank;
mod checkpoint;
mod classifiers;
mod layers;
mod preprocess;

use rand::Rng;
use serde::{Deserialize, Serialize};
use shufa_autograd::{Bound, Float, Graph, ParamStore, Tensor, Var};

pub use bank::ImageBank;
pub use checkpoint::{load_checkpoint, read_meta, save_checkpoint, sidecar_path, CheckpointMeta, EXTRA_PREFIX};
pub use classifiers::{Arch, Classifier, ClassifierConfig, ClassifierModel, ResNet};
pub use layers::{Conv, Linear, ResidualBlock, VggStack};
pub use preprocess::{preprocess_file, preprocess_gray, to_gray};

use crate::attention::{AttentionConfig, AttentionHead};
use crate::corpus::Category;
use crate::error::{Result, ShufaError};
use crate::loss::{LayerTaps, TapSource};
use crate::style::FeatureMap;

/// Images per forward pass in evaluation helpers.
pub const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub stage_widths: Vec<usize>,
    pub tap_stages: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            stage_widths: vec![16, 32, 64, 64],
            tap_stages: vec![0, 1, 2, 3],
            embed_dim: 128,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ShufaError::Invalid(format!("backbone: {m}")));
        let stages = self.stage_widths.len();
        if stages == 0 || self.stage_widths.contains(&0) {
            return bad("stage widths must be non-empty and positive".into());
        }
        if self.tap_stages.windows(2).any(|w| w[0] >= w[1]) || self.tap_stages.iter().any(|&s| s >= stages) {
            return bad(format!(
                "tap stages {:?} must increase within 0..{stages}",
                self.tap_stages
            ));
        }
        if self.embed_dim < 2 {
            return bad("embed_dim must be at least 2".into());
        }
        let shrink = 1usize << (stages - 1);
        if self.input_size < 3 || !self.input_size.is_multiple_of(shrink) {
            return bad(format!("input_size {} must be a multiple of {shrink}", self.input_size));
        }
        Ok(())
    }

    /// Spatial side of stage `s`'s tap.
    pub fn tap_side(&self, stage: usize) -> usize {
        self.input_size >> stage
    }
}

/// Forward-pass handles.
#[derive(Clone, Debug)]
pub struct NetOutput {
    /// Embedding or logits, `[N, D]`.
    pub output: Var,
    /// One `[N, C, H, W]` activation per configured tap stage.
    pub taps: Vec<Var>,
    /// Last stage activation, the input to global pooling.
    pub features: Var,
}

/// VGG stack, global average pool, linear head.
#[derive(Clone, Debug)]
pub struct VggNet {
    pub stack: VggStack,
    pub head: Linear,
    pub tap_stages: Vec<usize>,
}

impl VggNet {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &BackboneConfig,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let stack = VggStack::new(store, name, 1, &cfg.stage_widths, rng);
        let last = *cfg.stage_widths.last().unwrap();
        let head = Linear::new(store, &format!("{name}.head"), last, outputs, rng);
        Ok(Self {
            stack,
            head,
            tap_stages: cfg.tap_stages.clone(),
        })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<NetOutput> {
        let stages = self.stack.forward(g, p, x)?;
        let features = *stages.last().unwrap();
        let pooled = g.global_avg_pool(features)?;
        let output = self.head.forward(g, p, pooled)?;
        Ok(NetOutput {
            output,
            taps: self.tap_stages.iter().map(|&s| stages[s]).collect(),
            features,
        })
    }
}

/// Embedding network with optional attention in front.
#[derive(Clone, Debug)]
pub struct ShufaNet {
    pub backbone: VggNet,
    pub attention: Option<AttentionHead>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShufaNetConfig {
    pub backbone: BackboneConfig,
    pub attention: AttentionConfig,
    pub sa_enabled: bool,
}

impl Default for ShufaNetConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            attention: AttentionConfig::default(),
            sa_enabled: true,
        }
    }
}

impl ShufaNet {
    pub fn new<T: Float>(store: &mut ParamStore<T>, cfg: &ShufaNetConfig, rng: &mut impl Rng) -> Result<Self> {
        let backbone = VggNet::new(store, "backbone", &cfg.backbone, cfg.backbone.embed_dim, rng)?;
        let attention = if cfg.sa_enabled {
            Some(AttentionHead::new(store, &cfg.attention, 1, rng)?)
        } else {
            None
        };
        Ok(Self { backbone, attention })
    }

    /// Attention-weighted input (or `x` itself without attention).
    pub fn attend<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(match &self.attention {
            Some(head) => head.apply(g, p, x)?.0,
            None => x,
        })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<NetOutput> {
        let xa = self.attend(g, p, x)?;
        self.backbone.forward(g, p, xa)
    }
}

pub struct ShufaModel {
    pub config: ShufaNetConfig,
    pub net: ShufaNet,
    pub params: ParamStore<f32>,
}

impl ShufaModel {
    pub fn new(config: ShufaNetConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = ShufaNet::new(&mut params, &config, rng)?;
        Ok(Self { config, net, params })
    }

    /// `[N, 1, S, S] → [N, embed_dim]` in batches.
    pub fn embed(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        batched(
            images,
            self.config.backbone.embed_dim,
            |g, p, x| Ok(self.net.forward(g, p, x)?.output),
            &self.params,
        )
    }
}

/// The script-category network.
pub struct CcnetModel {
    pub config: BackboneConfig,
    pub net: VggNet,
    pub params: ParamStore<f32>,
    pub frozen: bool,
}

impl CcnetModel {
    pub const CLASSES: usize = Category::ALL.len();

    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = VggNet::new(&mut params, "ccnet", &config, Self::CLASSES, rng)?;
        Ok(Self {
            config,
            net,
            params,
            frozen: false,
        })
    }

    pub fn logits(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        batched(
            images,
            Self::CLASSES,
            |g, p, x| Ok(self.net.forward(g, p, x)?.output),
            &self.params,
        )
    }
}

/// Runs `f` over `[N, ...]` inputs in chunks of [`EVAL_BATCH`] with frozen
/// parameters, stacking the `[n, width]` outputs.
pub(crate) fn batched<T: Float>(
    images: &Tensor<T>,
    width: usize,
    f: impl Fn(&mut Graph<T>, &Bound, Var) -> Result<Var>,
    params: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let n = images.dim(0);
    let mut data = Vec::with_capacity(n * width);
    let mut start = 0;
    while start < n {
        let len = EVAL_BATCH.min(n - start);
        let idx: Vec<usize> = (start..start + len).collect();
        let mut g = Graph::new();
        let p = g.bind(params, false);
        let x = g.constant(images.select_items(&idx));
        let out = f(&mut g, &p, x)?;
        data.extend_from_slice(g.value(out).data());
        start += len;
    }
    Ok(Tensor::new(vec![n, width], data)?)
}

fn single_batch(image: &Tensor<f32>, input_size: usize) -> Result<Tensor<f32>> {
    let n = image.len();
    if n != input_size * input_size {
        return Err(ShufaError::Invalid(format!(
            "image has {n} pixels, expected {input_size}×{input_size}"
        )));
    }
    Ok(image.clone().reshape(&[1, 1, input_size, input_size])?)
}

fn taps_of(g: &Graph<f32>, vars: &[Var], stages: &[usize], source: TapSource) -> Result<LayerTaps> {
    let taps = vars
        .iter()
        .zip(stages)
        .map(|(&v, &stage)| {
            let t = g.value(v);
            let s = t.shape();
            FeatureMap::new(s[1], s[2], s[3], t.data().iter().map(|&x| x as f64).collect(), stage)
        })
        .collect::<Result<Vec<_>>>()?;
    LayerTaps::new(taps, source)
}

/// Embedding and backbone taps for one preprocessed `S×S` image.
pub fn forward_embed(image: &Tensor<f32>, model: &ShufaModel) -> Result<(Vec<f32>, LayerTaps)> {
    let x = single_batch(image, model.config.backbone.input_size)?;
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let xv = g.constant(x);
    let out = model.net.forward(&mut g, &p, xv)?;
    let taps = taps_of(&g, &out.taps, &model.config.backbone.tap_stages, TapSource::Backbone)?;
    Ok((g.value(out.output).data().to_vec(), taps))
}

/// Category logits and taps for one preprocessed `S×S` image.
pub fn ccnet_forward(image: &Tensor<f32>, model: &CcnetModel) -> Result<(Vec<f32>, LayerTaps)> {
    let x = single_batch(image, model.config.input_size)?;
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let xv = g.constant(x);
    let out = model.net.forward(&mut g, &p, xv)?;
    let taps = taps_of(&g, &out.taps, &model.config.tap_stages, TapSource::Ccnet)?;
    Ok((g.value(out.output).data().to_vec(), taps))
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let e: Vec<f64> = logits.iter().map(|&v| (v as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> BackboneConfig {
        BackboneConfig {
            input_size: 16,
            stage_widths: vec![4, 6, 8],
            tap_stages: vec![0, 2],
            embed_dim: 10,
        }
    }

    fn image(size: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![size, size],
            (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn embed_shapes_taps_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ShufaNetConfig {
            backbone: small(),
            attention: AttentionConfig::default(),
            sa_enabled: true,
        };
        let model = ShufaModel::new(cfg, &mut rng).unwrap();
        let x = image(16, 2);
        let (e, taps) = forward_embed(&x, &model).unwrap();
        assert_eq!(e.len(), 10);
        assert_eq!(taps.taps.len(), 2);
        assert_eq!((taps.taps[0].height, taps.taps[0].channels), (16, 4));
        assert_eq!((taps.taps[1].height, taps.taps[1].channels), (4, 8));
        assert_eq!(forward_embed(&x, &model).unwrap().0, e);
        let batch = Tensor::stack_items(&[&x.clone().reshape(&[1, 1, 16, 16]).unwrap(); 3]).unwrap();
        let many = model.embed(&batch).unwrap();
        assert_eq!(many.item(2), &e[..]);
        assert!(forward_embed(&image(8, 0), &model).is_err());
    }

    #[test]
    fn ccnet_has_five_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = CcnetModel::new(small(), &mut rng).unwrap();
        let (logits, taps) = ccnet_forward(&image(16, 4), &model).unwrap();
        assert_eq!(logits.len(), 5);
        assert_eq!(taps.source, TapSource::Ccnet);
        assert!((softmax(&logits).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let mut cfg = ShufaNetConfig {
            backbone: small(),
            attention: AttentionConfig::default(),
            sa_enabled: true,
        };
        cfg.backbone.tap_stages = vec![0, 1, 2];
        let net = ShufaNet::new(&mut store, &cfg, &mut rng).unwrap();
        // perturb the zero-initialized attention output so its inputs get gradient too
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).starts_with("attention.out") {
                for v in store.get_mut(id).data_mut() {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
        }
        let x: Vec<f64> = (0..2 * 256).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut g = Graph::new();
        let p = g.bind(&store, true);
        let xv = g.constant(Tensor::new(vec![2, 1, 16, 16], x).unwrap());
        let out = net.forward(&mut g, &p, xv).unwrap();
        let z = g.constant(Tensor::zeros(&[2, 10]));
        let d = g.row_distance(out.output, z).unwrap();
        let s = g.sum(d);
        let mut grads = g.backward(s).unwrap();
        for (id, grad) in store.ids().zip(grads.for_params(&p, &store)) {
            assert!(grad.sq_norm() > 0.0, "{} has zero gradient", store.name(id));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.tap_stages = vec![2, 1];
        assert!(c.validate().is_err());
        let mut c = small();
        c.input_size = 18;
        assert!(c.validate().is_err());
        let mut c = small();
        c.embed_dim = 1;
        assert!(c.validate().is_err());
    }
}
