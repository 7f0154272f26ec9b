//! End-to-end writer classifiers used as baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};
use shufa_autograd::{Bound, Float, Graph, ParamStore, Tensor, Var};

use super::{batched, BackboneConfig, Conv, Linear, NetOutput, ResidualBlock, VggNet};
use crate::error::{Result, ShufaError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    VggSmall,
    #[serde(rename = "resnet_small_A")]
    ResnetSmallA,
    #[serde(rename = "resnet_small_B")]
    ResnetSmallB,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::VggSmall, Arch::ResnetSmallA, Arch::ResnetSmallB];

    pub fn name(self) -> &'static str {
        match self {
            Arch::VggSmall => "vgg_small",
            Arch::ResnetSmallA => "resnet_small_A",
            Arch::ResnetSmallB => "resnet_small_B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Residual blocks per stage.
    fn blocks(self) -> usize {
        match self {
            Arch::VggSmall => 0,
            Arch::ResnetSmallA => 1,
            Arch::ResnetSmallB => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub arch: Arch,
    pub input_size: usize,
    pub classes: usize,
    pub stage_widths: Vec<usize>,
}

impl ClassifierConfig {
    pub fn for_arch(arch: Arch, input_size: usize, classes: usize) -> Self {
        let stage_widths = match arch {
            Arch::VggSmall => vec![16, 32, 64, 64],
            _ => vec![16, 32, 64],
        };
        Self {
            arch,
            input_size,
            classes,
            stage_widths,
        }
    }
}

/// Stem conv, residual stages (stride 2 from the second on), global average
/// pool, linear head.
#[derive(Clone, Debug)]
pub struct ResNet {
    pub stem: Conv,
    pub blocks: Vec<ResidualBlock>,
    pub head: Linear,
}

impl ResNet {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        widths: &[usize],
        blocks_per_stage: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let stem = Conv::new(store, "resnet.stem", 1, widths[0], 1, rng);
        let mut cin = widths[0];
        let mut blocks = Vec::new();
        for (s, &w) in widths.iter().enumerate() {
            for b in 0..blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::new(
                    store,
                    &format!("resnet.s{s}.b{b}"),
                    cin,
                    w,
                    stride,
                    rng,
                ));
                cin = w;
            }
        }
        let head = Linear::new(store, "resnet.head", cin, classes, rng);
        Self { stem, blocks, head }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<NetOutput> {
        let y = self.stem.forward(g, p, x)?;
        let mut h = g.relu(y);
        let mut taps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
            taps.push(h);
        }
        let pooled = g.global_avg_pool(h)?;
        let output = self.head.forward(g, p, pooled)?;
        Ok(NetOutput {
            output,
            taps,
            features: h,
        })
    }
}

#[derive(Clone, Debug)]
pub enum Classifier {
    Vgg(VggNet),
    Res(ResNet),
}

impl Classifier {
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<NetOutput> {
        match self {
            Classifier::Vgg(n) => n.forward(g, p, x),
            Classifier::Res(n) => n.forward(g, p, x),
        }
    }

    /// The linear layer over pooled final features.
    pub fn head(&self) -> &Linear {
        match self {
            Classifier::Vgg(n) => &n.head,
            Classifier::Res(n) => &n.head,
        }
    }
}

pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub net: Classifier,
    pub params: ParamStore<f32>,
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.classes < 2 {
            return Err(ShufaError::Invalid("classifier needs at least two classes".into()));
        }
        if config.stage_widths.is_empty() {
            return Err(ShufaError::Invalid("classifier needs at least one stage".into()));
        }
        let mut params = ParamStore::new();
        let net = match config.arch {
            Arch::VggSmall => {
                let cfg = BackboneConfig {
                    input_size: config.input_size,
                    stage_widths: config.stage_widths.clone(),
                    tap_stages: vec![],
                    embed_dim: config.classes,
                };
                Classifier::Vgg(VggNet::new(&mut params, "vgg", &cfg, config.classes, rng)?)
            }
            arch => Classifier::Res(ResNet::new(
                &mut params,
                &config.stage_widths,
                arch.blocks(),
                config.classes,
                rng,
            )),
        };
        Ok(Self { config, net, params })
    }

    pub fn logits(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        batched(
            images,
            self.config.classes,
            |g, p, x| Ok(self.net.forward(g, p, x)?.output),
            &self.params,
        )
    }
}
