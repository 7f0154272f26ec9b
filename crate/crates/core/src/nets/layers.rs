//! Parameterized building blocks. Layers hold [`ParamId`]s only; the values
//! live in a [`ParamStore`] so one architecture serves any float width.

use rand::Rng;
use shufa_autograd::{Bound, Float, Graph, ParamId, ParamStore, Var};

use crate::error::Result;

/// 3×3 convolution with bias, padding 1.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_kaiming(
            format!("{name}.weight"),
            &[out_channels, in_channels, 3, 3],
            in_channels * 9,
            rng,
        );
        let bias = store.add_zeros(format!("{name}.bias"), &[out_channels]);
        Self { weight, bias, stride }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, 1)?)
    }

    pub fn out_channels<T: Float>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.weight).dim(0)
    }
}

/// Fully connected layer, `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // fan-in scaling without the ReLU gain
        let weight = store.add_kaiming(format!("{name}.weight"), &[outputs, inputs], 2 * inputs, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[outputs]);
        Self { weight, bias }
    }

    pub fn zeros<T: Float>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = store.add_zeros(format!("{name}.weight"), &[outputs, inputs]);
        let bias = store.add_zeros(format!("{name}.bias"), &[outputs]);
        Self { weight, bias }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.linear(x, p.var(self.weight), Some(p.var(self.bias)))?)
    }
}

/// Stages of `(conv3×3, ReLU) × 2`, each followed by a 2×2 max pool except
/// the last. Returns every stage's final activation (before pooling).
#[derive(Clone, Debug)]
pub struct VggStack {
    pub stages: Vec<[Conv; 2]>,
}

impl VggStack {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut cin = in_channels;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(s, &w)| {
                let a = Conv::new(store, &format!("{name}.s{s}.conv0"), cin, w, 1, rng);
                let b = Conv::new(store, &format!("{name}.s{s}.conv1"), w, w, 1, rng);
                cin = w;
                [a, b]
            })
            .collect();
        Self { stages }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.stages.len());
        for (s, [a, b]) in self.stages.iter().enumerate() {
            if s > 0 {
                h = g.max_pool2(h)?;
            }
            let y = a.forward(g, p, h)?;
            let y = g.relu(y);
            let y = b.forward(g, p, y)?;
            h = g.relu(y);
            outs.push(h);
        }
        Ok(outs)
    }
}

/// Basic residual block: `relu(x' + conv(relu(conv(x))))`, where `x'` is `x`
/// or a strided 3×3 projection when the shape changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub first: Conv,
    pub second: Conv,
    pub shortcut: Option<Conv>,
}

impl ResidualBlock {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let first = Conv::new(store, &format!("{name}.conv0"), in_channels, out_channels, stride, rng);
        let second = Conv::new(store, &format!("{name}.conv1"), out_channels, out_channels, 1, rng);
        let shortcut = (stride != 1 || in_channels != out_channels)
            .then(|| Conv::new(store, &format!("{name}.proj"), in_channels, out_channels, stride, rng));
        Self {
            first,
            second,
            shortcut,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.first.forward(g, p, x)?;
        let y = g.relu(y);
        let y = self.second.forward(g, p, y)?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(g, p, x)?,
            None => x,
        };
        let sum = g.add(y, skip)?;
        Ok(g.relu(sum))
    }
}
