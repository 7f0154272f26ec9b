//! Nine-palace spatial attention: a small conv head predicts one weight per
//! cell of a 3×3 grid and the image is rescaled cell by cell.

use rand::Rng;
use serde::{Deserialize, Serialize};
use shufa_autograd::float::lit;
use shufa_autograd::{Float, Graph, ParamStore, Tensor, Var};

use crate::error::{Result, ShufaError};
use crate::nets::{Conv, Linear};

/// Cell boundaries along each axis: `[0, b1, b2, len]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PalacePartition {
    pub row_bounds: [usize; 4],
    pub col_bounds: [usize; 4],
}

/// `round(i * n / 3)` with halves rounded up, in integers.
fn thirds(n: usize) -> [usize; 4] {
    [0, (2 * n + 3) / 6, (4 * n + 3) / 6, n]
}

pub fn nine_palace_partition(height: usize, width: usize) -> Result<PalacePartition> {
    if height < 3 || width < 3 {
        return Err(ShufaError::Invalid(format!(
            "nine-palace grid needs at least 3×3 pixels, got {height}×{width}"
        )));
    }
    Ok(PalacePartition {
        row_bounds: thirds(height),
        col_bounds: thirds(width),
    })
}

impl PalacePartition {
    pub fn height(&self) -> usize {
        self.row_bounds[3]
    }

    pub fn width(&self) -> usize {
        self.col_bounds[3]
    }

    /// Row-major cell index of pixel `(y, x)`.
    pub fn block(&self, y: usize, x: usize) -> usize {
        let r = self.row_bounds[1..].iter().position(|&b| y < b).unwrap_or(2);
        let c = self.col_bounds[1..].iter().position(|&b| x < b).unwrap_or(2);
        3 * r + c
    }

    pub fn block_area(&self, cell: usize) -> usize {
        let (r, c) = (cell / 3, cell % 3);
        (self.row_bounds[r + 1] - self.row_bounds[r]) * (self.col_bounds[c + 1] - self.col_bounds[c])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PalaceWeights {
    pub w: [f64; 9],
}

impl PalaceWeights {
    pub fn new(values: &[f64]) -> Result<Self> {
        let w: [f64; 9] = values
            .try_into()
            .map_err(|_| ShufaError::Invalid(format!("palace weights need 9 entries, got {}", values.len())))?;
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ShufaError::Invalid(
                "palace weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self { w })
    }

    pub fn uniform() -> Self {
        Self { w: [1.0; 9] }
    }

    pub fn mean(&self) -> f64 {
        self.w.iter().sum::<f64>() / 9.0
    }
}

/// Scales each pixel of a `[C, H, W]` or `[N, C, H, W]` image by the weight
/// of its cell.
pub fn apply_attention<T: Float>(image: &Tensor<T>, weights: &PalaceWeights) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() < 3 {
        return Err(ShufaError::Invalid(format!(
            "attention input must be [C, H, W], got {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let part = nine_palace_partition(h, w)?;
    let cell: Vec<T> = (0..h * w)
        .map(|i| T::from_f64_lossy(weights.w[part.block(i / w, i % w)]))
        .collect();
    let mut out = image.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        for (v, &c) in plane.iter_mut().zip(&cell) {
            *v *= c;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// One stride-2 conv stage per entry.
    pub stage_widths: Vec<usize>,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            stage_widths: vec![8, 16, 32],
        }
    }
}

/// Stride-2 conv stages, global average pool, then a zero-initialized linear
/// map to 9 logits; weights are `9 · softmax(logits)`.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub convs: Vec<Conv>,
    pub out: Linear,
}

impl AttentionHead {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        cfg: &AttentionConfig,
        in_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.stage_widths.is_empty() {
            return Err(ShufaError::Invalid("attention head needs at least one stage".into()));
        }
        let mut cin = in_channels;
        let convs = cfg
            .stage_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv::new(store, &format!("attention.s{i}"), cin, w, 2, rng);
                cin = w;
                c
            })
            .collect();
        let out = Linear::zeros(store, "attention.out", cin, 9);
        Ok(Self { convs, out })
    }

    /// `[N, C, H, W] → [N, 9]` cell weights.
    pub fn weights<T: Float>(&self, g: &mut Graph<T>, p: &shufa_autograd::Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for c in &self.convs {
            let y = c.forward(g, p, h)?;
            h = g.relu(y);
        }
        let pooled = g.global_avg_pool(h)?;
        let logits = self.out.forward(g, p, pooled)?;
        let soft = g.softmax(logits);
        Ok(g.scale(soft, lit(9.0)))
    }

    /// Reweighted image and the weights used.
    pub fn apply<T: Float>(&self, g: &mut Graph<T>, p: &shufa_autograd::Bound, x: Var) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 {
            return Err(ShufaError::Invalid(format!(
                "attention input must be [N, C, H, W], got {s:?}"
            )));
        }
        let part = nine_palace_partition(s[2], s[3])?;
        let w = self.weights(g, p, x)?;
        let y = g.grid_scale(x, w, &part.row_bounds, &part.col_bounds)?;
        Ok((y, w))
    }
}

/// Evaluation-mode weights for one `[C, H, W]` image.
pub fn attention_head<T: Float>(
    image: &Tensor<T>,
    head: &AttentionHead,
    store: &ParamStore<T>,
) -> Result<PalaceWeights> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let batch = image.clone().reshape(&shape)?;
    let mut g = Graph::new();
    let p = g.bind(store, false);
    let x = g.constant(batch);
    let w = head.weights(&mut g, &p, x)?;
    let values: Vec<f64> = g.value(w).data().iter().map(|v| v.to_f64_lossy()).collect();
    PalaceWeights::new(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn exact_and_rounded_partitions() {
        let p = nine_palace_partition(6, 6).unwrap();
        assert_eq!(p.row_bounds, [0, 2, 4, 6]);
        assert!((0..9).all(|c| p.block_area(c) == 4));
        let p = nine_palace_partition(7, 7).unwrap();
        assert_eq!(p.row_bounds, [0, 2, 5, 7]);
        assert!(nine_palace_partition(2, 9).is_err());
    }

    #[test]
    fn uniform_weights_are_identity_and_one_hot_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&[2, 7, 8], &mut rng);
        assert_eq!(apply_attention(&x, &PalaceWeights::uniform()).unwrap(), x);
        let mut w = [0.0; 9];
        w[0] = 1.0;
        let y = apply_attention(&x, &PalaceWeights::new(&w).unwrap()).unwrap();
        let part = nine_palace_partition(7, 8).unwrap();
        for c in 0..2 {
            for yy in 0..7 {
                for xx in 0..8 {
                    let v = y.data()[c * 56 + yy * 8 + xx];
                    assert_eq!(v != 0.0, part.block(yy, xx) == 0);
                }
            }
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(PalaceWeights::new(&[1.0; 8]).is_err());
        assert!(PalaceWeights::new(&[-1.0; 9]).is_err());
    }

    #[test]
    fn head_is_uniform_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let head = AttentionHead::new(&mut store, &AttentionConfig::default(), 1, &mut rng).unwrap();
        let x = random_image(&[1, 32, 32], &mut rng);
        let w = attention_head(&x, &head, &store).unwrap();
        assert!(w.w.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let mut g = Graph::new();
        let p = g.bind(&store, false);
        let xb = g.constant(x.clone().reshape(&[1, 1, 32, 32]).unwrap());
        let (y, _) = head.apply(&mut g, &p, xb).unwrap();
        for (a, b) in g.value(y).data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn blocks_tile_the_image(h in 3usize..=257, w in 3usize..=257) {
            let p = nine_palace_partition(h, w).unwrap();
            prop_assert_eq!((0..9).map(|c| p.block_area(c)).sum::<usize>(), h * w);
            prop_assert!((0..9).all(|c| p.block_area(c) > 0));
            let mut counts = [0usize; 9];
            for y in 0..h {
                for x in 0..w {
                    counts[p.block(y, x)] += 1;
                }
            }
            prop_assert!((0..9).all(|c| counts[c] == p.block_area(c)));
            for i in 1..3 {
                let exact = (i * h) as f64 / 3.0;
                prop_assert_eq!(p.row_bounds[i], (exact + 0.5).floor() as usize);
            }
        }

        #[test]
        fn linear_in_weights(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_image(&[3, 9, 10], &mut rng);
            let raw: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..3.0)).collect();
            let w = PalaceWeights::new(&raw).unwrap();
            let w2 = PalaceWeights::new(&raw.iter().map(|v| 2.0 * v).collect::<Vec<_>>()).unwrap();
            let a = apply_attention(&x, &w).unwrap();
            let b = apply_attention(&x, &w2).unwrap();
            for (u, v) in a.data().iter().zip(b.data()) {
                prop_assert!((2.0 * u - v).abs() <= 1e-12);
            }
        }
    }
}
