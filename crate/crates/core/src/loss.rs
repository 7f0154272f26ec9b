//! Distances, the triplet hinge, the style-matrix loss over layer taps, and
//! their weighted sum. Plain `f64` versions operate on one triplet; the
//! `graph_*` versions build the same quantities on a batch and average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use shufa_autograd::float::lit;
use shufa_autograd::{Float, Graph, StyleRoute, Var};

use crate::error::{Result, ShufaError};
use crate::style::{style_matrix, FeatureMap};

/// How a triplet's `d₊ − d₋ + margin` becomes a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletForm {
    /// `max(0, ·)`.
    #[default]
    Hinge,
    /// `|·|`; also penalizes over-separated triplets.
    Abs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub margin_embed: f64,
    pub margin_style: f64,
    /// Weight per tap stage; stages not listed weigh 1.
    pub layer_weights: BTreeMap<usize, f64>,
    pub form: TripletForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            margin_embed: 200.0,
            margin_style: 200.0,
            layer_weights: BTreeMap::new(),
            form: TripletForm::Hinge,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ShufaError::Invalid(format!("loss: {m}")));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return bad("one of alpha, beta must be positive");
        }
        if !(self.margin_embed > 0.0 && self.margin_style > 0.0) {
            return bad("margins must be positive");
        }
        if self.layer_weights.values().any(|w| !(*w >= 0.0)) {
            return bad("layer weights must be non-negative");
        }
        Ok(())
    }

    pub fn layer_weight(&self, layer: usize) -> f64 {
        self.layer_weights.get(&layer).copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapSource {
    Backbone,
    Ccnet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTaps {
    pub taps: Vec<FeatureMap>,
    pub source: TapSource,
}

impl LayerTaps {
    pub fn new(taps: Vec<FeatureMap>, source: TapSource) -> Result<Self> {
        if taps.windows(2).any(|w| w[0].layer_index >= w[1].layer_index) {
            return Err(ShufaError::Invalid("tap layer indices must increase".into()));
        }
        Ok(Self { taps, source })
    }
}

/// Euclidean norm of `u − v`.
pub fn pair_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(ShufaError::Invalid(format!(
            "pair_distance: lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// `max(0, d₊ − d₋ + margin)`.
pub fn triplet_hinge(d_plus: f64, d_minus: f64, margin: f64) -> Result<f64> {
    triplet_term(d_plus, d_minus, margin, TripletForm::Hinge)
}

pub fn triplet_term(d_plus: f64, d_minus: f64, margin: f64, form: TripletForm) -> Result<f64> {
    if margin < 0.0 {
        return Err(ShufaError::Invalid(format!("negative margin {margin}")));
    }
    let z = d_plus - d_minus + margin;
    Ok(match form {
        TripletForm::Hinge => z.max(0.0),
        TripletForm::Abs => z.abs(),
    })
}

fn scaled_style(f: &FeatureMap) -> Vec<f64> {
    let s = 1.0 / f.positions() as f64;
    style_matrix(f).m.into_iter().map(|v| v * s).collect()
}

fn source_loss(branches: [&LayerTaps; 3], cfg: &LossConfig) -> Result<f64> {
    let [pos, anc, neg] = branches;
    if pos.taps.len() != anc.taps.len() || neg.taps.len() != anc.taps.len() {
        return Err(ShufaError::Invalid(format!(
            "tap counts differ across branches: {}, {}, {}",
            pos.taps.len(),
            anc.taps.len(),
            neg.taps.len()
        )));
    }
    let mut total = 0.0;
    for ((p, a), n) in pos.taps.iter().zip(&anc.taps).zip(&neg.taps) {
        let w = cfg.layer_weight(a.layer_index);
        if w == 0.0 {
            continue;
        }
        let (sp, sa, sn) = (scaled_style(p), scaled_style(a), scaled_style(n));
        let d_plus = pair_distance(&sp, &sa)?;
        let d_minus = pair_distance(&sn, &sa)?;
        total += w * triplet_term(d_plus, d_minus, cfg.margin_style, cfg.form)?;
    }
    Ok(total)
}

/// Style loss of one triplet; branches are ordered (positive, anchor,
/// negative) for both tap sources.
pub fn style_loss(backbone: [&LayerTaps; 3], ccnet: [&LayerTaps; 3], cfg: &LossConfig) -> Result<f64> {
    Ok(source_loss(backbone, cfg)? + source_loss(ccnet, cfg)?)
}

pub fn shufa_loss(style: f64, embed_triplet: f64, cfg: &LossConfig) -> f64 {
    cfg.alpha * style + cfg.beta * embed_triplet
}

fn graph_term<T: Float>(g: &mut Graph<T>, d_plus: Var, d_minus: Var, margin: f64, form: TripletForm) -> Result<Var> {
    let diff = g.sub(d_plus, d_minus)?;
    let z = g.add_scalar(diff, lit(margin));
    Ok(match form {
        TripletForm::Hinge => g.relu(z),
        TripletForm::Abs => g.abs(z),
    })
}

/// Batch mean of the embedding triplet term; inputs are `[N, D]`.
pub fn graph_triplet_loss<T: Float>(
    g: &mut Graph<T>,
    positive: Var,
    anchor: Var,
    negative: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let d_plus = g.row_distance(positive, anchor)?;
    let d_minus = g.row_distance(negative, anchor)?;
    let t = graph_term(g, d_plus, d_minus, cfg.margin_embed, cfg.form)?;
    Ok(g.mean(t))
}

/// Batch mean of the style loss for one tap source. `layers[i]` is the stage
/// index of tap `i`; taps are `[N, C, H, W]` per branch.
pub fn graph_style_loss<T: Float>(
    g: &mut Graph<T>,
    branches: [&[Var]; 3],
    layers: &[usize],
    cfg: &LossConfig,
) -> Result<Option<Var>> {
    let [pos, anc, neg] = branches;
    if pos.len() != layers.len() || anc.len() != layers.len() || neg.len() != layers.len() {
        return Err(ShufaError::Invalid("tap counts differ across branches".into()));
    }
    let mut total: Option<Var> = None;
    for (i, &layer) in layers.iter().enumerate() {
        let w = cfg.layer_weight(layer);
        if w == 0.0 {
            continue;
        }
        let d_plus = g.style_distance(pos[i], anc[i], StyleRoute::Auto)?;
        let d_minus = g.style_distance(neg[i], anc[i], StyleRoute::Auto)?;
        let t = graph_term(g, d_plus, d_minus, cfg.margin_style, cfg.form)?;
        let m = g.mean(t);
        let m = if w == 1.0 { m } else { g.scale(m, lit(w)) };
        total = Some(match total {
            Some(acc) => g.add(acc, m)?,
            None => m,
        });
    }
    Ok(total)
}

/// Scalar nodes of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub style: Option<Var>,
    pub triplet: Var,
}

/// `alpha · style + beta · triplet` on the graph.
pub fn graph_shufa_loss<T: Float>(
    g: &mut Graph<T>,
    style: Option<Var>,
    triplet: Var,
    cfg: &LossConfig,
) -> Result<LossParts> {
    let weighted_triplet = g.scale(triplet, lit(cfg.beta));
    let total = match style {
        Some(s) if cfg.alpha != 0.0 => {
            let ws = g.scale(s, lit(cfg.alpha));
            g.add(ws, weighted_triplet)?
        }
        _ => weighted_triplet,
    };
    Ok(LossParts { total, style, triplet })
}

/// Sum of optional scalar nodes.
pub fn graph_sum<T: Float>(g: &mut Graph<T>, parts: &[Option<Var>]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for p in parts.iter().flatten() {
        acc = Some(match acc {
            Some(a) => g.add(a, *p)?,
            None => *p,
        });
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use shufa_autograd::Tensor;

    fn random_taps(rng: &mut ChaCha8Rng, shapes: &[(usize, usize, usize)], source: TapSource) -> LayerTaps {
        let taps = shapes
            .iter()
            .enumerate()
            .map(|(k, &(c, h, w))| {
                let data = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
                FeatureMap::new(c, h, w, data, k).unwrap()
            })
            .collect();
        LayerTaps::new(taps, source).unwrap()
    }

    #[test]
    fn distance_and_hinge_examples() {
        assert_eq!(pair_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(pair_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(pair_distance(&[0.0], &[1.0, 2.0]).is_err());
        assert_eq!(triplet_hinge(0.0, 200.0, 200.0).unwrap(), 0.0);
        assert_eq!(triplet_hinge(1.0, 5.0, 200.0).unwrap(), 196.0);
        assert_eq!(triplet_hinge(3.5, 3.5, 7.0).unwrap(), 7.0);
        assert!(triplet_hinge(1.0, 1.0, -1.0).is_err());
        assert_eq!(triplet_term(0.0, 10.0, 1.0, TripletForm::Abs).unwrap(), 9.0);
    }

    #[test]
    fn identical_branches_cost_one_margin_per_weighted_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_taps(&mut rng, &[(3, 4, 4), (5, 2, 2), (2, 1, 1)], TapSource::Backbone);
        let c = random_taps(&mut rng, &[(2, 4, 4), (4, 2, 2), (2, 1, 1)], TapSource::Ccnet);
        let mut cfg = LossConfig::default();
        assert_eq!(style_loss([&b, &b, &b], [&c, &c, &c], &cfg).unwrap(), 200.0 * 3.0 * 2.0);
        cfg.layer_weights.insert(1, 0.0);
        assert_eq!(style_loss([&b, &b, &b], [&c, &c, &c], &cfg).unwrap(), 200.0 * 2.0 * 2.0);
    }

    #[test]
    fn layers_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shapes = [(3, 3, 3), (4, 2, 2)];
        let t: Vec<LayerTaps> = (0..3)
            .map(|_| random_taps(&mut rng, &shapes, TapSource::Backbone))
            .collect();
        let none = LayerTaps::new(vec![], TapSource::Ccnet).unwrap();
        let cfg = LossConfig {
            margin_style: 1.0,
            ..Default::default()
        };
        let both = style_loss([&t[0], &t[1], &t[2]], [&none, &none, &none], &cfg).unwrap();
        let single = |k: usize| {
            let pick = |l: &LayerTaps| LayerTaps::new(vec![l.taps[k].clone()], TapSource::Backbone).unwrap();
            let (a, b, c) = (pick(&t[0]), pick(&t[1]), pick(&t[2]));
            style_loss([&a, &b, &c], [&none, &none, &none], &cfg).unwrap()
        };
        assert!((both - single(0) - single(1)).abs() < 1e-12);
    }

    #[test]
    fn tap_count_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_taps(&mut rng, &[(2, 2, 2)], TapSource::Backbone);
        let b = random_taps(&mut rng, &[(2, 2, 2), (2, 1, 1)], TapSource::Backbone);
        let cfg = LossConfig::default();
        assert!(style_loss([&a, &b, &a], [&a, &a, &a], &cfg).is_err());
    }

    #[test]
    fn weighted_sum() {
        let cfg = LossConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert_eq!(shufa_loss(3.0, 2.0, &cfg), 2.0);
        assert_eq!(shufa_loss(3.0, 2.0, &LossConfig::default()), 5.0);
        assert!(LossConfig {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            margin_style: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn to_batch(f: &FeatureMap) -> Tensor<f64> {
        Tensor::new(vec![1, f.channels, f.height, f.width], f.data.clone()).unwrap()
    }

    #[test]
    fn graph_loss_matches_explicit_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shapes = [(3, 4, 4), (6, 2, 2)];
        for form in [TripletForm::Hinge, TripletForm::Abs] {
            let cfg = LossConfig {
                margin_style: 0.5,
                form,
                layer_weights: [(1, 0.7)].into_iter().collect(),
                ..Default::default()
            };
            let t: Vec<LayerTaps> = (0..3)
                .map(|_| random_taps(&mut rng, &shapes, TapSource::Backbone))
                .collect();
            let none = LayerTaps::new(vec![], TapSource::Ccnet).unwrap();
            let plain = style_loss([&t[0], &t[1], &t[2]], [&none, &none, &none], &cfg).unwrap();

            let mut g = Graph::<f64>::new();
            let vars: Vec<Vec<Var>> = t
                .iter()
                .map(|l| l.taps.iter().map(|f| g.constant(to_batch(f))).collect())
                .collect();
            let s = graph_style_loss(&mut g, [&vars[0], &vars[1], &vars[2]], &[0, 1], &cfg)
                .unwrap()
                .unwrap();
            let got = g.value(s).data()[0];
            assert!((got - plain).abs() <= 1e-6 * plain.abs().max(1e-12), "{got} vs {plain}");
        }
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(u in prop::collection::vec(-10.0f64..10.0, 5), v in prop::collection::vec(-10.0f64..10.0, 5)) {
            prop_assert_eq!(pair_distance(&u, &v).unwrap(), pair_distance(&v, &u).unwrap());
        }

        #[test]
        fn hinge_is_monotone_and_non_negative(dp in 0.0f64..50.0, dn in 0.0f64..50.0, m in 0.0f64..20.0, step in 0.0f64..5.0) {
            let base = triplet_hinge(dp, dn, m).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!(triplet_hinge(dp, dn + step, m).unwrap() <= base);
            prop_assert!(triplet_hinge(dp + step, dn, m).unwrap() >= base);
            if dn >= dp + m {
                prop_assert_eq!(base, 0.0);
            }
        }
    }
}
