//! Class activation maps for networks whose classifier is a linear layer
//! over globally pooled final features.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shufa_autograd::{Graph, ParamStore, Tensor};

use crate::corpus::save_gray_png;
use crate::error::{io_err, Result, ShufaError};
use crate::fewshot::Probe;
use crate::nets::{CcnetModel, ClassifierModel, Linear, ShufaModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Jet,
    Hot,
    Gray,
}

impl Colormap {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "jet" => Some(Self::Jet),
            "hot" => Some(Self::Hot),
            "gray" | "grey" => Some(Self::Gray),
            _ => None,
        }
    }

    /// RGB in `[0, 1]` for `t ∈ [0, 1]`.
    pub fn rgb(self, t: f64) -> [f64; 3] {
        let t = t.clamp(0.0, 1.0);
        match self {
            Self::Jet => {
                let ramp = |c: f64| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0);
                [ramp(3.0), ramp(2.0), ramp(1.0)]
            }
            Self::Hot => [
                (3.0 * t).min(1.0),
                (3.0 * t - 1.0).clamp(0.0, 1.0),
                (3.0 * t - 2.0).clamp(0.0, 1.0),
            ],
            Self::Gray => [t, t, t],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CamConfig {
    pub colormap: Colormap,
    pub upsample: Upsample,
    /// Blend weight of the colour map at heat 1.
    pub opacity: f64,
}

impl Default for CamConfig {
    fn default() -> Self {
        Self {
            colormap: Colormap::Jet,
            upsample: Upsample::Bilinear,
            opacity: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major, in `[0, 1]`.
    pub values: Vec<f64>,
    pub class_index: usize,
}

impl Heatmap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// `Σ_c w[c] · f[c]` over a `[C, h, w]` map, row-major `h × w`.
pub fn raw_cam(features: &[f64], channels: usize, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != channels || channels == 0 || !features.len().is_multiple_of(channels) {
        return Err(ShufaError::Invalid(format!(
            "{} class weights for {channels} feature channels",
            weights.len()
        )));
    }
    let plane = features.len() / channels;
    let mut out = vec![0.0; plane];
    for (f, &w) in features.chunks(plane).zip(weights) {
        for (o, v) in out.iter_mut().zip(f) {
            *o += w * v;
        }
    }
    Ok(out)
}

pub fn upsample(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize, mode: Upsample) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w);
    match mode {
        Upsample::Nearest => {
            for y in 0..out_h {
                let sy = y * h / out_h;
                for x in 0..out_w {
                    out.push(map[sy * w + x * w / out_w]);
                }
            }
        }
        Upsample::Bilinear => {
            // pixel centres aligned, edges clamped
            let coord = |d: usize, n_in: usize, n_out: usize| {
                let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                (i0, (i0 + 1).min(n_in - 1), s - i0 as f64)
            };
            for y in 0..out_h {
                let (y0, y1, fy) = coord(y, h, out_h);
                for x in 0..out_w {
                    let (x0, x1, fx) = coord(x, w, out_w);
                    let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
                    let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    out
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Heatmap of final features `[C, h, w]` at `out_h × out_w`.
pub fn cam_from_features(
    features: &Tensor<f64>,
    weights: &[f64],
    class_index: usize,
    out_h: usize,
    out_w: usize,
    mode: Upsample,
) -> Result<Heatmap> {
    let s = features.shape();
    if s.len() != 3 {
        return Err(ShufaError::Invalid(format!(
            "final features must be [C, h, w], got {s:?}"
        )));
    }
    let raw = raw_cam(features.data(), s[0], weights)?;
    let mut values = upsample(&raw, s[1], s[2], out_h, out_w, mode);
    normalize(&mut values);
    Ok(Heatmap {
        height: out_h,
        width: out_w,
        values,
        class_index,
    })
}

/// A network with a pooled linear head that CAM can read.
pub enum CamTarget<'a> {
    Ccnet(&'a CcnetModel),
    Classifier(&'a ClassifierModel),
    /// Embedding network followed by a probe over its embeddings; class
    /// weights are the probe composed with the embedding layer.
    Probe {
        model: &'a ShufaModel,
        probe: &'a Probe,
    },
}

impl CamTarget<'_> {
    fn input_size(&self) -> usize {
        match self {
            Self::Ccnet(m) => m.config.input_size,
            Self::Classifier(m) => m.config.input_size,
            Self::Probe { model, .. } => model.config.backbone.input_size,
        }
    }

    fn classes(&self) -> usize {
        match self {
            Self::Ccnet(_) => CcnetModel::CLASSES,
            Self::Classifier(m) => m.config.classes,
            Self::Probe { probe, .. } => probe.classes,
        }
    }

    fn final_features(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let features = match self {
            Self::Ccnet(m) => {
                let p = g.bind(&m.params, false);
                m.net.forward(&mut g, &p, xv)?.features
            }
            Self::Classifier(m) => {
                let p = g.bind(&m.params, false);
                m.net.forward(&mut g, &p, xv)?.features
            }
            Self::Probe { model, .. } => {
                let p = g.bind(&model.params, false);
                model.net.forward(&mut g, &p, xv)?.features
            }
        };
        let t = g.value(features);
        let s = t.shape();
        Ok(t.clone().reshape(&s[1..])?)
    }

    fn class_weights(&self, class_index: usize) -> Vec<f64> {
        let row = |store: &ParamStore<f32>, head: &Linear| -> Vec<f64> {
            let w = store.get(head.weight);
            let c = w.shape()[1];
            w.data()[class_index * c..(class_index + 1) * c]
                .iter()
                .map(|&v| v as f64)
                .collect()
        };
        match self {
            Self::Ccnet(m) => row(&m.params, &m.net.head),
            Self::Classifier(m) => row(&m.params, m.net.head()),
            Self::Probe { model, probe } => {
                let embed = model.params.get(model.net.backbone.head.weight);
                let (d, c) = (embed.shape()[0], embed.shape()[1]);
                let raw = probe.raw_weights(class_index);
                (0..c)
                    .map(|ch| (0..d).map(|k| raw[k] * embed.data()[k * c + ch] as f64).sum())
                    .collect()
            }
        }
    }
}

/// Heatmap for one `[S, S]` preprocessed image.
pub fn compute_cam(image: &Tensor<f32>, target: &CamTarget, class_index: usize, mode: Upsample) -> Result<Heatmap> {
    let size = target.input_size();
    if image.len() != size * size {
        return Err(ShufaError::Invalid(format!(
            "image has {} pixels, the network expects {size}×{size}",
            image.len()
        )));
    }
    if class_index >= target.classes() {
        return Err(ShufaError::Invalid(format!(
            "class {class_index} outside {} classes",
            target.classes()
        )));
    }
    if let CamTarget::Probe { model, probe } = target {
        if probe.dim != model.config.backbone.embed_dim {
            return Err(ShufaError::Invalid("probe width does not match the embedding".into()));
        }
    }
    let features = target
        .final_features(image.clone().reshape(&[1, 1, size, size])?)?
        .cast::<f64>();
    cam_from_features(
        &features,
        &target.class_weights(class_index),
        class_index,
        size,
        size,
        mode,
    )
}

/// Blends the glyph (ink in `[0, 1]`, drawn dark on white) with the colour
/// mapped heatmap; blend weight at each pixel is `opacity · heat`.
pub fn render_overlay(ink: &[f32], heatmap: &Heatmap, cfg: &CamConfig, out_path: &Path) -> Result<()> {
    let (h, w) = (heatmap.height, heatmap.width);
    if ink.len() != h * w {
        return Err(ShufaError::Invalid(format!(
            "image has {} pixels, heatmap is {h}×{w}",
            ink.len()
        )));
    }
    let mut rgb = Vec::with_capacity(3 * h * w);
    for (&v, &heat) in ink.iter().zip(&heatmap.values) {
        let base = 1.0 - (v as f64).clamp(0.0, 1.0);
        let a = cfg.opacity.clamp(0.0, 1.0) * heat;
        for c in cfg.colormap.rgb(heat) {
            rgb.push(((1.0 - a) * base + a * c).mul_add(255.0, 0.5).floor() as u8);
        }
    }
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, rgb).expect("buffer sized above");
    img.save_with_format(out_path, image::ImageFormat::Png)
        .map_err(|e| ShufaError::Image {
            path: out_path.to_path_buf(),
            message: e.to_string(),
        })
}

/// The heatmap alone as an 8-bit grey PNG.
pub fn save_heatmap(heatmap: &Heatmap, out_path: &Path) -> Result<()> {
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let pixels = heatmap.values.iter().map(|v| (v * 255.0).round() as u8).collect();
    save_gray_png(out_path, heatmap.width as u32, heatmap.height as u32, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::BackboneConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_features_give_zero_map() {
        let f = Tensor::new(vec![2, 3, 3], vec![0.5; 18]).unwrap();
        let h = cam_from_features(&f, &[1.0, -2.0], 0, 12, 12, Upsample::Bilinear).unwrap();
        assert_eq!((h.height, h.width), (12, 12));
        assert!(h.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_range_and_nearest_blocks() {
        let f = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let h = cam_from_features(&f, &[1.0], 0, 4, 4, Upsample::Nearest).unwrap();
        assert_eq!(h.at(0, 0), 0.0);
        assert_eq!(h.at(3, 3), 1.0);
        assert_eq!(h.at(1, 1), 0.0);
        assert!((h.at(0, 2) - 1.0 / 3.0).abs() < 1e-12);
        let b = cam_from_features(&f, &[1.0], 0, 8, 8, Upsample::Bilinear).unwrap();
        assert_eq!(b.values.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(b.values.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn raw_cam_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (a, b, w) = (r(4 * 25), r(4 * 25), r(4));
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let (ca, cb, cs) = (
            raw_cam(&a, 4, &w).unwrap(),
            raw_cam(&b, 4, &w).unwrap(),
            raw_cam(&sum, 4, &w).unwrap(),
        );
        for i in 0..25 {
            assert!((cs[i] - (2.0 * ca[i] - 0.5 * cb[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn ccnet_cam_shape_and_class_range() {
        let cfg = BackboneConfig {
            input_size: 32,
            stage_widths: vec![4, 8],
            tap_stages: vec![0, 1],
            embed_dim: 8,
        };
        let m = CcnetModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let img = Tensor::new(vec![32, 32], (0..1024).map(|i| ((i % 7) as f32) / 7.0).collect()).unwrap();
        let h = compute_cam(&img, &CamTarget::Ccnet(&m), 2, Upsample::Bilinear).unwrap();
        assert_eq!(h.values.len(), 32 * 32);
        assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(compute_cam(&img, &CamTarget::Ccnet(&m), 5, Upsample::Bilinear).is_err());
    }

    #[test]
    fn overlay_files() {
        let dir = tempfile::tempdir().unwrap();
        let ink: Vec<f32> = (0..64).map(|i| (i % 3) as f32 / 2.0).collect();
        let zero = Heatmap {
            height: 8,
            width: 8,
            values: vec![0.0; 64],
            class_index: 0,
        };
        let p = dir.path().join("o.png");
        render_overlay(&ink, &zero, &CamConfig::default(), &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (8, 8));
        for (px, &v) in img.pixels().zip(&ink) {
            let g = ((1.0 - v as f64) * 255.0 + 0.5).floor() as u8;
            assert_eq!(px.0, [g, g, g]);
        }
        let mut hot = zero.clone();
        hot.values[10] = 1.0;
        let (p1, p2) = (dir.path().join("a.png"), dir.path().join("b.png"));
        render_overlay(&ink, &hot, &CamConfig::default(), &p1).unwrap();
        render_overlay(&ink, &hot, &CamConfig::default(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
