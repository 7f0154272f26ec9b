//! Synthetic writers. Each writer copies the shared base glyphs through a
//! fixed hand: stroke thickness (grey-level morphology), shear, aspect and a
//! smooth writer-specific warp, plus a weaker per-item warp. Rendering runs at
//! twice the output size and is box-downsampled.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{write_manifest, Category, DatasetManifest, GlyphRaster, GlyphRecord, ManifestSource};
use crate::error::{io_err, Result, ShufaError};
use crate::seed;

/// Sampling ranges for one category, in pixels at a 64 px glyph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleRange {
    pub thickness: (f64, f64),
    pub shear_deg: (f64, f64),
    pub jitter: (f64, f64),
    pub aspect: (f64, f64),
}

pub fn category_profile(category: Category) -> StyleRange {
    let (thickness, shear_deg, jitter, aspect) = match category {
        Category::Regular => ((-0.5, 0.5), (-4.0, 4.0), (0.3, 0.8), (0.95, 1.05)),
        Category::Official => ((0.5, 1.5), (-3.0, 3.0), (0.3, 0.8), (1.2, 1.35)),
        Category::Seal => ((1.0, 2.0), (-3.0, 3.0), (0.2, 0.6), (0.72, 0.85)),
        Category::Running => ((-0.3, 0.7), (9.0, 14.0), (1.4, 2.0), (0.95, 1.05)),
        Category::Cursive => ((-0.9, 0.1), (15.0, 21.0), (2.4, 3.2), (0.95, 1.05)),
    };
    StyleRange {
        thickness,
        shear_deg,
        jitter,
        aspect,
    }
}

fn default_profiles() -> BTreeMap<Category, StyleRange> {
    Category::ALL.iter().map(|&c| (c, category_profile(c))).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryRule {
    /// Writer `i` gets category `i mod 5`.
    #[default]
    RoundRobin,
    /// Uniform draw per writer from the seed.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub n_writers: usize,
    pub chars_per_writer: usize,
    pub image_size: usize,
    pub seed: u64,
    pub category_rule: CategoryRule,
    pub profiles: BTreeMap<Category, StyleRange>,
    /// Per-item warp amplitude relative to the writer's own.
    pub item_jitter_ratio: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_writers: 30,
            chars_per_writer: 100,
            image_size: 64,
            seed: 0,
            category_rule: CategoryRule::RoundRobin,
            profiles: default_profiles(),
            item_jitter_ratio: 0.35,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ShufaError::Invalid(format!("synthesis: {m}")));
        if self.n_writers < 2 {
            return bad("n_writers must be at least 2");
        }
        if self.chars_per_writer < 2 {
            return bad("chars_per_writer must be at least 2");
        }
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        if !(0.0..=1.0).contains(&self.item_jitter_ratio) {
            return bad("item_jitter_ratio must lie in [0, 1]");
        }
        for c in Category::ALL {
            if !self.profiles.contains_key(&c) {
                return bad(&format!("missing profile for category {c}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpTerm {
    pub amp_x: f64,
    pub amp_y: f64,
    pub freq_u: f64,
    pub freq_v: f64,
    pub phase: f64,
}

fn warp_terms(rng: &mut impl Rng, amplitude: f64) -> Vec<WarpTerm> {
    (0..3)
        .map(|_| WarpTerm {
            amp_x: amplitude * rng.random_range(-1.0..1.0),
            amp_y: amplitude * rng.random_range(-1.0..1.0),
            freq_u: rng.random_range(0.5..2.0),
            freq_v: rng.random_range(0.5..2.0),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect()
}

fn displacement(terms: &[WarpTerm], u: f64, v: f64) -> (f64, f64) {
    terms.iter().fold((0.0, 0.0), |(dx, dy), t| {
        let s = (2.0 * PI * (t.freq_u * u + t.freq_v * v) + t.phase).sin();
        (dx + t.amp_x * s, dy + t.amp_y * s)
    })
}

/// A writer's fixed hand. Lengths are in pixels at a 64 px glyph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterStyle {
    pub writer_id: String,
    pub category: Category,
    pub thickness: f64,
    pub shear_deg: f64,
    pub jitter: f64,
    pub aspect: f64,
    pub warp: Vec<WarpTerm>,
}

pub fn writer_id(index: usize, n_writers: usize) -> String {
    let width = n_writers.saturating_sub(1).to_string().len().max(3);
    format!("w{index:0width$}")
}

pub fn character_id(index: usize, n_chars: usize) -> String {
    let width = n_chars.saturating_sub(1).to_string().len().max(4);
    format!("c{index:0width$}")
}

pub fn writer_styles(cfg: &SynthesisConfig) -> Vec<WriterStyle> {
    (0..cfg.n_writers)
        .map(|w| {
            let mut rng = seed::rng(cfg.seed, &[seed::tag("writer"), w as u64]);
            let category = match cfg.category_rule {
                CategoryRule::RoundRobin => Category::ALL[w % Category::ALL.len()],
                CategoryRule::Random => Category::ALL[rng.random_range(0..Category::ALL.len())],
            };
            let p = cfg.profiles[&category];
            let mut draw = |r: (f64, f64)| {
                if r.1 > r.0 {
                    rng.random_range(r.0..r.1)
                } else {
                    r.0
                }
            };
            let thickness = draw(p.thickness);
            let shear_deg = draw(p.shear_deg);
            let jitter = draw(p.jitter);
            let aspect = draw(p.aspect);
            let warp = warp_terms(&mut rng, jitter);
            WriterStyle {
                writer_id: writer_id(w, cfg.n_writers),
                category,
                thickness,
                shear_deg,
                jitter,
                aspect,
                warp,
            }
        })
        .collect()
}

fn bilinear(g: &GlyphRaster, x: f64, y: f64) -> f64 {
    let n = g.size as isize;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let px = |xi: isize, yi: isize| -> f64 {
        if xi < 0 || yi < 0 || xi >= n || yi >= n {
            0.0
        } else {
            g.ink[(yi * n + xi) as usize] as f64
        }
    };
    px(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + px(x0 + 1, y0) * fx * (1.0 - fy)
        + px(x0, y0 + 1) * (1.0 - fx) * fy
        + px(x0 + 1, y0 + 1) * fx * fy
}

/// Grey-level dilation with a soft disk of radius `r` (weights fall off over
/// the last pixel so the result is continuous in `r`).
fn dilate(img: &[f64], n: usize, r: f64) -> Vec<f64> {
    let reach = (r + 0.5).ceil() as isize;
    let mut offsets = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let w = (r + 0.5 - ((dx * dx + dy * dy) as f64).sqrt()).clamp(0.0, 1.0);
            if w > 0.0 {
                offsets.push((dx, dy, w));
            }
        }
    }
    let ni = n as isize;
    let mut out = vec![0.0; n * n];
    for y in 0..ni {
        for x in 0..ni {
            let mut best = img[(y * ni + x) as usize];
            for &(dx, dy, w) in &offsets {
                let (xx, yy) = (x + dx, y + dy);
                if xx >= 0 && yy >= 0 && xx < ni && yy < ni {
                    let v = img[(yy * ni + xx) as usize] * w;
                    if v > best {
                        best = v;
                    }
                }
            }
            out[(y * ni + x) as usize] = best;
        }
    }
    out
}

fn morph(img: Vec<f64>, n: usize, radius: f64) -> Vec<f64> {
    if radius.abs() < 1e-9 {
        img
    } else if radius > 0.0 {
        dilate(&img, n, radius)
    } else {
        let inv: Vec<f64> = img.iter().map(|v| 1.0 - v).collect();
        dilate(&inv, n, -radius).into_iter().map(|v| 1.0 - v).collect()
    }
}

/// Renders glyph `char_index` in `style`, returning 8-bit grey pixels
/// (white paper, dark ink) at `size`×`size`. Randomness depends only on
/// `(seed, writer_index, char_index)`.
pub fn render_item(
    base: &GlyphRaster,
    style: &WriterStyle,
    item_jitter_ratio: f64,
    size: usize,
    seed_value: u64,
    writer_index: usize,
    char_index: usize,
) -> Vec<u8> {
    let mut rng = seed::rng(seed_value, &[seed::tag("item"), writer_index as u64, char_index as u64]);
    let item_warp = warp_terms(&mut rng, style.jitter * item_jitter_ratio);
    let hi = 2 * size;
    let px64 = 1.0 / 64.0;
    let tan = style.shear_deg.to_radians().tan();
    let fit = 0.9;
    let mut canvas = vec![0.0; hi * hi];
    for yi in 0..hi {
        for xi in 0..hi {
            let u = (xi as f64 + 0.5) / hi as f64;
            let v = (yi as f64 + 0.5) / hi as f64;
            let (wx, wy) = displacement(&style.warp, u, v);
            let (ix, iy) = displacement(&item_warp, u, v);
            let mut x = u - 0.5 - (wx + ix) * px64;
            let y = v - 0.5 - (wy + iy) * px64;
            x -= tan * y;
            x /= style.aspect;
            let (gu, gv) = (x / fit + 0.5, y / fit + 0.5);
            let gs = base.size as f64;
            canvas[yi * hi + xi] = bilinear(base, gu * gs - 0.5, gv * gs - 0.5);
        }
    }
    let radius = style.thickness * hi as f64 * px64;
    let canvas = morph(canvas, hi, radius);
    let mut out = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let s = canvas[2 * y * hi + 2 * x]
                + canvas[2 * y * hi + 2 * x + 1]
                + canvas[(2 * y + 1) * hi + 2 * x]
                + canvas[(2 * y + 1) * hi + 2 * x + 1];
            let ink = (s / 4.0).clamp(0.0, 1.0);
            out[y * size + x] = (255.0 * (1.0 - ink)).round() as u8;
        }
    }
    out
}

/// Writes `images/<writer>/<char>.png` and `manifest.jsonl` under `out_dir`.
pub fn synthesize_corpus(cfg: &SynthesisConfig, glyphs: &[GlyphRaster], out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    if glyphs.len() < cfg.chars_per_writer {
        return Err(ShufaError::InsufficientGlyphs {
            needed: cfg.chars_per_writer,
            available: glyphs.len(),
        });
    }
    let styles = writer_styles(cfg);
    let mut records = Vec::with_capacity(cfg.n_writers * cfg.chars_per_writer);
    for (w, style) in styles.iter().enumerate() {
        let dir = out_dir.join("images").join(&style.writer_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (c, base) in glyphs.iter().take(cfg.chars_per_writer).enumerate() {
            let pixels = render_item(base, style, cfg.item_jitter_ratio, cfg.image_size, cfg.seed, w, c);
            let cid = character_id(c, cfg.chars_per_writer);
            let path = dir.join(format!("{cid}.png"));
            save_gray_png(&path, cfg.image_size as u32, cfg.image_size as u32, pixels)?;
            records.push(GlyphRecord {
                record_id: format!("{}_{cid}", style.writer_id),
                image_path: path,
                writer_id: style.writer_id.clone(),
                character_id: cid,
                category: style.category,
            });
        }
    }
    let manifest = DatasetManifest::new(records, ManifestSource::Synthetic)?;
    write_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

pub(crate) fn save_gray_png(path: &Path, width: u32, height: u32, pixels: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(width, height, pixels).ok_or_else(|| ShufaError::Image {
        path: path.to_path_buf(),
        message: "pixel buffer does not match dimensions".into(),
    })?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ShufaError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
