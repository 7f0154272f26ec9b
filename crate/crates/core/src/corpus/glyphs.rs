//! Base glyph rasters: the shared character inventory every synthetic writer
//! copies. Rasters are ink-positive (`1.0` = ink, `0.0` = paper).

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{io_err, Result, ShufaError};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct GlyphRaster {
    pub size: usize,
    pub ink: Vec<f32>,
}

impl GlyphRaster {
    pub fn blank(size: usize) -> Self {
        Self {
            size,
            ink: vec![0.0; size * size],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.ink[y * self.size + x]
    }

    pub fn coverage(&self) -> f64 {
        self.ink.iter().map(|&v| v as f64).sum::<f64>() / self.ink.len() as f64
    }
}

type Pt = (f32, f32);

/// Stroke shapes loosely following the basic brush strokes of CJK characters.
#[derive(Clone, Copy, Debug)]
enum Stroke {
    Horizontal,
    Vertical,
    LeftFalling,
    RightFalling,
    Dot,
    Hook,
    Turn,
}

const STROKES: [Stroke; 7] = [
    Stroke::Horizontal,
    Stroke::Vertical,
    Stroke::LeftFalling,
    Stroke::RightFalling,
    Stroke::Dot,
    Stroke::Hook,
    Stroke::Turn,
];

fn bezier(a: Pt, c: Pt, b: Pt, steps: usize) -> Vec<Pt> {
    (0..=steps)
        .map(|i| {
            let t = i as f32 / steps as f32;
            let u = 1.0 - t;
            (
                u * u * a.0 + 2.0 * u * t * c.0 + t * t * b.0,
                u * u * a.1 + 2.0 * u * t * c.1 + t * t * b.1,
            )
        })
        .collect()
}

fn stroke_path(kind: Stroke, rng: &mut impl Rng) -> Vec<Pt> {
    let lo = 0.14f32;
    let hi = 0.86f32;
    match kind {
        Stroke::Horizontal => {
            let y = rng.random_range(0.16..0.84);
            let x0 = rng.random_range(lo..0.5);
            let x1 = (x0 + rng.random_range(0.25..0.6)).min(hi);
            let rise = rng.random_range(-0.04..0.02);
            vec![(x0, y), (x1, y + rise)]
        }
        Stroke::Vertical => {
            let x = rng.random_range(0.16..0.84);
            let y0 = rng.random_range(lo..0.5);
            let y1 = (y0 + rng.random_range(0.25..0.6)).min(hi);
            vec![(x, y0), (x + rng.random_range(-0.02..0.02), y1)]
        }
        Stroke::LeftFalling => {
            let a: Pt = (rng.random_range(0.4..0.8), rng.random_range(lo..0.5));
            let b = (
                (a.0 - rng.random_range(0.25..0.4)).max(lo),
                (a.1 + rng.random_range(0.25..0.4)).min(hi),
            );
            let c = ((a.0 + b.0) / 2.0 + 0.06, (a.1 + b.1) / 2.0 + 0.04);
            bezier(a, c, b, 12)
        }
        Stroke::RightFalling => {
            let a: Pt = (rng.random_range(0.2..0.55), rng.random_range(lo..0.5));
            let b = (
                (a.0 + rng.random_range(0.25..0.4)).min(hi),
                (a.1 + rng.random_range(0.25..0.4)).min(hi),
            );
            let c = ((a.0 + b.0) / 2.0 - 0.05, (a.1 + b.1) / 2.0 + 0.05);
            bezier(a, c, b, 12)
        }
        Stroke::Dot => {
            let a = (rng.random_range(0.2..0.8), rng.random_range(0.16..0.8));
            let len = rng.random_range(0.05..0.09);
            vec![a, (a.0 + len * 0.7, a.1 + len)]
        }
        Stroke::Hook => {
            let x = rng.random_range(0.25..0.8);
            let y0 = rng.random_range(lo..0.4);
            let y1 = (y0 + rng.random_range(0.3..0.5)).min(hi);
            vec![(x, y0), (x, y1), (x - 0.08, y1 - 0.07)]
        }
        Stroke::Turn => {
            let x0 = rng.random_range(lo..0.45);
            let y0 = rng.random_range(lo..0.45);
            let x1 = (x0 + rng.random_range(0.25..0.45)).min(hi);
            let y1 = (y0 + rng.random_range(0.25..0.45)).min(hi);
            vec![(x0, y0), (x1, y0), (x1 - 0.02, y1)]
        }
    }
}

/// Anti-aliased thick polyline, max-composited into `raster`.
fn draw_polyline(raster: &mut GlyphRaster, path: &[Pt], radius: f32) {
    let s = raster.size as f32;
    for seg in path.windows(2) {
        let (a, b) = ((seg[0].0 * s, seg[0].1 * s), (seg[1].0 * s, seg[1].1 * s));
        let reach = radius + 1.0;
        let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + reach).ceil() as usize).min(raster.size);
        let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + reach).ceil() as usize).min(raster.size);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = (dx * dx + dy * dy).max(1e-9);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
                let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                let dist = (qx * qx + qy * qy).sqrt();
                let v = (radius + 0.5 - dist).clamp(0.0, 1.0);
                let cell = &mut raster.ink[y * raster.size + x];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
}

/// `count` distinct stroke-built characters at `size`×`size`, deterministic
/// in `seed`. Stroke radius is 3% of the glyph size.
pub fn procedural_glyphs(count: usize, size: usize, seed: u64) -> Vec<GlyphRaster> {
    let radius = 0.03 * size as f32;
    (0..count)
        .map(|j| {
            let mut rng = seed::rng(seed, &[seed::tag("glyph"), j as u64]);
            let mut raster = GlyphRaster::blank(size);
            let n = rng.random_range(3..=7);
            for _ in 0..n {
                let kind = STROKES[rng.random_range(0..STROKES.len())];
                let path = stroke_path(kind, &mut rng);
                draw_polyline(&mut raster, &path, radius);
            }
            raster
        })
        .collect()
}

/// Loads every `*.png` in `dir` (sorted by file name) as a base glyph:
/// padded square with white, resized to `size`, inverted to ink-positive.
pub fn load_glyph_dir(dir: &Path, size: usize) -> Result<Vec<GlyphRaster>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let ink = crate::nets::preprocess_file(p, size)?;
            Ok(GlyphRaster {
                size,
                ink: ink.into_iter().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(ShufaError::InsufficientGlyphs {
                    needed: 1,
                    available: 0,
                })
            } else {
                Ok(v)
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_deterministic_and_distinct() {
        let a = procedural_glyphs(6, 48, 3);
        let b = procedural_glyphs(6, 48, 3);
        assert_eq!(a, b);
        for i in 0..a.len() {
            assert!(a[i].coverage() > 0.02, "glyph {i} nearly empty");
            for j in i + 1..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
    }

    #[test]
    fn prefix_is_stable_when_count_grows() {
        let a = procedural_glyphs(3, 32, 9);
        let b = procedural_glyphs(5, 32, 9);
        assert_eq!(a[..], b[..3]);
    }
}
