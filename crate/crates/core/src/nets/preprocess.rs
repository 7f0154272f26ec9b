//! Raw grey raster to network input: pad square with white, resize, scale to
//! `[0, 1]` and invert so ink is high.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma};

use crate::error::{Result, ShufaError};

pub fn preprocess_gray(img: &GrayImage, size: usize) -> Result<Vec<f32>> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 || size == 0 {
        return Err(ShufaError::Invalid("zero-size image".into()));
    }
    let side = w.max(h);
    let square = if w == h {
        img.clone()
    } else {
        let mut canvas = GrayImage::from_pixel(side, side, Luma([255]));
        imageops::replace(&mut canvas, img, ((side - w) / 2) as i64, ((side - h) / 2) as i64);
        canvas
    };
    let sized = if side as usize == size {
        square
    } else {
        imageops::resize(&square, size as u32, size as u32, FilterType::Triangle)
    };
    Ok(sized.pixels().map(|p| 1.0 - p.0[0] as f32 / 255.0).collect())
}

pub fn preprocess_file(path: &Path, size: usize) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| ShufaError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    preprocess_gray(&img.to_luma8(), size).map_err(|e| match e {
        ShufaError::Invalid(message) => ShufaError::Image {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Inverse of the intensity mapping, for writing inputs back out as images.
pub fn to_gray(ink: &[f32], size: usize) -> GrayImage {
    GrayImage::from_fn(size as u32, size as u32, |x, y| {
        let v = ink[y as usize * size + x as usize].clamp(0.0, 1.0);
        Luma([(255.0 * (1.0 - v)).round() as u8])
    })
}
