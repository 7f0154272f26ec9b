//! Preprocessed images of a manifest, held in memory.

use std::collections::HashMap;

use shufa_autograd::Tensor;

use super::preprocess_file;
use crate::corpus::DatasetManifest;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct ImageBank {
    pub size: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    pixels: Vec<f32>,
}

impl ImageBank {
    pub fn load(manifest: &DatasetManifest, size: usize) -> Result<Self> {
        let mut pixels = Vec::with_capacity(manifest.len() * size * size);
        let mut ids = Vec::with_capacity(manifest.len());
        let mut index = HashMap::with_capacity(manifest.len());
        for (i, r) in manifest.records.iter().enumerate() {
            pixels.extend(preprocess_file(&r.image_path, size)?);
            ids.push(r.record_id.clone());
            index.insert(r.record_id.clone(), i);
        }
        Ok(Self {
            size,
            ids,
            index,
            pixels,
        })
    }

    /// Bank over already-preprocessed images.
    pub fn from_pixels(size: usize, ids: Vec<String>, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), ids.len() * size * size, "pixel buffer size");
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            size,
            ids,
            index,
            pixels,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, record_id: &str) -> Option<usize> {
        self.index.get(record_id).copied()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// `[len, 1, size, size]` batch of the given images.
    pub fn tensor(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.size * self.size);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), 1, self.size, self.size], data).expect("bank shape")
    }

    pub fn all(&self) -> Tensor<f32> {
        self.tensor(&(0..self.len()).collect::<Vec<_>>())
    }
}
