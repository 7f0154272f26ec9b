#![allow(dead_code)]

use std::path::Path;

use shufanet::corpus::{procedural_glyphs, synthesize_corpus, DatasetManifest, SynthesisConfig};
use shufanet::nets::BackboneConfig;

pub fn corpus(dir: &Path, writers: usize, chars: usize, seed: u64) -> DatasetManifest {
    let cfg = SynthesisConfig {
        n_writers: writers,
        chars_per_writer: chars,
        image_size: 32,
        seed,
        ..SynthesisConfig::default()
    };
    synthesize_corpus(&cfg, &procedural_glyphs(chars, 64, seed), dir).unwrap()
}

pub fn small_backbone(size: usize) -> BackboneConfig {
    BackboneConfig {
        input_size: size,
        stage_widths: vec![4, 8],
        tap_stages: vec![0, 1],
        embed_dim: 8,
    }
}
