//! Checkpoints: a tensor blob (`<name>.bin`) next to a JSON sidecar
//! (`<name>.json`) describing how to rebuild the model.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shufa_autograd::serialize::{read_tensors, write_tensors};
use shufa_autograd::Tensor;

use super::{BackboneConfig, CcnetModel, ClassifierConfig, ClassifierModel, ShufaModel, ShufaNetConfig};
use crate::error::{io_err, Result, ShufaError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Model family, checked on load.
    pub kind: String,
    pub config: serde_json::Value,
    pub tap_stages: Vec<usize>,
    pub seed: u64,
    pub step: usize,
}

pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

pub fn save_checkpoint(blob: &Path, meta: &CheckpointMeta, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    if let Some(dir) = blob.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(blob).map_err(io_err(blob))?;
    let mut w = BufWriter::new(file);
    write_tensors(&mut w, tensors)?;
    w.flush().map_err(io_err(blob))?;
    let side = sidecar_path(blob);
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    fs::write(&side, json).map_err(io_err(&side))?;
    Ok(())
}

/// Sidecar metadata alone.
pub fn read_meta(blob: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(blob);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    Ok(serde_json::from_str(&text)?)
}

/// Named tensors as stored in a checkpoint blob.
pub type Entries = Vec<(String, Tensor<f32>)>;

/// Reads both files; `kind` must match the sidecar.
pub fn load_checkpoint(blob: &Path, kind: &str) -> Result<(CheckpointMeta, Entries)> {
    let meta = read_meta(blob)?;
    if meta.kind != kind {
        return Err(ShufaError::Checkpoint(format!(
            "{} holds a `{}` model, expected `{kind}`",
            blob.display(),
            meta.kind
        )));
    }
    let file = fs::File::open(blob).map_err(io_err(blob))?;
    let tensors = read_tensors(BufReader::new(file))?;
    Ok((meta, tensors))
}

/// Entries whose names start with this prefix are not model parameters.
pub const EXTRA_PREFIX: &str = "extra/";

fn split_extra(entries: Entries) -> (Entries, Entries) {
    entries.into_iter().partition(|(n, _)| !n.starts_with(EXTRA_PREFIX))
}

fn with_extra(mut params: Vec<(String, Tensor<f32>)>, extra: Vec<(String, Tensor<f32>)>) -> Vec<(String, Tensor<f32>)> {
    params.extend(extra.into_iter().map(|(n, t)| (format!("{EXTRA_PREFIX}{n}"), t)));
    params
}

fn strip_extra(extra: Vec<(String, Tensor<f32>)>) -> Vec<(String, Tensor<f32>)> {
    extra
        .into_iter()
        .map(|(n, t)| (n[EXTRA_PREFIX.len()..].to_string(), t))
        .collect()
}

type Loaded<M> = (M, CheckpointMeta, Vec<(String, Tensor<f32>)>);

fn rebuild_rng() -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(0)
}

impl ShufaModel {
    pub const KIND: &'static str = "shufanet";

    /// Saves parameters plus `extra` tensors (e.g. optimizer state).
    pub fn save(&self, blob: &Path, seed: u64, step: usize, extra: Vec<(String, Tensor<f32>)>) -> Result<()> {
        let meta = CheckpointMeta {
            kind: Self::KIND.into(),
            config: serde_json::to_value(&self.config)?,
            tap_stages: self.config.backbone.tap_stages.clone(),
            seed,
            step,
        };
        save_checkpoint(blob, &meta, &with_extra(self.params.entries(), extra))
    }

    pub fn load(blob: &Path) -> Result<Loaded<Self>> {
        let (meta, entries) = load_checkpoint(blob, Self::KIND)?;
        let config: ShufaNetConfig = serde_json::from_value(meta.config.clone())?;
        check_taps(&meta, &config.backbone.tap_stages)?;
        let mut model = Self::new(config, &mut rebuild_rng())?;
        let (params, extra) = split_extra(entries);
        model.params.load(params)?;
        Ok((model, meta, strip_extra(extra)))
    }
}

impl CcnetModel {
    pub const KIND: &'static str = "ccnet";

    pub fn save(&self, blob: &Path, seed: u64, step: usize) -> Result<()> {
        let meta = CheckpointMeta {
            kind: Self::KIND.into(),
            config: serde_json::to_value(&self.config)?,
            tap_stages: self.config.tap_stages.clone(),
            seed,
            step,
        };
        save_checkpoint(blob, &meta, &self.params.entries())
    }

    /// Loaded models come back frozen.
    pub fn load(blob: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, entries) = load_checkpoint(blob, Self::KIND)?;
        let config: BackboneConfig = serde_json::from_value(meta.config.clone())?;
        check_taps(&meta, &config.tap_stages)?;
        let mut model = Self::new(config, &mut rebuild_rng())?;
        model.params.load(entries)?;
        model.frozen = true;
        Ok((model, meta))
    }
}

impl ClassifierModel {
    pub const KIND: &'static str = "classifier";

    pub fn save(&self, blob: &Path, seed: u64, step: usize) -> Result<()> {
        let meta = CheckpointMeta {
            kind: Self::KIND.into(),
            config: serde_json::to_value(&self.config)?,
            tap_stages: vec![],
            seed,
            step,
        };
        save_checkpoint(blob, &meta, &self.params.entries())
    }

    pub fn load(blob: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, entries) = load_checkpoint(blob, Self::KIND)?;
        let config: ClassifierConfig = serde_json::from_value(meta.config.clone())?;
        let mut model = Self::new(config, &mut rebuild_rng())?;
        model.params.load(entries)?;
        Ok((model, meta))
    }
}

fn check_taps(meta: &CheckpointMeta, config_taps: &[usize]) -> Result<()> {
    if meta.tap_stages != config_taps {
        return Err(ShufaError::Checkpoint(format!(
            "sidecar tap_stages {:?} disagree with config {:?}",
            meta.tap_stages, config_taps
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionConfig;

    fn cfg() -> ShufaNetConfig {
        ShufaNetConfig {
            backbone: BackboneConfig {
                input_size: 16,
                stage_widths: vec![4, 4],
                tap_stages: vec![1],
                embed_dim: 6,
            },
            attention: AttentionConfig { stage_widths: vec![4] },
            sa_enabled: true,
        }
    }

    #[test]
    fn shufanet_round_trip_with_extra() {
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("m.bin");
        let model = ShufaModel::new(cfg(), &mut rebuild_rng()).unwrap();
        let extra = vec![("steps".to_string(), Tensor::scalar(7.0f32))];
        model.save(&blob, 11, 42, extra.clone()).unwrap();
        let (back, meta, got) = ShufaModel::load(&blob).unwrap();
        assert_eq!(back.params.checksum(), model.params.checksum());
        assert_eq!((meta.seed, meta.step), (11, 42));
        assert_eq!(got, extra);
        assert!(matches!(CcnetModel::load(&blob), Err(ShufaError::Checkpoint(_))));
    }

    #[test]
    fn tampered_sidecar_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("m.bin");
        let model = ShufaModel::new(cfg(), &mut rebuild_rng()).unwrap();
        model.save(&blob, 0, 0, vec![]).unwrap();
        let side = sidecar_path(&blob);
        let text = fs::read_to_string(&side)
            .unwrap()
            .replace("\"embed_dim\": 6", "\"embed_dim\": 7");
        fs::write(&side, text).unwrap();
        assert!(ShufaModel::load(&blob).is_err());
    }
}
