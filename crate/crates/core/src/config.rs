//! One JSON document configuring a whole run, and the output directory
//! layout derived from it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cam::CamConfig;
use crate::corpus::SynthesisConfig;
use crate::error::{io_err, Result, ShufaError};
use crate::fewshot::EpisodeSpec;
use crate::nets::{Arch, BackboneConfig, ShufaNetConfig};
use crate::trainer::{ClassifierTrainConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub query_ways: usize,
    pub s1_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            query_ways: 10,
            s1_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub synthesis: SynthesisConfig,
    /// Directory of base glyph PNGs; procedural glyphs when absent.
    pub glyph_dir: Option<PathBuf>,
    pub split: SplitConfig,
    pub network: ShufaNetConfig,
    pub ccnet: BackboneConfig,
    pub ccnet_training: ClassifierTrainConfig,
    pub train: TrainConfig,
    pub episodes: EpisodeSpec,
    pub baseline: ClassifierTrainConfig,
    pub cam: CamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            synthesis: SynthesisConfig::default(),
            glyph_dir: None,
            split: SplitConfig::default(),
            network: ShufaNetConfig::default(),
            ccnet: BackboneConfig::default(),
            ccnet_training: ClassifierTrainConfig::default(),
            train: TrainConfig::default(),
            episodes: EpisodeSpec::default(),
            baseline: ClassifierTrainConfig::default(),
            cam: CamConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ShufaError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    /// Uses `seed` for every component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthesis.seed = seed;
        self.ccnet_training.seed = seed;
        self.train.seed = seed;
        self.episodes.seed = seed;
        self.baseline.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &'static str| {
            move |e: ShufaError| match e {
                ShufaError::Invalid(m) => ShufaError::Config {
                    path: name.into(),
                    message: m,
                },
                other => other,
            }
        };
        self.synthesis.validate().map_err(section("synthesis"))?;
        self.network.backbone.validate().map_err(section("network.backbone"))?;
        self.ccnet.validate().map_err(section("ccnet"))?;
        self.ccnet_training.validate().map_err(section("ccnet_training"))?;
        self.train.validate().map_err(section("train"))?;
        self.episodes.validate().map_err(section("episodes"))?;
        self.baseline.validate().map_err(section("baseline"))?;
        if !(0.0..=1.0).contains(&self.split.s1_fraction) {
            return Err(ShufaError::Config {
                path: "split.s1_fraction".into(),
                message: "must lie in [0, 1]".into(),
            });
        }
        if self.ccnet.input_size != self.network.backbone.input_size {
            return Err(ShufaError::Config {
                path: "ccnet.input_size".into(),
                message: format!(
                    "must equal network.backbone.input_size ({})",
                    self.network.backbone.input_size
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.cam.opacity) {
            return Err(ShufaError::Config {
                path: "cam.opacity".into(),
                message: "must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.output_dir.clone(),
        }
    }
}

/// Paths of every artifact under the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn manifest(&self) -> PathBuf {
        self.corpus().join("manifest.jsonl")
    }

    pub fn config_copy(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn split_file(&self, part: &str) -> PathBuf {
        self.root.join("split").join(format!("{part}.jsonl"))
    }

    pub fn ccnet(&self) -> PathBuf {
        self.root.join("ccnet")
    }

    pub fn ccnet_blob(&self) -> PathBuf {
        self.ccnet().join("model.bin")
    }

    pub fn shufanet(&self, sa: bool) -> PathBuf {
        self.root.join(model_name(sa))
    }

    pub fn shufanet_blob(&self, sa: bool) -> PathBuf {
        self.shufanet(sa).join("model.bin")
    }

    pub fn eval(&self, model: &str) -> PathBuf {
        self.root.join("eval").join(model)
    }

    pub fn baseline(&self, arch: Arch) -> PathBuf {
        self.root.join("baseline").join(arch.name())
    }

    pub fn cam(&self) -> PathBuf {
        self.root.join("cam")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn model_name(sa: bool) -> &'static str {
    if sa {
        "shufanet-sa"
    } else {
        "shufanet-nosa"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set_seed(9);
        cfg.train.total_batches = 17;
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = RunConfig::from_json(r#"{"train": {"loss": {"margn": 1}}}"#).unwrap_err();
        match err {
            ShufaError::Config { path, .. } => assert_eq!(path, "train.loss.margn"),
            other => panic!("{other}"),
        }
        let err = RunConfig::from_json(r#"{"episodes": {"ways": "ten"}}"#).unwrap_err();
        assert!(matches!(err, ShufaError::Config { path, .. } if path == "episodes.ways"));
    }

    #[test]
    fn cross_field_checks() {
        let err =
            RunConfig::from_json(r#"{"ccnet": {"input_size": 32, "stage_widths": [8, 8], "tap_stages": [0, 1]}}"#)
                .unwrap_err();
        assert!(matches!(err, ShufaError::Config { path, .. } if path == "ccnet.input_size"));
        let err = RunConfig::from_json(r#"{"train": {"lr_init": 0}}"#).unwrap_err();
        assert!(matches!(err, ShufaError::Config { path, .. } if path == "train"));
    }
}
