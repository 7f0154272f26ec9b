//! Glyph records, manifests, synthetic corpus generation, dataset splits and
//! constrained triplet sampling.

mod glyphs;
mod manifest;
mod split;
mod synth;
mod triplets;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use glyphs::{load_glyph_dir, procedural_glyphs, GlyphRaster};
pub use manifest::{load_manifest, write_manifest};
pub use split::{split_dataset, SplitResult};
pub(crate) use synth::save_gray_png;
pub use synth::{
    category_profile, character_id, render_item, synthesize_corpus, writer_id, writer_styles, CategoryRule, StyleRange,
    SynthesisConfig, WarpTerm, WriterStyle,
};
pub use triplets::{sample_triplets, validate_triplet, Triplet, TripletKind, RETRY_BUDGET};

use crate::error::{Result, ShufaError};

/// Script category of a writer's hand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Regular,
    Official,
    Seal,
    Running,
    Cursive,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Regular,
        Category::Official,
        Category::Seal,
        Category::Running,
        Category::Cursive,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Regular => "regular",
            Category::Official => "official",
            Category::Seal => "seal",
            Category::Running => "running",
            Category::Cursive => "cursive",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One glyph image. `writer_id` is the class label for style learning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlyphRecord {
    pub record_id: String,
    pub image_path: PathBuf,
    pub writer_id: String,
    pub character_id: String,
    pub category: Category,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestSource {
    Synthetic,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<GlyphRecord>,
    pub source: ManifestSource,
}

impl DatasetManifest {
    pub fn new(records: Vec<GlyphRecord>, source: ManifestSource) -> Result<Self> {
        let m = Self { records, source };
        m.validate_records()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct writer ids, sorted.
    pub fn writers(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.writer_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn categories(&self) -> BTreeSet<Category> {
        self.records.iter().map(|r| r.category).collect()
    }

    /// Subset with the same source, keeping record order.
    pub fn subset(&self, keep: impl Fn(&GlyphRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            source: self.source,
        }
    }

    /// Non-empty ids and unique record ids.
    pub fn validate_records(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            for (field, value) in [
                ("record_id", &r.record_id),
                ("writer_id", &r.writer_id),
                ("character_id", &r.character_id),
            ] {
                if value.trim().is_empty() {
                    return Err(ShufaError::InvalidRecord {
                        record_id: r.record_id.clone(),
                        message: format!("{field} is empty"),
                    });
                }
            }
            if !seen.insert(r.record_id.as_str()) {
                return Err(ShufaError::DuplicateRecord(r.record_id.clone()));
            }
        }
        Ok(())
    }
}
