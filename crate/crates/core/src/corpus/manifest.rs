//! Line-delimited JSON manifests. Relative `image_path`s resolve against the
//! manifest's directory; [`write_manifest`] writes them back relative to its
//! own directory so a run directory can be moved as a unit.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{DatasetManifest, GlyphRecord, ManifestSource};
use crate::error::{io_err, Result, ShufaError};

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: GlyphRecord = serde_json::from_str(&line).map_err(|e| ShufaError::ManifestLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.image_path.is_relative() {
            record.image_path = base.join(&record.image_path);
        }
        records.push(record);
    }
    let manifest = DatasetManifest::new(records, ManifestSource::External)?;
    for r in &manifest.records {
        if !r.image_path.is_file() {
            return Err(ShufaError::MissingImage {
                record_id: r.record_id.clone(),
                path: r.image_path.clone(),
            });
        }
    }
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate_records()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in &manifest.records {
        let mut out = r.clone();
        out.image_path = relative_to(&r.image_path, base);
        serde_json::to_writer(&mut w, &out)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// `path` relative to `base`, climbing with `..` when needed.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            std::env::current_dir()
                .map(|d| d.join(p))
                .unwrap_or_else(|_| p.to_path_buf())
        }
    };
    let (p, b) = (abs(path), abs(base));
    pathdiff::diff_paths(&p, &b).unwrap_or(p)
}
