use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trainer::{read_rows, write_rows};

pub const EPISODE_HEADER: [&str; 5] = ["model", "ways", "shots", "episode", "accuracy"];
pub const SUMMARY_HEADER: [&str; 4] = ["model", "shots", "mean", "std"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub model: String,
    pub ways: usize,
    pub shots: usize,
    pub episode: usize,
    pub accuracy: f64,
}

/// Mean and population standard deviation over episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    pub model: String,
    pub shots: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReport {
    pub rows: Vec<EpisodeRow>,
    pub summary: Vec<ShotSummary>,
}

impl EpisodeReport {
    /// Summarizes rows grouped by `(model, shots)` in first-seen order.
    pub fn from_rows(rows: Vec<EpisodeRow>) -> Self {
        let mut keys: Vec<(String, usize)> = Vec::new();
        for r in &rows {
            let k = (r.model.clone(), r.shots);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let summary = keys
            .into_iter()
            .map(|(model, shots)| {
                let acc: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.model == model && r.shots == shots)
                    .map(|r| r.accuracy)
                    .collect();
                let n = acc.len() as f64;
                let mean = acc.iter().sum::<f64>() / n;
                let std = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
                ShotSummary {
                    model,
                    shots,
                    mean,
                    std,
                }
            })
            .collect();
        Self { rows, summary }
    }

    pub fn write(&self, episodes_csv: &Path, summary_csv: &Path) -> Result<()> {
        write_rows(episodes_csv, &self.rows, &EPISODE_HEADER)?;
        write_rows(summary_csv, &self.summary, &SUMMARY_HEADER)
    }

    pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRow>> {
        read_rows(path)
    }

    pub fn read_summary(path: &Path) -> Result<Vec<ShotSummary>> {
        read_rows(path)
    }

    pub fn mean_at(&self, shots: usize) -> Option<&ShotSummary> {
        self.summary.iter().find(|s| s.shots == shots)
    }
}
