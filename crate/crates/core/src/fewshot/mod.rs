//! N-way K-shot episodes on held-out writers, linear probes over frozen
//! embeddings, writer-classification baselines and confusion matrices.

mod baseline;
mod report;

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use shufa_autograd::{Graph, Optimizer, OptimizerKind, ParamStore, Tensor};

pub use baseline::{train_baseline, writer_labels};
pub use report::{EpisodeReport, EpisodeRow, ShotSummary, EPISODE_HEADER, SUMMARY_HEADER};

use crate::corpus::DatasetManifest;
use crate::error::{Result, ShufaError};
use crate::nets::ImageBank;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: Vec<usize>,
    pub probe_epochs: usize,
    pub n_episodes: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            ways: 10,
            shots: vec![5, 10, 20],
            probe_epochs: 20,
            n_episodes: 5,
            probe_lr: 1e-2,
            probe_batch: 16,
            seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ShufaError::Invalid(format!("episodes: {m}")));
        if self.ways < 2 {
            return bad("ways must be at least 2");
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return bad("shots must be a non-empty list of positive counts");
        }
        if self.n_episodes == 0 || self.probe_batch == 0 || self.probe_epochs == 0 {
            return bad("n_episodes, probe_batch and probe_epochs must be positive");
        }
        if !(self.probe_lr > 0.0) {
            return bad("probe_lr must be positive");
        }
        Ok(())
    }
}

/// `confusion[true][predicted]`.
pub fn confusion_matrix(classes: usize, labels: &[usize], predictions: &[usize]) -> Result<Vec<Vec<usize>>> {
    if labels.len() != predictions.len() {
        return Err(ShufaError::Invalid(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut m = vec![vec![0; classes]; classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= classes || p >= classes {
            return Err(ShufaError::Invalid(format!(
                "class {} outside {classes} classes",
                y.max(p)
            )));
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// Frozen embeddings of a manifest, one row per record in manifest order.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub record_ids: Vec<String>,
    pub writers: Vec<String>,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Embeddings {
    /// Runs `embed` (`[N, 1, S, S] → [N, D]`) over every record of `m`.
    pub fn compute(
        m: &DatasetManifest,
        bank: &ImageBank,
        embed: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>>,
    ) -> Result<Self> {
        let idx = m
            .records
            .iter()
            .map(|r| {
                bank.index_of(&r.record_id)
                    .ok_or_else(|| ShufaError::Invalid(format!("record {} is not in the image bank", r.record_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = embed(&bank.tensor(&idx))?;
        Self::new(
            m.records.iter().map(|r| r.record_id.clone()).collect(),
            m.records.iter().map(|r| r.writer_id.clone()).collect(),
            out.dim(1),
            out.data().to_vec(),
        )
    }

    pub fn new(record_ids: Vec<String>, writers: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if record_ids.len() != writers.len() || data.len() != record_ids.len() * dim || dim == 0 {
            return Err(ShufaError::Invalid("embedding table sizes disagree".into()));
        }
        Ok(Self {
            record_ids,
            writers,
            dim,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Row indices of one episode; `support_labels[i]` is the way of `support[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub writers: Vec<String>,
    pub support: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query: Vec<usize>,
    pub query_labels: Vec<usize>,
}

/// Picks `ways` writers and `shots` support rows per writer; the rest of
/// each chosen writer's rows form the query set. The writer draw and the
/// per-writer order depend only on `(seed, episode)`, so supports for
/// larger shot counts extend those for smaller ones.
pub fn sample_episode(emb: &Embeddings, ways: usize, shots: usize, seed: u64, episode: usize) -> Result<Episode> {
    let mut by_writer: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in emb.writers.iter().enumerate() {
        by_writer.entry(w.as_str()).or_default().push(i);
    }
    if by_writer.len() < ways {
        return Err(ShufaError::Episode(format!(
            "{ways}-way episode needs {ways} writers, only {} available",
            by_writer.len()
        )));
    }
    let mut rng = seed::rng(seed, &[seed::tag("episode"), episode as u64]);
    let mut names: Vec<&str> = by_writer.keys().copied().collect();
    names.shuffle(&mut rng);
    names.truncate(ways);
    names.sort_unstable();
    let mut ep = Episode {
        writers: names.iter().map(|s| s.to_string()).collect(),
        support: vec![],
        support_labels: vec![],
        query: vec![],
        query_labels: vec![],
    };
    for (label, name) in names.iter().enumerate() {
        let mut rows = by_writer[name].clone();
        if rows.len() <= shots {
            return Err(ShufaError::Episode(format!(
                "writer {name} has {} samples, {shots}-shot needs more than {shots}",
                rows.len()
            )));
        }
        let mut wr = seed::rng(seed, &[seed::tag("episode-rows"), episode as u64, label as u64]);
        rows.shuffle(&mut wr);
        ep.support.extend_from_slice(&rows[..shots]);
        ep.support_labels.extend(std::iter::repeat_n(label, shots));
        ep.query.extend_from_slice(&rows[shots..]);
        ep.query_labels.extend(std::iter::repeat_n(label, rows.len() - shots));
    }
    Ok(ep)
}

/// Linear softmax classifier over standardized features:
/// `logits = W · ((x - mean) · inv_std) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub classes: usize,
    pub dim: usize,
    /// `classes × dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Probe {
    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim)
            .map(|d| (x[d] as f64 - self.mean[d]) * self.inv_std[d])
            .collect();
        (0..self.classes)
            .map(|c| {
                let w = &self.weight[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        let l = self.logits(x);
        let mut best = 0;
        for (i, v) in l.iter().enumerate() {
            if *v > l[best] {
                best = i;
            }
        }
        best
    }

    /// Weights of class `c` against raw (unstandardized) features.
    pub fn raw_weights(&self, c: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|d| self.weight[c * self.dim + d] * self.inv_std[d])
            .collect()
    }
}

const STD_FLOOR: f64 = 1e-6;

/// Fits a zero-initialized probe with Adam and cross-entropy.
pub fn fit_probe(rows: &[&[f32]], labels: &[usize], classes: usize, spec: &EpisodeSpec, seed: u64) -> Result<Probe> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(ShufaError::Episode("probe needs labeled support rows".into()));
    }
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|d| rows.iter().map(|r| r[d] as f64).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..dim)
        .map(|d| (rows.iter().map(|r| (r[d] as f64 - mean[d]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    if std.iter().all(|&s| s < STD_FLOOR) {
        warn!("support embeddings are all identical; the probe cannot separate classes");
    }
    let inv_std: Vec<f64> = std.iter().map(|&s| 1.0 / s.max(STD_FLOOR)).collect();
    let z: Vec<f64> = rows
        .iter()
        .flat_map(|r| {
            (0..dim)
                .map(|d| (r[d] as f64 - mean[d]) * inv_std[d])
                .collect::<Vec<_>>()
        })
        .collect();

    let mut store = ParamStore::<f64>::new();
    let w = store.add_zeros("probe.weight", &[classes, dim]);
    let b = store.add_zeros("probe.bias", &[classes]);
    let kind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = Optimizer::new(kind, &store);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for epoch in 0..spec.probe_epochs {
        order.shuffle(&mut seed::rng(seed, &[seed::tag("probe-epoch"), epoch as u64]));
        for chunk in order.chunks(spec.probe_batch) {
            let x: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| z[i * dim..(i + 1) * dim].iter().copied())
                .collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let p = g.bind(&store, true);
            let xv = g.constant(Tensor::new(vec![chunk.len(), dim], x)?);
            let logits = g.linear(xv, p.var(w), Some(p.var(b)))?;
            let loss = g.cross_entropy(logits, &y)?;
            let mut grads = g.backward(loss)?;
            let grads = grads.for_params(&p, &store);
            opt.step(&mut store, &grads, spec.probe_lr);
        }
    }
    Ok(Probe {
        classes,
        dim,
        weight: store.get(w).data().to_vec(),
        bias: store.get(b).data().to_vec(),
        mean,
        inv_std,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub episode: Episode,
    pub probe: Probe,
    pub accuracy: f64,
}

pub fn run_episode(emb: &Embeddings, spec: &EpisodeSpec, shots: usize, episode: usize) -> Result<EpisodeOutcome> {
    spec.validate()?;
    let ep = sample_episode(emb, spec.ways, shots, spec.seed, episode)?;
    let support: Vec<&[f32]> = ep.support.iter().map(|&i| emb.row(i)).collect();
    let probe_seed = seed::derive(spec.seed, &[seed::tag("probe"), episode as u64, shots as u64]);
    let probe = fit_probe(&support, &ep.support_labels, spec.ways, spec, probe_seed)?;
    let correct = ep
        .query
        .iter()
        .zip(&ep.query_labels)
        .filter(|(&i, &y)| probe.predict(emb.row(i)) == y)
        .count();
    let accuracy = correct as f64 / ep.query.len() as f64;
    Ok(EpisodeOutcome {
        episode: ep,
        probe,
        accuracy,
    })
}

/// Every shot count of `spec` over `n_episodes` episodes.
pub fn shot_sweep(emb: &Embeddings, model: &str, spec: &EpisodeSpec) -> Result<EpisodeReport> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &shots in &spec.shots {
        for e in 0..spec.n_episodes {
            let out = run_episode(emb, spec, shots, e)?;
            rows.push(EpisodeRow {
                model: model.to_string(),
                ways: spec.ways,
                shots,
                episode: e,
                accuracy: out.accuracy,
            });
        }
    }
    Ok(EpisodeReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn table(writers: usize, per: usize, dim: usize, f: impl Fn(usize, usize) -> Vec<f32>) -> Embeddings {
        let mut ids = vec![];
        let mut ws = vec![];
        let mut data = vec![];
        for w in 0..writers {
            for i in 0..per {
                ids.push(format!("w{w:03}_{i}"));
                ws.push(format!("w{w:03}"));
                data.extend(f(w, i));
            }
        }
        Embeddings::new(ids, ws, dim, data).unwrap()
    }

    #[test]
    fn confusion_shapes() {
        let m = confusion_matrix(3, &[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(m, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        let m = confusion_matrix(3, &[0, 1, 2, 2], &[0; 4]).unwrap();
        assert!(m.iter().all(|r| r[1] == 0 && r[2] == 0));
        assert_eq!(m.iter().map(|r| r[0]).sum::<usize>(), 4);
        assert!(confusion_matrix(2, &[2], &[0]).is_err());
    }

    #[test]
    fn one_hot_embedder_is_perfect() {
        let emb = table(12, 25, 12, |w, _| (0..12).map(|d| (d == w) as u8 as f32).collect());
        let spec = EpisodeSpec::default();
        for e in 0..3 {
            assert_eq!(run_episode(&emb, &spec, 5, e).unwrap().accuracy, 1.0);
        }
    }

    #[test]
    fn support_and_query_are_disjoint_and_nested() {
        let emb = table(12, 25, 4, |w, i| vec![w as f32, i as f32, 0.0, 1.0]);
        for e in 0..5 {
            let small = sample_episode(&emb, 10, 5, 3, e).unwrap();
            let big = sample_episode(&emb, 10, 20, 3, e).unwrap();
            let s: HashSet<_> = small.support.iter().map(|&i| &emb.record_ids[i]).collect();
            let q: HashSet<_> = small.query.iter().map(|&i| &emb.record_ids[i]).collect();
            assert!(s.is_disjoint(&q));
            assert_eq!(s.len() + q.len(), 10 * 25);
            assert_eq!(small.writers, big.writers);
            let bs: HashSet<_> = big.support.iter().collect();
            assert!(small.support.iter().all(|i| bs.contains(i)));
        }
    }

    #[test]
    fn too_few_samples_or_writers() {
        let emb = table(12, 20, 2, |w, _| vec![w as f32, 0.0]);
        assert!(matches!(
            sample_episode(&emb, 10, 20, 0, 0),
            Err(ShufaError::Episode(_))
        ));
        assert!(matches!(sample_episode(&emb, 13, 5, 0, 0), Err(ShufaError::Episode(_))));
    }

    #[test]
    fn identical_embeddings_do_not_fail() {
        let emb = table(10, 8, 3, |_, _| vec![0.5, 0.5, 0.5]);
        let out = run_episode(&emb, &EpisodeSpec::default(), 5, 0).unwrap();
        assert!((0.0..=1.0).contains(&out.accuracy));
    }

    #[test]
    fn sweep_shape_and_single_episode_std() {
        let emb = table(10, 25, 10, |w, i| {
            (0..10).map(|d| (d == w) as u8 as f32 + 0.01 * i as f32).collect()
        });
        let spec = EpisodeSpec {
            n_episodes: 1,
            ..Default::default()
        };
        let r = shot_sweep(&emb, "m", &spec).unwrap();
        assert_eq!(r.summary.len(), 3);
        assert!(r.summary.iter().all(|s| s.std == 0.0));
        assert_eq!(r, shot_sweep(&emb, "m", &spec).unwrap());
    }
}
