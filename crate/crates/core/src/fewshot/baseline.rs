use std::collections::BTreeMap;

use crate::corpus::DatasetManifest;
use crate::error::{Result, ShufaError};
use crate::nets::{Arch, ClassifierConfig, ClassifierModel, ImageBank};
use crate::seed;
use crate::trainer::{train_classifier, ClassifierOutcome, ClassifierTrainConfig, LabeledSet};

/// Sorted writer ids and their class indices.
pub fn writer_labels(m: &DatasetManifest) -> BTreeMap<String, usize> {
    m.writers().into_iter().enumerate().map(|(i, w)| (w, i)).collect()
}

/// End-to-end writer classification over every writer of `m`.
pub fn train_baseline(
    m: &DatasetManifest,
    bank: &ImageBank,
    arch: Arch,
    cfg: &ClassifierTrainConfig,
) -> Result<(ClassifierModel, ClassifierOutcome)> {
    if m.is_empty() {
        return Err(ShufaError::EmptyManifest);
    }
    let labels = writer_labels(m);
    let config = ClassifierConfig::for_arch(arch, bank.size, labels.len());
    let mut model = ClassifierModel::new(
        config,
        &mut seed::rng(cfg.seed, &[seed::tag("baseline-init"), arch as u64]),
    )?;
    let set = LabeledSet::from_manifest(bank, m, labels.len(), |r| labels[&r.writer_id])?;
    let ClassifierModel { net, params, .. } = &mut model;
    let outcome = train_classifier(|g, p, x| Ok(net.forward(g, p, x)?.output), params, &set, cfg)?;
    Ok((model, outcome))
}
