//! Cross-entropy training with a held-out validation fraction.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use shufa_autograd::{Bound, Graph, Optimizer, OptimizerKind, ParamStore, Var};

use super::{EpochRecord, TrainLog};
use crate::corpus::DatasetManifest;
use crate::error::{Result, ShufaError};
use crate::fewshot::confusion_matrix;
use crate::nets::{argmax, batched, BackboneConfig, CcnetModel, ImageBank};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplies the learning rate every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 5,
            valid_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(ShufaError::Invalid(
                "classifier training: batch_size and lr must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return Err(ShufaError::Invalid(
                "classifier training: lr_decay must lie in (0, 1] and lr_decay_every be positive".into(),
            ));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(ShufaError::Invalid(
                "classifier training: valid_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Images (by bank index) with class labels.
pub struct LabeledSet<'a> {
    pub bank: &'a ImageBank,
    pub items: Vec<usize>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<'a> LabeledSet<'a> {
    /// Records of `m` labeled by `label`, which returns a class index.
    pub fn from_manifest(
        bank: &'a ImageBank,
        m: &DatasetManifest,
        classes: usize,
        label: impl Fn(&crate::corpus::GlyphRecord) -> usize,
    ) -> Result<Self> {
        let mut items = Vec::with_capacity(m.len());
        let mut labels = Vec::with_capacity(m.len());
        for r in &m.records {
            let i = bank
                .index_of(&r.record_id)
                .ok_or_else(|| ShufaError::Invalid(format!("record {} is not in the image bank", r.record_id)))?;
            items.push(i);
            labels.push(label(r));
        }
        Ok(Self {
            bank,
            items,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub log: TrainLog,
    /// Positions within the set used for validation.
    pub valid: Vec<usize>,
    pub valid_accuracy: f64,
    /// `confusion[true][predicted]` on the validation part.
    pub confusion: Vec<Vec<usize>>,
}

fn cross_entropy_rows(logits: &[f32], classes: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks(classes).zip(labels) {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let lse = row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[y] as f64;
    }
    total / labels.len().max(1) as f64
}

/// Trains `params` through `forward` (images → logits) with Adam.
pub fn train_classifier(
    forward: impl Fn(&mut Graph<f32>, &Bound, Var) -> Result<Var>,
    params: &mut ParamStore<f32>,
    set: &LabeledSet,
    cfg: &ClassifierTrainConfig,
) -> Result<ClassifierOutcome> {
    cfg.validate()?;
    if set.len() < 2 {
        return Err(ShufaError::Invalid(
            "classifier training needs at least two samples".into(),
        ));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= set.classes) {
        return Err(ShufaError::Invalid(format!(
            "label {bad} outside {} classes",
            set.classes
        )));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut seed::rng(cfg.seed, &[seed::tag("valid-split")]));
    let n_valid = ((cfg.valid_fraction * set.len() as f64).round() as usize).clamp(1, set.len() - 1);
    let mut valid = order[..n_valid].to_vec();
    valid.sort_unstable();
    let mut train = order[n_valid..].to_vec();
    train.sort_unstable();

    let valid_items: Vec<usize> = valid.iter().map(|&i| set.items[i]).collect();
    let valid_labels: Vec<usize> = valid.iter().map(|&i| set.labels[i]).collect();
    let valid_images = set.bank.tensor(&valid_items);

    let kind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = Optimizer::new(kind, params);
    let mut log = TrainLog::default();
    let mut predictions = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(cfg.seed, &[seed::tag("epoch"), epoch as u64]);
        train.shuffle(&mut rng);
        let lr = cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_decay_every) as i32);
        let mut loss_sum = 0.0;
        for chunk in train.chunks(cfg.batch_size) {
            let items: Vec<usize> = chunk.iter().map(|&i| set.items[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i]).collect();
            let mut g = Graph::new();
            let p = g.bind(params, true);
            let x = g.constant(set.bank.tensor(&items));
            let logits = forward(&mut g, &p, x)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(ShufaError::NonFiniteLoss { step: epoch });
            }
            loss_sum += value * chunk.len() as f64;
            let mut grads = g.backward(loss)?;
            let grads = grads.for_params(&p, params);
            opt.step(params, &grads, lr);
        }
        let logits = batched(&valid_images, set.classes, &forward, params)?;
        predictions = logits.data().chunks(set.classes).map(argmax).collect();
        let correct = predictions.iter().zip(&valid_labels).filter(|(a, b)| a == b).count();
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            valid_loss: cross_entropy_rows(logits.data(), set.classes, &valid_labels),
            accuracy: correct as f64 / valid.len() as f64,
        });
    }
    let valid_accuracy = log.epochs.last().map_or(0.0, |e| e.accuracy);
    let confusion = if predictions.is_empty() {
        vec![vec![0; set.classes]; set.classes]
    } else {
        confusion_matrix(set.classes, &valid_labels, &predictions)?
    };
    Ok(ClassifierOutcome {
        log,
        valid,
        valid_accuracy,
        confusion,
    })
}

/// Category network trained on script labels; returned frozen.
pub fn train_ccnet(
    s2: &DatasetManifest,
    bank: &ImageBank,
    net_cfg: &BackboneConfig,
    cfg: &ClassifierTrainConfig,
) -> Result<(CcnetModel, ClassifierOutcome)> {
    if s2.is_empty() {
        return Err(ShufaError::EmptyManifest);
    }
    if s2.categories().len() < 2 {
        return Err(ShufaError::Invalid(
            "category training needs at least two categories".into(),
        ));
    }
    let mut model = CcnetModel::new(net_cfg.clone(), &mut seed::rng(cfg.seed, &[seed::tag("ccnet-init")]))?;
    let set = LabeledSet::from_manifest(bank, s2, CcnetModel::CLASSES, |r| r.category.index())?;
    let CcnetModel { net, params, .. } = &mut model;
    let outcome = train_classifier(|g, p, x| Ok(net.forward(g, p, x)?.output), params, &set, cfg)?;
    model.frozen = true;
    Ok((model, outcome))
}
