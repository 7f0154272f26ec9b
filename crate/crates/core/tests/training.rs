mod common;

use shufanet::attention::AttentionConfig;
use shufanet::corpus::Category;
use shufanet::loss::LossConfig;
use shufanet::nets::{BackboneConfig, ImageBank, ShufaNetConfig};
use shufanet::trainer::{train_ccnet, train_shufanet, ClassifierTrainConfig, ShufaRun, TrainConfig};
use shufanet::ShufaError;

fn net(sa: bool) -> ShufaNetConfig {
    ShufaNetConfig {
        backbone: common::small_backbone(16),
        attention: AttentionConfig {
            stage_widths: vec![4, 4],
        },
        sa_enabled: sa,
    }
}

#[test]
fn triplet_training_reduces_loss_and_leaves_ccnet_alone() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(dir.path(), 4, 8, 1);
    let bank = ImageBank::load(&m, 16).unwrap();
    let quick = ClassifierTrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let (ccnet, _) = train_ccnet(&m, &bank, &common::small_backbone(16), &quick).unwrap();
    let before = ccnet.params.checksum();
    let train = TrainConfig {
        total_batches: 50,
        batch_triplets: 4,
        lr_init: 1e-2,
        loss: LossConfig {
            margin_embed: 1.0,
            margin_style: 1.0,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    for sa in [true, false] {
        let run = ShufaRun {
            s1: &m,
            bank: &bank,
            ccnet: &ccnet,
            net: net(sa),
            train: train.clone(),
            checkpoint_dir: None,
            resume: None,
            stop_at: None,
        };
        let (_, log) = train_shufanet(&run).unwrap();
        assert_eq!(log.steps.len(), 50);
        assert!(log.is_well_formed());
        let mean = |s: &[shufanet::trainer::StepRecord]| s.iter().map(|r| r.loss_total).sum::<f64>() / s.len() as f64;
        let (head, tail) = (mean(&log.steps[..10]), mean(&log.steps[40..]));
        assert!(tail < head, "sa={sa}: loss {head} -> {tail}");
    }
    assert_eq!(ccnet.params.checksum(), before);
}

#[test]
fn unfrozen_or_mismatched_ccnet_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(dir.path(), 3, 6, 2);
    let bank = ImageBank::load(&m, 16).unwrap();
    let quick = ClassifierTrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let (mut ccnet, _) = train_ccnet(&m, &bank, &common::small_backbone(16), &quick).unwrap();
    let train = TrainConfig {
        total_batches: 2,
        batch_triplets: 2,
        ..TrainConfig::default()
    };
    let attempt = |ccnet: &shufanet::nets::CcnetModel, net: ShufaNetConfig| {
        train_shufanet(&ShufaRun {
            s1: &m,
            bank: &bank,
            ccnet,
            net,
            train: train.clone(),
            checkpoint_dir: None,
            resume: None,
            stop_at: None,
        })
        .map(|_| ())
    };
    assert!(attempt(&ccnet, net(true)).is_ok());
    let mut other = net(true);
    other.backbone.input_size = 32;
    assert!(attempt(&ccnet, other).is_err());
    ccnet.frozen = false;
    assert!(attempt(&ccnet, net(true)).is_err());
}

#[test]
fn category_training_is_deterministic_and_learns() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(dir.path(), 20, 20, 3);
    let two = m.subset(|r| matches!(r.category, Category::Seal | Category::Cursive));
    assert_eq!(two.categories().len(), 2);
    let bank = ImageBank::load(&two, 32).unwrap();
    let cfg = ClassifierTrainConfig {
        epochs: 20,
        ..Default::default()
    };
    let backbone = BackboneConfig {
        input_size: 32,
        stage_widths: vec![8, 16, 32],
        tap_stages: vec![0, 1, 2],
        embed_dim: 8,
    };
    let (a, out_a) = train_ccnet(&two, &bank, &backbone, &cfg).unwrap();
    let (b, out_b) = train_ccnet(&two, &bank, &backbone, &cfg).unwrap();
    assert_eq!(a.params.checksum(), b.params.checksum());
    assert_eq!(out_a.log.epochs, out_b.log.epochs);
    assert_eq!(out_a.log.epochs.len(), 20);
    let first = out_a.log.epochs.first().unwrap().train_loss;
    let last = out_a.log.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    assert!(out_a.valid_accuracy > 0.6, "{}", out_a.valid_accuracy);
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(dir.path(), 2, 4, 4);
    let empty = m.subset(|_| false);
    let bank = ImageBank::load(&m, 16).unwrap();
    let err = train_ccnet(
        &empty,
        &bank,
        &common::small_backbone(16),
        &ClassifierTrainConfig::default(),
    );
    assert!(matches!(err, Err(ShufaError::EmptyManifest)));
}
