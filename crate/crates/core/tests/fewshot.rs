mod common;

use rand::Rng;
use shufanet::fewshot::{shot_sweep, train_baseline, writer_labels, Embeddings, EpisodeSpec};
use shufanet::nets::{Arch, ImageBank};
use shufanet::seed;
use shufanet::trainer::ClassifierTrainConfig;

#[test]
fn random_embeddings_score_near_chance() {
    let mut r = seed::rng(11, &[]);
    let (writers, per, dim) = (12, 30, 16);
    let mut ids = vec![];
    let mut who = vec![];
    for w in 0..writers {
        for k in 0..per {
            ids.push(format!("w{w}_{k}"));
            who.push(format!("w{w:02}"));
        }
    }
    let data = (0..writers * per * dim).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let emb = Embeddings::new(ids, who, dim, data).unwrap();
    let spec = EpisodeSpec {
        shots: vec![5],
        n_episodes: 20,
        ..EpisodeSpec::default()
    };
    let report = shot_sweep(&emb, "random", &spec).unwrap();
    assert_eq!(report.rows.len(), 20);
    let mean = report.summary[0].mean;
    assert!((0.02..=0.35).contains(&mean), "{mean}");
}

#[test]
fn baseline_beats_chance_on_three_writers() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(dir.path(), 3, 30, 5);
    assert_eq!(writer_labels(&m).len(), 3);
    let bank = ImageBank::load(&m, 32).unwrap();
    let cfg = ClassifierTrainConfig::default();
    let (a, out) = train_baseline(&m, &bank, Arch::VggSmall, &cfg).unwrap();
    assert_eq!(out.log.epochs.len(), 20);
    assert!(out.valid_accuracy > 1.0 / 3.0, "{}", out.valid_accuracy);
    let (b, again) = train_baseline(&m, &bank, Arch::VggSmall, &cfg).unwrap();
    assert_eq!(a.params.checksum(), b.params.checksum());
    assert_eq!(out.log.epochs, again.log.epochs);
}
