mod common;

use shufanet::cam::{compute_cam, CamTarget, Upsample};
use shufanet::fewshot::{train_baseline, writer_labels};
use shufanet::nets::{Arch, ImageBank};
use shufanet::shufa_autograd::Tensor;
use shufanet::trainer::ClassifierTrainConfig;

// Writer evidence lives in the strokes (thickness, shear, jitter), so a
// trained writer classifier should light up ink rather than paper.
#[test]
fn trained_writer_classifier_looks_at_ink() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(dir.path(), 20, 40, 6);
    let labels = writer_labels(&m);
    let bank = ImageBank::load(&m, 32).unwrap();
    let (model, out) = train_baseline(&m, &bank, Arch::VggSmall, &ClassifierTrainConfig::default()).unwrap();
    assert!(out.valid_accuracy > 2.0 / 20.0, "{}", out.valid_accuracy);
    let mut hits = 0;
    for &i in &out.valid {
        let x = Tensor::new(vec![32, 32], bank.image(i).to_vec()).unwrap();
        let class = labels[&m.records[i].writer_id];
        let heat = compute_cam(&x, &CamTarget::Classifier(&model), class, Upsample::Bilinear).unwrap();
        assert_eq!((heat.height, heat.width), (32, 32));
        assert!(heat.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let (mut ink, mut bg) = ((0.0, 0), (0.0, 0));
        for (v, &p) in heat.values.iter().zip(x.data()) {
            let slot = if p > 0.5 {
                &mut ink
            } else if p < 0.05 {
                &mut bg
            } else {
                continue;
            };
            slot.0 += v;
            slot.1 += 1;
        }
        if ink.1 > 0 && ink.0 / ink.1 as f64 > bg.0 / bg.1.max(1) as f64 {
            hits += 1;
        }
    }
    let n = out.valid.len();
    assert!(hits * 5 >= n * 4, "{hits}/{n} maps favour ink");
}
