//! Triplet training of the embedding network against a frozen category
//! network. Batches come from one pre-sampled triplet sequence indexed by
//! step, so a resumed run sees exactly the batches it would have seen.

use std::path::{Path, PathBuf};

use log::info;
use shufa_autograd::{clip_grad_norm, Graph, Optimizer, OptimizerKind, Var};

use super::{lr_at, StepRecord, TrainConfig, TrainLog};
use crate::corpus::{sample_triplets, DatasetManifest};
use crate::error::{Result, ShufaError};
use crate::loss::{graph_shufa_loss, graph_style_loss, graph_sum, graph_triplet_loss};
use crate::nets::{CcnetModel, ImageBank, ShufaModel, ShufaNetConfig};
use crate::seed;

pub struct ShufaRun<'a> {
    pub s1: &'a DatasetManifest,
    pub bank: &'a ImageBank,
    pub ccnet: &'a CcnetModel,
    pub net: ShufaNetConfig,
    pub train: TrainConfig,
    /// Where periodic checkpoints go; `None` disables them.
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Stop before this step instead of `total_batches`.
    pub stop_at: Option<usize>,
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step:06}.bin"))
}

fn triplet_indices(run: &ShufaRun) -> Result<Vec<[usize; 3]>> {
    let count = run.train.total_batches * run.train.batch_triplets;
    let seq_seed = seed::derive(run.train.seed, &[seed::tag("triplet-sequence")]);
    let triplets = sample_triplets(run.s1, count, seq_seed)?;
    let find = |id: &str| {
        run.bank
            .index_of(id)
            .ok_or_else(|| ShufaError::Invalid(format!("record {id} is not in the image bank")))
    };
    triplets
        .iter()
        .map(|t| {
            Ok([
                find(&t.positive.record_id)?,
                find(&t.anchor.record_id)?,
                find(&t.negative.record_id)?,
            ])
        })
        .collect()
}

pub fn train_shufanet(run: &ShufaRun) -> Result<(ShufaModel, TrainLog)> {
    run.train.validate()?;
    if !run.ccnet.frozen {
        return Err(ShufaError::Invalid(
            "the category network must be frozen before triplet training".into(),
        ));
    }
    if run.ccnet.config.input_size != run.net.backbone.input_size || run.bank.size != run.net.backbone.input_size {
        return Err(ShufaError::Invalid(format!(
            "input sizes differ: backbone {}, category network {}, images {}",
            run.net.backbone.input_size, run.ccnet.config.input_size, run.bank.size
        )));
    }
    let cfg = &run.train;
    let kind = OptimizerKind::Sgd { momentum: cfg.momentum };
    let (mut model, mut opt, start, mut log) = match &run.resume {
        Some(path) => {
            let (model, meta, extra) = ShufaModel::load(path)?;
            if model.config != run.net {
                return Err(ShufaError::Checkpoint(format!(
                    "{} was trained with a different network configuration",
                    path.display()
                )));
            }
            let mut opt = Optimizer::new(kind, &model.params);
            opt.load_state(extra)?;
            let steps = TrainLog::read_steps_csv(&path.with_extension("csv"))?
                .into_iter()
                .filter(|s| s.step < meta.step)
                .collect();
            (model, opt, meta.step, TrainLog { steps, epochs: vec![] })
        }
        None => {
            let model = ShufaModel::new(run.net.clone(), &mut seed::rng(cfg.seed, &[seed::tag("shufanet-init")]))?;
            let opt = Optimizer::new(kind, &model.params);
            (model, opt, 0, TrainLog::default())
        }
    };
    let end = run.stop_at.unwrap_or(cfg.total_batches).min(cfg.total_batches);
    let sequence = triplet_indices(run)?;
    let b = cfg.batch_triplets;
    let use_style = cfg.loss.alpha != 0.0;

    for step in start..end {
        let batch = &sequence[step * b..(step + 1) * b];
        let mut idx = Vec::with_capacity(3 * b);
        for k in 0..3 {
            idx.extend(batch.iter().map(|t| t[k]));
        }
        let mut g = Graph::new();
        let p = g.bind(&model.params, true);
        let cp = g.bind(&run.ccnet.params, false);
        let x = g.constant(run.bank.tensor(&idx));
        let xa = model.net.attend(&mut g, &p, x)?;
        let out = model.net.backbone.forward(&mut g, &p, xa)?;
        let split = |g: &mut Graph<f32>, v: Var| -> Result<[Var; 3]> {
            Ok([
                g.slice_items(v, 0, b)?,
                g.slice_items(v, b, b)?,
                g.slice_items(v, 2 * b, b)?,
            ])
        };
        let [ep, ea, en] = split(&mut g, out.output)?;
        let triplet = graph_triplet_loss(&mut g, ep, ea, en, &cfg.loss)?;
        let style = if use_style {
            let bb = branch_taps(&mut g, &out.taps, &split)?;
            let sb = graph_style_loss(
                &mut g,
                [&bb[0], &bb[1], &bb[2]],
                &model.config.backbone.tap_stages,
                &cfg.loss,
            )?;
            let cout = run.ccnet.net.forward(&mut g, &cp, xa)?;
            let cb = branch_taps(&mut g, &cout.taps, &split)?;
            let sc = graph_style_loss(
                &mut g,
                [&cb[0], &cb[1], &cb[2]],
                &run.ccnet.config.tap_stages,
                &cfg.loss,
            )?;
            graph_sum(&mut g, &[sb, sc])?
        } else {
            None
        };
        let parts = graph_shufa_loss(&mut g, style, triplet, &cfg.loss)?;
        let scalar = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0] as f64);
        let lr = lr_at(step, cfg);
        let record = StepRecord {
            step,
            lr,
            loss_total: scalar(Some(parts.total)),
            loss_style: scalar(parts.style),
            loss_triplet: scalar(Some(parts.triplet)),
        };
        if ![record.loss_total, record.loss_style, record.loss_triplet]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(ShufaError::NonFiniteLoss { step });
        }
        let mut grads = g.backward(parts.total)?;
        let mut grads = grads.for_params(&p, &model.params);
        if let Some(max) = cfg.clip_grad_norm {
            clip_grad_norm(&mut grads, max);
        }
        opt.step(&mut model.params, &grads, lr);
        if step % 50 == 0 {
            info!(
                "step {step}: total {:.4} style {:.4} triplet {:.4}",
                record.loss_total, record.loss_style, record.loss_triplet
            );
        }
        log.steps.push(record);

        let done = step + 1;
        if let Some(dir) = &run.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (done % cfg.checkpoint_every == 0 || done == end) {
                let blob = checkpoint_path(dir, done);
                model.save(&blob, cfg.seed, done, opt.state_entries())?;
                log.write_steps_csv(&blob.with_extension("csv"))?;
            }
        }
    }
    Ok((model, log))
}

fn branch_taps(
    g: &mut Graph<f32>,
    taps: &[Var],
    split: &impl Fn(&mut Graph<f32>, Var) -> Result<[Var; 3]>,
) -> Result<[Vec<Var>; 3]> {
    let mut out: [Vec<Var>; 3] = Default::default();
    for &t in taps {
        let parts = split(g, t)?;
        for k in 0..3 {
            out[k].push(parts[k]);
        }
    }
    Ok(out)
}
