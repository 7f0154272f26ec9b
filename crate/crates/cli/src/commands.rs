use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;

use shufanet::cam::{compute_cam, render_overlay, save_heatmap, CamTarget, Upsample};
use shufanet::config::{model_name, Layout, RunConfig};
use shufanet::corpus::{
    load_glyph_dir, load_manifest, procedural_glyphs, split_dataset, synthesize_corpus, write_manifest, Category,
    DatasetManifest,
};
use shufanet::fewshot::{run_episode, shot_sweep, train_baseline, Embeddings};
use shufanet::nets::{preprocess_file, read_meta, CcnetModel, ClassifierModel, ImageBank, ShufaModel};
use shufanet::report::{build_report, write_confusion_csv};
use shufanet::shufa_autograd::Tensor;
use shufanet::trainer::{train_ccnet, train_shufanet, ShufaRun};

use crate::{Command, Common};

const GLYPH_RENDER_SIZE: usize = 64;

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn load_split(layout: &Layout, part: &str) -> Result<DatasetManifest> {
    let path = layout.split_file(part);
    load_manifest(&path).with_context(|| format!("loading {} (run `split` first)", path.display()))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, emit_config } => {
            let cfg = load_config(&common)?;
            match emit_config {
                Some(path) => {
                    cfg.save(&path)?;
                    info!("configuration written to {}", path.display());
                    Ok(())
                }
                None => gen_data(&cfg),
            }
        }
        Command::Split { common } => split(&load_config(&common)?),
        Command::TrainCcnet { common } => ccnet(&load_config(&common)?),
        Command::Train {
            common,
            sa,
            no_sa,
            resume,
        } => {
            let mut cfg = load_config(&common)?;
            if sa || no_sa {
                cfg.network.sa_enabled = sa && !no_sa;
            }
            train(&cfg, resume.as_deref())
        }
        Command::Eval { common, shots, no_sa } => {
            let mut cfg = load_config(&common)?;
            if let Some(shots) = shots {
                cfg.episodes.shots = shots;
                cfg.episodes.validate()?;
            }
            eval(&cfg, !no_sa)
        }
        Command::Baseline { common, arch } => {
            let cfg = load_config(&common)?;
            let layout = cfg.layout();
            let manifest = load_manifest(&layout.manifest())?;
            let bank = ImageBank::load(&manifest, cfg.network.backbone.input_size)?;
            let (model, outcome) = train_baseline(&manifest, &bank, arch, &cfg.baseline)?;
            let dir = layout.baseline(arch);
            model.save(&dir.join("model.bin"), cfg.baseline.seed, cfg.baseline.epochs)?;
            outcome.log.write_epochs_csv(&dir.join("curves.csv"))?;
            println!("{} validation accuracy {:.4}", arch.name(), outcome.valid_accuracy);
            Ok(())
        }
        Command::Cam {
            common,
            image,
            checkpoint,
            class_index,
            colormap,
            nearest,
            episode,
            shots,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(c) = colormap {
                cfg.cam.colormap = c;
            }
            if nearest {
                cfg.cam.upsample = Upsample::Nearest;
            }
            cam(&cfg, &image, &checkpoint, class_index, episode, shots)
        }
        Command::Report { common } => {
            let cfg = load_config(&common)?;
            let out = build_report(&cfg.layout())?;
            print!("{}", out.comparison.markdown());
            Ok(())
        }
    }
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let layout = cfg.layout();
    let glyphs = match &cfg.glyph_dir {
        Some(dir) => load_glyph_dir(dir, GLYPH_RENDER_SIZE)?,
        None => procedural_glyphs(cfg.synthesis.chars_per_writer, GLYPH_RENDER_SIZE, cfg.synthesis.seed),
    };
    let m = synthesize_corpus(&cfg.synthesis, &glyphs, &layout.corpus())?;
    cfg.save(&layout.config_copy())?;
    info!(
        "{} glyphs from {} writers in {}",
        m.len(),
        m.writers().len(),
        layout.corpus().display()
    );
    Ok(())
}

fn split(cfg: &RunConfig) -> Result<()> {
    let layout = cfg.layout();
    let m = load_manifest(&layout.manifest()).context("loading the corpus manifest (run `gen-data` first)")?;
    let s = split_dataset(&m, cfg.seed, cfg.split.query_ways, cfg.split.s1_fraction)?;
    for (name, part) in [("s1", &s.s1), ("s2", &s.s2), ("s_query", &s.s_query)] {
        write_manifest(part, &layout.split_file(name))?;
        info!("{name}: {} records, {} writers", part.len(), part.writers().len());
    }
    Ok(())
}

fn ccnet(cfg: &RunConfig) -> Result<()> {
    let layout = cfg.layout();
    let s2 = load_split(&layout, "s2")?;
    let bank = ImageBank::load(&s2, cfg.ccnet.input_size)?;
    let (model, outcome) = train_ccnet(&s2, &bank, &cfg.ccnet, &cfg.ccnet_training)?;
    let dir = layout.ccnet();
    model.save(&layout.ccnet_blob(), cfg.ccnet_training.seed, cfg.ccnet_training.epochs)?;
    outcome.log.write_epochs_csv(&dir.join("curves.csv"))?;
    let labels: Vec<String> = Category::ALL.iter().map(|c| c.as_str().to_string()).collect();
    write_confusion_csv(&dir.join("confusion.csv"), &labels, &outcome.confusion)?;
    println!("category network validation accuracy {:.4}", outcome.valid_accuracy);
    Ok(())
}

fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let layout = cfg.layout();
    let s1 = load_split(&layout, "s1")?;
    let bank = ImageBank::load(&s1, cfg.network.backbone.input_size)?;
    let (ccnet, _) =
        CcnetModel::load(&layout.ccnet_blob()).context("loading the category network (run `train-ccnet` first)")?;
    let sa = cfg.network.sa_enabled;
    let dir = layout.shufanet(sa);
    let run = ShufaRun {
        s1: &s1,
        bank: &bank,
        ccnet: &ccnet,
        net: cfg.network.clone(),
        train: cfg.train.clone(),
        checkpoint_dir: Some(dir.join("checkpoints")),
        resume: resume.map(Path::to_path_buf),
        stop_at: None,
    };
    let (model, log) = train_shufanet(&run)?;
    model.save(
        &layout.shufanet_blob(sa),
        cfg.train.seed,
        cfg.train.total_batches,
        vec![],
    )?;
    log.write_steps_csv(&dir.join("steps.csv"))?;
    if let Some(last) = log.steps.last() {
        println!("{} final loss {:.4}", model_name(sa), last.loss_total);
    }
    Ok(())
}

fn eval(cfg: &RunConfig, sa: bool) -> Result<()> {
    let layout = cfg.layout();
    let query = load_split(&layout, "s_query")?;
    let blob = layout.shufanet_blob(sa);
    let (model, _, _) =
        ShufaModel::load(&blob).with_context(|| format!("loading {} (run `train` first)", blob.display()))?;
    let bank = ImageBank::load(&query, model.config.backbone.input_size)?;
    let emb = Embeddings::compute(&query, &bank, |x| model.embed(x))?;
    let name = model_name(sa);
    let report = shot_sweep(&emb, name, &cfg.episodes)?;
    let dir = layout.eval(name);
    report.write(&dir.join("episodes.csv"), &dir.join("summary.csv"))?;
    for s in &report.summary {
        println!(
            "{name} {}-way {}-shot: {:.4} ± {:.4}",
            cfg.episodes.ways, s.shots, s.mean, s.std
        );
    }
    Ok(())
}

fn cam(
    cfg: &RunConfig,
    image: &Path,
    checkpoint: &Path,
    class_index: usize,
    episode: usize,
    shots: Option<usize>,
) -> Result<()> {
    let layout = cfg.layout();
    let meta = read_meta(checkpoint)?;
    let load_image =
        |size: usize| -> Result<Tensor<f32>> { Ok(Tensor::new(vec![size, size], preprocess_file(image, size)?)?) };
    let (heatmap, ink) = match meta.kind.as_str() {
        k if k == CcnetModel::KIND => {
            let (m, _) = CcnetModel::load(checkpoint)?;
            let x = load_image(m.config.input_size)?;
            (
                compute_cam(&x, &CamTarget::Ccnet(&m), class_index, cfg.cam.upsample)?,
                x,
            )
        }
        k if k == ClassifierModel::KIND => {
            let (m, _) = ClassifierModel::load(checkpoint)?;
            let x = load_image(m.config.input_size)?;
            (
                compute_cam(&x, &CamTarget::Classifier(&m), class_index, cfg.cam.upsample)?,
                x,
            )
        }
        k if k == ShufaModel::KIND => {
            let (m, _, _) = ShufaModel::load(checkpoint)?;
            let query = load_split(&layout, "s_query")?;
            let bank = ImageBank::load(&query, m.config.backbone.input_size)?;
            let emb = Embeddings::compute(&query, &bank, |x| m.embed(x))?;
            let shots = match shots {
                Some(s) => s,
                None => *cfg.episodes.shots.iter().max().expect("validated non-empty"),
            };
            let out = run_episode(&emb, &cfg.episodes, shots, episode)?;
            info!(
                "probe class {class_index} is writer {}",
                out.episode.writers.get(class_index).map_or("?", String::as_str)
            );
            let x = load_image(m.config.backbone.input_size)?;
            let target = CamTarget::Probe {
                model: &m,
                probe: &out.probe,
            };
            (compute_cam(&x, &target, class_index, cfg.cam.upsample)?, x)
        }
        other => bail!("{} holds an unsupported model kind `{other}`", checkpoint.display()),
    };
    let stem = image
        .file_stem()
        .map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let dir = layout.cam();
    fs::create_dir_all(&dir)?;
    let overlay = dir.join(format!("{stem}_{}_class{class_index}.png", meta.kind));
    render_overlay(ink.data(), &heatmap, &cfg.cam, &overlay)?;
    save_heatmap(
        &heatmap,
        &dir.join(format!("{stem}_{}_class{class_index}_heat.png", meta.kind)),
    )?;
    println!("{}", overlay.display());
    Ok(())
}
