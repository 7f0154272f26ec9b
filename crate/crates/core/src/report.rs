//! Aggregates run outputs into comparison tables and PNG plots.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use log::{info, warn};
use plotters::prelude::*;

use crate::config::{model_name, Layout};
use crate::error::{io_err, Result, ShufaError};
use crate::fewshot::{EpisodeReport, ShotSummary};
use crate::nets::Arch;
use crate::trainer::{write_rows, TrainLog};

const FONT_FAMILY: &str = "sans-serif";
const FONT_CANDIDATES: [&str; 5] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu-sans-fonts/DejaVuSans.ttf",
    "/Library/Fonts/DejaVuSans.ttf",
];

/// Registers a system font for plot text once; `false` when none was
/// found, in which case plots are drawn without text.
fn fonts_available() -> bool {
    static READY: OnceLock<bool> = OnceLock::new();
    *READY.get_or_init(|| {
        let from_env = std::env::var_os("SHUFA_FONT").map(PathBuf::from);
        let found = from_env
            .into_iter()
            .chain(FONT_CANDIDATES.iter().map(PathBuf::from))
            .find_map(|p| fs::read(&p).ok());
        match found {
            Some(bytes) => {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                plotters::style::register_font(FONT_FAMILY, FontStyle::Normal, bytes).is_ok()
            }
            None => {
                warn!("no DejaVuSans font found; plots will have no text");
                false
            }
        }
    })
}

fn plot_err(path: &Path) -> impl Fn(String) -> ShufaError + '_ {
    move |message| ShufaError::Image {
        path: path.to_path_buf(),
        message,
    }
}

pub type Series = (String, Vec<(f64, f64)>);

/// Line chart of one or more `(x, y)` series.
pub fn line_plot(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> Result<()> {
    let err = plot_err(path);
    let points = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || !y0.is_finite() {
        return Err(err("nothing to plot".into()));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let text = fonts_available();
    let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut builder = ChartBuilder::on(&root);
    builder
        .margin(16)
        .x_label_area_size(if text { 40 } else { 4 })
        .y_label_area_size(if text { 64 } else { 4 });
    if text {
        builder.caption(title, (FONT_FAMILY, 22));
    }
    let mut chart = builder
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(e.to_string()))?;
    let mut mesh = chart.configure_mesh();
    if text {
        mesh.x_desc(x_desc).y_desc(y_desc).label_style((FONT_FAMILY, 14));
    } else {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(|e| err(e.to_string()))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let drawn = chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(e.to_string()))?;
        if text {
            drawn
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
    }
    if text && series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .label_font((FONT_FAMILY, 14))
            .draw()
            .map_err(|e| err(e.to_string()))?;
    }
    root.present().map_err(|e| err(e.to_string()))
}

/// Confusion counts as a shaded grid, rows are true classes.
pub fn confusion_plot(path: &Path, labels: &[String], matrix: &[Vec<usize>]) -> Result<()> {
    let err = plot_err(path);
    let k = matrix.len();
    if k == 0 || labels.len() != k {
        return Err(err("confusion matrix and labels disagree".into()));
    }
    let text = fonts_available();
    let root = BitMapBackend::new(path, (600, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut builder = ChartBuilder::on(&root);
    builder
        .margin(16)
        .x_label_area_size(if text { 40 } else { 4 })
        .y_label_area_size(if text { 80 } else { 4 });
    if text {
        builder.caption("confusion (rows: true, columns: predicted)", (FONT_FAMILY, 18));
    }
    let mut chart = builder.build_cartesian_2d(0..k, 0..k).map_err(|e| err(e.to_string()))?;
    let mut mesh = chart.configure_mesh();
    mesh.disable_mesh();
    if text {
        let fmt = |i: &usize| labels.get(*i).cloned().unwrap_or_default();
        mesh.x_label_formatter(&fmt)
            .y_label_formatter(&fmt)
            .label_style((FONT_FAMILY, 13));
        mesh.draw().map_err(|e| err(e.to_string()))?;
    } else {
        mesh.x_labels(0).y_labels(0).draw().map_err(|e| err(e.to_string()))?;
    }
    for (i, row) in matrix.iter().enumerate() {
        let total = row.iter().sum::<usize>().max(1) as f64;
        for (j, &n) in row.iter().enumerate() {
            let shade = 1.0 - n as f64 / total;
            let c = RGBColor((255.0 * shade) as u8, (255.0 * shade) as u8, 255);
            // row 0 at the top
            let y = k - 1 - i;
            chart
                .draw_series(std::iter::once(Rectangle::new([(j, y), (j + 1, y + 1)], c.filled())))
                .map_err(|e| err(e.to_string()))?;
        }
    }
    root.present().map_err(|e| err(e.to_string()))
}

pub fn write_confusion_csv(path: &Path, labels: &[String], matrix: &[Vec<usize>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["true".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(matrix) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|n| n.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_confusion_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let labels: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut matrix = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| ShufaError::Invalid(format!("{}: bad count `{v}`", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        matrix.push(row);
    }
    Ok((labels, matrix))
}

/// `(mean, std)` per shot count, `None` where a model was not evaluated.
pub type ShotCells = Vec<Option<(f64, f64)>>;

/// One row per model with mean and std at every shot count seen.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub shots: Vec<usize>,
    pub rows: Vec<(String, ShotCells)>,
}

impl Comparison {
    pub fn from_summaries(summary: &[ShotSummary]) -> Self {
        let shots: Vec<usize> = summary
            .iter()
            .map(|s| s.shots)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let models: Vec<String> = summary
            .iter()
            .map(|s| s.model.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let rows = models
            .into_iter()
            .map(|m| {
                let cells = shots
                    .iter()
                    .map(|&k| {
                        summary
                            .iter()
                            .find(|s| s.model == m && s.shots == k)
                            .map(|s| (s.mean, s.std))
                    })
                    .collect();
                (m, cells)
            })
            .collect();
        Self { shots, rows }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["model".to_string()];
        for k in &self.shots {
            header.push(format!("mean_{k}shot"));
            header.push(format!("std_{k}shot"));
        }
        w.write_record(&header)?;
        for (model, cells) in &self.rows {
            let mut rec = vec![model.clone()];
            for c in cells {
                match c {
                    Some((m, s)) => {
                        rec.push(m.to_string());
                        rec.push(s.to_string());
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }

    /// Markdown table with percentages, e.g. `41.20 ± 0.37`.
    pub fn markdown(&self) -> String {
        let mut out = String::from("| model |");
        for k in &self.shots {
            out.push_str(&format!(" {k}-shot |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.shots.len()));
        out.push('\n');
        for (model, cells) in &self.rows {
            out.push_str(&format!("| {model} |"));
            for c in cells {
                match c {
                    Some((m, s)) => out.push_str(&format!(" {:.2} ± {:.2} |", 100.0 * m, 100.0 * s)),
                    None => out.push_str(" |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ReportOutcome {
    pub comparison: Comparison,
    pub files: Vec<PathBuf>,
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(vec![]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Reads every evaluation summary, training log and confusion matrix under
/// `layout` and writes tables and plots to its report directory.
pub fn build_report(layout: &Layout) -> Result<ReportOutcome> {
    let out_dir = layout.report();
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let mut files = Vec::new();

    let mut summary = Vec::new();
    for dir in subdirs(&layout.root.join("eval"))? {
        let path = dir.join("summary.csv");
        if path.is_file() {
            summary.extend(EpisodeReport::read_summary(&path)?);
        }
    }
    if summary.is_empty() {
        return Err(ShufaError::Invalid(format!(
            "no evaluation summaries under {}",
            layout.root.join("eval").display()
        )));
    }
    summary.sort_by(|a, b| a.model.cmp(&b.model).then(a.shots.cmp(&b.shots)));
    let path = out_dir.join("summary.csv");
    write_rows(&path, &summary, &crate::fewshot::SUMMARY_HEADER)?;
    files.push(path);

    let comparison = Comparison::from_summaries(&summary);
    let path = out_dir.join("comparison.csv");
    comparison.write_csv(&path)?;
    files.push(path);
    let path = out_dir.join("comparison.md");
    fs::write(&path, comparison.markdown()).map_err(io_err(&path))?;
    files.push(path);

    let shot_series: Vec<Series> = comparison
        .rows
        .iter()
        .map(|(m, cells)| {
            let pts = comparison
                .shots
                .iter()
                .zip(cells)
                .filter_map(|(&k, c)| c.map(|(mean, _)| (k as f64, mean)))
                .collect();
            (m.clone(), pts)
        })
        .collect();
    let path = out_dir.join("shots.png");
    line_plot(&path, "few-shot accuracy", "shots", "accuracy", &shot_series)?;
    files.push(path);

    for sa in [true, false] {
        let steps = layout.shufanet(sa).join("steps.csv");
        if !steps.is_file() {
            continue;
        }
        let log = TrainLog::read_steps_csv(&steps)?;
        let pick = |f: fn(&crate::trainer::StepRecord) -> f64| log.iter().map(|s| (s.step as f64, f(s))).collect();
        let series = vec![
            ("total".to_string(), pick(|s| s.loss_total)),
            ("style".to_string(), pick(|s| s.loss_style)),
            ("triplet".to_string(), pick(|s| s.loss_triplet)),
        ];
        let path = out_dir.join(format!("loss_{}.png", model_name(sa)));
        line_plot(
            &path,
            &format!("{} training loss", model_name(sa)),
            "step",
            "loss",
            &series,
        )?;
        files.push(path);
    }

    let mut curve_sources = vec![("ccnet".to_string(), layout.ccnet().join("curves.csv"))];
    for arch in Arch::ALL {
        curve_sources.push((arch.name().to_string(), layout.baseline(arch).join("curves.csv")));
    }
    for (name, path) in curve_sources {
        if !path.is_file() {
            continue;
        }
        let epochs = TrainLog::read_epochs_csv(&path)?;
        let pick = |f: fn(&crate::trainer::EpochRecord) -> f64| epochs.iter().map(|e| (e.epoch as f64, f(e))).collect();
        let loss = vec![
            ("train".to_string(), pick(|e| e.train_loss)),
            ("valid".to_string(), pick(|e| e.valid_loss)),
        ];
        let p = out_dir.join(format!("curves_{name}_loss.png"));
        line_plot(&p, &format!("{name} loss"), "epoch", "cross-entropy", &loss)?;
        files.push(p);
        let p = out_dir.join(format!("curves_{name}_accuracy.png"));
        line_plot(
            &p,
            &format!("{name} validation accuracy"),
            "epoch",
            "accuracy",
            &[("valid".into(), pick(|e| e.accuracy))],
        )?;
        files.push(p);
    }

    let confusion = layout.ccnet().join("confusion.csv");
    if confusion.is_file() {
        let (labels, matrix) = read_confusion_csv(&confusion)?;
        let p = out_dir.join("confusion_ccnet.png");
        confusion_plot(&p, &labels, &matrix)?;
        files.push(p);
    }
    info!("report written to {}", out_dir.display());
    Ok(ReportOutcome { comparison, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(model: &str, shots: usize, mean: f64) -> ShotSummary {
        ShotSummary {
            model: model.into(),
            shots,
            mean,
            std: 0.01,
        }
    }

    #[test]
    fn comparison_has_one_row_per_model() {
        let c = Comparison::from_summaries(&[
            summary("b", 5, 0.2),
            summary("a", 5, 0.3),
            summary("a", 20, 0.5),
            summary("b", 20, 0.4),
        ]);
        assert_eq!(c.shots, vec![5, 20]);
        assert_eq!(c.rows.len(), 2);
        assert_eq!(c.rows[0].0, "a");
        assert!(c.markdown().contains("| a | 30.00 ± 1.00 | 50.00 ± 1.00 |"));
    }

    #[test]
    fn confusion_round_trip_and_plots() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec!["x".to_string(), "y".to_string()];
        let m = vec![vec![3, 1], vec![0, 4]];
        let p = dir.path().join("c.csv");
        write_confusion_csv(&p, &labels, &m).unwrap();
        assert_eq!(read_confusion_csv(&p).unwrap(), (labels.clone(), m.clone()));
        let png = dir.path().join("c.png");
        confusion_plot(&png, &labels, &m).unwrap();
        let line = dir.path().join("l.png");
        line_plot(&line, "t", "x", "y", &[("s".into(), vec![(0.0, 1.0), (1.0, 0.5)])]).unwrap();
        assert_eq!(image::open(&line).unwrap().width(), 800);
        assert!(line_plot(&line, "t", "x", "y", &[]).is_err());
    }
}
