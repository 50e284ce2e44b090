//! The subcommands. Each returns artifacts' locations or text so tests can
//! drive them in-process.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ciatr_core::seed::purpose;
use ciatr_core::training::augment_stages;
use ciatr_core::training::experiment::{run_cell, summarize, Cell};
use ciatr_core::{
    derive_sample_seed, encode_pgm, evaluate, fftshift, gen_dataset, load_checkpoint, normalize_minmax, read_pgm,
    train as train_model, write_checkpoint, EvalReport, Grid2D, SeedStream, Split, Variant,
};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_split, write_dataset};
use crate::{CliError, RunConfig};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CELLS_DIR: &str = "cells";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const GROUPS_FILE: &str = "groups.csv";

/// Writes through a sibling temporary file so readers never see a partial
/// artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Canonical JSON rendering of an evaluation, shared by `train` and `eval`.
pub fn eval_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let (train, test) = gen_dataset(&cfg.data, SeedStream::new(cfg.train.seed, 0))?;
    std::fs::create_dir_all(&cfg.data_dir)?;
    write_dataset(&cfg.data_dir, &train, &test)?;
    println!(
        "wrote {} train and {} test images to {}",
        train.len(),
        test.len(),
        cfg.data_dir.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    if !cfg.data_dir.is_dir() {
        return Err(CliError::Io(format!("data_dir {} does not exist", cfg.data_dir.display())));
    }
    let train_set = read_split(&cfg.data_dir, Split::Train)?;
    let test_set = read_split(&cfg.data_dir, Split::Test)?;
    let outcome = train_model(&train_set, cfg.data.num_classes, &cfg.train, &cfg.augment)?;
    let report = evaluate(&outcome.params, &test_set)?;

    let mut metrics = String::new();
    for record in &outcome.history {
        writeln!(metrics, "{}", serde_json::to_string(record).expect("record serializes")).expect("string write");
    }
    let mut checkpoint = Vec::new();
    write_checkpoint(&outcome.params, &mut checkpoint)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let ckpt_path = cfg.checkpoint_path();
    if let Some(parent) = ckpt_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_atomic(&cfg.out_dir.join(METRICS_FILE), metrics.as_bytes())?;
    write_atomic(&cfg.out_dir.join(EVAL_FILE), eval_json(&report).as_bytes())?;
    write_atomic(&cfg.out_dir.join(CONFUSION_FILE), report.confusion_csv().as_bytes())?;
    write_atomic(&ckpt_path, &checkpoint)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: L_ce {:.4} L_d {:.4} train_acc {:.4}; test accuracy {:.4}",
            last.epoch, last.loss.l_ce, last.loss.l_d, last.train_acc, report.accuracy
        );
    }
    Ok(())
}

/// Evaluates a checkpoint on the test split and returns the JSON report.
pub fn eval(checkpoint: &Path, data_dir: &Path) -> Result<String, CliError> {
    let params = load_checkpoint(checkpoint)?;
    let test = read_split(data_dir, Split::Test)?;
    let shape = params.shape;
    if let Some(x) = test.iter().find(|x| x.image.dims() != (shape.height, shape.width)) {
        return Err(CliError::Shape(format!(
            "checkpoint expects {}x{} images, dataset has {:?}",
            shape.height,
            shape.width,
            x.image.dims()
        )));
    }
    if let Some(x) = test.iter().find(|x| x.label >= shape.num_classes) {
        return Err(CliError::Shape(format!(
            "checkpoint has {} classes, dataset has label {}",
            shape.num_classes, x.label
        )));
    }
    Ok(eval_json(&evaluate(&params, &test)?))
}

/// `log(1 + |F|)` with the zero frequency centered, scaled to `[0, 1]`.
fn spectrum_view(magnitude: &Grid2D) -> Grid2D {
    let shifted = fftshift(magnitude);
    let (h, w) = shifted.dims();
    normalize_minmax(&Grid2D::from_fn(h, w, |r, c| shifted.get(r, c).ln_1p()).expect("same dimensions"))
}

pub const PREVIEW_STAGES: [&str; 5] = ["original", "spectrum", "masked_spectrum", "inverse", "output"];

/// Writes `draw<i>_<k>_<stage>.pgm` for every draw and stage into out_dir.
pub fn augment_preview(cfg: &RunConfig, image: &Path, count: u32) -> Result<Vec<PathBuf>, CliError> {
    let img = read_pgm(image)?;
    let (h, w) = img.dims();
    cfg.augment.validate(h, w)?;
    let root = SeedStream::new(cfg.train.seed, purpose::PREVIEW);
    let mut files = Vec::new();
    let mut outputs = Vec::new();
    for i in 0..count {
        let s = augment_stages(&img, derive_sample_seed(root, 0, i), &cfg.augment)?;
        let views = [
            s.original,
            spectrum_view(&s.spectrum.magnitude()),
            spectrum_view(&s.masked_spectrum.magnitude()),
            normalize_minmax(&s.inverse),
            s.output,
        ];
        for (k, (view, stage)) in views.iter().zip(PREVIEW_STAGES).enumerate() {
            let path = cfg.out_dir.join(format!("draw{i:03}_{}_{stage}.pgm", k + 1));
            outputs.push((path, encode_pgm(view)));
        }
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    for (path, bytes) in outputs {
        std::fs::write(&path, bytes)?;
        files.push(path);
    }
    println!("wrote {} files to {}", files.len(), cfg.out_dir.display());
    Ok(files)
}

/// Result of one grid cell, stored as its completion marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub seed: u64,
    pub n_per_class: usize,
    pub variant: String,
    pub accuracy: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentRun {
    pub trained: usize,
    pub skipped: usize,
}

fn load_marker(path: &Path, cell: &Cell) -> Option<CellRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    let record: CellRecord = serde_json::from_str(&text).ok()?;
    (record.seed == cell.seed && record.n_per_class == cell.n_per_class && record.variant == cell.variant.name())
        .then_some(record)
}

/// Runs every missing cell, then rewrites the summaries from all markers.
pub fn experiment(cfg: &RunConfig) -> Result<ExperimentRun, CliError> {
    let grid = cfg.experiment();
    let cells_dir = cfg.out_dir.join(CELLS_DIR);
    std::fs::create_dir_all(&cells_dir)?;
    let mut run = ExperimentRun { trained: 0, skipped: 0 };
    let mut results: Vec<(Cell, f64)> = Vec::new();
    for cell in grid.cells() {
        let marker = cells_dir.join(format!("{}.json", cell.key()));
        let record = match load_marker(&marker, &cell) {
            Some(record) => {
                run.skipped += 1;
                record
            }
            None => {
                let report = run_cell(&grid, cell)?;
                let record = CellRecord {
                    seed: cell.seed,
                    n_per_class: cell.n_per_class,
                    variant: cell.variant.name().to_string(),
                    accuracy: report.accuracy,
                    report,
                };
                let json = serde_json::to_string_pretty(&record).expect("record serializes");
                write_atomic(&marker, json.as_bytes())?;
                run.trained += 1;
                println!("{}: accuracy {:.4}", cell.key(), record.accuracy);
                record
            }
        };
        results.push((cell, record.accuracy));
    }

    let groups = summarize(&results);
    let group_of = |cell: &Cell| {
        groups
            .iter()
            .find(|g| g.n_per_class == cell.n_per_class && g.variant == cell.variant)
            .expect("every cell has a group")
    };
    let mut summary = String::from("n_per_class,variant,seed,accuracy,group_mean,group_std\n");
    for (cell, acc) in &results {
        let g = group_of(cell);
        writeln!(
            summary,
            "{},{},{},{},{},{}",
            cell.n_per_class, cell.variant, cell.seed, acc, g.mean_accuracy, g.std_accuracy
        )
        .expect("string write");
    }
    let mut group_csv = String::from("n_per_class,variant,runs,mean_accuracy,std_accuracy\n");
    for g in &groups {
        writeln!(
            group_csv,
            "{},{},{},{},{}",
            g.n_per_class, g.variant, g.runs, g.mean_accuracy, g.std_accuracy
        )
        .expect("string write");
    }
    write_atomic(&cfg.out_dir.join(SUMMARY_FILE), summary.as_bytes())?;
    write_atomic(&cfg.out_dir.join(GROUPS_FILE), group_csv.as_bytes())?;
    for g in &groups {
        println!(
            "n={} {}: mean {:.4} std {:.4} over {} runs",
            g.n_per_class, g.variant, g.mean_accuracy, g.std_accuracy, g.runs
        );
    }
    println!("{} cells trained, {} skipped", run.trained, run.skipped);
    Ok(run)
}

/// Parses the group table written by [`experiment`].
pub fn read_groups(out_dir: &Path) -> Result<Vec<(usize, Variant, f64, f64)>, CliError> {
    let text = std::fs::read_to_string(out_dir.join(GROUPS_FILE))?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || CliError::Io(format!("malformed group row `{line}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
                f[4].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}
