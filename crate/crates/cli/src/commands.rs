//! Subcommand implementations. Each writes its outputs under a directory and
//! returns a summary for printing.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use risense::channel::{run_study, write_trace_csv, StudySummary};
use risense::dataset::{
    generate_dataset, ground_truth, import_coco, CaptureRecord, DatasetManifest, RisPipeline,
    Split, MANIFEST_FILE,
};
use risense::detector::{detect, CaptureView, DetectionFile, DetectorParams};
use risense::eval::{best_match_ious, map_range, write_pr_curves_csv, ApReport, Detection, GroundTruth, ModeComparison};
use risense::iq::read_iq;
use risense::spectrogram::load_image;
use serde::{Deserialize, Serialize};

use crate::config::{EvaluationConfig, RunConfig};
use crate::{CliError, Result};

pub const DETECTIONS_DIR: &str = "detections";
pub const EVALUATION_DIR: &str = "evaluation";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn run_in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?
            .install(f)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub dataset_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub train_images: usize,
    pub test_images: usize,
    pub failed: usize,
}

pub fn cmd_generate(cfg: &RunConfig, pipeline: RisPipeline) -> Result<GenerateOutcome> {
    let sim = cfg.simulator(pipeline);
    let opts = cfg.generation_options(pipeline);
    let manifest = generate_dataset(&sim, &opts)?;
    let count = |split: Split| {
        manifest
            .split(split)
            .filter(|r| r.image_path.is_some())
            .count()
    };
    Ok(GenerateOutcome {
        manifest_path: opts.out_dir.join(MANIFEST_FILE),
        dataset_dir: opts.out_dir,
        train_images: count(Split::Train),
        test_images: count(Split::Test),
        failed: manifest.records.iter().filter(|r| r.error.is_some()).count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub dir: PathBuf,
    pub summary: StudySummary,
}

/// Writes `summary.txt`, `summary.json`, `trials.csv` and one
/// `trace_<trial>.csv` per kept trace under `<root>/ris_study`.
pub fn cmd_ris_study(cfg: &RunConfig) -> Result<StudyOutcome> {
    let dir = cfg.output.root.join("ris_study");
    fs::create_dir_all(&dir)?;
    let (trials, summary) = run_in_pool(cfg.output.jobs, || run_study(&cfg.channel, &cfg.greedy, &cfg.study))?
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut csv = String::from("trial,seed,initial_power,final_power,gain_db,iterations,converged,monotone,exhaustive_ratio\n");
    for (i, t) in trials.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{:e},{:e},{:.6},{},{},{},{}\n",
            t.seed,
            t.initial_power,
            t.final_power,
            t.gain_db,
            t.iterations,
            t.converged,
            t.monotone,
            t.exhaustive_ratio.map(|r| format!("{r:.6}")).unwrap_or_default()
        ));
    }
    write_text(&dir.join("trials.csv"), &csv)?;
    for (i, t) in trials.iter().enumerate() {
        if let Some(trace) = &t.trace {
            let file = fs::File::create(dir.join(format!("trace_{i:04}.csv")))?;
            write_trace_csv(BufWriter::new(file), trace)?;
        }
    }
    write_text(&dir.join("summary.txt"), &summary.to_table())?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(StudyOutcome { dir, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    pub dir: PathBuf,
    pub written: usize,
    /// `(capture id, reason)` for captures that could not be processed.
    pub failures: Vec<(String, String)>,
}

fn detect_record(
    root: &Path,
    manifest: &DatasetManifest,
    record: &CaptureRecord,
    params: &DetectorParams,
) -> std::result::Result<DetectionFile, String> {
    let image_rel = record
        .image_path
        .as_ref()
        .ok_or_else(|| format!("no image ({})", record.error.as_deref().unwrap_or("generation failed")))?;
    let image = load_image(&root.join(image_rel)).map_err(|e| e.to_string())?;
    let iq = match &record.iq_path {
        Some(p) => Some(read_iq(&root.join(p)).map_err(|e| format!("{p}: {e}"))?.0),
        None => None,
    };
    let sim = &manifest.header.simulator;
    let view = CaptureView::Image {
        image: &image,
        db_range: sim.db_range,
        geometry: sim.geometry(),
    };
    let detections = detect(view, iq.as_ref(), params).map_err(|e| e.to_string())?;
    Ok(DetectionFile {
        image: record.capture_id.clone(),
        detections,
    })
}

/// Runs the baseline detector on every capture of a dataset, writing
/// `<dataset>/detections/<capture_id>.json`. Uses the stored IQ for
/// numerology classification when the dataset has it.
pub fn cmd_detect(dataset_dir: &Path, params: &DetectorParams, jobs: Option<usize>) -> Result<DetectOutcome> {
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = DatasetManifest::read(&dataset_dir.join(MANIFEST_FILE))?;
    let out_dir = dataset_dir.join(DETECTIONS_DIR);
    fs::create_dir_all(&out_dir)?;
    let results: Vec<(String, std::result::Result<DetectionFile, String>)> = run_in_pool(jobs, || {
        manifest
            .records
            .par_iter()
            .map(|r| (r.capture_id.clone(), detect_record(dataset_dir, &manifest, r, params)))
            .collect()
    })?;
    let mut written = 0;
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(file) => {
                file.write(&out_dir.join(format!("{id}.json")))?;
                written += 1;
            }
            Err(reason) => failures.push((id, reason)),
        }
    }
    Ok(DetectOutcome {
        dir: out_dir,
        written,
        failures,
    })
}

/// Metrics of one dataset's detections against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEvaluation {
    pub dataset: String,
    pub pipeline: RisPipeline,
    pub images: usize,
    pub missing_detections: usize,
    pub mean_ris_gain_db: Option<f64>,
    /// Mean over signal ground truths of the best IoU of any signal detection.
    pub mean_best_iou: Option<f64>,
    pub report: ApReport,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Ground truth from a COCO annotation file instead of the manifest.
pub fn coco_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    Ok(import_coco(path)?
        .into_iter()
        .map(|l| GroundTruth {
            image: l.capture_id,
            class: l.class,
            bbox: l.bbox,
        })
        .collect())
}

pub fn evaluate_dataset(
    dataset_dir: &Path,
    detections_dir: Option<&Path>,
    gt_override: Option<&Path>,
    eval: &EvaluationConfig,
) -> Result<DatasetEvaluation> {
    let match_cfg = eval.match_config();
    match_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = DatasetManifest::read(&dataset_dir.join(MANIFEST_FILE))?;
    let records: Vec<&CaptureRecord> = manifest
        .records
        .iter()
        .filter(|r| eval.split.includes(r.split) && r.error.is_none())
        .collect();
    let gts = match gt_override {
        Some(path) => {
            let keep: std::collections::HashSet<&str> = records.iter().map(|r| r.capture_id.as_str()).collect();
            coco_ground_truth(path)?
                .into_iter()
                .filter(|g| keep.contains(g.image.as_str()))
                .collect()
        }
        None => ground_truth(records.iter().copied()),
    };
    let det_dir = detections_dir.map(Path::to_path_buf).unwrap_or_else(|| dataset_dir.join(DETECTIONS_DIR));
    let mut dets: Vec<Detection> = Vec::new();
    let mut missing = 0;
    for r in &records {
        let path = det_dir.join(format!("{}.json", r.capture_id));
        if !path.exists() {
            missing += 1;
            continue;
        }
        let file = DetectionFile::read(&path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        if file.image != r.capture_id {
            return Err(CliError::Schema(format!(
                "{} names image {} but belongs to {}",
                path.display(),
                file.image,
                r.capture_id
            )));
        }
        dets.extend(file.to_eval());
    }
    let gains: Vec<f64> = records.iter().filter_map(|r| r.ris_gain_db).collect();
    Ok(DatasetEvaluation {
        dataset: dataset_dir.display().to_string(),
        pipeline: manifest.header.simulator.pipeline,
        images: records.len(),
        missing_detections: missing,
        mean_ris_gain_db: mean(&gains),
        mean_best_iou: mean(&best_match_ious(&dets, &gts)),
        report: map_range(&dets, &gts, &match_cfg),
    })
}

pub fn report_table(e: &DatasetEvaluation) -> String {
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "dataset {} (pipeline {}), {} images, {} without detections\n",
        e.dataset,
        e.pipeline.name(),
        e.images,
        e.missing_detections
    );
    out.push_str(&format!(
        "mean RIS gain {} dB, mean best-match IoU {}\n",
        fmt(e.mean_ris_gain_db),
        fmt(e.mean_best_iou)
    ));
    out.push_str("class        n_gt  n_det      AP50  AP50:95\n");
    for (class, c) in &e.report.classes {
        out.push_str(&format!(
            "{:<10} {:>6} {:>6} {:>9} {:>8}\n",
            class.name(),
            c.n_gt,
            c.n_det,
            fmt(c.ap50),
            fmt(c.ap_mean)
        ));
    }
    out.push_str(&format!(
        "mAP50 {}  mAP50:95 {}\n",
        fmt(e.report.map50),
        fmt(e.report.map)
    ));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutcome {
    pub evaluations: Vec<DatasetEvaluation>,
    /// Side-by-side table when an Off and an Optimized dataset were given.
    pub comparison: Option<String>,
}

/// Scores each dataset and writes `<dataset>/evaluation/{report.txt,
/// report.json, pr_curves.csv}`. With paired Off and Optimized datasets
/// the delta table goes to `<report_dir>/comparison.txt`.
pub fn cmd_evaluate(
    dataset_dirs: &[PathBuf],
    detections_dir: Option<&Path>,
    gt_override: Option<&Path>,
    eval: &EvaluationConfig,
    report_dir: &Path,
) -> Result<EvaluateOutcome> {
    if dataset_dirs.is_empty() {
        return Err(CliError::Config("no dataset directories given".into()));
    }
    if dataset_dirs.len() > 1 && (detections_dir.is_some() || gt_override.is_some()) {
        return Err(CliError::Config(
            "--detections and --gt apply to a single dataset".into(),
        ));
    }
    let mut evaluations = Vec::new();
    for dir in dataset_dirs {
        let e = evaluate_dataset(dir, detections_dir, gt_override, eval)?;
        let out = dir.join(EVALUATION_DIR);
        write_text(&out.join("report.txt"), &report_table(&e))?;
        write_json(&out.join("report.json"), &e)?;
        let csv = fs::File::create(out.join("pr_curves.csv"))?;
        write_pr_curves_csv(BufWriter::new(csv), &e.report)?;
        evaluations.push(e);
    }
    let comparison = comparison_table(&evaluations);
    if let Some(table) = &comparison {
        write_text(&report_dir.join("comparison.txt"), table)?;
    }
    Ok(EvaluateOutcome {
        evaluations,
        comparison,
    })
}

fn comparison_table(evaluations: &[DatasetEvaluation]) -> Option<String> {
    let find = |p: RisPipeline| evaluations.iter().find(|e| e.pipeline == p);
    let (off, opt) = (find(RisPipeline::Off)?, find(RisPipeline::Optimized)?);
    Some(ModeComparison::new("off", &off.report, "optimized", &opt.report).to_table())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub pipeline: RisPipeline,
    pub captures: usize,
    pub failed_captures: usize,
    pub detection_failures: usize,
    pub mean_ris_gain_db: Option<f64>,
    pub mean_best_iou: Option<f64>,
    pub map50: Option<f64>,
    pub map: Option<f64>,
    /// AP@0.5 per class name.
    pub ap50: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub master_seed: u64,
    pub evaluated_split: String,
    pub pipelines: Vec<PipelineSummary>,
    /// Optimized minus Off, when both ran.
    pub delta_map50: Option<f64>,
    pub delta_mean_best_iou: Option<f64>,
    pub comparison: Option<String>,
}

impl ExperimentSummary {
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let mut out = format!(
            "experiment summary (master seed {}, split {})\n",
            self.master_seed, self.evaluated_split
        );
        out.push_str("pipeline    captures failed  gain_db  best_iou    mAP50  mAP50:95\n");
        for p in &self.pipelines {
            out.push_str(&format!(
                "{:<10} {:>9} {:>6} {:>8} {:>9} {:>8} {:>9}\n",
                p.pipeline.name(),
                p.captures,
                p.failed_captures + p.detection_failures,
                fmt(p.mean_ris_gain_db),
                fmt(p.mean_best_iou),
                fmt(p.map50),
                fmt(p.map)
            ));
        }
        if self.delta_map50.is_some() || self.delta_mean_best_iou.is_some() {
            out.push_str(&format!(
                "optimized - off: mAP50 {}, best-match IoU {}\n",
                fmt(self.delta_map50),
                fmt(self.delta_mean_best_iou)
            ));
        }
        if let Some(table) = &self.comparison {
            out.push('\n');
            out.push_str(table);
        }
        out
    }
}

/// Generate, detect and evaluate every configured pipeline on the same
/// seeds, then write `<root>/summary.{txt,json}`. The summary holds no
/// timings or paths, so reruns reproduce it byte for byte.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<ExperimentSummary> {
    let mut evaluations = Vec::new();
    let mut summaries = Vec::new();
    for &pipeline in &cfg.experiment.pipelines {
        let generated = cmd_generate(cfg, pipeline)?;
        let detected = cmd_detect(&generated.dataset_dir, &cfg.detector, cfg.output.jobs)?;
        let e = evaluate_dataset(&generated.dataset_dir, None, None, &cfg.evaluation)?;
        let out = generated.dataset_dir.join(EVALUATION_DIR);
        write_text(&out.join("report.txt"), &report_table(&e))?;
        let csv = fs::File::create(out.join("pr_curves.csv"))?;
        write_pr_curves_csv(BufWriter::new(csv), &e.report)?;
        summaries.push(PipelineSummary {
            pipeline,
            captures: generated.train_images + generated.test_images,
            failed_captures: generated.failed,
            detection_failures: detected.failures.len(),
            mean_ris_gain_db: e.mean_ris_gain_db,
            mean_best_iou: e.mean_best_iou,
            map50: e.report.map50,
            map: e.report.map,
            ap50: e
                .report
                .classes
                .iter()
                .map(|(c, r)| (c.name().to_string(), r.ap50))
                .collect(),
        });
        evaluations.push(e);
    }
    let find = |p: RisPipeline| summaries.iter().find(|s| s.pipeline == p);
    let delta = |f: fn(&PipelineSummary) -> Option<f64>| match (find(RisPipeline::Off), find(RisPipeline::Optimized)) {
        (Some(off), Some(opt)) => Some(f(opt)? - f(off)?),
        _ => None,
    };
    let summary = ExperimentSummary {
        master_seed: cfg.scenario.master_seed,
        evaluated_split: format!("{:?}", cfg.evaluation.split).to_lowercase(),
        delta_map50: delta(|s| s.map50),
        delta_mean_best_iou: delta(|s| s.mean_best_iou),
        comparison: comparison_table(&evaluations),
        pipelines: summaries,
    };
    write_text(&cfg.output.root.join("summary.txt"), &summary.to_text())?;
    write_json(&cfg.output.root.join("summary.json"), &summary)?;
    Ok(summary)
}
