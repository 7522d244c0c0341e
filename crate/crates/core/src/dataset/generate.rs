//! Parallel corpus generation and the dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::export::{export_coco, export_yolo};
use super::{
    sample_scenario, CaptureData, CaptureParams, DatasetError, Result, RisPipeline, Scenario,
    Simulator, Split,
};
use crate::eval::GroundTruth;
use crate::iq::write_iq;
use crate::spectrogram::{save_jpeg, save_png, PixelBox, IMAGE_SIZE};
use crate::waveform::{BoxClass, GroundTruthBox};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const AXIS_CONVENTION: &str = "x=time, y=frequency, y=0 is the lowest frequency";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub class: BoxClass,
    pub pixel: PixelBox,
    pub physical: GroundTruthBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub capture_id: String,
    pub scenario: Scenario,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub ris_mode: RisPipeline,
    /// Absent when sampling itself failed.
    pub params: Option<CaptureParams>,
    /// Relative to the dataset root; absent when generation failed.
    pub image_path: Option<String>,
    pub iq_path: Option<String>,
    pub boxes: Vec<LabeledBox>,
    pub ris_gain_db: Option<f64>,
    pub error: Option<String>,
}

/// Settings every record shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub simulator: Simulator,
    pub image_size: usize,
    pub axis_convention: String,
    pub image_format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    /// Sorted by capture id.
    pub records: Vec<CaptureRecord>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaptureRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Manifest boxes as evaluation ground truth, keyed by capture id.
pub fn ground_truth<'a>(records: impl IntoIterator<Item = &'a CaptureRecord>) -> Vec<GroundTruth> {
    records
        .into_iter()
        .filter(|r| r.error.is_none())
        .flat_map(|r| {
            r.boxes.iter().map(|b| GroundTruth {
                image: r.capture_id.clone(),
                class: b.class,
                bbox: b.pixel,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOptions {
    pub out_dir: PathBuf,
    pub save_iq: bool,
    /// Also write a JPEG next to every PNG.
    pub jpeg_quality: Option<u8>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

fn record_for(sim: &Simulator, scenario: Scenario, index: usize, params: Option<&CaptureParams>) -> CaptureRecord {
    let cfg = &sim.scenario;
    CaptureRecord {
        capture_id: sim.capture_id(scenario, cfg.split_of(index), index),
        scenario,
        split: cfg.split_of(index),
        index,
        seed: super::capture_seed(cfg.master_seed, scenario, index),
        ris_mode: sim.pipeline,
        params: params.cloned(),
        image_path: None,
        iq_path: None,
        boxes: Vec::new(),
        ris_gain_db: None,
        error: None,
    }
}

fn write_capture(
    sim: &Simulator,
    data: &CaptureData,
    record: &mut CaptureRecord,
    opts: &GenerationOptions,
) -> Result<()> {
    let split = record.split.name();
    let image_rel = format!("images/{split}/{}.png", record.capture_id);
    save_png(&data.image, &opts.out_dir.join(&image_rel))?;
    if let Some(q) = opts.jpeg_quality {
        let jpg = format!("images/{split}/{}.jpg", record.capture_id);
        save_jpeg(&data.image, &opts.out_dir.join(jpg), q)?;
    }
    if opts.save_iq {
        let iq_rel = format!("iq/{split}/{}.cf32", record.capture_id);
        write_iq(&opts.out_dir.join(&iq_rel), &data.received, record.seed)?;
        record.iq_path = Some(iq_rel);
    }
    record.image_path = Some(image_rel);
    record.boxes = data
        .boxes
        .iter()
        .zip(&data.pixel_boxes)
        .map(|(b, p)| LabeledBox {
            class: b.class,
            pixel: *p,
            physical: *b,
        })
        .collect();
    record.ris_gain_db = (sim.pipeline != RisPipeline::Ideal).then_some(data.ris_gain_db);
    Ok(())
}

/// [`generate_dataset_with`] without a per-capture hook.
pub fn generate_dataset(sim: &Simulator, opts: &GenerationOptions) -> Result<DatasetManifest> {
    Ok(generate_dataset_with(sim, opts, |_, _| ())?.0)
}

/// Generates every capture of every scenario, writes images, labels,
/// annotations and the manifest under `opts.out_dir`, and returns the
/// manifest with one hook result per successful capture (in manifest
/// order). Generation errors are recorded on the capture; I/O errors abort.
pub fn generate_dataset_with<T, F>(
    sim: &Simulator,
    opts: &GenerationOptions,
    hook: F,
) -> Result<(DatasetManifest, Vec<(String, T)>)>
where
    T: Send,
    F: Fn(&CaptureRecord, &CaptureData) -> T + Sync,
{
    sim.validate()?;
    for split in [Split::Train, Split::Test] {
        fs::create_dir_all(opts.out_dir.join("images").join(split.name()))?;
        fs::create_dir_all(opts.out_dir.join("labels_yolo").join(split.name()))?;
        if opts.save_iq {
            fs::create_dir_all(opts.out_dir.join("iq").join(split.name()))?;
        }
    }

    let cfg = &sim.scenario;
    let jobs: Vec<(Scenario, usize)> = cfg
        .scenarios
        .iter()
        .flat_map(|&s| (0..cfg.captures_per_scenario()).map(move |i| (s, i)))
        .collect();

    let run_one = |&(scenario, index): &(Scenario, usize)| -> Result<(CaptureRecord, Option<T>)> {
        let params = match sample_scenario(cfg, scenario, index) {
            Ok(p) => p,
            Err(e) => {
                let mut record = record_for(sim, scenario, index, None);
                record.error = Some(e.to_string());
                return Ok((record, None));
            }
        };
        let mut record = record_for(sim, scenario, index, Some(&params));
        match sim.simulate(&params) {
            Ok(data) => {
                write_capture(sim, &data, &mut record, opts)?;
                let out = hook(&record, &data);
                Ok((record, Some(out)))
            }
            Err(DatasetError::Io(e)) => Err(DatasetError::Io(e)),
            Err(e) => {
                record.error = Some(e.to_string());
                Ok((record, None))
            }
        }
    };

    let results: Vec<Result<(CaptureRecord, Option<T>)>> = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| DatasetError::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| jobs.par_iter().map(run_one).collect()),
        None => jobs.par_iter().map(run_one).collect(),
    };

    let mut pairs = results.into_iter().collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|a, b| a.0.capture_id.cmp(&b.0.capture_id));
    let mut records = Vec::with_capacity(pairs.len());
    let mut outputs = Vec::new();
    for (record, out) in pairs {
        if let Some(out) = out {
            outputs.push((record.capture_id.clone(), out));
        }
        records.push(record);
    }

    let manifest = DatasetManifest {
        header: ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            simulator: sim.clone(),
            image_size: IMAGE_SIZE,
            axis_convention: AXIS_CONVENTION.into(),
            image_format: "png".into(),
        },
        records,
    };
    for split in [Split::Train, Split::Test] {
        export_coco(&manifest, split, &opts.out_dir.join(format!("annotations_{}.json", split.name())))?;
        export_yolo(&manifest, split, &opts.out_dir.join("labels_yolo").join(split.name()))?;
    }
    manifest.write(&opts.out_dir.join(MANIFEST_FILE))?;
    Ok((manifest, outputs))
}
