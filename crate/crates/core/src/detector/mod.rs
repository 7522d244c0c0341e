//! Classical baseline detector.
//!
//! The spectrogram is area-averaged to the 256×256 image grid, thresholded a
//! fixed offset above the noise floor, cleaned with one open-then-close pass
//! and split into 4-connected components. Each component's bounding box is a
//! signal detection, classified LTE or NR from the cyclic-prefix lag and the
//! occupied bandwidth when IQ samples are available. The frequency
//! complement of the signal boxes is reported as unoccupied.

mod boxes;
mod classify;

use std::fs;
use std::io;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Detection;
use crate::spectrogram::{
    db_grid, grid_from_image, CaptureGeometry, Grid, PixelBox, SpectrogramError, SpectrogramMatrix,
    IMAGE_SIZE,
};
use crate::waveform::{BoxClass, IqFrame};

pub use boxes::{extract_from_grid, grid_noise_floor, Extraction, Mask};
pub use classify::{
    bandwidth_grid_hz, classify_band, classify_by_occupancy, ideal_cp_correlation,
    nearest_grid_bandwidth, normalized_autocorrelation, ClassDecision, CANDIDATE_SCS_HZ,
    MIN_SUBCARRIERS,
};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
    #[error("spectrogram is empty")]
    Empty,
    #[error("band of {width_hz} Hz is narrower than the {min_hz} Hz needed for classification")]
    BandTooNarrow { width_hz: f64, min_hz: f64 },
    #[error(transparent)]
    Spectrogram(#[from] SpectrogramError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed detection file: {0}")]
    Format(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DetectorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Threshold above the estimated noise floor.
    pub threshold_offset_db: f64,
    /// Components with fewer cells are dropped.
    pub min_box_area_px: usize,
    /// Side of the square structuring element; odd.
    pub morphology_kernel_px: usize,
    /// Occupancy ratio separating LTE (below) from NR.
    pub occupancy_split: f64,
    /// Quantile of the per-frequency-row medians used as the noise floor.
    pub floor_quantile: f64,
    /// Components overlapping in frequency by this fraction of the shorter
    /// one are merged.
    pub merge_overlap: f64,
    /// Box edges are pulled in to rows no more than this far below the
    /// component's strongest row.
    pub edge_drop_db: f64,
    /// Unoccupied gaps narrower than this are not reported.
    pub min_unoccupied_px: f64,
    /// Upper bound on the IQ samples used per classified box.
    pub max_classify_samples: usize,
    /// Classification scores below this are flagged low-confidence.
    pub low_confidence_score: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            threshold_offset_db: 8.0,
            min_box_area_px: 16,
            morphology_kernel_px: 3,
            occupancy_split: 0.935,
            floor_quantile: 0.02,
            merge_overlap: 0.5,
            edge_drop_db: 10.0,
            min_unoccupied_px: 1.0,
            max_classify_samples: 1 << 19,
            low_confidence_score: 0.2,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DetectorError::InvalidParams(msg));
        if !(self.threshold_offset_db > 0.0 && self.threshold_offset_db.is_finite()) {
            return bad(format!(
                "threshold_offset_db must be positive, got {}",
                self.threshold_offset_db
            ));
        }
        if self.morphology_kernel_px.is_multiple_of(2) {
            return bad(format!(
                "morphology_kernel_px must be odd, got {}",
                self.morphology_kernel_px
            ));
        }
        if !(self.occupancy_split > 0.0 && self.occupancy_split <= 1.0) {
            return bad(format!("occupancy_split {} outside (0, 1]", self.occupancy_split));
        }
        if !(0.0..=1.0).contains(&self.floor_quantile) {
            return bad(format!("floor_quantile {} outside [0, 1]", self.floor_quantile));
        }
        if !(self.merge_overlap > 0.0 && self.merge_overlap <= 1.0) {
            return bad(format!("merge_overlap {} outside (0, 1]", self.merge_overlap));
        }
        if self.edge_drop_db.is_nan() || self.edge_drop_db <= 0.0 {
            return bad(format!("edge_drop_db must be positive, got {}", self.edge_drop_db));
        }
        if !(self.min_unoccupied_px >= 0.0 && self.min_unoccupied_px.is_finite()) {
            return bad(format!("min_unoccupied_px {} is negative", self.min_unoccupied_px));
        }
        if self.max_classify_samples < 2 {
            return bad("max_classify_samples must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub bbox: PixelBox,
    pub class: BoxClass,
    pub score: f64,
    /// Subcarrier spacing found by the CP lag test, if it ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scs_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence: bool,
}

/// Median of all dB cells, taking the lower central order statistic for
/// even counts.
pub fn estimate_noise_floor(spec: &SpectrogramMatrix) -> Result<f64> {
    if spec.is_empty() {
        return Err(DetectorError::Empty);
    }
    let mut values = spec.values_db.clone();
    Ok(boxes::lower_median(&mut values))
}

/// Signal boxes of a spectrogram in 256×256 pixel space, frequency-ordered.
pub fn extract_boxes(spec: &SpectrogramMatrix, params: &DetectorParams) -> Result<Vec<(PixelBox, f64)>> {
    let grid = db_grid(spec, IMAGE_SIZE)?;
    Ok(extract_from_grid(&grid, params, IMAGE_SIZE)?.boxes)
}

/// What the detector looks at.
#[derive(Debug, Clone, Copy)]
pub enum CaptureView<'a> {
    Matrix(&'a SpectrogramMatrix),
    /// A rendered image, decoded back to dB through the colormap.
    Image {
        image: &'a RgbImage,
        db_range: (f64, f64),
        geometry: CaptureGeometry,
    },
}

impl CaptureView<'_> {
    fn grid(&self) -> Result<Grid> {
        match self {
            CaptureView::Matrix(spec) => Ok(db_grid(spec, IMAGE_SIZE)?),
            CaptureView::Image { image, db_range, .. } => Ok(grid_from_image(image, *db_range)?),
        }
    }

    fn geometry(&self) -> CaptureGeometry {
        match self {
            CaptureView::Matrix(spec) => spec.geometry(),
            CaptureView::Image { geometry, .. } => *geometry,
        }
    }
}

/// Full detection: signal boxes with classes, then unoccupied gaps.
///
/// Boxes too narrow for the CP test are dropped and fall into the
/// unoccupied complement. Output is ordered by `(y0, x0)`.
pub fn detect(view: CaptureView<'_>, iq: Option<&IqFrame>, params: &DetectorParams) -> Result<Vec<DetectionBox>> {
    let grid = view.grid()?;
    if grid.values.is_empty() {
        return Err(DetectorError::Empty);
    }
    let geometry = view.geometry();
    let extraction = extract_from_grid(&grid, params, IMAGE_SIZE)?;

    let mut out = Vec::new();
    for (bbox, box_score) in &extraction.boxes {
        let decision = match iq {
            Some(iq) => match classify_band(iq, bbox, &geometry, IMAGE_SIZE, params) {
                Ok(d) => d,
                Err(DetectorError::BandTooNarrow { .. }) => continue,
                Err(e) => return Err(e),
            },
            None => {
                let d = classify_by_occupancy(bbox, *box_score, &geometry, IMAGE_SIZE, params);
                if d.occupied_bandwidth_hz < MIN_SUBCARRIERS as f64 * crate::waveform::LTE_SCS_HZ {
                    continue;
                }
                d
            }
        };
        out.push(DetectionBox {
            bbox: *bbox,
            class: decision.class,
            score: decision.score,
            scs_hz: decision.scs_hz,
            low_confidence: decision.low_confidence,
        });
    }

    let signal: Vec<PixelBox> = out.iter().map(|d| d.bbox).collect();
    out.extend(unoccupied_detections(&signal, &extraction.mask, params.min_unoccupied_px));
    out.sort_by(|a, b| a.bbox.y0.total_cmp(&b.bbox.y0).then(a.bbox.x0.total_cmp(&b.bbox.x0)));
    Ok(out)
}

/// Frequency gaps between signal boxes, spanning the full time axis. Each
/// is scored `1 −` the largest fraction of its rows that the mask covers in
/// any one time column.
pub fn unoccupied_detections(signal: &[PixelBox], mask: &Mask, min_width_px: f64) -> Vec<DetectionBox> {
    let size = IMAGE_SIZE as f64;
    let mut spans: Vec<(f64, f64)> = signal.iter().map(|b| (b.y0.max(0.0), b.y1.min(size))).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gaps = Vec::new();
    let mut cursor = 0.0;
    for (lo, hi) in spans {
        if lo > cursor {
            gaps.push((cursor, lo));
        }
        cursor = f64::max(cursor, hi);
    }
    if cursor < size {
        gaps.push((cursor, size));
    }

    let sy = mask.height as f64 / size;
    gaps.into_iter()
        .filter(|(lo, hi)| hi - lo >= min_width_px)
        .map(|(y0, y1)| {
            let r0 = ((y0 * sy).floor() as usize).min(mask.height);
            let r1 = ((y1 * sy).ceil() as usize).clamp(r0, mask.height);
            let rows = (r1 - r0).max(1) as f64;
            let worst = (0..mask.width)
                .map(|x| (r0..r1).filter(|&y| mask.at(x, y)).count() as f64 / rows)
                .fold(0.0, f64::max);
            DetectionBox {
                bbox: PixelBox::new(0.0, y0, size, y1),
                class: BoxClass::Unoccupied,
                score: 1.0 - worst,
                scs_hz: None,
                low_confidence: false,
            }
        })
        .collect()
}

/// Per-capture detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    /// Image identifier, matching the manifest's capture id.
    pub image: String,
    pub detections: Vec<DetectionBox>,
}

impl DetectionFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_eval(&self) -> Vec<Detection> {
        self.detections
            .iter()
            .map(|d| Detection {
                image: self.image.clone(),
                class: d.class,
                score: d.score,
                bbox: d.bbox,
            })
            .collect()
    }
}
