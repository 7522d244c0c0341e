//! COCO-style detection scoring: IoU, greedy per-class matching, 101-point
//! interpolated average precision and mAP over IoU 0.50:0.05:0.95.
//!
//! Matching is per image. Detections of one class are ranked across all
//! images by descending score; equal scores fall back to the lexicographic
//! order of the box, then the image id. Each detection takes the unmatched
//! ground truth with the highest IoU at or above the threshold, the lowest
//! ground-truth index winning IoU ties.

mod report;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrogram::PixelBox;
use crate::waveform::BoxClass;

pub use report::{write_pr_curves_csv, ModeComparison, ClassDelta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("AP is undefined for {0}: no ground truth")]
    UndefinedAp(BoxClass),
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image: String,
    pub class: BoxClass,
    pub score: f64,
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: String,
    pub class: BoxClass,
    pub bbox: PixelBox,
}

pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let w = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let h = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// For every ground truth of a signal class, the best IoU achieved by any
/// signal-class detection on the same image, regardless of label. Used to
/// compare localization quality between runs.
pub fn best_match_ious(dets: &[Detection], gts: &[GroundTruth]) -> Vec<f64> {
    let mut by_image: HashMap<&str, Vec<&PixelBox>> = HashMap::new();
    for d in dets.iter().filter(|d| d.class != BoxClass::Unoccupied) {
        by_image.entry(d.image.as_str()).or_default().push(&d.bbox);
    }
    gts.iter()
        .filter(|g| g.class != BoxClass::Unoccupied)
        .map(|g| {
            by_image
                .get(g.image.as_str())
                .map(|boxes| boxes.iter().map(|b| iou(b, &g.bbox)).fold(0.0, f64::max))
                .unwrap_or(0.0)
        })
        .collect()
}

/// Outcome of matching one class at one threshold. Vectors follow the
/// ranked detection order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub tp: Vec<bool>,
    pub fp: Vec<bool>,
    pub scores: Vec<f64>,
    /// Index into the input detection slice for each ranked detection.
    pub order: Vec<usize>,
    pub n_gt: usize,
}

fn rank(dets: &[Detection], class: BoxClass) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class == class).collect();
    idx.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then_with(|| da.bbox.lex_cmp(&db.bbox))
            .then_with(|| da.image.cmp(&db.image))
    });
    idx
}

pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    class: BoxClass,
    iou_thr: f64,
) -> MatchResult {
    let mut by_image: HashMap<&str, Vec<&PixelBox>> = HashMap::new();
    let mut n_gt = 0;
    for g in gts.iter().filter(|g| g.class == class) {
        by_image.entry(g.image.as_str()).or_default().push(&g.bbox);
        n_gt += 1;
    }
    let mut taken: HashMap<&str, Vec<bool>> = by_image
        .iter()
        .map(|(k, v)| (*k, vec![false; v.len()]))
        .collect();

    let order = rank(dets, class);
    let mut tp = Vec::with_capacity(order.len());
    for &i in &order {
        let det = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(candidates) = by_image.get(det.image.as_str()) {
            let used = &taken[det.image.as_str()];
            for (j, gt) in candidates.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let overlap = iou(&det.bbox, gt);
                if overlap < iou_thr {
                    continue;
                }
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((j, overlap));
                }
            }
        }
        match best {
            Some((j, _)) => {
                taken.get_mut(det.image.as_str()).unwrap()[j] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    MatchResult {
        fp: tp.iter().map(|t| !t).collect(),
        scores: order.iter().map(|&i| dets[i].score).collect(),
        tp,
        order,
        n_gt,
    }
}

/// `(precision, recall)` after each ranked detection.
pub fn pr_curve(m: &MatchResult) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    m.tp
        .iter()
        .map(|&hit| {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            let recall = if m.n_gt == 0 { 0.0 } else { tp as f64 / m.n_gt as f64 };
            (tp as f64 / (tp + fp) as f64, recall)
        })
        .collect()
}

pub const RECALL_POINTS: usize = 101;

/// Mean over `r ∈ {0, 0.01, …, 1}` of the best precision at recall ≥ r.
pub fn interpolated_ap(m: &MatchResult) -> Option<f64> {
    if m.n_gt == 0 {
        return None;
    }
    let curve = pr_curve(m);
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.0).collect();
    for i in (1..envelope.len()).rev() {
        envelope[i - 1] = envelope[i - 1].max(envelope[i]);
    }
    let sum: f64 = (0..RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / (RECALL_POINTS - 1) as f64;
            // First ranked position whose recall reaches r.
            let pos = curve.partition_point(|p| p.1 < r);
            envelope.get(pos).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / RECALL_POINTS as f64)
}

pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    class: BoxClass,
    iou_thr: f64,
) -> Result<f64, EvalError> {
    interpolated_ap(&match_detections(dets, gts, class, iou_thr))
        .ok_or(EvalError::UndefinedAp(class))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub iou_thresholds: Vec<f64>,
}

/// `0.50, 0.55, …, 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_thresholds(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::InvalidConfig("no IoU thresholds".into()));
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(EvalError::InvalidConfig("thresholds must lie in (0, 1]".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EvalError::InvalidConfig("thresholds must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub n_gt: usize,
    pub n_det: usize,
    /// AP at each configured threshold; `None` when the class has no ground truth.
    pub ap: Vec<Option<f64>>,
    pub ap50: Option<f64>,
    /// Mean AP over the configured thresholds.
    pub ap_mean: Option<f64>,
    /// `(precision, recall)` at IoU 0.5.
    pub pr_curve50: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub iou_thresholds: Vec<f64>,
    pub classes: BTreeMap<BoxClass, ClassReport>,
    /// Mean over thresholds and over classes that have ground truth.
    pub map: Option<f64>,
    /// Mean AP@0.5 over classes that have ground truth.
    pub map50: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn map_range(dets: &[Detection], gts: &[GroundTruth], cfg: &MatchConfig) -> ApReport {
    let mut classes = BTreeMap::new();
    for class in BoxClass::ALL {
        let n_gt = gts.iter().filter(|g| g.class == class).count();
        let n_det = dets.iter().filter(|d| d.class == class).count();
        if n_gt == 0 && n_det == 0 {
            continue;
        }
        let ap: Vec<Option<f64>> = cfg
            .iou_thresholds
            .iter()
            .map(|&t| interpolated_ap(&match_detections(dets, gts, class, t)))
            .collect();
        let at50 = match_detections(dets, gts, class, 0.5);
        classes.insert(
            class,
            ClassReport {
                n_gt,
                n_det,
                ap_mean: if n_gt == 0 { None } else { mean(ap.iter().flatten().copied()) },
                ap,
                ap50: interpolated_ap(&at50),
                pr_curve50: pr_curve(&at50),
            },
        );
    }
    let map = mean(classes.values().filter_map(|c| c.ap_mean));
    let map50 = mean(classes.values().filter_map(|c| c.ap50));
    ApReport {
        iou_thresholds: cfg.iou_thresholds.clone(),
        classes,
        map,
        map50,
    }
}
