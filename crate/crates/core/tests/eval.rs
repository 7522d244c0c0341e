//! Scorer checks against a second, independently written COCO-style scorer.

use proptest::prelude::*;
use risense::dataset::{sample_scenario, Scenario, ScenarioConfig, Simulator};
use risense::detector::{detect, CaptureView, DetectionFile, DetectorParams};
use risense::eval::{
    average_precision, coco_thresholds, iou, map_range, Detection, GroundTruth, MatchConfig,
};
use risense::spectrogram::{PixelBox, StftParams};
use risense::waveform::BoxClass;

/// Reference AP: rank by score (ties by box then image), match greedily to
/// the best unmatched same-image ground truth, then average the precision
/// envelope over the 101 recall points using integer recall comparisons.
fn reference_ap(dets: &[Detection], gts: &[GroundTruth], class: BoxClass, thr: f64) -> Option<f64> {
    let gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class == class).collect();
    if gts.is_empty() {
        return None;
    }
    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.bbox.x0.partial_cmp(&b.bbox.x0).unwrap())
            .then(a.bbox.y0.partial_cmp(&b.bbox.y0).unwrap())
            .then(a.bbox.x1.partial_cmp(&b.bbox.x1).unwrap())
            .then(a.bbox.y1.partial_cmp(&b.bbox.y1).unwrap())
            .then(a.image.cmp(&b.image))
    });
    let mut used = vec![false; gts.len()];
    let mut points = Vec::new(); // (tp, seen)
    let mut tp = 0usize;
    for (seen, d) in ranked.iter().enumerate() {
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.image != d.image {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox);
            if v >= thr && v > best_iou {
                best = Some(j);
                best_iou = v;
            }
        }
        if let Some(j) = best {
            used[j] = true;
            tp += 1;
        }
        points.push((tp, seen + 1));
    }
    let n = gts.len();
    let total: f64 = (0..=100usize)
        .map(|k| {
            points
                .iter()
                .filter(|(tp, _)| tp * 100 >= k * n)
                .map(|(tp, seen)| *tp as f64 / *seen as f64)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(total / 101.0)
}

fn reference_map(dets: &[Detection], gts: &[GroundTruth], thresholds: &[f64]) -> Option<f64> {
    let per_class: Vec<f64> = BoxClass::ALL
        .iter()
        .filter_map(|&c| {
            let aps: Option<Vec<f64>> = thresholds.iter().map(|&t| reference_ap(dets, gts, c, t)).collect();
            aps.map(|a| a.iter().sum::<f64>() / a.len() as f64)
        })
        .collect();
    (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
}

fn det(image: &str, score: f64, b: PixelBox) -> Detection {
    Detection { image: image.into(), class: BoxClass::Lte, score, bbox: b }
}

fn gt(image: &str, b: PixelBox) -> GroundTruth {
    GroundTruth { image: image.into(), class: BoxClass::Lte, bbox: b }
}

#[test]
fn hand_computed_fixture() {
    let a = PixelBox::new(0.0, 0.0, 10.0, 10.0);
    let b = PixelBox::new(20.0, 20.0, 30.0, 30.0);
    let miss = PixelBox::new(100.0, 100.0, 110.0, 110.0);
    let dets = [det("i", 0.9, a), det("i", 0.8, miss), det("i", 0.7, b)];
    let gts = [gt("i", a), gt("i", b)];
    // PR points (1, 0.5), (0.5, 0.5), (2/3, 1): recall levels 0..0.5 see
    // precision 1, levels 0.51..1 see 2/3.
    let expected = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    let got = average_precision(&dets, &gts, BoxClass::Lte, 0.5).unwrap();
    assert!((got - expected).abs() <= 1e-9, "{got}");
    assert!((got - reference_ap(&dets, &gts, BoxClass::Lte, 0.5).unwrap()).abs() <= 1e-12);
    assert!((got - 0.8351).abs() < 1e-3);
}

#[test]
fn threshold_set_is_exact() {
    let t = coco_thresholds();
    assert_eq!(t, vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]);
    assert_eq!(MatchConfig::default().iou_thresholds, t);
}

/// Twelve simulated captures scored by both implementations.
#[test]
fn generated_fixture_matches_reference_scorer() {
    let sim = Simulator {
        scenario: ScenarioConfig {
            capture_rate_hz: 15e6,
            capture_duration_s: 0.004,
            lte_bandwidths_mhz: vec![5.0],
            nr_bandwidths_mhz: vec![5.0],
            n_train: 2,
            n_test: 2,
            snr_grid_db: vec![0.0, 10.0],
            ..Default::default()
        },
        stft: StftParams { window_len: 1024, fft_size: 1024, ..Default::default() },
        ..Default::default()
    };
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for scenario in Scenario::OCCUPIED {
        for index in 0..4 {
            let data = sim.simulate(&sample_scenario(&sim.scenario, scenario, index).unwrap()).unwrap();
            let id = sim.capture_id(scenario, data.params.split, index);
            let found = detect(CaptureView::Matrix(&data.spectrogram), Some(&data.received), &DetectorParams::default()).unwrap();
            dets.extend(DetectionFile { image: id.clone(), detections: found }.to_eval());
            gts.extend(data.boxes.iter().zip(&data.pixel_boxes).map(|(b, p)| GroundTruth { image: id.clone(), class: b.class, bbox: *p }));
        }
    }
    assert_eq!(gts.iter().map(|g| &g.image).collect::<std::collections::BTreeSet<_>>().len(), 12);
    let cfg = MatchConfig::default();
    let report = map_range(&dets, &gts, &cfg);
    let reference = reference_map(&dets, &gts, &cfg.iou_thresholds).unwrap();
    assert!((report.map.unwrap() - reference).abs() <= 1e-9, "{:?} vs {reference}", report.map);
    for (class, c) in &report.classes {
        let r = reference_ap(&dets, &gts, *class, 0.5);
        assert_eq!(c.ap50.is_some(), r.is_some());
        if let (Some(a), Some(b)) = (c.ap50, r) {
            assert!((a - b).abs() <= 1e-9, "{class:?}");
        }
    }
}

#[test]
fn perfect_and_empty_detectors() {
    let gts: Vec<GroundTruth> = (0..5).map(|i| gt(&format!("im{i}"), PixelBox::new(i as f64, 0.0, i as f64 + 20.0, 30.0))).collect();
    let perfect: Vec<Detection> = gts.iter().map(|g| det(&g.image, 0.5, g.bbox)).collect();
    assert_eq!(map_range(&perfect, &gts, &MatchConfig::default()).map, Some(1.0));
    assert_eq!(map_range(&[], &gts, &MatchConfig::default()).map, Some(0.0));
}

/// Random fixture: a few images with ground truth, detections that jitter
/// around ground truth boxes, plus stray boxes.
fn fixture() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruth>)> {
    let gt_box = (0.0..200.0f64, 0.0..200.0f64, 5.0..50.0f64, 5.0..50.0f64)
        .prop_map(|(x, y, w, h)| PixelBox::new(x, y, x + w, y + h));
    let gts = prop::collection::vec((0..3usize, gt_box), 1..8);
    gts.prop_flat_map(|gts| {
        let n = gts.len();
        let jitter = prop::collection::vec(
            (0..n, -8.0..8.0f64, -8.0..8.0f64, -8.0..8.0f64, -8.0..8.0f64, 1..1000u32),
            0..12,
        );
        let strays = prop::collection::vec((0..3usize, 0.0..240.0f64, 0.0..240.0f64, 1..1000u32), 0..4);
        (Just(gts), jitter, strays)
    })
    .prop_map(|(gts, jitter, strays)| {
        let name = |i: usize| format!("img{i}");
        let mut dets: Vec<Detection> = jitter
            .into_iter()
            .map(|(j, a, b, c, d, s)| {
                let g = gts[j].1;
                let bbox = PixelBox::new(g.x0 + a, g.y0 + b, (g.x1 + c).max(g.x0 + a + 1.0), (g.y1 + d).max(g.y0 + b + 1.0));
                det(&name(gts[j].0), s as f64 / 1000.0, bbox)
            })
            .collect();
        dets.extend(strays.into_iter().map(|(i, x, y, s)| det(&name(i), s as f64 / 1000.0, PixelBox::new(x, y, x + 10.0, y + 10.0))));
        let gts = gts.into_iter().map(|(i, b)| gt(&name(i), b)).collect();
        (dets, gts)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ap_is_non_increasing_in_threshold((dets, gts) in fixture()) {
        let aps: Vec<f64> = coco_thresholds()
            .iter()
            .map(|&t| average_precision(&dets, &gts, BoxClass::Lte, t).unwrap())
            .collect();
        for w in aps.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{aps:?}");
        }
    }

    #[test]
    fn ap_depends_only_on_score_order((dets, gts) in fixture(), which in 0..3usize) {
        let f = |s: f64| match which {
            0 => 3.0 * s + 7.0,
            1 => s * s * s,
            _ => (5.0 * s).exp(),
        };
        let moved: Vec<Detection> = dets.iter().map(|d| Detection { score: f(d.score), ..d.clone() }).collect();
        let cfg = MatchConfig::default();
        prop_assert_eq!(map_range(&dets, &gts, &cfg).map, map_range(&moved, &gts, &cfg).map);
    }

    #[test]
    fn low_scored_duplicate_never_helps((dets, gts) in fixture(), pick in any::<prop::sample::Index>()) {
        prop_assume!(!dets.is_empty());
        let base = average_precision(&dets, &gts, BoxClass::Lte, 0.5).unwrap();
        let src = &dets[pick.index(dets.len())];
        let mut more = dets.clone();
        more.push(Detection { score: 0.0, ..src.clone() });
        let after = average_precision(&more, &gts, BoxClass::Lte, 0.5).unwrap();
        prop_assert!(after <= base + 1e-12);
    }

    #[test]
    fn matches_reference_on_random_fixtures((dets, gts) in fixture()) {
        for t in coco_thresholds() {
            let a = average_precision(&dets, &gts, BoxClass::Lte, t).unwrap();
            let b = reference_ap(&dets, &gts, BoxClass::Lte, t).unwrap();
            prop_assert!((a - b).abs() <= 1e-12, "thr {t}: {a} vs {b}");
        }
    }
}

#[test]
fn matching_ignores_other_images() {
    let b = PixelBox::new(0.0, 0.0, 10.0, 10.0);
    let dets = [det("a", 0.9, b)];
    let gts = [gt("b", b)];
    assert_eq!(average_precision(&dets, &gts, BoxClass::Lte, 0.5).unwrap(), 0.0);
}
