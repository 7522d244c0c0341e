//! Baseline detector on simulated captures.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use risense::dataset::{sample_scenario, RisPipeline, Scenario, ScenarioConfig, Simulator};
use risense::detector::{
    detect, estimate_noise_floor, grid_noise_floor, CaptureView, DetectionFile, DetectorError,
    DetectorParams,
};
use risense::eval::iou;
use risense::spectrogram::{db_grid, hann, stft, StftParams, IMAGE_SIZE};
use risense::waveform::{BoxClass, IqFrame};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn white_noise(len: usize, variance: f64, seed: u64) -> IqFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (variance / 2.0).sqrt();
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    IqFrame {
        samples: (0..len).map(|_| Complex64::new(s * draw(), s * draw())).collect(),
        sample_rate_hz: 60e6,
        t0_s: 0.0,
    }
}

/// For complex white noise every STFT cell is exponential with mean
/// `σ²·Σw²/(Σw)²`: its median sits `10·log10(ln 2)` above the mean in dB
/// and the average of its dB values sits `10·γ/ln 10` below.
#[test]
fn noise_floor_matches_exponential_statistics() {
    let variance = 1e-4;
    let x = white_noise(2_400_000, variance, 11);
    let p = StftParams::default();
    let w = hann(p.window_len);
    let mean = variance * w.iter().map(|v| v * v).sum::<f64>() / w.iter().sum::<f64>().powi(2);
    let mean_db = 10.0 * mean.log10();
    let spec = stft(&x, &p).unwrap();

    let median = estimate_noise_floor(&spec).unwrap();
    let expected_median = mean_db + 10.0 * std::f64::consts::LN_2.log10();
    assert!((median - expected_median).abs() < 0.05, "{median} vs {expected_median}");

    let grid = db_grid(&spec, IMAGE_SIZE).unwrap();
    let expected_log_mean = mean_db - 10.0 * EULER_GAMMA / std::f64::consts::LN_10;
    let floor = grid_noise_floor(&grid, 0.5);
    assert!((floor - expected_log_mean).abs() < 0.1, "{floor} vs {expected_log_mean}");
    // The low quantile used for thresholding stays within a dB of it.
    let low = grid_noise_floor(&grid, DetectorParams::default().floor_quantile);
    assert!(low <= floor && floor - low < 1.0, "{low}");
}

fn sim(pipeline: RisPipeline, snr_db: f64) -> Simulator {
    Simulator {
        scenario: ScenarioConfig {
            scenarios: vec![Scenario::LteOnly, Scenario::NrOnly, Scenario::Both, Scenario::Idle],
            capture_rate_hz: 30.72e6,
            capture_duration_s: 0.01,
            lte_bandwidths_mhz: vec![5.0, 10.0],
            nr_bandwidths_mhz: vec![10.0, 15.0],
            snr_grid_db: vec![snr_db],
            n_train: 4,
            n_test: 2,
            master_seed: 3,
            ..Default::default()
        },
        stft: StftParams { window_len: 2048, fft_size: 2048, ..Default::default() },
        pipeline,
        ..Default::default()
    }
}

#[test]
fn idle_captures_give_only_unoccupied_boxes() {
    for pipeline in [RisPipeline::Ideal, RisPipeline::Off, RisPipeline::Optimized] {
        let s = sim(pipeline, 0.0);
        for index in 0..6 {
            let data = s.simulate(&sample_scenario(&s.scenario, Scenario::Idle, index).unwrap()).unwrap();
            let dets = detect(CaptureView::Matrix(&data.spectrogram), Some(&data.received), &DetectorParams::default()).unwrap();
            assert!(!dets.is_empty());
            assert!(dets.iter().all(|d| d.class == BoxClass::Unoccupied), "{pipeline:?} {index}: {dets:?}");
        }
    }
}

#[test]
fn high_snr_signals_are_found_and_classified() {
    let s = sim(RisPipeline::Ideal, 50.0);
    let params = DetectorParams::default();
    for scenario in Scenario::OCCUPIED {
        for index in 0..6 {
            let data = s.simulate(&sample_scenario(&s.scenario, scenario, index).unwrap()).unwrap();
            let dets = detect(CaptureView::Matrix(&data.spectrogram), Some(&data.received), &params).unwrap();
            for (gt, px) in data.boxes.iter().zip(&data.pixel_boxes) {
                if gt.class == BoxClass::Unoccupied {
                    continue;
                }
                let best = dets
                    .iter()
                    .filter(|d| d.class != BoxClass::Unoccupied)
                    .max_by(|a, b| iou(&a.bbox, px).total_cmp(&iou(&b.bbox, px)))
                    .expect("a signal detection");
                assert!(iou(&best.bbox, px) >= 0.5, "{scenario:?} {index}");
                assert_eq!(best.class, gt.class, "{scenario:?} {index}");
            }
        }
    }
}

#[test]
fn image_view_agrees_with_matrix_view() {
    let s = sim(RisPipeline::Ideal, 20.0);
    let params = DetectorParams::default();
    let data = s.simulate(&sample_scenario(&s.scenario, Scenario::Both, 1).unwrap()).unwrap();
    let from_matrix = detect(CaptureView::Matrix(&data.spectrogram), Some(&data.received), &params).unwrap();
    let view = CaptureView::Image { image: &data.image, db_range: s.db_range, geometry: s.geometry() };
    let from_image = detect(view, Some(&data.received), &params).unwrap();
    let signals = |d: &[risense::detector::DetectionBox]| d.iter().filter(|b| b.class != BoxClass::Unoccupied).map(|b| (b.class, b.bbox)).collect::<Vec<_>>();
    let (a, b) = (signals(&from_matrix), signals(&from_image));
    assert_eq!(a.len(), b.len());
    for ((ca, ba), (cb, bb)) in a.iter().zip(&b) {
        assert_eq!(ca, cb);
        assert!(iou(ba, bb) > 0.9);
    }
}

#[test]
fn detection_is_deterministic_and_files_round_trip() {
    let s = sim(RisPipeline::Off, 10.0);
    let data = s.simulate(&sample_scenario(&s.scenario, Scenario::NrOnly, 2).unwrap()).unwrap();
    let params = DetectorParams::default();
    let a = detect(CaptureView::Matrix(&data.spectrogram), Some(&data.received), &params).unwrap();
    let b = detect(CaptureView::Matrix(&data.spectrogram), Some(&data.received), &params).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    let file = DetectionFile { image: "x".into(), detections: a };
    file.write(&path).unwrap();
    assert_eq!(DetectionFile::read(&path).unwrap(), file);
    assert_eq!(file.to_eval().len(), file.detections.len());
}

#[test]
fn invalid_params_are_rejected() {
    let bad = [
        DetectorParams { morphology_kernel_px: 4, ..Default::default() },
        DetectorParams { threshold_offset_db: 0.0, ..Default::default() },
        DetectorParams { floor_quantile: 1.5, ..Default::default() },
    ];
    for p in bad {
        assert!(matches!(p.validate(), Err(DetectorError::InvalidParams(_))));
    }
}
