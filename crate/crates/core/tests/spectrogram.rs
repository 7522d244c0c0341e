mod common;

use std::f64::consts::PI;

use common::{naive_dft, rel_err};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use risense::spectrogram::{
    hann, map_box, map_box_unclamped, pixel_to_physical, save_png, segment_power, stft, to_image,
    CaptureGeometry, StftParams, DB_FLOOR_EPSILON,
};
use risense::waveform::{BoxClass, GroundTruthBox, IqFrame};
use rustfft::FftPlanner;

const RATE: f64 = 60e6;

fn noise_plus_tone(len: usize, tone_hz: f64, seed: u64) -> IqFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    IqFrame {
        samples: (0..len)
            .map(|n| {
                Complex64::from_polar(3.0, 2.0 * PI * tone_hz * n as f64 / RATE)
                    + Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            })
            .collect(),
        sample_rate_hz: RATE,
        t0_s: 0.0,
    }
}

/// Linear power from stored dB, undoing the floor guard.
fn linear(db: f64) -> f64 {
    10f64.powf(db / 10.0) - DB_FLOOR_EPSILON
}

#[test]
fn default_hop_and_frame_count() {
    let p = StftParams::default();
    assert_eq!(p.hop(), 3686);
    assert_eq!(p.n_frames(2_400_000), 651);
    let s = stft(&IqFrame::zeros(2_400_000, RATE), &p).unwrap();
    assert_eq!((s.n_frames, s.n_bins, s.frame_hop), (651, 4096, 3686));
}

#[test]
fn frames_match_a_direct_dft() {
    let x = noise_plus_tone(20_000, 3.3e6, 1);
    let p = StftParams::default();
    let s = stft(&x, &p).unwrap();
    // Independent reference: window by the textbook Hann formula, DFT by
    // definition, normalize by the squared window sum, rotate DC to the middle.
    let n = 4096;
    let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect();
    let norm: f64 = w.iter().sum::<f64>().powi(2);
    for m in [0, 2, s.n_frames - 1] {
        let seg: Vec<Complex64> = x.samples[m * 3686..m * 3686 + n].iter().zip(&w).map(|(s, w)| s * w).collect();
        let spectrum = naive_dft(&seg);
        let reference: Vec<f64> = (0..n).map(|j| spectrum[(j + n / 2) % n].norm_sqr() / norm).collect();
        let got: Vec<f64> = s.frame(m).iter().map(|&d| linear(d)).collect();
        let err = got.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(err / scale <= 1e-6, "frame {m}: relative error {:e}", err / scale);
        let worst = got
            .iter()
            .zip(&reference)
            .map(|(a, b)| rel_err(a.sqrt(), b.sqrt()))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "frame {m}: worst bin magnitude error {worst:e}");
    }
}

#[test]
fn bin_aligned_tone_peaks_at_bin_3072() {
    let x = IqFrame {
        samples: (0..40_000).map(|n| Complex64::from_polar(1.0, 2.0 * PI * 15e6 * n as f64 / RATE)).collect(),
        sample_rate_hz: RATE,
        t0_s: 0.0,
    };
    let s = stft(&x, &StftParams::default()).unwrap();
    assert_eq!(4096.0 * (15e6 / 60e6) + 2048.0, 3072.0);
    for m in 0..s.n_frames {
        let argmax = (0..s.n_bins).max_by(|&a, &b| s.at(m, a).total_cmp(&s.at(m, b))).unwrap();
        assert_eq!(argmax, 3072, "frame {m}");
    }
    assert_eq!(s.bin_frequency_hz(3072), 15e6);
    // The bright row of the rendered image.
    let img = to_image(&s, 256, (-110.0, -10.0)).unwrap();
    let row_luma = |y: u32| (0..256).map(|x| img.get_pixel(x, y).0.iter().map(|&c| c as u32).sum::<u32>()).sum::<u32>();
    let bright = (0..256).max_by_key(|&y| row_luma(y)).unwrap();
    assert_eq!(bright, (256.0f64 * 3072.0 / 4096.0).round() as u32);
}

#[test]
fn parseval_holds_per_frame() {
    let x = noise_plus_tone(30_000, -7.1e6, 2);
    let p = StftParams::default();
    let w = hann(p.window_len);
    let fft = FftPlanner::new().plan_fft_forward(p.fft_size);
    let mut buf = Vec::new();
    let wsum: f64 = w.iter().sum();
    for m in 0..p.n_frames(x.len()) {
        let seg = &x.samples[m * p.hop()..m * p.hop() + p.window_len];
        let power = segment_power(seg, &w, fft.as_ref(), &mut buf);
        let bins: f64 = power.iter().sum();
        let energy: f64 = seg.iter().zip(&w).map(|(s, w)| (s * w).norm_sqr()).sum();
        // Σ|X|² = N·Σ|w x|² and each bin is divided by (Σw)².
        let expected = energy * p.fft_size as f64 / (wsum * wsum);
        assert!(rel_err(bins, expected) <= 1e-9, "frame {m}: {:e}", rel_err(bins, expected));
    }
}

#[test]
fn louder_signal_never_lowers_in_band_db() {
    let x = noise_plus_tone(10_000, 5e6, 3);
    let louder = IqFrame {
        samples: x.samples.iter().map(|s| s * 2.0).collect(),
        ..x.clone()
    };
    let (a, b) = (stft(&x, &StftParams::default()).unwrap(), stft(&louder, &StftParams::default()).unwrap());
    assert!(a.values_db.iter().zip(&b.values_db).all(|(a, b)| b >= a));
}

#[test]
fn identical_matrices_give_identical_png_bytes() {
    let s = stft(&noise_plus_tone(12_000, 1e6, 4), &StftParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.png"), dir.path().join("b.png"));
    save_png(&to_image(&s, 256, (-110.0, -10.0)).unwrap(), &pa).unwrap();
    save_png(&to_image(&s.clone(), 256, (-110.0, -10.0)).unwrap(), &pb).unwrap();
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
}

fn geometry() -> CaptureGeometry {
    CaptureGeometry { t0_s: 0.0, duration_s: 0.04, sample_rate_hz: RATE }
}

#[test]
fn map_box_examples() {
    let b = |t0, t1, f0, f1| GroundTruthBox { class: BoxClass::Lte, t0_s: t0, t1_s: t1, f0_hz: f0, f1_hz: f1 };
    let full = map_box(&b(0.0, 0.04, -30e6, 30e6), &geometry(), 256);
    assert_eq!((full.x0, full.y0, full.x1, full.y1), (0.0, 0.0, 256.0, 256.0));
    let half = map_box(&b(0.0, 0.02, 0.0, 30e6), &geometry(), 256);
    assert_eq!((half.x0, half.y0, half.x1, half.y1), (0.0, 128.0, 128.0, 256.0));
    // 5 MHz LTE at −10 MHz with 0.9 occupancy spans −12.25..−7.75 MHz.
    let lte = map_box(&b(0.0, 0.04, -12.25e6, -7.75e6), &geometry(), 256);
    assert!((lte.y0 - 256.0 * 17.75 / 60.0).abs() < 1e-9);
    assert!((lte.y1 - 256.0 * 22.25 / 60.0).abs() < 1e-9);
    assert!((lte.y0 - 75.733).abs() < 1e-3 && (lte.y1 - 94.933).abs() < 1e-3);
}

proptest! {
    #[test]
    fn map_box_round_trips(
        t0 in 0.0..0.039f64, dt in 1e-4..0.01f64,
        f0 in -29e6..29e6f64, df in 1e4..1e6f64,
    ) {
        let b = GroundTruthBox { class: BoxClass::Nr, t0_s: t0, t1_s: t0 + dt, f0_hz: f0, f1_hz: f0 + df };
        let p = map_box_unclamped(&b, &geometry(), 256);
        let (t0b, t1b, f0b, f1b) = pixel_to_physical(&p, &geometry(), 256);
        // Relative to the axis extent, so values near zero are not penalized.
        for (got, want, extent) in [(t0b, b.t0_s, 0.04), (t1b, b.t1_s, 0.04), (f0b, b.f0_hz, RATE), (f1b, b.f1_hz, RATE)] {
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(extent), "{got} vs {want}");
        }
    }
}
