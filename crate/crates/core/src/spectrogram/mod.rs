//! Short-time Fourier transform spectrograms and time-frequency geometry.
//!
//! Rows of a [`SpectrogramMatrix`] are time frames, columns are frequency bins
//! rotated so that bin `n_bins/2` is 0 Hz. Per-bin power is normalized by
//! `(Σw)²`, so a unit-amplitude bin-aligned tone reads 0 dB at its peak.

pub mod colormap;
mod render;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rustfft::FftPlanner;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{GroundTruthBox, IqFrame};

pub use render::{
    db_grid, grid_from_image, load_image, resample_area, save_jpeg, save_png, to_image, Grid, IMAGE_SIZE,
};

/// Added to every per-bin power before taking dB: a −120 dB floor.
pub const DB_FLOOR_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SpectrogramError {
    #[error("frame has {len} samples but the window needs {window_len}")]
    FrameTooShort { len: usize, window_len: usize },
    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),
    #[error("dB range floor {floor_db} must be below ceiling {ceil_db}")]
    DegenerateRange { floor_db: f64, ceil_db: f64 },
    #[error("spectrogram is empty")]
    Empty,
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SpectrogramError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftParams {
    pub window_len: usize,
    pub fft_size: usize,
    pub overlap_ratio: f64,
    pub window_kind: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_len: 4096,
            fft_size: 4096,
            overlap_ratio: 0.10,
            window_kind: WindowKind::Hann,
        }
    }
}

impl StftParams {
    pub fn hop(&self) -> usize {
        ((1.0 - self.overlap_ratio) * self.window_len as f64).round() as usize
    }

    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.fft_size == 0 {
            return Err(SpectrogramError::InvalidParams(
                "window and FFT sizes must be positive".into(),
            ));
        }
        if self.window_len > self.fft_size {
            return Err(SpectrogramError::InvalidParams(format!(
                "window {} longer than FFT {}",
                self.window_len, self.fft_size
            )));
        }
        if !self.fft_size.is_multiple_of(2) {
            return Err(SpectrogramError::InvalidParams(
                "FFT size must be even for a centered DC bin".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(SpectrogramError::InvalidParams(format!(
                "overlap ratio {} outside [0, 1)",
                self.overlap_ratio
            )));
        }
        if self.hop() == 0 {
            return Err(SpectrogramError::InvalidParams("hop rounds to zero".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window_kind {
            WindowKind::Hann => hann(self.window_len),
        }
    }
}

/// Symmetric Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

/// Time and frequency extents of a capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureGeometry {
    pub t0_s: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramMatrix {
    /// Row-major `[n_frames × n_bins]`.
    pub values_db: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub frame_hop: usize,
    pub window_len: usize,
    pub sample_rate_hz: f64,
    pub t0_s: f64,
    /// Length of the analysed frame, which fixes the time extent.
    pub n_samples: usize,
}

impl SpectrogramMatrix {
    pub fn frame(&self, m: usize) -> &[f64] {
        &self.values_db[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.values_db[frame * self.n_bins + bin]
    }

    pub fn is_empty(&self) -> bool {
        self.values_db.is_empty()
    }

    pub fn bin_frequency_hz(&self, bin: usize) -> f64 {
        (bin as f64 - (self.n_bins / 2) as f64) * self.sample_rate_hz / self.n_bins as f64
    }

    pub fn geometry(&self) -> CaptureGeometry {
        CaptureGeometry {
            t0_s: self.t0_s,
            duration_s: self.n_samples as f64 / self.sample_rate_hz,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Flat little-endian `f32` dump (frame-major) plus a `key=value` sidecar.
    pub fn export(&self, data_path: &Path) -> io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(data_path)?);
        for v in &self.values_db {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        out.flush()?;
        let meta = format!(
            "n_frames={}\nn_bins={}\nhop={}\nwindow_len={}\nsample_rate_hz={}\nt0_s={}\nn_samples={}\n",
            self.n_frames,
            self.n_bins,
            self.frame_hop,
            self.window_len,
            self.sample_rate_hz,
            self.t0_s,
            self.n_samples
        );
        fs::write(crate::iq::sidecar_path(data_path), meta)
    }
}

/// Linear per-bin power of one windowed segment, DC-centered and normalized
/// by `(Σw)²`. `segment.len()` must equal `window.len()`.
pub fn segment_power(
    segment: &[Complex64],
    window: &[f64],
    fft: &dyn rustfft::Fft<f64>,
    buf: &mut Vec<Complex64>,
) -> Vec<f64> {
    let n = fft.len();
    buf.clear();
    buf.extend(segment.iter().zip(window).map(|(s, w)| s * w));
    buf.resize(n, Complex64::new(0.0, 0.0));
    fft.process(buf);
    let norm = window.iter().sum::<f64>().powi(2);
    let half = n / 2;
    (0..n).map(|j| buf[(j + half) % n].norm_sqr() / norm).collect()
}

pub fn stft(iq: &IqFrame, params: &StftParams) -> Result<SpectrogramMatrix> {
    params.validate()?;
    if iq.len() < params.window_len {
        return Err(SpectrogramError::FrameTooShort {
            len: iq.len(),
            window_len: params.window_len,
        });
    }
    let hop = params.hop();
    let n_frames = params.n_frames(iq.len());
    let window = params.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.fft_size);
    let mut buf = Vec::with_capacity(params.fft_size);
    let mut values_db = Vec::with_capacity(n_frames * params.fft_size);
    for m in 0..n_frames {
        let start = m * hop;
        let segment = &iq.samples[start..start + params.window_len];
        let power = segment_power(segment, &window, fft.as_ref(), &mut buf);
        values_db.extend(power.iter().map(|p| 10.0 * (p + DB_FLOOR_EPSILON).log10()));
    }
    Ok(SpectrogramMatrix {
        values_db,
        n_frames,
        n_bins: params.fft_size,
        frame_hop: hop,
        window_len: params.window_len,
        sample_rate_hz: iq.sample_rate_hz,
        t0_s: iq.t0_s,
        n_samples: iq.len(),
    })
}

/// Rectangle in image pixels. `x` is time, `y` is frequency with the lowest
/// frequency at `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self, size: f64) -> bool {
        self.x0 < self.x1
            && self.y0 < self.y1
            && self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x1 <= size
            && self.y1 <= size
    }

    /// Lexicographic order on `(x0, y0, x1, y1)`.
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.x0
            .total_cmp(&other.x0)
            .then(self.y0.total_cmp(&other.y0))
            .then(self.x1.total_cmp(&other.x1))
            .then(self.y1.total_cmp(&other.y1))
    }
}

/// Physical box to pixel box, without clamping.
pub fn map_box_unclamped(b: &GroundTruthBox, geometry: &CaptureGeometry, size: usize) -> PixelBox {
    let s = size as f64;
    let x = |t: f64| (t - geometry.t0_s) / geometry.duration_s * s;
    let y = |f: f64| (f + geometry.sample_rate_hz / 2.0) / geometry.sample_rate_hz * s;
    PixelBox::new(x(b.t0_s), y(b.f0_hz), x(b.t1_s), y(b.f1_hz))
}

/// `x = (t − t0)/duration·size`, `y = (f + rate/2)/rate·size`, clamped to the
/// image.
pub fn map_box(b: &GroundTruthBox, geometry: &CaptureGeometry, size: usize) -> PixelBox {
    let s = size as f64;
    let p = map_box_unclamped(b, geometry, size);
    PixelBox::new(
        p.x0.clamp(0.0, s),
        p.y0.clamp(0.0, s),
        p.x1.clamp(0.0, s),
        p.y1.clamp(0.0, s),
    )
}

/// Inverse of [`map_box_unclamped`]: `(t0, t1, f0, f1)`.
pub fn pixel_to_physical(p: &PixelBox, geometry: &CaptureGeometry, size: usize) -> (f64, f64, f64, f64) {
    let s = size as f64;
    let t = |x: f64| geometry.t0_s + x / s * geometry.duration_s;
    let f = |y: f64| y / s * geometry.sample_rate_hz - geometry.sample_rate_hz / 2.0;
    (t(p.x0), t(p.x1), f(p.y0), f(p.y1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::BoxClass;

    fn geometry() -> CaptureGeometry {
        CaptureGeometry {
            t0_s: 0.0,
            duration_s: 0.04,
            sample_rate_hz: 60e6,
        }
    }

    fn gt(t0: f64, t1: f64, f0: f64, f1: f64) -> GroundTruthBox {
        GroundTruthBox {
            class: BoxClass::Lte,
            t0_s: t0,
            t1_s: t1,
            f0_hz: f0,
            f1_hz: f1,
        }
    }

    #[test]
    fn default_hop_and_frame_count() {
        let p = StftParams::default();
        assert_eq!(p.hop(), 3686);
        assert_eq!(p.n_frames(2_400_000), 651);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = StftParams {
            window_len: 8192,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = StftParams {
            overlap_ratio: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn short_frame_is_rejected() {
        let frame = IqFrame::zeros(100, 1.0);
        assert!(matches!(
            stft(&frame, &StftParams::default()),
            Err(SpectrogramError::FrameTooShort { len: 100, window_len: 4096 })
        ));
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let frame = IqFrame::zeros(5000, 1e6);
        let s = stft(&frame, &StftParams::default()).unwrap();
        assert!(s.values_db.iter().all(|v| (*v - -120.0).abs() < 1e-9));
    }

    #[test]
    fn full_extent_box_fills_image() {
        let b = map_box(&gt(0.0, 0.04, -30e6, 30e6), &geometry(), 256);
        assert_eq!(b, PixelBox::new(0.0, 0.0, 256.0, 256.0));
    }

    #[test]
    fn half_extent_box() {
        let b = map_box(&gt(0.0, 0.02, 0.0, 30e6), &geometry(), 256);
        assert_eq!(b, PixelBox::new(0.0, 128.0, 128.0, 256.0));
    }

    #[test]
    fn lte_box_lands_on_expected_rows() {
        // 5 MHz LTE at −10 MHz carries 4.5 MHz: [−12.25, −7.75] MHz.
        let b = map_box(&gt(0.0, 0.04, -12.25e6, -7.75e6), &geometry(), 256);
        assert!((b.y0 - 256.0 * 17.75 / 60.0).abs() < 1e-9);
        assert!((b.y1 - 256.0 * 22.25 / 60.0).abs() < 1e-9);
        assert_eq!((b.x0, b.x1), (0.0, 256.0));
    }

    #[test]
    fn clamps_outside_extents() {
        let b = map_box(&gt(-0.01, 0.05, -40e6, 40e6), &geometry(), 256);
        assert_eq!(b, PixelBox::new(0.0, 0.0, 256.0, 256.0));
    }
}
