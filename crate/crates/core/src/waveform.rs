//! CP-OFDM waveform synthesis with LTE-like and NR-like numerologies.
//!
//! Signals are synthesized directly at the capture sample rate. The useful
//! symbol length is `capture_rate / scs` samples, which must be an integer, so
//! the subcarrier spacing is exact and no resampling is needed. Occupied
//! subcarriers sit at `(k + ½)·scs` for `k ∈ [-K/2, K/2)` around the
//! configured center offset, which makes the occupied band exactly
//! `center_offset ± K·scs/2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::RngCore;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub const LTE_BANDWIDTHS_HZ: [f64; 4] = [5e6, 10e6, 15e6, 20e6];
pub const NR_BANDWIDTHS_HZ: [f64; 7] = [10e6, 15e6, 20e6, 25e6, 30e6, 40e6, 50e6];
pub const NR_SCS_HZ: [f64; 2] = [15e3, 30e3];
pub const LTE_SCS_HZ: f64 = 15e3;

/// Fraction of the channel bandwidth carrying subcarriers.
pub const LTE_OCCUPANCY: f64 = 0.90;
pub const NR_OCCUPANCY: f64 = 0.97;
/// Cyclic prefix as a fraction of the useful symbol (144/2048 rounded).
pub const DEFAULT_CP_RATIO: f64 = 0.0703;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveformError {
    #[error("capture rate {capture_rate_hz} Hz is not an integer multiple of the subcarrier spacing {scs_hz} Hz")]
    NonIntegerSymbolLength { capture_rate_hz: f64, scs_hz: f64 },
    #[error("signal band {low_hz}..{high_hz} Hz exceeds the capture band ±{half_rate_hz} Hz")]
    BandExceedsCapture {
        low_hz: f64,
        high_hz: f64,
        half_rate_hz: f64,
    },
    #[error("invalid waveform spec: {0}")]
    InvalidSpec(String),
    #[error("time span {start_s}..{stop_s} s is outside the {duration_s} s capture")]
    TimeSpanOutOfRange {
        start_s: f64,
        stop_s: f64,
        duration_s: f64,
    },
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(f64, f64),
    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
    #[error("nothing to combine")]
    EmptyInput,
}

pub type Result<T> = std::result::Result<T, WaveformError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalKind {
    #[serde(rename = "LTE")]
    Lte,
    #[serde(rename = "NR")]
    Nr,
}

/// Label class shared by ground truth and detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoxClass {
    #[serde(rename = "LTE")]
    Lte,
    #[serde(rename = "NR")]
    Nr,
    Unoccupied,
}

impl BoxClass {
    pub const ALL: [BoxClass; 3] = [BoxClass::Lte, BoxClass::Nr, BoxClass::Unoccupied];

    /// Fixed class order used by label exports: 0 = LTE, 1 = NR, 2 = Unoccupied.
    pub fn index(self) -> usize {
        match self {
            BoxClass::Lte => 0,
            BoxClass::Nr => 1,
            BoxClass::Unoccupied => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BoxClass::Lte => "LTE",
            BoxClass::Nr => "NR",
            BoxClass::Unoccupied => "Unoccupied",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl std::fmt::Display for BoxClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl From<SignalKind> for BoxClass {
    fn from(kind: SignalKind) -> Self {
        match kind {
            SignalKind::Lte => BoxClass::Lte,
            SignalKind::Nr => BoxClass::Nr,
        }
    }
}

/// Parameters of one transmitted CP-OFDM signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub kind: SignalKind,
    pub bandwidth_hz: f64,
    pub scs_hz: f64,
    /// Offset of the signal center from the capture center.
    pub center_offset_hz: f64,
    pub occupancy_ratio: f64,
    pub cp_ratio: f64,
    /// Active interval `(start_s, stop_s)` relative to the capture start.
    /// `None` occupies the whole capture.
    pub time_span: Option<(f64, f64)>,
    pub payload_seed: u64,
}

impl WaveformSpec {
    pub fn lte(bandwidth_hz: f64) -> Self {
        Self {
            kind: SignalKind::Lte,
            bandwidth_hz,
            scs_hz: LTE_SCS_HZ,
            center_offset_hz: 0.0,
            occupancy_ratio: LTE_OCCUPANCY,
            cp_ratio: DEFAULT_CP_RATIO,
            time_span: None,
            payload_seed: 0,
        }
    }

    pub fn nr(bandwidth_hz: f64, scs_hz: f64) -> Self {
        Self {
            kind: SignalKind::Nr,
            bandwidth_hz,
            scs_hz,
            center_offset_hz: 0.0,
            occupancy_ratio: NR_OCCUPANCY,
            cp_ratio: DEFAULT_CP_RATIO,
            time_span: None,
            payload_seed: 0,
        }
    }

    pub fn with_offset(mut self, center_offset_hz: f64) -> Self {
        self.center_offset_hz = center_offset_hz;
        self
    }

    pub fn with_time_span(mut self, start_s: f64, stop_s: f64) -> Self {
        self.time_span = Some((start_s, stop_s));
        self
    }

    pub fn with_payload_seed(mut self, payload_seed: u64) -> Self {
        self.payload_seed = payload_seed;
        self
    }

    /// Checks the bandwidth and spacing against the standard grids. The
    /// synthesizer itself accepts any positive values.
    pub fn check_standard_grid(&self) -> Result<()> {
        let on_grid = |v: f64, grid: &[f64]| grid.iter().any(|g| (v - g).abs() < 1e-6);
        let ok = match self.kind {
            SignalKind::Lte => {
                on_grid(self.bandwidth_hz, &LTE_BANDWIDTHS_HZ)
                    && on_grid(self.scs_hz, &[LTE_SCS_HZ])
            }
            SignalKind::Nr => {
                on_grid(self.bandwidth_hz, &NR_BANDWIDTHS_HZ) && on_grid(self.scs_hz, &NR_SCS_HZ)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(WaveformError::InvalidSpec(format!(
                "{:?} with bandwidth {} Hz and SCS {} Hz is off the standard grid",
                self.kind, self.bandwidth_hz, self.scs_hz
            )))
        }
    }

    /// Occupied band `(low, high)` in Hz relative to the capture center.
    pub fn occupied_band_hz(&self, numerology: &Numerology) -> (f64, f64) {
        let half = numerology.n_subcarriers as f64 * self.scs_hz / 2.0;
        (self.center_offset_hz - half, self.center_offset_hz + half)
    }
}

/// Sample-level OFDM dimensions at a given capture rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Numerology {
    pub symbol_len: usize,
    pub cp_len: usize,
    pub n_subcarriers: usize,
}

impl Numerology {
    pub fn symbol_period(&self) -> usize {
        self.symbol_len + self.cp_len
    }
}

pub fn derive_numerology(spec: &WaveformSpec, capture_rate_hz: f64) -> Result<Numerology> {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(capture_rate_hz) || !positive(spec.bandwidth_hz) || !positive(spec.scs_hz) {
        return Err(WaveformError::InvalidSpec(
            "rate, bandwidth and subcarrier spacing must be positive".into(),
        ));
    }
    if !(spec.occupancy_ratio > 0.0 && spec.occupancy_ratio <= 1.0) {
        return Err(WaveformError::InvalidSpec(format!(
            "occupancy ratio {} outside (0, 1]",
            spec.occupancy_ratio
        )));
    }
    if !(spec.cp_ratio.is_finite() && (0.0..1.0).contains(&spec.cp_ratio)) {
        return Err(WaveformError::InvalidSpec(format!(
            "cp ratio {} outside [0, 1)",
            spec.cp_ratio
        )));
    }

    let ratio = capture_rate_hz / spec.scs_hz;
    let symbol_len = ratio.round();
    if (ratio - symbol_len).abs() > 1e-9 * ratio {
        return Err(WaveformError::NonIntegerSymbolLength {
            capture_rate_hz,
            scs_hz: spec.scs_hz,
        });
    }
    let symbol_len = symbol_len as usize;

    let half_rate = capture_rate_hz / 2.0;
    let low = spec.center_offset_hz - spec.bandwidth_hz / 2.0;
    let high = spec.center_offset_hz + spec.bandwidth_hz / 2.0;
    if spec.center_offset_hz.abs() + spec.bandwidth_hz / 2.0 > half_rate * (1.0 + 1e-12) {
        return Err(WaveformError::BandExceedsCapture {
            low_hz: low,
            high_hz: high,
            half_rate_hz: half_rate,
        });
    }

    // The small bias keeps exact products like 20e6·0.9/30e3 = 600 from
    // flooring to 599 after rounding.
    let pairs = (spec.bandwidth_hz * spec.occupancy_ratio / (2.0 * spec.scs_hz) + 1e-9).floor();
    let n_subcarriers = 2 * pairs as usize;
    if n_subcarriers == 0 {
        return Err(WaveformError::InvalidSpec(format!(
            "no subcarrier pair fits in {} Hz",
            spec.bandwidth_hz * spec.occupancy_ratio
        )));
    }
    if n_subcarriers > symbol_len {
        return Err(WaveformError::InvalidSpec(format!(
            "{n_subcarriers} subcarriers exceed the {symbol_len}-point symbol"
        )));
    }

    Ok(Numerology {
        symbol_len,
        cp_len: (spec.cp_ratio * symbol_len as f64).round() as usize,
        n_subcarriers,
    })
}

/// Complex baseband samples with timing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub t0_s: f64,
}

impl IqFrame {
    pub fn zeros(len: usize, sample_rate_hz: f64) -> Self {
        Self {
            samples: vec![Complex64::new(0.0, 0.0); len],
            sample_rate_hz,
            t0_s: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean power over samples that are not exactly zero. Returns `None` for
    /// an all-zero frame.
    pub fn occupied_mean_power(&self) -> Option<f64> {
        let (sum, count) = self
            .samples
            .iter()
            .filter(|s| s.re != 0.0 || s.im != 0.0)
            .fold((0.0, 0usize), |(sum, n), s| (sum + s.norm_sqr(), n + 1));
        (count > 0).then(|| sum / count as f64)
    }
}

/// Labelled time-frequency rectangle in physical units. Frequencies are
/// relative to the capture center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub class: BoxClass,
    pub t0_s: f64,
    pub t1_s: f64,
    pub f0_hz: f64,
    pub f1_hz: f64,
}

/// A synthesized frame together with its ground-truth occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub frame: IqFrame,
    pub boxes: Vec<GroundTruthBox>,
}

pub fn synthesize(
    spec: &WaveformSpec,
    capture_rate_hz: f64,
    capture_duration_s: f64,
    rng_seed: u64,
) -> Result<Synthesis> {
    let numerology = derive_numerology(spec, capture_rate_hz)?;
    let n_total = (capture_rate_hz * capture_duration_s).round() as usize;
    let (start_s, stop_s) = spec.time_span.unwrap_or((0.0, capture_duration_s));
    let slack = 0.5 / capture_rate_hz;
    if !(start_s >= 0.0 && start_s <= stop_s && stop_s <= capture_duration_s + slack) {
        return Err(WaveformError::TimeSpanOutOfRange {
            start_s,
            stop_s,
            duration_s: capture_duration_s,
        });
    }

    let mut frame = IqFrame::zeros(n_total, capture_rate_hz);
    let first = ((start_s * capture_rate_hz).round() as usize).min(n_total);
    let last = ((stop_s * capture_rate_hz).round() as usize).min(n_total);
    if first == last {
        return Ok(Synthesis {
            frame,
            boxes: Vec::new(),
        });
    }

    let Numerology {
        symbol_len,
        cp_len,
        n_subcarriers,
    } = numerology;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(symbol_len);
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut symbol = vec![Complex64::new(0.0, 0.0); symbol_len];
    let mut rng = seed::rng(seed::derive(spec.payload_seed, &[rng_seed]));
    let qpsk = std::f64::consts::FRAC_1_SQRT_2;
    let scale = 1.0 / (n_subcarriers as f64).sqrt();
    let half = n_subcarriers as isize / 2;

    let mut pos = first;
    while pos < last {
        symbol.fill(Complex64::new(0.0, 0.0));
        let mut bits = 0u64;
        for (i, k) in (-half..half).enumerate() {
            if i % 32 == 0 {
                bits = rng.next_u64();
            }
            let re = if bits & 1 == 0 { qpsk } else { -qpsk };
            let im = if bits & 2 == 0 { qpsk } else { -qpsk };
            bits >>= 2;
            let bin = k.rem_euclid(symbol_len as isize) as usize;
            symbol[bin] = Complex64::new(re, im);
        }
        ifft.process_with_scratch(&mut symbol, &mut scratch);

        let body = symbol.iter().map(|s| s * scale);
        let with_cp = symbol[symbol_len - cp_len..]
            .iter()
            .map(|s| s * scale)
            .chain(body);
        for (dst, src) in frame.samples[pos..last].iter_mut().zip(with_cp) {
            *dst = src;
        }
        pos += symbol_len + cp_len;
    }

    // Half-subcarrier shift centers the occupied grid on the offset.
    let shift_hz = spec.center_offset_hz + spec.scs_hz / 2.0;
    let step = 2.0 * PI * shift_hz / capture_rate_hz;
    let rotate = Complex64::from_polar(1.0, step);
    for (c, chunk) in frame.samples[first..last].chunks_mut(1024).enumerate() {
        // Exact phase at each chunk start keeps the recurrence from drifting.
        let mut phasor = Complex64::from_polar(1.0, step * (first + c * 1024) as f64);
        for s in chunk {
            *s *= phasor;
            phasor *= rotate;
        }
    }

    let (f0_hz, f1_hz) = spec.occupied_band_hz(&numerology);
    let boxes = vec![GroundTruthBox {
        class: spec.kind.into(),
        t0_s: first as f64 / capture_rate_hz,
        t1_s: last as f64 / capture_rate_hz,
        f0_hz,
        f1_hz,
    }];
    Ok(Synthesis { frame, boxes })
}

/// Element-wise sum of frames sharing rate and length.
pub fn combine_frames(frames: &[IqFrame]) -> Result<IqFrame> {
    let (head, rest) = frames.split_first().ok_or(WaveformError::EmptyInput)?;
    let mut out = head.clone();
    for frame in rest {
        if frame.sample_rate_hz != out.sample_rate_hz {
            return Err(WaveformError::RateMismatch(
                out.sample_rate_hz,
                frame.sample_rate_hz,
            ));
        }
        if frame.len() != out.len() {
            return Err(WaveformError::LengthMismatch(out.len(), frame.len()));
        }
        for (acc, s) in out.samples.iter_mut().zip(&frame.samples) {
            *acc += s;
        }
    }
    Ok(out)
}

/// Sums frames and concatenates their ground truth.
pub fn combine(parts: &[Synthesis]) -> Result<Synthesis> {
    let frames: Vec<IqFrame> = parts.iter().map(|p| p.frame.clone()).collect();
    Ok(Synthesis {
        frame: combine_frames(&frames)?,
        boxes: parts.iter().flat_map(|p| p.boxes.iter().copied()).collect(),
    })
}

/// Maximal frequency intervals of `[-rate/2, rate/2]` not covered by any
/// signal box, each spanning `[0, duration]`. Intervals narrower than
/// `min_width_hz` are dropped.
pub fn unoccupied_boxes(
    signal_boxes: &[GroundTruthBox],
    capture_rate_hz: f64,
    duration_s: f64,
    min_width_hz: f64,
) -> Vec<GroundTruthBox> {
    let half = capture_rate_hz / 2.0;
    let mut spans: Vec<(f64, f64)> = signal_boxes
        .iter()
        .map(|b| (b.f0_hz.max(-half), b.f1_hz.min(half)))
        .filter(|(lo, hi)| lo < hi)
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut free = Vec::new();
    let mut cursor = -half;
    for (lo, hi) in spans {
        if lo > cursor {
            free.push((cursor, lo));
        }
        cursor = cursor.max(hi);
    }
    if cursor < half {
        free.push((cursor, half));
    }

    free.into_iter()
        .filter(|(lo, hi)| hi - lo >= min_width_hz)
        .map(|(f0_hz, f1_hz)| GroundTruthBox {
            class: BoxClass::Unoccupied,
            t0_s: 0.0,
            t1_s: duration_s,
            f0_hz,
            f1_hz,
        })
        .collect()
}
