//! Cyclic-prefix lag test and occupied-bandwidth measurement.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::boxes::quantile;
use super::{DetectorError, DetectorParams, Result};
use crate::spectrogram::{hann, pixel_to_physical, CaptureGeometry, PixelBox};
use crate::waveform::{BoxClass, DEFAULT_CP_RATIO, LTE_BANDWIDTHS_HZ, LTE_SCS_HZ, NR_BANDWIDTHS_HZ};

/// Candidate subcarrier spacings, in the order they are tested.
pub const CANDIDATE_SCS_HZ: [f64; 2] = [15e3, 30e3];

/// Boxes narrower than this many 15 kHz subcarriers are not classified.
pub const MIN_SUBCARRIERS: usize = 64;

const WELCH_LEN: usize = 4096;

/// Union of the LTE and NR channel bandwidths, ascending.
pub fn bandwidth_grid_hz() -> Vec<f64> {
    let mut grid: Vec<f64> = LTE_BANDWIDTHS_HZ.iter().chain(&NR_BANDWIDTHS_HZ).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Nearest grid bandwidth; ties go to the wider channel.
pub fn nearest_grid_bandwidth(measured_hz: f64) -> f64 {
    bandwidth_grid_hz()
        .into_iter()
        .min_by(|a, b| {
            (measured_hz - a)
                .abs()
                .total_cmp(&(measured_hz - b).abs())
                .then(b.total_cmp(a))
        })
        .expect("grid is non-empty")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDecision {
    pub class: BoxClass,
    /// Normalized CP correlation of the dominant lag, clipped to `[0, 1]`;
    /// `0.5×` the box score when no IQ was available.
    pub score: f64,
    pub scs_hz: Option<f64>,
    pub dominant_lag: Option<usize>,
    /// Normalized correlation per candidate lag, `(lag, value)`.
    pub lag_scores: Vec<(usize, f64)>,
    pub occupied_bandwidth_hz: f64,
    pub grid_bandwidth_hz: f64,
    pub occupancy: f64,
    pub low_confidence: bool,
}

fn class_from_occupancy(scs_hz: Option<f64>, occupancy: f64, split: f64) -> BoxClass {
    match scs_hz {
        Some(s) if s > LTE_SCS_HZ * 1.5 => BoxClass::Nr,
        _ if occupancy < split => BoxClass::Lte,
        _ => BoxClass::Nr,
    }
}

/// Correlation magnitude at `lag` normalized by the energies of both
/// overlapping stretches.
pub fn normalized_autocorrelation(y: &[Complex64], lag: usize) -> f64 {
    if lag >= y.len() {
        return 0.0;
    }
    let (head, tail) = (&y[..y.len() - lag], &y[lag..]);
    let cross: Complex64 = head.iter().zip(tail).map(|(a, b)| a * b.conj()).sum();
    let ea: f64 = head.iter().map(|a| a.norm_sqr()).sum();
    let eb: f64 = tail.iter().map(|b| b.norm_sqr()).sum();
    if ea == 0.0 || eb == 0.0 {
        return 0.0;
    }
    cross.norm() / (ea * eb).sqrt()
}

/// Correlation a noiseless CP-OFDM signal reaches at lag `symbol_len`: the
/// fraction of samples that belong to a cyclic prefix.
pub fn ideal_cp_correlation(symbol_len: usize) -> f64 {
    let cp = (DEFAULT_CP_RATIO * symbol_len as f64).round();
    cp / (symbol_len as f64 + cp)
}

/// Frequency of FFT bin `k` for an `n`-point transform at `rate`.
fn bin_frequency(k: usize, n: usize, rate: f64) -> f64 {
    let k = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    k * rate / n as f64
}

/// Zeroes every spectral component outside `[f0, f1]`.
fn band_isolate(segment: &[Complex64], rate: f64, f0: f64, f1: f64) -> Vec<Complex64> {
    let n = segment.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf = segment.to_vec();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = bin_frequency(k, n, rate);
        if f < f0 || f > f1 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Averaged periodogram with a Hann window, DC-centered, `WELCH_LEN` bins.
fn welch_psd(segment: &[Complex64]) -> Vec<f64> {
    let window = hann(WELCH_LEN);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(WELCH_LEN);
    let mut acc = vec![0.0; WELCH_LEN];
    let mut buf = vec![Complex64::new(0.0, 0.0); WELCH_LEN];
    let mut count = 0usize;
    let mut start = 0;
    loop {
        let stop = (start + WELCH_LEN).min(segment.len());
        buf.fill(Complex64::new(0.0, 0.0));
        for (i, s) in segment[start..stop].iter().enumerate() {
            buf[i] = s * window[i];
        }
        fft.process(&mut buf);
        for (j, a) in acc.iter_mut().enumerate() {
            *a += buf[(j + WELCH_LEN / 2) % WELCH_LEN].norm_sqr();
        }
        count += 1;
        start += WELCH_LEN;
        if start + WELCH_LEN > segment.len() {
            break;
        }
    }
    acc.iter().map(|a| a / count as f64).collect()
}

/// Width of the band inside `[f0, f1]` (widened by a margin) whose PSD lies
/// above the midpoint between the in-band level and the noise level.
fn occupied_bandwidth(segment: &[Complex64], rate: f64, f0: f64, f1: f64) -> f64 {
    let psd = welch_psd(segment);
    let df = rate / WELCH_LEN as f64;
    let bin_of = |f: f64| ((f / df) + (WELCH_LEN / 2) as f64).floor().clamp(0.0, (WELCH_LEN - 1) as f64) as usize;
    let width = f1 - f0;
    let inner: Vec<f64> = psd[bin_of(f0 + 0.1 * width)..=bin_of(f1 - 0.1 * width)].to_vec();
    let mut inner_sorted = inner;
    let level = quantile(&mut inner_sorted, 0.75);
    let mut all = psd.clone();
    let noise = quantile(&mut all, 0.02);
    let threshold = 0.5 * (level + noise);
    let margin = (0.1 * width).max(8.0 * df);
    let (lo, hi) = (bin_of(f0 - margin), bin_of(f1 + margin));
    psd[lo..=hi].iter().filter(|&&p| p > threshold).count() as f64 * df
}

/// Decides LTE or NR for the band under `bbox` from the IQ samples.
pub fn classify_band(
    iq: &crate::waveform::IqFrame,
    bbox: &PixelBox,
    geometry: &CaptureGeometry,
    image_size: usize,
    params: &DetectorParams,
) -> Result<ClassDecision> {
    let rate = iq.sample_rate_hz;
    let (t0, t1, f0, f1) = pixel_to_physical(bbox, geometry, image_size);
    let min_hz = MIN_SUBCARRIERS as f64 * LTE_SCS_HZ;
    if f1 - f0 < min_hz {
        return Err(DetectorError::BandTooNarrow {
            width_hz: f1 - f0,
            min_hz,
        });
    }

    let to_index = |t: f64| (((t - iq.t0_s) * rate).round().max(0.0) as usize).min(iq.len());
    let (mut first, mut last) = (to_index(t0), to_index(t1));
    if last - first > params.max_classify_samples {
        let excess = last - first - params.max_classify_samples;
        first += excess / 2;
        last = first + params.max_classify_samples;
    }
    let segment = &iq.samples[first..last];

    let lags: Vec<(f64, usize)> = CANDIDATE_SCS_HZ
        .iter()
        .filter_map(|&scs| {
            let lag = rate / scs;
            let rounded = lag.round();
            ((lag - rounded).abs() < 1e-6 && rounded >= 1.0 && (rounded as usize) < segment.len() / 2)
                .then_some((scs, rounded as usize))
        })
        .collect();

    let isolated = band_isolate(segment, rate, f0, f1);
    let lag_scores: Vec<(usize, f64)> = lags
        .iter()
        .map(|&(_, lag)| (lag, normalized_autocorrelation(&isolated, lag) / ideal_cp_correlation(lag)))
        .collect();
    let dominant = lags
        .iter()
        .zip(&lag_scores)
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(&(scs, lag), &(_, s))| (scs, lag, s));

    let occupied = if segment.len() >= WELCH_LEN {
        occupied_bandwidth(segment, rate, f0, f1)
    } else {
        f1 - f0
    };
    let grid_bw = nearest_grid_bandwidth(occupied);
    let occupancy = occupied / grid_bw;
    let scs = dominant.map(|d| d.0);
    let score = dominant.map_or(0.0, |d| d.2.clamp(0.0, 1.0));
    Ok(ClassDecision {
        class: class_from_occupancy(scs, occupancy, params.occupancy_split),
        score,
        scs_hz: scs,
        dominant_lag: dominant.map(|d| d.1),
        lag_scores,
        occupied_bandwidth_hz: occupied,
        grid_bandwidth_hz: grid_bw,
        occupancy,
        low_confidence: score < params.low_confidence_score,
    })
}

/// Class from the box height alone, for captures without IQ. The score is
/// the box score halved.
pub fn classify_by_occupancy(
    bbox: &PixelBox,
    box_score: f64,
    geometry: &CaptureGeometry,
    image_size: usize,
    params: &DetectorParams,
) -> ClassDecision {
    let (_, _, f0, f1) = pixel_to_physical(bbox, geometry, image_size);
    let occupied = f1 - f0;
    let grid_bw = nearest_grid_bandwidth(occupied);
    let occupancy = occupied / grid_bw;
    let score = 0.5 * box_score;
    ClassDecision {
        class: class_from_occupancy(None, occupancy, params.occupancy_split),
        score,
        scs_hz: None,
        dominant_lag: None,
        lag_scores: Vec::new(),
        occupied_bandwidth_hz: occupied,
        grid_bandwidth_hz: grid_bw,
        occupancy,
        low_confidence: score < params.low_confidence_score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_sorted_union() {
        assert_eq!(
            bandwidth_grid_hz(),
            vec![5e6, 10e6, 15e6, 20e6, 25e6, 30e6, 40e6, 50e6]
        );
    }

    #[test]
    fn nearest_bandwidth_examples() {
        assert_eq!(nearest_grid_bandwidth(4.5e6), 5e6);
        assert_eq!(nearest_grid_bandwidth(13.5e6), 15e6);
        assert_eq!(nearest_grid_bandwidth(38.8e6), 40e6);
        assert_eq!(nearest_grid_bandwidth(35e6), 40e6);
        assert_eq!(nearest_grid_bandwidth(1e9), 50e6);
    }

    #[test]
    fn ideal_correlation_matches_cp_fraction() {
        assert!((ideal_cp_correlation(4000) - 281.0 / 4281.0).abs() < 1e-15);
        assert!((ideal_cp_correlation(2000) - 141.0 / 2141.0).abs() < 1e-15);
    }

    #[test]
    fn autocorrelation_of_periodic_sequence_is_one() {
        let y: Vec<Complex64> = (0..64).map(|n| Complex64::from_polar(1.0, (n % 8) as f64)).collect();
        assert!((normalized_autocorrelation(&y, 8) - 1.0).abs() < 1e-12);
        assert_eq!(normalized_autocorrelation(&y, 64), 0.0);
    }

    #[test]
    fn thirty_khz_forces_nr() {
        assert_eq!(class_from_occupancy(Some(30e3), 0.5, 0.935), BoxClass::Nr);
        assert_eq!(class_from_occupancy(Some(15e3), 0.90, 0.935), BoxClass::Lte);
        assert_eq!(class_from_occupancy(Some(15e3), 0.97, 0.935), BoxClass::Nr);
        assert_eq!(class_from_occupancy(None, 0.90, 0.935), BoxClass::Lte);
    }
}
