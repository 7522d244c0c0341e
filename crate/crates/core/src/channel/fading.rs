//! Flat Doppler fading via a Jakes-style sum of sinusoids.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::seed;

pub const JAKES_OSCILLATORS: usize = 16;

/// Knots per Doppler period. Between knots the factor is linearly
/// interpolated; at this density the error stays near 1e-6.
const KNOTS_PER_PERIOD: f64 = 2000.0;
const MAX_STRIDE: usize = 64;

/// Unit-power fading factor `d[k]` for `len` samples at `sample_rate_hz`.
///
/// `d[k] = M^{-1/2} Σ_m exp(j(2π f_d cos(α_m) k / fs + φ_m))` with arrival
/// angles `α_m = (2πm + θ)/M` spread over the full circle and random phases
/// `φ_m`. A zero Doppler yields `d ≡ 1`.
pub fn jakes_factor(len: usize, sample_rate_hz: f64, doppler_hz: f64, seed: u64) -> Vec<Complex64> {
    if doppler_hz == 0.0 {
        return vec![Complex64::new(1.0, 0.0); len];
    }
    let mut rng = seed::rng(seed);
    let m = JAKES_OSCILLATORS;
    let theta: f64 = rng.random_range(0.0..2.0 * PI);
    let oscillators: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let alpha = (2.0 * PI * i as f64 + theta) / m as f64;
            let omega = 2.0 * PI * doppler_hz * alpha.cos() / sample_rate_hz;
            let phase = rng.random_range(0.0..2.0 * PI);
            (omega, phase)
        })
        .collect();
    let amplitude = 1.0 / (m as f64).sqrt();
    let exact = |k: usize| -> Complex64 {
        oscillators
            .iter()
            .map(|&(omega, phase)| Complex64::from_polar(amplitude, omega * k as f64 + phase))
            .sum()
    };

    let stride = ((sample_rate_hz / (doppler_hz.abs() * KNOTS_PER_PERIOD)) as usize).clamp(1, MAX_STRIDE);
    let mut out = Vec::with_capacity(len);
    let mut left = exact(0);
    let mut k0 = 0;
    while k0 < len {
        let right = exact(k0 + stride);
        let n = stride.min(len - k0);
        for j in 0..n {
            let t = j as f64 / stride as f64;
            out.push(left + (right - left) * t);
        }
        left = right;
        k0 += stride;
    }
    out
}
