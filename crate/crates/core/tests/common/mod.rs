#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;

/// `X[k] = Σ x[n]·e^{−2πjkn/N}` by the definition, O(N²).
pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * i) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// Frequency of DFT bin `k` (natural order) at `rate`, mapped to
/// `[−rate/2, rate/2)`.
pub fn bin_hz(k: usize, n: usize, rate: f64) -> f64 {
    let f = k as f64 * rate / n as f64;
    if f >= rate / 2.0 {
        f - rate
    } else {
        f
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
