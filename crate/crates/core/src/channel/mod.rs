//! Cascaded RIS channel.
//!
//! Under H1 the secondary user receives `r[k] = (gᴴΘh + p)·d[k]·x[k] + n[k]`
//! where `Θ = diag(α e^{jφ_n})`, `φ_n ∈ {0°, 180°}` and `d[k]` is a unit-power
//! Doppler factor. Under H0 it receives `n[k]` only.
//!
//! Target SNRs are referenced to the RIS-off configuration (all phases 0°) of
//! the same realization, so a better RIS configuration raises the delivered
//! SNR while the noise realization stays untouched.

pub mod fading;
pub mod optimizer;
pub mod study;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::waveform::IqFrame;

pub use optimizer::{
    continuous_phase_upper_bound, exhaustive_best, optimize_ris_greedy, optimize_ris_greedy_with,
    write_trace_csv, GreedyOptions, OptimizationTrace, TraceStep, VisitOrder,
};
pub use study::{run_study, StudyOptions, StudySummary, StudyTrial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("RIS config has {config} elements but the channel has {channel}")]
    DimensionMismatch { channel: usize, config: usize },
    #[error("cannot apply a channel to an empty frame")]
    EmptyFrame,
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// PT → RIS.
    pub h: Vec<Complex64>,
    /// RIS → SU.
    pub g: Vec<Complex64>,
    /// PT → SU direct path.
    pub p: Complex64,
    pub sigma_n2: f64,
}

impl ChannelRealization {
    pub fn n_elements(&self) -> usize {
        self.h.len()
    }

    /// Direct path only, unit gain. Used for the no-channel (AWGN) pipeline.
    pub fn identity() -> Self {
        Self {
            h: Vec::new(),
            g: Vec::new(),
            p: Complex64::new(1.0, 0.0),
            sigma_n2: 1.0,
        }
    }

    pub fn with_noise(mut self, sigma_n2: f64) -> Self {
        self.sigma_n2 = sigma_n2;
        self
    }
}

/// Binary phase state: bit `n` set means `φ_n = 180°`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisConfig {
    pub bits: Vec<bool>,
    pub alpha: f64,
}

impl RisConfig {
    /// All elements at 0°.
    pub fn off(n_elements: usize) -> Self {
        Self {
            bits: vec![false; n_elements],
            alpha: 1.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn n_elements(&self) -> usize {
        self.bits.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModelParams {
    pub n_elements: usize,
    /// Rician K factor; 0 gives Rayleigh fading.
    pub rician_k: f64,
    /// Mean power of `p` relative to the mean power of one cascaded term.
    pub direct_gain_db: f64,
    pub seed: u64,
}

impl Default for ChannelModelParams {
    fn default() -> Self {
        Self {
            n_elements: 76,
            rician_k: 0.0,
            direct_gain_db: -20.0,
            seed: 0,
        }
    }
}

impl ChannelModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rician_k.is_finite() && self.rician_k >= 0.0) {
            return Err(ChannelError::InvalidParams(format!(
                "rician_k must be finite and non-negative, got {}",
                self.rician_k
            )));
        }
        if self.direct_gain_db.is_nan() || self.direct_gain_db == f64::INFINITY {
            return Err(ChannelError::InvalidParams(format!(
                "direct_gain_db must be finite or -inf, got {}",
                self.direct_gain_db
            )));
        }
        Ok(())
    }
}

fn complex_normal<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

fn rician_vector<R: Rng>(rng: &mut R, n: usize, k: f64) -> Vec<Complex64> {
    let los = (k / (k + 1.0)).sqrt();
    let scatter = 1.0 / (k + 1.0);
    (0..n)
        .map(|_| {
            let scattered = complex_normal(rng, scatter);
            if k == 0.0 {
                scattered
            } else {
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                Complex64::from_polar(los, phase) + scattered
            }
        })
        .collect()
}

/// Draws unit-mean-power Rician `h` and `g`, and a complex Gaussian `p`.
/// The noise variance is left at 1; [`apply_channel`] recalibrates it.
pub fn sample_channel(params: &ChannelModelParams) -> Result<ChannelRealization> {
    params.validate()?;
    let mut rng = seed::rng(seed::derive(params.seed, &[seed::tag("channel")]));
    let h = rician_vector(&mut rng, params.n_elements, params.rician_k);
    let g = rician_vector(&mut rng, params.n_elements, params.rician_k);
    let direct_power = 10f64.powf(params.direct_gain_db / 10.0);
    let p = complex_normal(&mut rng, direct_power);
    Ok(ChannelRealization {
        h,
        g,
        p,
        sigma_n2: 1.0,
    })
}

/// `α·conj(g_n)·h_n`, the n-th cascaded term with the element at 0°.
pub(crate) fn cascaded_terms(ch: &ChannelRealization, alpha: f64) -> Vec<Complex64> {
    ch.g
        .iter()
        .zip(&ch.h)
        .map(|(g, h)| g.conj() * h * alpha)
        .collect()
}

/// Sums terms with the binary phases applied, in element order.
pub(crate) fn gain_from_terms(terms: &[Complex64], bits: &[bool], p: Complex64) -> Complex64 {
    terms
        .iter()
        .zip(bits)
        .fold(Complex64::new(0.0, 0.0), |acc, (t, &flip)| {
            if flip {
                acc - t
            } else {
                acc + t
            }
        })
        + p
}

/// `gᴴΘh + p`.
pub fn effective_gain(ch: &ChannelRealization, ris: &RisConfig) -> Result<Complex64> {
    if ch.h.len() != ch.g.len() || ris.bits.len() != ch.h.len() {
        return Err(ChannelError::DimensionMismatch {
            channel: ch.h.len().min(ch.g.len()),
            config: ris.bits.len(),
        });
    }
    Ok(gain_from_terms(
        &cascaded_terms(ch, ris.alpha),
        &ris.bits,
        ch.p,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// PT idle: noise only.
    H0,
    /// PT transmitting.
    H1,
}

/// Output of [`apply_channel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub frame: IqFrame,
    pub noise_variance: f64,
    pub gain: Complex64,
}

/// Noise variance giving `target_snr_db` at the SU with the RIS off.
///
/// The reference power is the mean of `|G_off·d[k]·x[k]|²` over the non-zero
/// samples of `x`. An all-zero frame is treated as unit power.
pub fn calibrate_noise(
    x: &IqFrame,
    ch: &ChannelRealization,
    alpha: f64,
    target_snr_db: f64,
    doppler_hz: f64,
    seed: u64,
) -> Result<f64> {
    let fading = fading::jakes_factor(x.len(), x.sample_rate_hz, doppler_hz, fading_seed(seed));
    noise_for_snr(x, ch, alpha, target_snr_db, &fading)
}

fn noise_for_snr(
    x: &IqFrame,
    ch: &ChannelRealization,
    alpha: f64,
    target_snr_db: f64,
    fading: &[Complex64],
) -> Result<f64> {
    if !target_snr_db.is_finite() {
        return Err(ChannelError::InvalidParams(format!(
            "target SNR must be finite, got {target_snr_db}"
        )));
    }
    let off = RisConfig::off(ch.n_elements()).with_alpha(alpha);
    let gain_off = effective_gain(ch, &off)?;
    let (sum, count) = x
        .samples
        .iter()
        .zip(fading)
        .filter(|(s, _)| s.re != 0.0 || s.im != 0.0)
        .fold((0.0, 0usize), |(sum, n), (s, d)| {
            (sum + (gain_off * d * s).norm_sqr(), n + 1)
        });
    let mut reference = if count > 0 {
        sum / count as f64
    } else {
        gain_off.norm_sqr()
    };
    if reference <= 0.0 || !reference.is_finite() {
        reference = x.occupied_mean_power().unwrap_or(1.0);
    }
    Ok(reference / 10f64.powf(target_snr_db / 10.0))
}

fn fading_seed(seed: u64) -> u64 {
    seed::derive(seed, &[seed::tag("doppler")])
}

fn noise_seed(seed: u64) -> u64 {
    seed::derive(seed, &[seed::tag("noise")])
}

fn propagate(
    x: &IqFrame,
    ch: &ChannelRealization,
    ris: &RisConfig,
    hypothesis: Hypothesis,
    fading: &[Complex64],
    seed: u64,
) -> Result<Received> {
    if !(ch.sigma_n2.is_finite() && ch.sigma_n2 >= 0.0) {
        return Err(ChannelError::InvalidParams(format!(
            "noise variance must be non-negative, got {}",
            ch.sigma_n2
        )));
    }
    let gain = effective_gain(ch, ris)?;
    let sigma = (ch.sigma_n2 / 2.0).sqrt();
    let mut noise_rng = seed::rng(noise_seed(seed));
    let mut samples: Vec<Complex64> = (0..x.len())
        .map(|_| {
            let re: f64 = noise_rng.sample(StandardNormal);
            let im: f64 = noise_rng.sample(StandardNormal);
            Complex64::new(re * sigma, im * sigma)
        })
        .collect();

    if hypothesis == Hypothesis::H1 {
        for ((r, s), d) in samples.iter_mut().zip(&x.samples).zip(fading) {
            *r += gain * d * s;
        }
    }

    Ok(Received {
        frame: IqFrame {
            samples,
            sample_rate_hz: x.sample_rate_hz,
            t0_s: x.t0_s,
        },
        noise_variance: ch.sigma_n2,
        gain,
    })
}

/// Passes `x` through the channel with the realization's own `sigma_n2`.
pub fn apply_channel_with_noise(
    x: &IqFrame,
    ch: &ChannelRealization,
    ris: &RisConfig,
    hypothesis: Hypothesis,
    doppler_hz: f64,
    seed: u64,
) -> Result<Received> {
    if x.is_empty() {
        return Err(ChannelError::EmptyFrame);
    }
    let fading = fading::jakes_factor(x.len(), x.sample_rate_hz, doppler_hz, fading_seed(seed));
    propagate(x, ch, ris, hypothesis, &fading, seed)
}

/// Passes `x` through the channel with noise calibrated by
/// [`calibrate_noise`] for `target_snr_db`.
pub fn apply_channel(
    x: &IqFrame,
    ch: &ChannelRealization,
    ris: &RisConfig,
    hypothesis: Hypothesis,
    target_snr_db: f64,
    doppler_hz: f64,
    seed: u64,
) -> Result<Received> {
    if x.is_empty() {
        return Err(ChannelError::EmptyFrame);
    }
    let fading = fading::jakes_factor(x.len(), x.sample_rate_hz, doppler_hz, fading_seed(seed));
    let sigma_n2 = noise_for_snr(x, ch, ris.alpha, target_snr_db, &fading)?;
    propagate(x, &ch.clone().with_noise(sigma_n2), ris, hypothesis, &fading, seed)
}

pub fn power_db(power: f64) -> f64 {
    10.0 * power.log10()
}
