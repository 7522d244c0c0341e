//! Monte-Carlo ensembles of the greedy optimizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimizer::{exhaustive_best, optimize_ris_greedy_with, GreedyOptions, OptimizationTrace, MAX_EXHAUSTIVE_ELEMENTS};
use super::{sample_channel, ChannelModelParams, ChannelError, Result, RisConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyOptions {
    pub trials: usize,
    /// Compare against exhaustive search (only for small surfaces).
    pub exhaustive: bool,
    /// Number of leading trials whose traces are kept.
    pub keep_traces: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            exhaustive: false,
            keep_traces: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTrial {
    pub seed: u64,
    pub initial_power: f64,
    pub final_power: f64,
    pub gain_db: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Every trace entry is at least the one before it.
    pub monotone: bool,
    /// Greedy final power over the exhaustive maximum.
    pub exhaustive_ratio: Option<f64>,
    pub trace: Option<OptimizationTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub trials: usize,
    pub n_elements: usize,
    pub mean_gain_db: f64,
    /// `(percentile, gain_db)` at 5, 25, 50, 75 and 95.
    pub percentiles_db: Vec<(f64, f64)>,
    pub median_gain_db: f64,
    pub monotone_fraction: f64,
    pub converged_fraction: f64,
    pub min_exhaustive_ratio: Option<f64>,
    pub median_exhaustive_ratio: Option<f64>,
}

/// Linear-interpolated percentile of sorted data.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Runs `options.trials` independent realizations, each starting from the
/// all-zero state. Trial `i` uses seed `derive(params.seed, [i])`.
pub fn run_study(
    params: &ChannelModelParams,
    greedy: &GreedyOptions,
    options: &StudyOptions,
) -> Result<(Vec<StudyTrial>, StudySummary)> {
    params.validate()?;
    if options.exhaustive && params.n_elements > MAX_EXHAUSTIVE_ELEMENTS {
        return Err(ChannelError::InvalidParams(format!(
            "exhaustive comparison needs at most {MAX_EXHAUSTIVE_ELEMENTS} elements, got {}",
            params.n_elements
        )));
    }
    let trials = (0..options.trials)
        .into_par_iter()
        .map(|i| {
            let trial_seed = seed::derive(params.seed, &[i as u64]);
            let ch = sample_channel(&ChannelModelParams {
                seed: trial_seed,
                ..params.clone()
            })?;
            let off = RisConfig::off(ch.n_elements());
            let (_, trace) = optimize_ris_greedy_with(&ch, &off, greedy)?;
            let monotone = std::iter::once(trace.initial_power)
                .chain(trace.powers.iter().copied())
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| w[1] >= w[0]);
            let exhaustive_ratio = if options.exhaustive {
                let (_, best) = exhaustive_best(&ch, off.alpha)?;
                Some(if best > 0.0 { trace.final_power() / best } else { 1.0 })
            } else {
                None
            };
            Ok(StudyTrial {
                seed: trial_seed,
                initial_power: trace.initial_power,
                final_power: trace.final_power(),
                gain_db: if trace.initial_power > 0.0 { trace.gain_db() } else { 0.0 },
                iterations: trace.iterations,
                converged: trace.converged,
                monotone,
                exhaustive_ratio,
                trace: (i < options.keep_traces).then_some(trace),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&trials, params.n_elements);
    Ok((trials, summary))
}

pub fn summarize(trials: &[StudyTrial], n_elements: usize) -> StudySummary {
    let n = trials.len();
    let mut gains: Vec<f64> = trials.iter().map(|t| t.gain_db).collect();
    gains.sort_by(f64::total_cmp);
    let fraction = |f: fn(&StudyTrial) -> bool| {
        if n == 0 {
            0.0
        } else {
            trials.iter().filter(|t| f(t)).count() as f64 / n as f64
        }
    };
    let mut ratios: Vec<f64> = trials.iter().filter_map(|t| t.exhaustive_ratio).collect();
    ratios.sort_by(f64::total_cmp);
    StudySummary {
        trials: n,
        n_elements,
        mean_gain_db: if n == 0 { f64::NAN } else { gains.iter().sum::<f64>() / n as f64 },
        percentiles_db: [5.0, 25.0, 50.0, 75.0, 95.0]
            .iter()
            .map(|&p| (p, percentile(&gains, p)))
            .collect(),
        median_gain_db: percentile(&gains, 50.0),
        monotone_fraction: fraction(|t| t.monotone),
        converged_fraction: fraction(|t| t.converged),
        min_exhaustive_ratio: ratios.first().copied(),
        median_exhaustive_ratio: (!ratios.is_empty()).then(|| percentile(&ratios, 50.0)),
    }
}

impl StudySummary {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "RIS greedy study: {} trials, N = {}\n",
            self.trials, self.n_elements
        );
        out.push_str("statistic          gain_db\n");
        out.push_str(&format!("mean           {:>11.3}\n", self.mean_gain_db));
        for (p, v) in &self.percentiles_db {
            out.push_str(&format!("p{:<13} {:>11.3}\n", *p as u32, v));
        }
        out.push_str(&format!("monotone       {:>11.3}\n", self.monotone_fraction));
        out.push_str(&format!("converged      {:>11.3}\n", self.converged_fraction));
        if let (Some(min), Some(med)) = (self.min_exhaustive_ratio, self.median_exhaustive_ratio) {
            out.push_str(&format!("ratio_min      {min:>11.4}\nratio_median   {med:>11.4}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 10.0, 20.0, 30.0];
        assert_eq!(percentile(&v, 50.0), 15.0);
        assert_eq!(percentile(&v, 0.0), 0.0);
        assert_eq!(percentile(&v, 100.0), 30.0);
    }

    #[test]
    fn empty_surface_gives_zero_gain() {
        let params = ChannelModelParams {
            n_elements: 0,
            ..Default::default()
        };
        let (_, s) = run_study(&params, &GreedyOptions::default(), &StudyOptions { trials: 8, ..Default::default() }).unwrap();
        assert_eq!(s.median_gain_db, 0.0);
    }

    #[test]
    fn exhaustive_ratio_is_at_most_one() {
        let params = ChannelModelParams {
            n_elements: 8,
            ..Default::default()
        };
        let opts = StudyOptions {
            trials: 20,
            exhaustive: true,
            keep_traces: 0,
        };
        let (trials, s) = run_study(&params, &GreedyOptions::default(), &opts).unwrap();
        assert!(trials.iter().all(|t| t.exhaustive_ratio.unwrap() <= 1.0 + 1e-12));
        assert!(s.min_exhaustive_ratio.unwrap() > 0.0);
    }
}
