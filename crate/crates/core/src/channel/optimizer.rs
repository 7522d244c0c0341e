//! Element-by-element binary phase optimization.
//!
//! Each iteration flips one element and keeps the flip only when the received
//! power `|gᴴΘh + p|²` strictly increases. Equal power reverts the flip.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    cascaded_terms, effective_gain, gain_from_terms, ChannelError, ChannelRealization, Result,
    RisConfig,
};
use crate::seed;

/// Largest N accepted by [`exhaustive_best`].
pub const MAX_EXHAUSTIVE_ELEMENTS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VisitOrder {
    /// Elements 0, 1, …, N−1, 0, 1, …
    #[default]
    Sequential,
    /// A fresh seeded permutation of the elements for every sweep.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyOptions {
    pub max_iterations: usize,
    pub order: VisitOrder,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            order: VisitOrder::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub element: usize,
    pub accepted: bool,
    /// Power after this iteration.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub initial_power: f64,
    /// Power after every iteration; non-decreasing.
    pub powers: Vec<f64>,
    pub steps: Vec<TraceStep>,
    pub flips_accepted: usize,
    pub iterations: usize,
    /// True when the run stopped because no single flip improved the power.
    pub converged: bool,
}

impl OptimizationTrace {
    pub fn final_power(&self) -> f64 {
        self.powers.last().copied().unwrap_or(self.initial_power)
    }

    /// Final over initial power in dB.
    pub fn gain_db(&self) -> f64 {
        10.0 * (self.final_power() / self.initial_power).log10()
    }
}

pub fn optimize_ris_greedy(
    ch: &ChannelRealization,
    ris0: &RisConfig,
    max_iterations: usize,
) -> Result<(RisConfig, OptimizationTrace)> {
    optimize_ris_greedy_with(
        ch,
        ris0,
        &GreedyOptions {
            max_iterations,
            order: VisitOrder::Sequential,
        },
    )
}

pub fn optimize_ris_greedy_with(
    ch: &ChannelRealization,
    ris0: &RisConfig,
    options: &GreedyOptions,
) -> Result<(RisConfig, OptimizationTrace)> {
    let initial = effective_gain(ch, ris0)?;
    let terms = cascaded_terms(ch, ris0.alpha);
    let n = terms.len();
    let mut ris = ris0.clone();
    let mut power = initial.norm_sqr();
    let mut trace = OptimizationTrace {
        initial_power: power,
        powers: Vec::with_capacity(options.max_iterations),
        steps: Vec::with_capacity(options.max_iterations),
        flips_accepted: 0,
        iterations: 0,
        converged: n == 0,
    };
    if n == 0 {
        return Ok((ris, trace));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = match options.order {
        VisitOrder::Sequential => None,
        VisitOrder::Shuffled { seed } => Some(seed::rng(seed::derive(seed, &[seed::tag("visit")]))),
    };
    // Elements tried without success since the last accepted flip.
    let mut untouched = vec![false; n];
    let mut untouched_count = 0;

    for iteration in 0..options.max_iterations {
        let slot = iteration % n;
        if slot == 0 {
            if let Some(rng) = shuffle_rng.as_mut() {
                order.shuffle(rng);
            }
        }
        let element = order[slot];

        ris.bits[element] = !ris.bits[element];
        let candidate = gain_from_terms(&terms, &ris.bits, ch.p).norm_sqr();
        let accepted = candidate > power;
        if accepted {
            power = candidate;
            trace.flips_accepted += 1;
            untouched.fill(false);
            untouched_count = 0;
        } else {
            ris.bits[element] = !ris.bits[element];
            if !untouched[element] {
                untouched[element] = true;
                untouched_count += 1;
            }
        }

        trace.powers.push(power);
        trace.steps.push(TraceStep {
            iteration,
            element,
            accepted,
            power,
        });
        trace.iterations = iteration + 1;

        if untouched_count == n {
            trace.converged = true;
            break;
        }
    }
    Ok((ris, trace))
}

/// Power achievable with continuous phases co-phased with the direct path:
/// `(α·Σ|g_n||h_n| + |p|)²`.
pub fn continuous_phase_upper_bound(ch: &ChannelRealization, alpha: f64) -> f64 {
    let cascaded: f64 = ch.g.iter().zip(&ch.h).map(|(g, h)| g.norm() * h.norm()).sum();
    (alpha * cascaded + ch.p.norm()).powi(2)
}

/// Best binary configuration by enumerating all `2^N` states.
pub fn exhaustive_best(ch: &ChannelRealization, alpha: f64) -> Result<(RisConfig, f64)> {
    let n = ch.n_elements();
    if n > MAX_EXHAUSTIVE_ELEMENTS {
        return Err(ChannelError::InvalidParams(format!(
            "exhaustive search limited to {MAX_EXHAUSTIVE_ELEMENTS} elements, got {n}"
        )));
    }
    let terms = cascaded_terms(ch, alpha);
    let mut bits = vec![false; n];
    let mut best = (0u64, f64::NEG_INFINITY);
    for mask in 0..(1u64 << n) {
        for (i, b) in bits.iter_mut().enumerate() {
            *b = mask >> i & 1 == 1;
        }
        let power = gain_from_terms(&terms, &bits, ch.p).norm_sqr();
        if power > best.1 {
            best = (mask, power);
        }
    }
    let bits = (0..n).map(|i| best.0 >> i & 1 == 1).collect();
    Ok((RisConfig { bits, alpha }, best.1))
}

/// Writes `iteration,element,accepted,power_db` rows.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &OptimizationTrace) -> io::Result<()> {
    writeln!(out, "iteration,element,accepted,power_db")?;
    for step in &trace.steps {
        writeln!(
            out,
            "{},{},{},{:.6}",
            step.iteration,
            step.element,
            u8::from(step.accepted),
            10.0 * step.power.log10()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use crate::channel::{sample_channel, ChannelModelParams};

    fn unit_channel() -> ChannelRealization {
        let one = Complex64::new(1.0, 0.0);
        ChannelRealization {
            h: vec![one],
            g: vec![one],
            p: one,
            sigma_n2: 1.0,
        }
    }

    fn rayleigh(n: usize, seed: u64) -> ChannelRealization {
        sample_channel(&ChannelModelParams {
            n_elements: n,
            direct_gain_db: 0.0,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn hand_example_flips_back() {
        let start = RisConfig {
            bits: vec![true],
            alpha: 1.0,
        };
        let (ris, trace) = optimize_ris_greedy(&unit_channel(), &start, 10).unwrap();
        assert_eq!(ris.bits, vec![false]);
        assert_eq!(trace.initial_power, 0.0);
        assert_eq!(trace.final_power(), 4.0);
        assert_eq!(trace.flips_accepted, 1);
        // One accepted flip, then one rejected probe ends the sweep.
        assert_eq!(trace.iterations, 2);
        assert!(trace.converged);
    }

    #[test]
    fn zero_iterations_keeps_start() {
        let ch = rayleigh(6, 1);
        let start = RisConfig::off(6);
        let (ris, trace) = optimize_ris_greedy(&ch, &start, 0).unwrap();
        assert_eq!(ris, start);
        assert!(trace.powers.is_empty());
        assert_eq!(trace.iterations, 0);
    }

    #[test]
    fn empty_surface_is_trivially_converged() {
        let ch = rayleigh(0, 2);
        let (_, trace) = optimize_ris_greedy(&ch, &RisConfig::off(0), 300).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.gain_db(), 0.0);
    }

    #[test]
    fn tie_reverts_flip() {
        let zero = Complex64::new(0.0, 0.0);
        let ch = ChannelRealization {
            h: vec![zero, zero],
            g: vec![Complex64::new(1.0, 0.0); 2],
            p: Complex64::new(1.0, 0.0),
            sigma_n2: 1.0,
        };
        let (ris, trace) = optimize_ris_greedy(&ch, &RisConfig::off(2), 10).unwrap();
        assert_eq!(ris.bits, vec![false, false]);
        assert_eq!(trace.flips_accepted, 0);
        assert_eq!(trace.iterations, 2);
    }

    #[test]
    fn greedy_is_bounded_by_exhaustive_on_four_elements() {
        for seed in 0..20 {
            let ch = rayleigh(4, seed);
            let start = RisConfig::off(4);
            let (ris, trace) = optimize_ris_greedy(&ch, &start, 100).unwrap();
            let (_, best) = exhaustive_best(&ch, 1.0).unwrap();
            let final_power = effective_gain(&ch, &ris).unwrap().norm_sqr();
            assert_eq!(final_power, trace.final_power());
            assert!(final_power <= best);
            assert!(final_power >= trace.initial_power);
        }
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(continuous_phase_upper_bound(&unit_channel(), 1.0), 4.0);
        let direct_only = ChannelRealization {
            h: vec![],
            g: vec![],
            p: Complex64::new(0.6, 0.8),
            sigma_n2: 1.0,
        };
        assert!((continuous_phase_upper_bound(&direct_only, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shuffled_order_reaches_local_optimum() {
        let ch = rayleigh(12, 4);
        let options = GreedyOptions {
            max_iterations: 10_000,
            order: VisitOrder::Shuffled { seed: 3 },
        };
        let (ris, trace) = optimize_ris_greedy_with(&ch, &RisConfig::off(12), &options).unwrap();
        assert!(trace.converged);
        let power = effective_gain(&ch, &ris).unwrap().norm_sqr();
        for n in 0..12 {
            let mut probe = ris.clone();
            probe.bits[n] = !probe.bits[n];
            assert!(effective_gain(&ch, &probe).unwrap().norm_sqr() <= power);
        }
    }

    #[test]
    fn trace_csv_has_one_row_per_iteration() {
        let ch = rayleigh(5, 6);
        let (_, trace) = optimize_ris_greedy(&ch, &RisConfig::off(5), 7).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + trace.iterations);
        assert!(text.starts_with("iteration,element,accepted,power_db\n0,0,"));
    }

    #[test]
    fn exhaustive_rejects_large_surfaces() {
        assert!(exhaustive_best(&rayleigh(30, 1), 1.0).is_err());
    }
}
