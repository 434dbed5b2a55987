//! Finite-trace evidence for the stability results: a strong-stability
//! heuristic, the rate-conservation residual, binned Lyapunov drift and the
//! comparison against the occupancy bound.
//!
//! Strong stability is an asymptotic property. Everything here is an
//! estimator over a finite window, never a proof.

use alloc::vec::Vec;

use crate::engine::RunStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    Bounded,
    Growing,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Bounded => "bounded",
            Verdict::Growing => "growing",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl core::fmt::Display for Verdict {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds of the stability heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictConfig {
    /// Packets/slot; a final-half slope below this counts as flat.
    pub slope_threshold: f64,
    /// Largest relative gap between the third- and fourth-quarter means for a bounded verdict.
    pub split_tolerance: f64,
    /// Fewer measured slots than this always give an inconclusive verdict.
    pub min_measured_slots: u64,
    /// Fraction of replications that must agree on a verdict.
    pub agreement: f64,
}

impl Default for VerdictConfig {
    fn default() -> Self {
        Self { slope_threshold: 1e-3, split_tolerance: 0.1, min_measured_slots: 10_000, agreement: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityEstimate {
    pub time_avg_total_occupancy: f64,
    /// Least-squares slope of total occupancy over the final half of the window.
    pub growth_slope: f64,
    pub slope_std_error: f64,
    pub third_quarter_mean: f64,
    pub fourth_quarter_mean: f64,
    pub final_total_occupancy: u64,
    pub verdict: Verdict,
}

fn mean(xs: &[u64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64
}

/// Ordinary least squares slope of `ys` against `0..n`, with its standard error.
pub fn ols_slope(ys: &[u64]) -> (f64, f64) {
    let n = ys.len();
    if n < 2 {
        return (0.0, 0.0);
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let y_mean = mean(ys);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, &y) in ys.iter().enumerate() {
        let dx = x as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (y as f64 - y_mean);
    }
    let slope = sxy / sxx;
    if n < 3 {
        return (slope, 0.0);
    }
    let intercept = y_mean - slope * x_mean;
    let ssr: f64 = ys
        .iter()
        .enumerate()
        .map(|(x, &y)| {
            let r = y as f64 - intercept - slope * x as f64;
            r * r
        })
        .sum();
    (slope, libm::sqrt(ssr / (n - 2) as f64 / sxx))
}

/// Classifies one run as bounded, growing or inconclusive.
///
/// Bounded: final-half slope below the threshold and the last two quarter
/// means within the split tolerance. Growing: slope above the threshold with
/// a positive three-sigma lower bound.
pub fn stability_verdict(stats: &RunStats, cfg: &VerdictConfig) -> StabilityEstimate {
    let series = &stats.occupancy;
    let n = series.len();
    let (slope, se) = ols_slope(&series[n / 2..]);
    let q3 = mean(&series[n / 2..3 * n / 4]);
    let q4 = mean(&series[3 * n / 4..]);
    let scale = q3.max(q4);
    let split_agrees = scale == 0.0 || (q4 - q3).abs() < cfg.split_tolerance * scale;
    let verdict = if stats.measured_slots < cfg.min_measured_slots {
        Verdict::Inconclusive
    } else if slope < cfg.slope_threshold && split_agrees {
        Verdict::Bounded
    } else if slope > cfg.slope_threshold && slope - 3.0 * se > 0.0 {
        Verdict::Growing
    } else {
        Verdict::Inconclusive
    };
    StabilityEstimate {
        time_avg_total_occupancy: stats.time_avg_total_occupancy(),
        growth_slope: slope,
        slope_std_error: se,
        third_quarter_mean: q3,
        fourth_quarter_mean: q4,
        final_total_occupancy: series.last().copied().unwrap_or(0),
        verdict,
    }
}

/// Combines per-seed verdicts. A verdict wins if at least `cfg.agreement` of the
/// replications share it; a growing verdict additionally needs the mean slope
/// minus two standard errors across replications to stay positive.
pub fn aggregate_verdict(estimates: &[StabilityEstimate], cfg: &VerdictConfig) -> Verdict {
    let n = estimates.len();
    if n == 0 {
        return Verdict::Inconclusive;
    }
    let required = libm::ceil(cfg.agreement * n as f64) as usize;
    let count = |v: Verdict| estimates.iter().filter(|e| e.verdict == v).count();
    if count(Verdict::Bounded) >= required {
        return Verdict::Bounded;
    }
    if count(Verdict::Growing) >= required {
        let slopes: Vec<f64> = estimates.iter().map(|e| e.growth_slope).collect();
        let m = slopes.iter().sum::<f64>() / n as f64;
        let lower = if n > 1 {
            let var = slopes.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (n - 1) as f64;
            m - 2.0 * libm::sqrt(var / n as f64)
        } else {
            m
        };
        if lower > 0.0 {
            return Verdict::Growing;
        }
    }
    Verdict::Inconclusive
}

/// Per-queue `(window arrivals - window departures) / measured slots`.
pub fn rate_conservation_residual(stats: &RunStats) -> Vec<f64> {
    stats
        .window_arrivals
        .iter()
        .zip(&stats.window_departures)
        .map(|(&a, &d)| (a as i128 - d as i128) as f64 / stats.measured_slots as f64)
        .collect()
}

/// Checks the exact integer identities implied by the backlog recursion,
/// over the measured window and over the whole run.
pub fn telescoping_holds(stats: &RunStats) -> bool {
    let window = (0..stats.num_queues).all(|i| {
        stats.window_start_backlogs[i] + stats.window_arrivals[i]
            == stats.final_backlogs[i] + stats.window_departures[i]
    });
    let run = (0..stats.num_queues).all(|i| {
        stats.initial_backlogs[i] + stats.total_arrivals[i] == stats.final_backlogs[i] + stats.total_departures[i]
    });
    window && run
}

/// One-slot change of the Lyapunov function `V(X) = sum_i X_i^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftSample {
    pub slot: u64,
    pub v_before: u64,
    pub v_after: u64,
    /// `sum_i X_i` at `slot`.
    pub total_backlog: u64,
}

impl DriftSample {
    pub fn drift(&self) -> f64 {
        self.v_after as f64 - self.v_before as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftBin {
    /// Inclusive lower edge of the total-backlog range.
    pub lower: u64,
    pub count: u64,
    pub mean_backlog: f64,
    pub mean_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub bin_width: u64,
    /// `b / epsilon`: the backlog level beyond which the drift must be negative.
    pub threshold: f64,
    pub bins: Vec<DriftBin>,
    /// Number of (nonempty) bins entirely above the threshold.
    pub bins_above: usize,
    /// Fraction of those whose mean drift exceeds `b - epsilon * mean backlog`.
    pub exceeding_fraction: f64,
}

impl DriftReport {
    fn above(&self, min_count: u64) -> impl Iterator<Item = &DriftBin> {
        let threshold = self.threshold;
        self.bins.iter().filter(move |b| b.lower as f64 >= threshold && b.count >= min_count)
    }

    /// Number of bins above the threshold with at least `min_count` samples.
    pub fn bins_checked(&self, min_count: u64) -> usize {
        self.above(min_count).count()
    }

    /// True if every bin above the threshold with at least `min_count` samples has negative mean drift.
    pub fn negative_above_threshold(&self, min_count: u64) -> bool {
        self.above(min_count).all(|b| b.mean_drift < 0.0)
    }
}

/// Bins drift samples by total backlog (bin width `max(1, b / (10 epsilon))`).
pub fn empirical_drift(samples: &[DriftSample], epsilon: f64, b: f64) -> Result<DriftReport> {
    if samples.is_empty() {
        return Err(Error::Empty("drift samples"));
    }
    if !(epsilon > 0.0) || !(b >= 0.0) {
        return Err(Error::invalid("epsilon", "need epsilon > 0 and b >= 0"));
    }
    let bin_width = (libm::floor(b / (10.0 * epsilon)) as u64).max(1);
    let max_bin = samples.iter().map(|s| s.total_backlog / bin_width).max().unwrap_or(0) as usize;
    let mut acc = alloc::vec![(0u64, 0.0f64, 0.0f64); max_bin + 1];
    for s in samples {
        let slot = &mut acc[(s.total_backlog / bin_width) as usize];
        slot.0 += 1;
        slot.1 += s.total_backlog as f64;
        slot.2 += s.drift();
    }
    let bins: Vec<DriftBin> = acc
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(idx, (count, backlog, drift))| DriftBin {
            lower: idx as u64 * bin_width,
            count,
            mean_backlog: backlog / count as f64,
            mean_drift: drift / count as f64,
        })
        .collect();
    let threshold = b / epsilon;
    let above: Vec<&DriftBin> = bins.iter().filter(|bin| bin.lower as f64 >= threshold).collect();
    let exceeding = above.iter().filter(|bin| bin.mean_drift > b - epsilon * bin.mean_backlog).count();
    let exceeding_fraction = if above.is_empty() { 0.0 } else { exceeding as f64 / above.len() as f64 };
    Ok(DriftReport { bin_width, threshold, bins_above: above.len(), bins, exceeding_fraction })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub within: bool,
    /// Time-average total occupancy divided by the bound.
    pub ratio: f64,
}

pub fn bound_check(stats: &RunStats, bound: f64) -> BoundCheck {
    let occ = stats.time_avg_total_occupancy();
    BoundCheck { within: occ <= bound, ratio: occ / bound }
}
