//! Exact stationary analysis of tiny systems.
//!
//! The backlog process of a system with Bernoulli arrivals and a deterministic
//! policy is a Markov chain on `N^L`. Truncating every backlog at a cap `C`
//! (arrivals that would push a queue above `C` are dropped) gives a finite
//! chain on `{0..C}^L`, whose transition kernel is built by enumerating all
//! `2^(LK)` link realizations and all `2^L` arrival outcomes. The stationary
//! vector is found by power iteration.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ConnectivityMatrix, ConnectivityModel};
use crate::policy::{self, PolicySpec};
use crate::rng::Streams;

pub const MAX_QUEUES: usize = 3;
pub const MAX_SERVERS: usize = 2;
pub const DEFAULT_TRUNCATION_THRESHOLD: f64 = 1e-6;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 2_000_000;

/// Sparse (CSR) transition kernel of the truncated backlog chain.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    pub num_queues: usize,
    pub cap: u32,
    row_start: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub mean_occupancy: f64,
    /// Stationary mass of states with at least one queue at the cap.
    pub truncation_mass: f64,
    pub iterations: usize,
    pub num_states: usize,
}

impl TruncatedChain {
    pub fn build(probs: &ConnectivityModel, rates: &[f64], spec: &PolicySpec, cap: u32) -> Result<Self> {
        let l = probs.num_queues();
        let k = probs.num_servers();
        if l > MAX_QUEUES || k > MAX_SERVERS {
            return Err(Error::Oracle(format!(
                "{}x{} system exceeds the supported size {}x{}",
                l, k, MAX_QUEUES, MAX_SERVERS
            )));
        }
        if rates.len() != l {
            return Err(Error::invalid("rates", format!("expected {} rates, found {}", l, rates.len())));
        }
        if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid("rates", format!("bernoulli rate {} is outside [0, 1]", r)));
        }
        if !spec.is_deterministic() {
            return Err(Error::Oracle("randomized policies are not supported".into()));
        }
        if cap == 0 {
            return Err(Error::invalid("cap", "must be at least 1"));
        }
        spec.validate(k)?;

        let side = cap as usize + 1;
        let num_states = side.pow(l as u32);

        let link_outcomes: Vec<(ConnectivityMatrix, f64)> = (0..1u64 << (l * k))
            .map(|bits| {
                let g = ConnectivityMatrix::from_bits(l, k, bits);
                let mut w = 1.0;
                for i in 0..l {
                    for s in 0..k {
                        let p = probs.prob(i, s);
                        w *= if g.is_on(i, s) { p } else { 1.0 - p };
                    }
                }
                (g, w)
            })
            .filter(|(_, w)| *w > 0.0)
            .collect();
        let arrival_outcomes: Vec<(u32, f64)> = (0..1u32 << l)
            .map(|bits| {
                let w: f64 = (0..l).map(|i| if bits >> i & 1 == 1 { rates[i] } else { 1.0 - rates[i] }).product();
                (bits, w)
            })
            .filter(|(_, w)| *w > 0.0)
            .collect();

        // Only deterministic specs reach here, so the stream is never consumed.
        let mut unused = Streams::new(0).policy;
        let mut row_start = Vec::with_capacity(num_states + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        let mut x = vec![0u64; l];
        let mut row: Vec<(usize, f64)> = Vec::new();
        for state in 0..num_states {
            decode(state, side, &mut x);
            row.clear();
            for (g, wg) in &link_outcomes {
                let departures = policy::allocate(spec, &x, g, &mut unused).departures();
                for &(bits, wa) in &arrival_outcomes {
                    let mut next = 0;
                    let mut stride = 1;
                    for i in 0..l {
                        let a = (bits >> i & 1) as u64;
                        let xi = (x[i] - departures[i] + a).min(cap as u64);
                        next += xi as usize * stride;
                        stride *= side;
                    }
                    match row.iter_mut().find(|(t, _)| *t == next) {
                        Some(entry) => entry.1 += wg * wa,
                        None => row.push((next, wg * wa)),
                    }
                }
            }
            row.sort_unstable_by_key(|e| e.0);
            row_start.push(targets.len());
            for &(t, w) in &row {
                targets.push(t);
                weights.push(w);
            }
        }
        row_start.push(targets.len());
        Ok(Self { num_queues: l, cap, row_start, targets, weights })
    }

    pub fn num_states(&self) -> usize {
        self.row_start.len() - 1
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        (0..self.num_states())
            .map(|s| (self.weights[self.row_start[s]..self.row_start[s + 1]].iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Decodes state index `state` into per-queue backlogs.
    pub fn backlogs(&self, state: usize) -> Vec<u64> {
        let mut x = vec![0; self.num_queues];
        decode(state, self.cap as usize + 1, &mut x);
        x
    }

    /// Stationary vector by power iteration from the uniform distribution,
    /// stopping when successive iterates are within `CONVERGENCE_TOLERANCE` in L1.
    pub fn stationary(&self) -> Result<(Vec<f64>, usize)> {
        let n = self.num_states();
        let mut pi = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        for iteration in 1..=MAX_ITERATIONS {
            next.fill(0.0);
            for (s, &mass) in pi.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for e in self.row_start[s]..self.row_start[s + 1] {
                    next[self.targets[e]] += mass * self.weights[e];
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= total);
            let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            core::mem::swap(&mut pi, &mut next);
            if diff < CONVERGENCE_TOLERANCE {
                return Ok((pi, iteration));
            }
        }
        Err(Error::Oracle(format!("power iteration did not converge in {} iterations", MAX_ITERATIONS)))
    }
}

fn decode(mut state: usize, side: usize, x: &mut [u64]) {
    for xi in x.iter_mut() {
        *xi = (state % side) as u64;
        state /= side;
    }
}

/// Stationary mean total occupancy of the system truncated at `cap`.
///
/// Refuses with [`Error::Truncation`] when the mass at the cap is above
/// `truncation_threshold`.
pub fn exact_mean_occupancy(
    probs: &ConnectivityModel,
    rates: &[f64],
    spec: &PolicySpec,
    cap: u32,
    truncation_threshold: f64,
) -> Result<OracleResult> {
    let chain = TruncatedChain::build(probs, rates, spec, cap)?;
    let (pi, iterations) = chain.stationary()?;
    let mut mean = 0.0;
    let mut truncation_mass = 0.0;
    for (s, &mass) in pi.iter().enumerate() {
        let x = chain.backlogs(s);
        mean += mass * x.iter().sum::<u64>() as f64;
        if x.contains(&(cap as u64)) {
            truncation_mass += mass;
        }
    }
    if truncation_mass > truncation_threshold {
        return Err(Error::Truncation { cap, mass: truncation_mass, threshold: truncation_threshold });
    }
    Ok(OracleResult { mean_occupancy: mean, truncation_mass, iterations, num_states: chain.num_states() })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stationary mean of the single-queue, single-server chain, solved from
    /// its birth-death balance equations.
    fn birth_death_mean(p: f64, lambda: f64) -> f64 {
        // pi_1 = pi_0 * lambda / (p (1 - lambda)); pi_{n+1} = pi_n * r with r = (1-p) lambda / (p (1 - lambda)).
        let r = (1.0 - p) * lambda / (p * (1.0 - lambda));
        let c = lambda / (p * (1.0 - lambda));
        // sum pi = pi0 (1 + c / (1 - r)); sum n pi_n = pi0 c / (1 - r)^2
        let pi0 = 1.0 / (1.0 + c / (1.0 - r));
        pi0 * c / ((1.0 - r) * (1.0 - r))
    }

    #[test]
    fn zero_arrivals_concentrate_at_origin() {
        let probs = ConnectivityModel::uniform(2, 1, 0.8).unwrap();
        let r = exact_mean_occupancy(&probs, &[0.0, 0.0], &PolicySpec::lcsf_lcq(), 5, 1e-6).unwrap();
        assert!(r.mean_occupancy.abs() < 1e-9);
    }

    #[test]
    fn full_connectivity_single_queue() {
        // With p = 1 the backlog after each slot is exactly the new arrival.
        let probs = ConnectivityModel::uniform(1, 1, 1.0).unwrap();
        let r = exact_mean_occupancy(&probs, &[0.35], &PolicySpec::as_lcq(), 4, 1e-6).unwrap();
        assert!((r.mean_occupancy - 0.35).abs() < 1e-9);
        assert!((birth_death_mean(1.0, 0.35) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn single_queue_matches_birth_death() {
        let probs = ConnectivityModel::uniform(1, 1, 0.7).unwrap();
        let r = exact_mean_occupancy(&probs, &[0.4], &PolicySpec::as_lcq(), 80, 1e-6).unwrap();
        assert!((r.mean_occupancy - birth_death_mean(0.7, 0.4)).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn rows_are_stochastic() {
        let probs = ConnectivityModel::from_rows(&[vec![0.8, 0.3], vec![0.5, 0.6]]).unwrap();
        let chain = TruncatedChain::build(&probs, &[0.3, 0.4], &PolicySpec::as_lcq(), 10).unwrap();
        assert!(chain.max_row_error() < 1e-12);
        let (pi, _) = chain.stationary().unwrap();
        assert!(pi.iter().all(|&v| v >= 0.0));
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_relabeling_invariance() {
        // Swapping the two queues of a symmetric system only flips the tie-break direction.
        let probs = ConnectivityModel::uniform(2, 2, 0.6).unwrap();
        let chain = TruncatedChain::build(&probs, &[0.3, 0.3], &PolicySpec::lcsf_lcq(), 30).unwrap();
        let (pi, _) = chain.stationary().unwrap();
        let side = 31;
        let (mut m1, mut m2) = (0.0, 0.0);
        for (s, &mass) in pi.iter().enumerate() {
            m1 += mass * (s % side) as f64;
            m2 += mass * (s / side) as f64;
        }
        let total = exact_mean_occupancy(&probs, &[0.3, 0.3], &PolicySpec::lcsf_lcq(), 30, 1e-6).unwrap();
        assert!((m1 + m2 - total.mean_occupancy).abs() < 1e-9);
        // Relabeling the servers of a symmetric system is a symmetry of the chain.
        let reversed = PolicySpec {
            ordering: crate::policy::ServerOrdering::FixedPermutation(vec![1, 0]),
            ..PolicySpec::as_lcq()
        };
        let a = exact_mean_occupancy(&probs, &[0.3, 0.3], &PolicySpec::as_lcq(), 30, 1e-6).unwrap();
        let b = exact_mean_occupancy(&probs, &[0.3, 0.3], &reversed, 30, 1e-6).unwrap();
        assert!((a.mean_occupancy - b.mean_occupancy).abs() < 1e-8);
    }

    #[test]
    fn larger_cap_agrees() {
        let probs = ConnectivityModel::uniform(2, 1, 0.8).unwrap();
        let a = exact_mean_occupancy(&probs, &[0.3, 0.3], &PolicySpec::lcsf_lcq(), 40, 1e-6).unwrap();
        let b = exact_mean_occupancy(&probs, &[0.3, 0.3], &PolicySpec::lcsf_lcq(), 80, 1e-6).unwrap();
        assert!((a.mean_occupancy - b.mean_occupancy).abs() <= a.truncation_mass + 1e-8);
    }

    #[test]
    fn refusals() {
        let probs = ConnectivityModel::uniform(2, 1, 0.8).unwrap();
        let err = exact_mean_occupancy(&probs, &[0.3, 0.3], &PolicySpec::lcsf_lcq(), 3, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Truncation { cap: 3, .. }));
        assert!(TruncatedChain::build(&probs, &[0.3, 0.3], &PolicySpec::randomized(), 5).is_err());
        let big = ConnectivityModel::uniform(4, 1, 0.8).unwrap();
        assert!(TruncatedChain::build(&big, &[0.1; 4], &PolicySpec::as_lcq(), 5).is_err());
    }
}
