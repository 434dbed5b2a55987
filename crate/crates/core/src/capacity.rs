//! Closed-form capacity-region conditions.
//!
//! For a nonempty queue subset `Q` the service any policy can give `Q` per
//! slot is at most `sum_k (1 - prod_{i in Q} (1 - p_ik))`, the expected number
//! of servers connected to at least one queue of `Q`. The capacity margin
//!
//! `m = max_Q { sum_{i in Q} lambda_i - K + sum_k prod_{i in Q} (1 - p_ik) }`
//!
//! is negative exactly in the interior of the region, where AS/LCQ satisfies
//! the drift bound `E[dV | X] <= B - eps * sum_i X_i` with
//! `B = sum_i E[A_i^2] + 2K^2 - K` and `eps = -2m / L`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ConnectivityModel;

/// Largest `L` for which [`capacity_margin`] enumerates subsets.
pub const ENUMERATION_LIMIT: usize = 24;

/// Tolerance on the sign of `m` for the membership verdicts.
pub const SIGN_TOLERANCE: f64 = 1e-12;

/// Stationary mean arrival rates, packets per slot, one per queue.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector(Vec<f64>);

impl RateVector {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some((i, r)) = rates.iter().enumerate().find(|(_, r)| !(**r >= 0.0 && r.is_finite())) {
            return Err(Error::invalid(format!("rates[{}]", i), format!("rate {} must be finite and nonnegative", r)));
        }
        Ok(Self(rates))
    }

    pub fn uniform(num_queues: usize, rate: f64) -> Result<Self> {
        Self::new(vec![rate; num_queues])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    /// Weak inequality holds for every subset.
    pub inside_closure: bool,
    /// Strict inequality holds for every subset.
    pub inside_interior: bool,
    pub margin_m: f64,
    /// 0-based queue indices of the lexicographically smallest maximizing subset.
    pub worst_subset: Vec<usize>,
    /// `(subset mask, RHS - LHS)` for every nonempty subset, when requested.
    pub per_subset_slack: Option<Vec<(u32, f64)>>,
}

impl CapacityReport {
    fn from_margin(margin_m: f64, worst_subset: Vec<usize>) -> Self {
        Self {
            inside_closure: margin_m <= SIGN_TOLERANCE,
            inside_interior: margin_m < -SIGN_TOLERANCE,
            margin_m,
            worst_subset,
            per_subset_slack: None,
        }
    }

    /// The Lyapunov constant `eps = -2m / L`.
    pub fn epsilon(&self, num_queues: usize) -> f64 {
        -2.0 * self.margin_m / num_queues as f64
    }
}

fn check_dims(rates: &RateVector, probs: &ConnectivityModel) -> Result<()> {
    if rates.len() != probs.num_queues() {
        return Err(Error::invalid(
            "rates",
            format!("expected {} rates (one per queue), found {}", probs.num_queues(), rates.len()),
        ));
    }
    Ok(())
}

/// `sum_k (1 - prod_{i in Q} (1 - p_ik))` for the 0-based queue indices in `subset`.
pub fn subset_rhs(subset: &[usize], probs: &ConnectivityModel) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Empty("queue subset"));
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= probs.num_queues()) {
        return Err(Error::invalid("subset", format!("queue {} out of range", i + 1)));
    }
    let mut sum = 0.0;
    for k in 0..probs.num_servers() {
        let miss: f64 = subset.iter().map(|&i| 1.0 - probs.prob(i, k)).product();
        sum += 1.0 - miss;
    }
    Ok(sum)
}

/// Left-hand side minus right-hand side accumulated the same way by both
/// enumeration routes: `(rate_sum - K) + sum_k miss_k`.
#[inline]
fn excess(rate_sum: f64, num_servers: usize, miss: &[f64]) -> f64 {
    let mut m = rate_sum - num_servers as f64;
    for &x in miss {
        m += x;
    }
    m
}

/// Exact margin over all `2^L - 1` nonempty subsets.
///
/// Subsets are visited depth-first in lexicographic order of their sorted
/// index lists, extending the rate sum and the per-server miss products by
/// one queue at a time.
pub fn capacity_margin(rates: &RateVector, probs: &ConnectivityModel) -> Result<CapacityReport> {
    capacity_margin_impl(rates, probs, false)
}

/// Like [`capacity_margin`] but also records the slack of every subset.
pub fn capacity_margin_with_slack(rates: &RateVector, probs: &ConnectivityModel) -> Result<CapacityReport> {
    capacity_margin_impl(rates, probs, true)
}

fn capacity_margin_impl(rates: &RateVector, probs: &ConnectivityModel, keep_slack: bool) -> Result<CapacityReport> {
    check_dims(rates, probs)?;
    let l = probs.num_queues();
    let k = probs.num_servers();
    if l > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit { num_queues: l, limit: ENUMERATION_LIMIT });
    }

    struct Search<'a> {
        rates: &'a [f64],
        probs: &'a ConnectivityModel,
        k: usize,
        // One row of `k` miss products per depth.
        miss: Vec<f64>,
        rate_sum: Vec<f64>,
        path: Vec<usize>,
        best: f64,
        best_path: Vec<usize>,
        slack: Option<Vec<(u32, f64)>>,
    }

    impl Search<'_> {
        fn visit(&mut self, depth: usize, next: usize, mask: u32) {
            let l = self.rates.len();
            for i in next..l {
                let k = self.k;
                let (prev, cur) = self.miss.split_at_mut(depth * k + k);
                let prev = &prev[depth * k..];
                let cur = &mut cur[..k];
                for s in 0..k {
                    cur[s] = prev[s] * (1.0 - self.probs.prob(i, s));
                }
                let rate_sum = self.rate_sum[depth] + self.rates[i];
                self.rate_sum[depth + 1] = rate_sum;
                let value = excess(rate_sum, k, cur);
                self.path.push(i);
                let mask = mask | 1 << i;
                if let Some(slack) = self.slack.as_mut() {
                    slack.push((mask, -value));
                }
                if value > self.best {
                    self.best = value;
                    self.best_path.clone_from(&self.path);
                }
                self.visit(depth + 1, i + 1, mask);
                self.path.pop();
            }
        }
    }

    let mut miss = vec![1.0; (l + 1) * k];
    miss[k..].fill(0.0);
    let mut search = Search {
        rates: rates.as_slice(),
        probs,
        k,
        miss,
        rate_sum: vec![0.0; l + 1],
        path: Vec::with_capacity(l),
        best: f64::NEG_INFINITY,
        best_path: Vec::new(),
        slack: keep_slack.then(Vec::new),
    };
    search.visit(0, 0, 0);
    let mut report = CapacityReport::from_margin(search.best, search.best_path);
    if let Some(mut slack) = search.slack {
        slack.sort_unstable_by_key(|&(mask, _)| mask);
        report.per_subset_slack = Some(slack);
    }
    Ok(report)
}

/// True if all rates are equal and all rows of `probs` are equal.
pub fn is_symmetric(rates: &RateVector, probs: &ConnectivityModel) -> bool {
    let r = rates.as_slice();
    r.windows(2).all(|w| w[0] == w[1]) && (1..probs.num_queues()).all(|i| probs.row(i) == probs.row(0))
}

/// O(L*K) margin for symmetric inputs: only the subset size matters, so the
/// maximum is taken over the prefixes `{1..n}`.
///
/// Returns `None` when the inputs are not symmetric.
pub fn capacity_margin_symmetric(rates: &RateVector, probs: &ConnectivityModel) -> Result<Option<CapacityReport>> {
    check_dims(rates, probs)?;
    if !is_symmetric(rates, probs) {
        return Ok(None);
    }
    let k = probs.num_servers();
    let mut miss = vec![1.0; k];
    let mut rate_sum = 0.0;
    let mut best = f64::NEG_INFINITY;
    let mut best_size = 0;
    for n in 0..probs.num_queues() {
        for (s, m) in miss.iter_mut().enumerate() {
            *m *= 1.0 - probs.prob(n, s);
        }
        rate_sum += rates.as_slice()[n];
        let value = excess(rate_sum, k, &miss);
        if value > best {
            best = value;
            best_size = n + 1;
        }
    }
    Ok(Some(CapacityReport::from_margin(best, (0..best_size).collect())))
}

/// Weak subset inequalities (`m <= 0`): necessary for stability.
pub fn check_necessary(rates: &RateVector, probs: &ConnectivityModel) -> Result<bool> {
    Ok(capacity_margin(rates, probs)?.inside_closure)
}

/// Strict subset inequalities (`m < 0`): AS/LCQ is stable.
pub fn check_sufficient(rates: &RateVector, probs: &ConnectivityModel) -> Result<bool> {
    Ok(capacity_margin(rates, probs)?.inside_interior)
}

/// Per-queue rate on the boundary of the symmetric region, `(K - K(1-p)^L) / L`.
pub fn symmetric_cube_side(num_queues: usize, num_servers: usize, p: f64) -> f64 {
    let k = num_servers as f64;
    (k - k * libm::pow(1.0 - p, num_queues as f64)) / num_queues as f64
}

/// Drift constant `B = sum_second_moments + 2K^2 - K`.
pub fn drift_constant(num_servers: usize, sum_second_moments: f64) -> f64 {
    let k = num_servers as f64;
    sum_second_moments + 2.0 * k * k - k
}

/// Upper bound `B / eps` on the time-average total occupancy under AS/LCQ.
///
/// With `sum_second_moments = L * A_max^2` this is
/// `-(L/2) (L A_max^2 + K(2K-1)) / m`.
pub fn occupancy_bound(num_queues: usize, num_servers: usize, sum_second_moments: f64, margin_m: f64) -> Result<f64> {
    if !(margin_m < 0.0) {
        return Err(Error::OutsideInterior { margin: margin_m });
    }
    let eps = -2.0 * margin_m / num_queues as f64;
    Ok(drift_constant(num_servers, sum_second_moments) / eps)
}
