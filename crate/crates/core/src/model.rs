//! Domain types shared by the engine, the policies and the analysis code.
//!
//! Queues are indexed `0..L` and servers `0..K` internally. Matrices are
//! stored row-major with one row per queue.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

/// Link probabilities `p_ik = E[G_ik(t)]`, one row per queue.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityModel {
    num_queues: usize,
    num_servers: usize,
    probs: Vec<f64>,
    thresholds: Vec<LinkThreshold>,
}

/// A link probability quantized for a single 32-bit draw.
#[derive(Debug, Clone, Copy, PartialEq)]
enum LinkThreshold {
    Never,
    Always,
    Below(u32),
}

impl LinkThreshold {
    fn new(p: f64) -> Self {
        if p <= 0.0 {
            LinkThreshold::Never
        } else if p >= 1.0 {
            LinkThreshold::Always
        } else {
            LinkThreshold::Below(libm::round(p * 4_294_967_296.0).min(u32::MAX as f64) as u32)
        }
    }
}

impl ConnectivityModel {
    pub fn new(num_queues: usize, num_servers: usize, probs: Vec<f64>) -> Result<Self> {
        if num_queues == 0 || num_servers == 0 {
            return Err(Error::invalid("connectivity", "dimensions must be positive"));
        }
        if probs.len() != num_queues * num_servers {
            return Err(Error::invalid(
                "connectivity.probs",
                format!("expected {}x{} entries, found {}", num_queues, num_servers, probs.len()),
            ));
        }
        for (idx, p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::invalid(
                    format!("connectivity.probs[{}][{}]", idx / num_servers, idx % num_servers),
                    format!("probability {} is outside [0, 1]", p),
                ));
            }
        }
        let thresholds = probs.iter().map(|&p| LinkThreshold::new(p)).collect();
        Ok(Self { num_queues, num_servers, probs, thresholds })
    }

    /// Builds a model from one row per queue.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_queues = rows.len();
        let num_servers = rows.first().map_or(0, Vec::len);
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != num_servers) {
            return Err(Error::invalid(
                format!("connectivity.probs[{}]", i),
                format!("expected {} columns, found {}", num_servers, row.len()),
            ));
        }
        Self::new(num_queues, num_servers, rows.concat())
    }

    /// Every link has the same probability `p`.
    pub fn uniform(num_queues: usize, num_servers: usize, p: f64) -> Result<Self> {
        Self::new(num_queues, num_servers, vec![p; num_queues * num_servers])
    }

    pub fn num_queues(&self) -> usize {
        self.num_queues
    }

    pub fn num_servers(&self) -> usize {
        self.num_servers
    }

    #[inline]
    pub fn prob(&self, queue: usize, server: usize) -> f64 {
        self.probs[queue * self.num_servers + server]
    }

    pub fn row(&self, queue: usize) -> &[f64] {
        &self.probs[queue * self.num_servers..(queue + 1) * self.num_servers]
    }

    /// Draws one realization `G(t)`; every link is an independent Bernoulli draw.
    ///
    /// Link probabilities are resolved to 2^-32; 0 and 1 are exact.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ConnectivityMatrix {
        let mut out = ConnectivityMatrix::new(self.num_queues, self.num_servers, vec![false; self.probs.len()])
            .expect("dimensions match");
        self.sample_into(rng, &mut out);
        out
    }

    /// Like [`sample`](Self::sample) but overwrites `out`, which must have the model's dimensions.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut ConnectivityMatrix) {
        debug_assert_eq!(out.links.len(), self.probs.len());
        for (link, t) in out.links.iter_mut().zip(&self.thresholds) {
            *link = match *t {
                LinkThreshold::Never => false,
                LinkThreshold::Always => true,
                LinkThreshold::Below(limit) => rng.next_u32() < limit,
            };
        }
    }
}

/// One slot's link realization `G(t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityMatrix {
    num_queues: usize,
    num_servers: usize,
    links: Vec<bool>,
}

impl ConnectivityMatrix {
    pub fn new(num_queues: usize, num_servers: usize, links: Vec<bool>) -> Result<Self> {
        if links.len() != num_queues * num_servers {
            return Err(Error::invalid(
                "links",
                format!("expected {}x{} entries, found {}", num_queues, num_servers, links.len()),
            ));
        }
        Ok(Self { num_queues, num_servers, links })
    }

    /// Builds a matrix from 0/1 rows, one per queue.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let num_servers = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != num_servers) {
            return Err(Error::invalid("links", "ragged rows"));
        }
        let links = rows.iter().flat_map(|r| r.iter().map(|&b| b != 0)).collect();
        Self::new(rows.len(), num_servers, links)
    }

    /// Decodes a matrix from the low `L*K` bits of `bits`, row-major.
    pub fn from_bits(num_queues: usize, num_servers: usize, bits: u64) -> Self {
        let links = (0..num_queues * num_servers).map(|b| bits >> b & 1 == 1).collect();
        Self { num_queues, num_servers, links }
    }

    pub fn num_queues(&self) -> usize {
        self.num_queues
    }

    pub fn num_servers(&self) -> usize {
        self.num_servers
    }

    #[inline]
    pub fn is_on(&self, queue: usize, server: usize) -> bool {
        self.links[queue * self.num_servers + server]
    }

    /// Number of queues connected to `server` (the column sum).
    pub fn server_degree(&self, server: usize) -> usize {
        (0..self.num_queues).filter(|&i| self.is_on(i, server)).count()
    }
}

/// Per-slot arrival distribution of one queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalModel {
    /// One packet with probability `rate`.
    Bernoulli {
        rate: f64,
    },
    Poisson {
        rate: f64,
    },
    /// `batch` packets every `period` slots, on slots `t` with `t % period == 0`.
    Deterministic {
        batch: u64,
        period: u64,
    },
}

impl ArrivalModel {
    pub fn validate(&self, field: &str) -> Result<()> {
        match *self {
            ArrivalModel::Bernoulli { rate } if !(0.0..=1.0).contains(&rate) => {
                Err(Error::invalid(field, format!("bernoulli rate {} is outside [0, 1]", rate)))
            }
            ArrivalModel::Poisson { rate } if !(rate >= 0.0 && rate.is_finite()) => {
                Err(Error::invalid(field, format!("poisson rate {} must be finite and nonnegative", rate)))
            }
            ArrivalModel::Deterministic { period: 0, .. } => {
                Err(Error::invalid(field, "deterministic period must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Mean arrivals per slot, `E[A]`.
    pub fn mean(&self) -> f64 {
        match *self {
            ArrivalModel::Bernoulli { rate } | ArrivalModel::Poisson { rate } => rate,
            ArrivalModel::Deterministic { batch, period } => batch as f64 / period as f64,
        }
    }

    /// `E[A^2]`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            ArrivalModel::Bernoulli { rate } => rate,
            ArrivalModel::Poisson { rate } => rate + rate * rate,
            ArrivalModel::Deterministic { batch, period } => (batch * batch) as f64 / period as f64,
        }
    }

    /// Square of the largest possible per-slot arrival count, if the support is bounded.
    pub fn max_square(&self) -> Option<f64> {
        match *self {
            ArrivalModel::Bernoulli { .. } => Some(1.0),
            ArrivalModel::Poisson { .. } => None,
            ArrivalModel::Deterministic { batch, .. } => Some((batch * batch) as f64),
        }
    }

    /// Draws the arrival count for slot `slot`.
    pub fn sample<R: Rng + ?Sized>(&self, slot: u64, rng: &mut R) -> u64 {
        match *self {
            ArrivalModel::Bernoulli { rate } => rng.random_bool(rate) as u64,
            ArrivalModel::Poisson { rate } => {
                if rate <= 0.0 {
                    0
                } else {
                    // Validated rates are finite and positive, so construction cannot fail.
                    let dist = Poisson::new(rate).expect("validated poisson rate");
                    dist.sample(rng) as u64
                }
            }
            ArrivalModel::Deterministic { batch, period } => {
                if slot.is_multiple_of(period) {
                    batch
                } else {
                    0
                }
            }
        }
    }
}

/// Samples one arrival count per queue, in queue order.
pub fn sample_arrivals<R: Rng + ?Sized>(models: &[ArrivalModel], slot: u64, rng: &mut R) -> Vec<u64> {
    models.iter().map(|m| m.sample(slot, rng)).collect()
}

/// Like [`sample_arrivals`] but writes into `out`.
pub fn sample_arrivals_into<R: Rng + ?Sized>(models: &[ArrivalModel], slot: u64, rng: &mut R, out: &mut [u64]) {
    for (a, m) in out.iter_mut().zip(models) {
        *a = m.sample(slot, rng);
    }
}

/// Backlogs `X(t)` at the end of a slot, after arrivals have been added.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueueState(pub Vec<u64>);

impl QueueState {
    pub fn zeros(num_queues: usize) -> Self {
        QueueState(vec![0; num_queues])
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Lyapunov function `V(X) = sum_i X_i^2`.
    pub fn lyapunov(&self) -> u64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Server-to-queue assignment `h(t)` for one slot.
///
/// Stored per server, so a server can never be assigned to two queues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationMatrix {
    num_queues: usize,
    assignment: Vec<Option<usize>>,
}

impl AllocationMatrix {
    pub fn idle(num_queues: usize, num_servers: usize) -> Self {
        Self { num_queues, assignment: vec![None; num_servers] }
    }

    pub fn from_assignment(num_queues: usize, assignment: Vec<Option<usize>>) -> Self {
        Self { num_queues, assignment }
    }

    pub fn num_queues(&self) -> usize {
        self.num_queues
    }

    pub fn num_servers(&self) -> usize {
        self.assignment.len()
    }

    pub fn assign(&mut self, server: usize, queue: usize) {
        self.assignment[server] = Some(queue);
    }

    /// Queue served by `server`, if any.
    pub fn queue_of(&self, server: usize) -> Option<usize> {
        self.assignment[server]
    }

    /// `h_ik`.
    pub fn get(&self, queue: usize, server: usize) -> bool {
        self.assignment[server] == Some(queue)
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    /// Departures per queue, `sum_k h_ik`.
    pub fn departures(&self) -> Vec<u64> {
        let mut out = vec![0; self.num_queues];
        self.departures_into(&mut out);
        out
    }

    pub fn departures_into(&self, out: &mut [u64]) {
        out.fill(0);
        for q in self.assignment.iter().flatten() {
            out[*q] += 1;
        }
    }

    pub(crate) fn clear(&mut self) {
        self.assignment.fill(None);
    }

    pub fn idle_servers(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }

    /// Checks the slot invariants against the links and the start-of-slot backlogs.
    pub fn validate(&self, links: &ConnectivityMatrix, backlogs: &[u64]) -> core::result::Result<(), String> {
        let mut departures = vec![0; self.num_queues];
        self.validate_with(links, backlogs, &mut departures)
    }

    /// Like [`validate`](Self::validate); leaves the departures per queue in `departures`.
    pub fn validate_with(
        &self,
        links: &ConnectivityMatrix,
        backlogs: &[u64],
        departures: &mut [u64],
    ) -> core::result::Result<(), String> {
        if self.assignment.len() != links.num_servers() || self.num_queues != links.num_queues() {
            return Err("allocation dimensions do not match the links".into());
        }
        departures.fill(0);
        for (server, queue) in self.assignment.iter().enumerate() {
            if let Some(q) = *queue {
                if q >= self.num_queues {
                    return Err(format!("server {} assigned to unknown queue {}", server + 1, q + 1));
                }
                if !links.is_on(q, server) {
                    return Err(format!("server {} assigned to disconnected queue {}", server + 1, q + 1));
                }
                departures[q] += 1;
            }
        }
        for (q, (d, x)) in departures.iter().zip(backlogs).enumerate() {
            if d > x {
                return Err(format!("queue {} served {} times with backlog {}", q + 1, d, x));
            }
        }
        Ok(())
    }
}
