//! Server allocation policies.
//!
//! A policy is a server-ordering rule composed with a per-server queue
//! selection rule, evaluated under one of two backlog update modes:
//!
//! * [`UpdateMode::Batch`]: every server looks at the start-of-slot backlogs.
//!   A server whose chosen queue already has as many servers as packets stays
//!   idle. AS/LCQ is `(any ordering, LongestConnected, Batch)`.
//! * [`UpdateMode::Sequential`]: the working backlog of a queue drops by one
//!   on every assignment, which makes the policy work-conserving.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{AllocationMatrix, ConnectivityMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerOrdering {
    /// Servers `1..K` in index order.
    Natural,
    /// A fixed permutation of the server indices (0-based).
    FixedPermutation(Vec<usize>),
    /// A fresh uniform permutation each slot, drawn from the policy stream.
    RandomPerSlot,
    /// Ascending number of connected queues; ties by lower server index.
    LeastConnectedFirst,
    /// Descending number of connected queues; ties by lower server index.
    MostConnectedFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueSelection {
    LongestConnected,
    ShortestConnectedNonempty,
    RandomConnectedNonempty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Batch,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySpec {
    pub ordering: ServerOrdering,
    pub selection: QueueSelection,
    pub update_mode: UpdateMode,
}

/// Stable configuration names of the built-in policies.
pub const POLICY_NAMES: [&str; 6] = ["as_lcq", "lcsf_lcq", "mcsf_lcq", "lcsf_scq", "mcsf_scq", "random"];

impl PolicySpec {
    pub const fn new(ordering: ServerOrdering, selection: QueueSelection, update_mode: UpdateMode) -> Self {
        Self { ordering, selection, update_mode }
    }

    /// Any Server / Longest Connected Queue with natural server order.
    pub const fn as_lcq() -> Self {
        Self::new(ServerOrdering::Natural, QueueSelection::LongestConnected, UpdateMode::Batch)
    }

    pub const fn lcsf_lcq() -> Self {
        Self::new(ServerOrdering::LeastConnectedFirst, QueueSelection::LongestConnected, UpdateMode::Sequential)
    }

    pub const fn mcsf_lcq() -> Self {
        Self::new(ServerOrdering::MostConnectedFirst, QueueSelection::LongestConnected, UpdateMode::Sequential)
    }

    pub const fn lcsf_scq() -> Self {
        Self::new(
            ServerOrdering::LeastConnectedFirst,
            QueueSelection::ShortestConnectedNonempty,
            UpdateMode::Sequential,
        )
    }

    pub const fn mcsf_scq() -> Self {
        Self::new(ServerOrdering::MostConnectedFirst, QueueSelection::ShortestConnectedNonempty, UpdateMode::Sequential)
    }

    /// Random server order, then a random connected nonempty queue per server.
    pub const fn randomized() -> Self {
        Self::new(ServerOrdering::RandomPerSlot, QueueSelection::RandomConnectedNonempty, UpdateMode::Sequential)
    }

    /// The built-in policy with configuration name `name`.
    pub fn named(name: &str) -> Option<Self> {
        Some(match name {
            "as_lcq" => Self::as_lcq(),
            "lcsf_lcq" => Self::lcsf_lcq(),
            "mcsf_lcq" => Self::mcsf_lcq(),
            "lcsf_scq" => Self::lcsf_scq(),
            "mcsf_scq" => Self::mcsf_scq(),
            "random" => Self::randomized(),
            _ => return None,
        })
    }

    /// Configuration name, if this spec is one of the built-in policies.
    pub fn name(&self) -> Option<&'static str> {
        POLICY_NAMES.into_iter().find(|n| Self::named(n).as_ref() == Some(self))
    }

    /// True if the allocation does not consume the policy stream.
    pub fn is_deterministic(&self) -> bool {
        self.ordering != ServerOrdering::RandomPerSlot && self.selection != QueueSelection::RandomConnectedNonempty
    }

    pub fn validate(&self, num_servers: usize) -> Result<()> {
        if let ServerOrdering::FixedPermutation(perm) = &self.ordering {
            let mut seen = alloc::vec![false; num_servers];
            let ok = perm.len() == num_servers
                && perm.iter().all(|&s| s < num_servers && !core::mem::replace(&mut seen[s], true));
            if !ok {
                return Err(Error::invalid(
                    "policy.ordering",
                    format!("{:?} is not a permutation of 1..{}", perm, num_servers),
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(name) => f.write_str(name),
            None => write!(f, "{:?}/{:?}/{:?}", self.ordering, self.selection, self.update_mode),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::named(s).ok_or_else(|| {
            Error::invalid("policy", format!("unknown policy {:?}; expected one of {:?}", s, POLICY_NAMES))
        })
    }
}

/// Order in which servers pick queues this slot.
pub fn order_servers<R: Rng + ?Sized>(
    ordering: &ServerOrdering,
    links: &ConnectivityMatrix,
    rng: &mut R,
) -> Vec<usize> {
    let mut order = Vec::with_capacity(links.num_servers());
    order_servers_into(ordering, links, rng, &mut order, &mut Vec::new());
    order
}

fn order_servers_into<R: Rng + ?Sized>(
    ordering: &ServerOrdering,
    links: &ConnectivityMatrix,
    rng: &mut R,
    order: &mut Vec<usize>,
    degrees: &mut Vec<usize>,
) {
    order.clear();
    order.extend(0..links.num_servers());
    match ordering {
        ServerOrdering::Natural => {}
        ServerOrdering::FixedPermutation(perm) => order.clone_from(perm),
        ServerOrdering::RandomPerSlot => order.shuffle(rng),
        ServerOrdering::LeastConnectedFirst | ServerOrdering::MostConnectedFirst => {
            degrees.clear();
            degrees.resize(links.num_servers(), 0);
            for i in 0..links.num_queues() {
                for (s, d) in degrees.iter_mut().enumerate() {
                    *d += links.is_on(i, s) as usize;
                }
            }
            if *ordering == ServerOrdering::MostConnectedFirst {
                degrees.iter_mut().for_each(|d| *d = usize::MAX - *d);
            }
            sort_by_key_stable(order, degrees);
        }
    }
}

/// Stable insertion sort of `order` by `keys[server]`, so ties keep index order.
fn sort_by_key_stable(order: &mut [usize], keys: &[usize]) {
    for i in 1..order.len() {
        let item = order[i];
        let mut j = i;
        while j > 0 && keys[order[j - 1]] > keys[item] {
            order[j] = order[j - 1];
            j -= 1;
        }
        order[j] = item;
    }
}

/// Queue picked by `server` given the working backlogs, or `None` if it idles.
pub fn select_queue<R: Rng + ?Sized>(
    selection: QueueSelection,
    server: usize,
    residual: &[u64],
    links: &ConnectivityMatrix,
    rng: &mut R,
) -> Option<usize> {
    let connected = (0..links.num_queues()).filter(|&i| links.is_on(i, server));
    match selection {
        // `max_by_key` keeps the last maximum, so scan in reverse to prefer the lowest index.
        QueueSelection::LongestConnected => connected.rev().max_by_key(|&i| residual[i]),
        QueueSelection::ShortestConnectedNonempty => {
            connected.filter(|&i| residual[i] > 0).min_by_key(|&i| residual[i])
        }
        QueueSelection::RandomConnectedNonempty => {
            let count = connected.clone().filter(|&i| residual[i] > 0).count();
            if count == 0 {
                return None;
            }
            let pick = rng.random_range(0..count);
            connected.filter(|&i| residual[i] > 0).nth(pick)
        }
    }
}

/// Reusable buffers for [`allocate_into`].
#[derive(Debug, Clone, Default)]
pub struct AllocationScratch {
    order: Vec<usize>,
    degrees: Vec<usize>,
    residual: Vec<u64>,
    assigned: Vec<u64>,
}

/// Computes the slot's allocation from the start-of-slot backlogs.
pub fn allocate<R: Rng + ?Sized>(
    spec: &PolicySpec,
    backlogs: &[u64],
    links: &ConnectivityMatrix,
    rng: &mut R,
) -> AllocationMatrix {
    let mut out = AllocationMatrix::idle(links.num_queues(), links.num_servers());
    allocate_into(spec, backlogs, links, rng, &mut AllocationScratch::default(), &mut out);
    out
}

/// Like [`allocate`] but reuses `scratch` and overwrites `out`.
pub fn allocate_into<R: Rng + ?Sized>(
    spec: &PolicySpec,
    backlogs: &[u64],
    links: &ConnectivityMatrix,
    rng: &mut R,
    scratch: &mut AllocationScratch,
    out: &mut AllocationMatrix,
) {
    out.clear();
    order_servers_into(&spec.ordering, links, rng, &mut scratch.order, &mut scratch.degrees);
    scratch.residual.clear();
    scratch.residual.extend_from_slice(backlogs);
    scratch.assigned.clear();
    scratch.assigned.resize(backlogs.len(), 0);
    for &server in &scratch.order {
        let Some(queue) = select_queue(spec.selection, server, &scratch.residual, links, rng) else {
            continue;
        };
        if scratch.assigned[queue] >= backlogs[queue] {
            // Only reachable in batch mode: the queue has no packet left for this server.
            continue;
        }
        scratch.assigned[queue] += 1;
        out.assign(server, queue);
        if spec.update_mode == UpdateMode::Sequential {
            scratch.residual[queue] -= 1;
        }
    }
}

/// Parses a 1-based permutation such as `"3,1,2"`.
pub fn parse_permutation(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim().parse::<usize>().ok().and_then(|v| v.checked_sub(1)).ok_or_else(|| {
                Error::invalid("policy.ordering", String::from("permutation entries must be integers >= 1"))
            })
        })
        .collect()
}
