//! The slotted backlog recursion.
//!
//! Events inside slot `t` happen in a fixed order: sample `G(t)`, let the
//! policy allocate servers against the start-of-slot backlogs `X(t-1)`,
//! remove departures, then add the arrivals `A(t)`:
//!
//! `X_i(t) = X_i(t-1) - sum_k h_ik(t) + A_i(t)`

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diagnostics::DriftSample;
use crate::error::{Error, Result};
use crate::model::{
    sample_arrivals, sample_arrivals_into, AllocationMatrix, ArrivalModel, ConnectivityMatrix, ConnectivityModel,
    QueueState,
};
use crate::policy::{self, AllocationScratch, PolicySpec};
use crate::rng::Streams;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub num_queues: usize,
    pub num_servers: usize,
    pub connectivity: ConnectivityModel,
    pub arrivals: Vec<ArrivalModel>,
    pub policy: PolicySpec,
    /// Total slots simulated.
    pub horizon: u64,
    /// Leading slots excluded from the averages.
    pub warmup: u64,
    pub seed: u64,
    pub initial_backlogs: Vec<u64>,
}

impl SystemConfig {
    /// A config with zero initial backlogs.
    pub fn new(
        connectivity: ConnectivityModel,
        arrivals: Vec<ArrivalModel>,
        policy: PolicySpec,
        horizon: u64,
        warmup: u64,
        seed: u64,
    ) -> Self {
        let num_queues = connectivity.num_queues();
        Self {
            num_queues,
            num_servers: connectivity.num_servers(),
            connectivity,
            initial_backlogs: vec![0; num_queues],
            arrivals,
            policy,
            horizon,
            warmup,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_queues == 0 {
            return Err(Error::invalid("num_queues", "must be at least 1"));
        }
        if self.num_servers == 0 {
            return Err(Error::invalid("num_servers", "must be at least 1"));
        }
        if self.connectivity.num_queues() != self.num_queues || self.connectivity.num_servers() != self.num_servers {
            return Err(Error::invalid(
                "connectivity.probs",
                format!(
                    "expected {}x{} (num_queues x num_servers), found {}x{}",
                    self.num_queues,
                    self.num_servers,
                    self.connectivity.num_queues(),
                    self.connectivity.num_servers()
                ),
            ));
        }
        if self.arrivals.len() != self.num_queues {
            return Err(Error::invalid(
                "arrivals",
                format!("expected {} arrival models (num_queues), found {}", self.num_queues, self.arrivals.len()),
            ));
        }
        for (i, a) in self.arrivals.iter().enumerate() {
            a.validate(&format!("arrivals[{}]", i))?;
        }
        if self.initial_backlogs.len() != self.num_queues {
            return Err(Error::invalid(
                "initial_backlogs",
                format!("expected {} entries (num_queues), found {}", self.num_queues, self.initial_backlogs.len()),
            ));
        }
        if self.horizon <= self.warmup {
            return Err(Error::invalid(
                "horizon",
                format!("horizon {} must exceed warmup {}", self.horizon, self.warmup),
            ));
        }
        self.policy.validate(self.num_servers)
    }

    pub fn rates(&self) -> Vec<f64> {
        self.arrivals.iter().map(ArrivalModel::mean).collect()
    }

    pub fn sum_second_moments(&self) -> f64 {
        self.arrivals.iter().map(ArrivalModel::second_moment).sum()
    }
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotRecord {
    /// 1-based slot index.
    pub slot: u64,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    /// Backlogs at the end of the slot.
    pub backlogs: Vec<u64>,
    pub idle_servers: usize,
    pub total_occupancy: u64,
}

/// Advances one slot. `state` holds `X(t-1)` on entry and is replaced by `X(t)`.
///
/// Fails fast if the policy returns an allocation that breaks the slot invariants.
pub fn step_slot(
    state: &mut QueueState,
    slot: u64,
    config: &SystemConfig,
    streams: &mut Streams,
) -> Result<SlotRecord> {
    let links = config.connectivity.sample(&mut streams.connectivity);
    let allocation = policy::allocate(&config.policy, &state.0, &links, &mut streams.policy);
    let arrivals = sample_arrivals(&config.arrivals, slot, &mut streams.arrivals);
    apply_slot(state, slot, &links, &allocation, arrivals)
}

/// Applies an allocation and arrivals to `state` after checking the allocation.
pub fn apply_slot(
    state: &mut QueueState,
    slot: u64,
    links: &ConnectivityMatrix,
    allocation: &AllocationMatrix,
    arrivals: Vec<u64>,
) -> Result<SlotRecord> {
    allocation.validate(links, &state.0).map_err(|message| Error::InvalidAllocation { slot, message })?;
    let departures = allocation.departures();
    for ((x, d), a) in state.0.iter_mut().zip(&departures).zip(&arrivals) {
        *x = *x - d + a;
    }
    Ok(SlotRecord {
        slot,
        total_occupancy: state.total(),
        backlogs: state.0.clone(),
        idle_servers: allocation.idle_servers(),
        arrivals,
        departures,
    })
}

/// Steps one configuration slot by slot, reusing its per-slot buffers.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    config: &'a SystemConfig,
    streams: Streams,
    state: QueueState,
    slot: u64,
    links: ConnectivityMatrix,
    allocation: AllocationMatrix,
    scratch: AllocationScratch,
    arrivals: Vec<u64>,
    departures: Vec<u64>,
}

impl<'a> Simulator<'a> {
    pub fn new(config: &'a SystemConfig) -> Result<Self> {
        config.validate()?;
        let (l, k) = (config.num_queues, config.num_servers);
        Ok(Self {
            config,
            streams: Streams::new(config.seed),
            state: QueueState(config.initial_backlogs.clone()),
            slot: 0,
            links: ConnectivityMatrix::from_bits(l, k, 0),
            allocation: AllocationMatrix::idle(l, k),
            scratch: AllocationScratch::default(),
            arrivals: vec![0; l],
            departures: vec![0; l],
        })
    }

    /// Runs the next slot.
    pub fn step(&mut self) -> Result<()> {
        self.slot += 1;
        self.config.connectivity.sample_into(&mut self.streams.connectivity, &mut self.links);
        policy::allocate_into(
            &self.config.policy,
            &self.state.0,
            &self.links,
            &mut self.streams.policy,
            &mut self.scratch,
            &mut self.allocation,
        );
        self.allocation
            .validate_with(&self.links, &self.state.0, &mut self.departures)
            .map_err(|message| Error::InvalidAllocation { slot: self.slot, message })?;
        sample_arrivals_into(&self.config.arrivals, self.slot, &mut self.streams.arrivals, &mut self.arrivals);
        for ((x, d), a) in self.state.0.iter_mut().zip(&self.departures).zip(&self.arrivals) {
            *x = *x - d + a;
        }
        Ok(())
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn state(&self) -> &QueueState {
        &self.state
    }

    pub fn links(&self) -> &ConnectivityMatrix {
        &self.links
    }

    pub fn allocation(&self) -> &AllocationMatrix {
        &self.allocation
    }

    pub fn arrivals(&self) -> &[u64] {
        &self.arrivals
    }

    pub fn departures(&self) -> &[u64] {
        &self.departures
    }

    /// Record of the most recent slot.
    pub fn record(&self) -> SlotRecord {
        SlotRecord {
            slot: self.slot,
            arrivals: self.arrivals.clone(),
            departures: self.departures.clone(),
            backlogs: self.state.0.clone(),
            idle_servers: self.allocation.idle_servers(),
            total_occupancy: self.state.total(),
        }
    }

    pub fn into_state(self) -> QueueState {
        self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Keep every measured [`SlotRecord`] (memory grows with the horizon).
    pub record_slots: bool,
}

/// Aggregates of one run. Window quantities cover slots `warmup+1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub num_queues: usize,
    pub num_servers: usize,
    pub warmup: u64,
    pub measured_slots: u64,
    pub initial_backlogs: Vec<u64>,
    /// `X(warmup)`: backlogs just before the first measured slot.
    pub window_start_backlogs: Vec<u64>,
    pub final_backlogs: Vec<u64>,
    /// Whole-run counts per queue.
    pub total_arrivals: Vec<u64>,
    pub total_departures: Vec<u64>,
    /// Measured-window counts per queue.
    pub window_arrivals: Vec<u64>,
    pub window_departures: Vec<u64>,
    pub window_idle_server_slots: u64,
    /// `sum_i X_i(t)` for each measured slot.
    pub occupancy: Vec<u64>,
    /// `sum_i X_i(t)^2` for each measured slot.
    pub lyapunov: Vec<u64>,
    pub slot_records: Option<Vec<SlotRecord>>,
}

impl RunStats {
    /// `(1/T) sum_t sum_i X_i(t)` over the measured window.
    pub fn time_avg_total_occupancy(&self) -> f64 {
        let total: u128 = self.occupancy.iter().map(|&x| x as u128).sum();
        total as f64 / self.measured_slots as f64
    }

    /// One-slot drift samples `(X(t), X(t+1))` starting at the window start.
    pub fn drift_samples(&self) -> Vec<DriftSample> {
        let start_total: u64 = self.window_start_backlogs.iter().sum();
        let start_v: u64 = self.window_start_backlogs.iter().map(|x| x * x).sum();
        let before = core::iter::once((start_total, start_v))
            .chain(self.occupancy.iter().copied().zip(self.lyapunov.iter().copied()));
        before
            .zip(self.lyapunov.iter())
            .enumerate()
            .map(|(idx, ((total, v_before), &v_after))| DriftSample {
                slot: self.warmup + idx as u64,
                v_before,
                v_after,
                total_backlog: total,
            })
            .collect()
    }

    /// FNV-1a digest over the per-slot series and final counters.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        self.occupancy
            .iter()
            .chain(&self.lyapunov)
            .chain(&self.final_backlogs)
            .chain(&self.total_arrivals)
            .chain(&self.total_departures)
            .for_each(|&x| eat(x));
        eat(self.window_idle_server_slots);
        h
    }
}

pub fn run_simulation(config: &SystemConfig) -> Result<RunStats> {
    run_simulation_with(config, RunOptions::default())
}

pub fn run_simulation_with(config: &SystemConfig, options: RunOptions) -> Result<RunStats> {
    config.validate()?;
    let l = config.num_queues;
    let measured = (config.horizon - config.warmup) as usize;
    let mut stats = RunStats {
        num_queues: l,
        num_servers: config.num_servers,
        warmup: config.warmup,
        measured_slots: measured as u64,
        initial_backlogs: config.initial_backlogs.clone(),
        window_start_backlogs: if config.warmup == 0 { config.initial_backlogs.clone() } else { Vec::new() },
        final_backlogs: Vec::new(),
        total_arrivals: vec![0; l],
        total_departures: vec![0; l],
        window_arrivals: vec![0; l],
        window_departures: vec![0; l],
        window_idle_server_slots: 0,
        occupancy: Vec::with_capacity(measured),
        lyapunov: Vec::with_capacity(measured),
        slot_records: options.record_slots.then(|| Vec::with_capacity(measured)),
    };

    let mut sim = Simulator::new(config)?;
    for slot in 1..=config.horizon {
        sim.step()?;
        for i in 0..l {
            stats.total_arrivals[i] += sim.arrivals[i];
            stats.total_departures[i] += sim.departures[i];
        }
        if slot == config.warmup {
            stats.window_start_backlogs = sim.state.0.clone();
        }
        if slot > config.warmup {
            for i in 0..l {
                stats.window_arrivals[i] += sim.arrivals[i];
                stats.window_departures[i] += sim.departures[i];
            }
            stats.window_idle_server_slots += sim.allocation.idle_servers() as u64;
            stats.occupancy.push(sim.state.total());
            stats.lyapunov.push(sim.state.lyapunov());
            if let Some(records) = stats.slot_records.as_mut() {
                records.push(sim.record());
            }
        }
    }
    let state = sim.into_state();
    stats.final_backlogs = state.0;
    Ok(stats)
}
