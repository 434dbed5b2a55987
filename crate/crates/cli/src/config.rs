//! TOML configuration files and the built-in presets.
//!
//! A file describes one system plus an optional `[sweep]` section:
//!
//! ```toml
//! num_queues = 2
//! num_servers = 1
//! horizon = 200000          # default 200000
//! warmup = 20000            # default 20000
//! seed = 1                  # default 1
//! policy = "as_lcq"         # or a [policy] table
//!
//! [connectivity]
//! p = 0.8                   # uniform, or probs = [[..], ..] (num_queues rows)
//!
//! [arrivals]
//! kind = "bernoulli"        # bernoulli | poisson | deterministic
//! rate = 0.3                # or rates = [..]; deterministic uses batch + period
//!
//! [sweep]
//! parameter = "rate"        # rate | multiplier
//! grid = [0.1, 0.2]
//! policies = ["as_lcq", "random"]   # default: all six built-in policies
//! replications = 5
//! ```
//!
//! Unknown keys are rejected.

use std::fs;
use std::path::Path;

use lcqsim_core::policy::{parse_permutation, POLICY_NAMES};
use lcqsim_core::{
    ArrivalModel, ConnectivityModel, PolicySpec, QueueSelection, ServerOrdering, SystemConfig, UpdateMode,
    VerdictConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_HORIZON: u64 = 200_000;
pub const DEFAULT_WARMUP: u64 = 20_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_REPLICATIONS: u32 = 5;

pub const PRESET_NAMES: [&str; 3] = ["sym16x4_p02", "sym16x4_p09", "asym16x4"];

pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "sym16x4_p02" => Some(include_str!("../presets/sym16x4_p02.toml")),
        "sym16x4_p09" => Some(include_str!("../presets/sym16x4_p09.toml")),
        "asym16x4" => Some(include_str!("../presets/asym16x4.toml")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub num_queues: usize,
    pub num_servers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_backlogs: Option<Vec<u64>>,
    pub connectivity: ConnectivitySection,
    pub arrivals: ArrivalsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyEntry {
    Name(String),
    Table(PolicyTable),
}

/// A policy assembled from its parts. `permutation` is 1-based and only
/// meaningful with `ordering = "fixed_permutation"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyTable {
    pub ordering: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    pub selection: String,
    pub update_mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectivitySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    Bernoulli,
    Poisson,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalsSection {
    pub kind: ArrivalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_measured_slots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    /// The grid value is the arrival rate of every queue.
    Rate,
    /// The grid value scales the configured rate profile.
    Multiplier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<SweepParameter>,
    pub grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<u32>,
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub warmup: Option<u64>,
    pub grid: Option<Vec<f64>>,
    pub policies: Option<Vec<String>>,
    pub replications: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub policies: Vec<PolicySpec>,
    pub replications: u32,
}

/// A validated configuration with every default resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// The file contents with defaults filled in, echoed into reports.
    pub resolved: ConfigFile,
    pub system: SystemConfig,
    pub verdict: VerdictConfig,
    pub replications: u32,
    pub sweep: Option<SweepSpec>,
}

fn invalid(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {message}"))
}

pub fn parse_str(text: &str) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn load(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_str(&text).map_err(|e| match e {
        CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_preset(name: &str) -> Result<ConfigFile> {
    let text = preset(name)
        .ok_or_else(|| invalid("preset", format!("unknown preset {name:?}; expected one of {PRESET_NAMES:?}")))?;
    parse_str(text)
}

fn policy_from_table(t: &PolicyTable) -> Result<PolicySpec> {
    let ordering = match t.ordering.as_str() {
        "natural" => ServerOrdering::Natural,
        "random_per_slot" => ServerOrdering::RandomPerSlot,
        "least_connected_first" => ServerOrdering::LeastConnectedFirst,
        "most_connected_first" => ServerOrdering::MostConnectedFirst,
        "fixed_permutation" => {
            let perm = t
                .permutation
                .as_ref()
                .ok_or_else(|| invalid("policy.permutation", "required with fixed_permutation"))?;
            let text = perm.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
            ServerOrdering::FixedPermutation(parse_permutation(&text)?)
        }
        other => return Err(invalid("policy.ordering", format!("unknown ordering {other:?}"))),
    };
    if t.permutation.is_some() && !matches!(ordering, ServerOrdering::FixedPermutation(_)) {
        return Err(invalid("policy.permutation", "only allowed with ordering = \"fixed_permutation\""));
    }
    let selection = match t.selection.as_str() {
        "longest_connected" => QueueSelection::LongestConnected,
        "shortest_connected_nonempty" => QueueSelection::ShortestConnectedNonempty,
        "random_connected_nonempty" => QueueSelection::RandomConnectedNonempty,
        other => return Err(invalid("policy.selection", format!("unknown selection {other:?}"))),
    };
    let update_mode = match t.update_mode.as_str() {
        "batch" => UpdateMode::Batch,
        "sequential" => UpdateMode::Sequential,
        other => return Err(invalid("policy.update_mode", format!("unknown update mode {other:?}"))),
    };
    Ok(PolicySpec::new(ordering, selection, update_mode))
}

pub fn policy_from_entry(entry: &PolicyEntry) -> Result<PolicySpec> {
    match entry {
        PolicyEntry::Name(name) => Ok(name.parse::<PolicySpec>()?),
        PolicyEntry::Table(t) => policy_from_table(t),
    }
}

fn connectivity(file: &ConfigFile) -> Result<ConnectivityModel> {
    let (l, k) = (file.num_queues, file.num_servers);
    match (&file.connectivity.p, &file.connectivity.probs) {
        (Some(p), None) => {
            if !(0.0..=1.0).contains(p) {
                return Err(invalid("connectivity.p", format!("{p} is not a probability")));
            }
            Ok(ConnectivityModel::uniform(l, k, *p)?)
        }
        (None, Some(rows)) => {
            if rows.len() != l {
                return Err(invalid(
                    "connectivity.probs",
                    format!("expected {l} rows (num_queues), found {}", rows.len()),
                ));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != k {
                    return Err(invalid(
                        &format!("connectivity.probs[{i}]"),
                        format!("expected {k} entries (num_servers), found {}", row.len()),
                    ));
                }
            }
            Ok(ConnectivityModel::from_rows(rows)?)
        }
        (Some(_), Some(_)) => Err(invalid("connectivity", "give either p or probs, not both")),
        (None, None) => Err(invalid("connectivity", "missing p or probs")),
    }
}

/// Per-queue rates given in the file (uniform `rate` or explicit `rates`).
fn rate_profile(file: &ConfigFile) -> Result<Vec<f64>> {
    let a = &file.arrivals;
    match (a.rate, &a.rates) {
        (Some(r), None) => Ok(vec![r; file.num_queues]),
        (None, Some(rates)) => {
            if rates.len() != file.num_queues {
                return Err(invalid(
                    "arrivals.rates",
                    format!("expected {} entries (num_queues), found {}", file.num_queues, rates.len()),
                ));
            }
            Ok(rates.clone())
        }
        (Some(_), Some(_)) => Err(invalid("arrivals", "give either rate or rates, not both")),
        (None, None) => Err(invalid("arrivals", "missing rate or rates")),
    }
}

fn arrival_models(file: &ConfigFile) -> Result<Vec<ArrivalModel>> {
    let a = &file.arrivals;
    if a.kind == ArrivalKind::Deterministic {
        if a.rate.is_some() || a.rates.is_some() {
            return Err(invalid("arrivals", "deterministic arrivals take batch and period, not rates"));
        }
        let batch = a.batch.ok_or_else(|| invalid("arrivals.batch", "required for deterministic arrivals"))?;
        let period = a.period.ok_or_else(|| invalid("arrivals.period", "required for deterministic arrivals"))?;
        let model = ArrivalModel::Deterministic { batch, period };
        model.validate("arrivals")?;
        return Ok(vec![model; file.num_queues]);
    }
    if a.batch.is_some() || a.period.is_some() {
        return Err(invalid("arrivals", "batch and period only apply to deterministic arrivals"));
    }
    let field = |i: usize| if a.rates.is_some() { format!("arrivals.rates[{i}]") } else { "arrivals.rate".into() };
    rate_profile(file)?
        .into_iter()
        .enumerate()
        .map(|(i, rate)| {
            let model = match a.kind {
                ArrivalKind::Bernoulli => ArrivalModel::Bernoulli { rate },
                _ => ArrivalModel::Poisson { rate },
            };
            model.validate(&field(i))?;
            Ok(model)
        })
        .collect()
}

fn verdict_config(section: Option<&VerdictSection>) -> VerdictConfig {
    let d = VerdictConfig::default();
    let Some(s) = section else { return d };
    VerdictConfig {
        slope_threshold: s.slope_threshold.unwrap_or(d.slope_threshold),
        split_tolerance: s.split_tolerance.unwrap_or(d.split_tolerance),
        min_measured_slots: s.min_measured_slots.unwrap_or(d.min_measured_slots),
        agreement: s.agreement.unwrap_or(d.agreement),
    }
}

fn check_verdict(v: &VerdictConfig) -> Result<()> {
    if !(v.slope_threshold > 0.0) {
        return Err(invalid("verdict.slope_threshold", "must be positive"));
    }
    if !(v.split_tolerance > 0.0) {
        return Err(invalid("verdict.split_tolerance", "must be positive"));
    }
    if !(v.agreement > 0.0 && v.agreement <= 1.0) {
        return Err(invalid("verdict.agreement", "must lie in (0, 1]"));
    }
    Ok(())
}

impl ConfigFile {
    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.horizon.is_some() {
            self.horizon = o.horizon;
        }
        if o.warmup.is_some() {
            self.warmup = o.warmup;
        }
        if o.grid.is_some() || o.policies.is_some() || o.replications.is_some() {
            let sweep = self.sweep.get_or_insert_with(|| SweepSection {
                parameter: None,
                grid: Vec::new(),
                policies: None,
                replications: None,
            });
            if let Some(g) = &o.grid {
                sweep.grid = g.clone();
            }
            if o.policies.is_some() {
                sweep.policies = o.policies.clone();
            }
            if o.replications.is_some() {
                sweep.replications = o.replications;
            }
        }
    }

    /// Validates the file and resolves every default.
    pub fn resolve(&self) -> Result<Experiment> {
        let mut resolved = self.clone();
        resolved.horizon.get_or_insert(DEFAULT_HORIZON);
        resolved.warmup.get_or_insert(DEFAULT_WARMUP);
        resolved.seed.get_or_insert(DEFAULT_SEED);
        resolved.policy.get_or_insert_with(|| PolicyEntry::Name("as_lcq".into()));
        resolved.initial_backlogs.get_or_insert_with(|| vec![0; self.num_queues]);

        if self.num_queues == 0 {
            return Err(invalid("num_queues", "must be at least 1"));
        }
        if self.num_servers == 0 {
            return Err(invalid("num_servers", "must be at least 1"));
        }
        let policy = policy_from_entry(resolved.policy.as_ref().unwrap())?;
        let mut system = SystemConfig::new(
            connectivity(self)?,
            arrival_models(self)?,
            policy,
            resolved.horizon.unwrap(),
            resolved.warmup.unwrap(),
            resolved.seed.unwrap(),
        );
        system.initial_backlogs = resolved.initial_backlogs.clone().unwrap();
        system.validate()?;

        let verdict = verdict_config(self.verdict.as_ref());
        check_verdict(&verdict)?;
        resolved.verdict = Some(VerdictSection {
            slope_threshold: Some(verdict.slope_threshold),
            split_tolerance: Some(verdict.split_tolerance),
            min_measured_slots: Some(verdict.min_measured_slots),
            agreement: Some(verdict.agreement),
        });

        let mut replications = DEFAULT_REPLICATIONS;
        let sweep = match &mut resolved.sweep {
            None => None,
            Some(s) => {
                let parameter = *s.parameter.get_or_insert(SweepParameter::Rate);
                let names = s.policies.get_or_insert_with(|| POLICY_NAMES.iter().map(|n| n.to_string()).collect());
                let reps = *s.replications.get_or_insert(DEFAULT_REPLICATIONS);
                if reps == 0 {
                    return Err(invalid("sweep.replications", "must be at least 1"));
                }
                replications = reps;
                if s.grid.is_empty() {
                    return Err(invalid("sweep.grid", "must not be empty"));
                }
                if let Some(w) = s.grid.windows(2).find(|w| !(w[0] < w[1])) {
                    return Err(invalid("sweep.grid", format!("must be strictly increasing ({} then {})", w[0], w[1])));
                }
                if let Some(bad) = s.grid.iter().find(|g| !g.is_finite() || **g < 0.0) {
                    return Err(invalid("sweep.grid", format!("{bad} is not a nonnegative number")));
                }
                if self.arrivals.kind == ArrivalKind::Deterministic {
                    return Err(invalid("sweep", "deterministic arrivals cannot be swept"));
                }
                if names.is_empty() {
                    return Err(invalid("sweep.policies", "must not be empty"));
                }
                let policies = names
                    .iter()
                    .map(|n| {
                        n.parse::<PolicySpec>().map_err(|_| invalid("sweep.policies", format!("unknown policy {n:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let spec = SweepSpec { parameter, grid: s.grid.clone(), policies, replications: reps };
                // Every grid point must give a valid system.
                for &g in &spec.grid {
                    let point = Experiment::point_arrivals(self, parameter, g)?;
                    for (i, a) in point.iter().enumerate() {
                        a.validate(&format!("sweep.grid ({g}) arrivals[{i}]"))?;
                    }
                }
                Some(spec)
            }
        };
        Ok(Experiment { resolved, system, verdict, replications, sweep })
    }
}

impl Experiment {
    pub fn from_file(mut file: ConfigFile, overrides: &Overrides) -> Result<Self> {
        file.apply(overrides);
        file.resolve()
    }

    fn point_arrivals(file: &ConfigFile, parameter: SweepParameter, value: f64) -> Result<Vec<ArrivalModel>> {
        let rates = match parameter {
            SweepParameter::Rate => vec![value; file.num_queues],
            SweepParameter::Multiplier => rate_profile(file)?.into_iter().map(|r| r * value).collect(),
        };
        Ok(rates
            .into_iter()
            .map(|rate| match file.arrivals.kind {
                ArrivalKind::Bernoulli => ArrivalModel::Bernoulli { rate },
                _ => ArrivalModel::Poisson { rate },
            })
            .collect())
    }

    /// The system at one sweep grid value.
    pub fn at_grid_value(&self, value: f64) -> Result<SystemConfig> {
        let sweep = self.sweep.as_ref().ok_or_else(|| invalid("sweep", "missing [sweep] section"))?;
        let mut system = self.system.clone();
        system.arrivals = Self::point_arrivals(&self.resolved, sweep.parameter, value)?;
        Ok(system)
    }

    /// Seed of replication `r`.
    pub fn replication_seed(&self, r: u32) -> u64 {
        self.system.seed.wrapping_add(r as u64)
    }

    pub fn resolved_toml(&self) -> String {
        toml::to_string(&self.resolved).expect("config serializes")
    }
}
