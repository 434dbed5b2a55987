use lcqsim_core::capacity::{
    capacity_margin, capacity_margin_symmetric, check_necessary, check_sufficient, occupancy_bound, subset_rhs,
};
use lcqsim_core::diagnostics::telescoping_holds;
use lcqsim_core::engine::{run_simulation, run_simulation_with, RunOptions};
use lcqsim_core::policy::{allocate, POLICY_NAMES};
use lcqsim_core::{
    ArrivalModel, ConnectivityMatrix, ConnectivityModel, PolicySpec, QueueSelection, RateVector, ServerOrdering,
    Streams, SystemConfig, UpdateMode,
};
use proptest::prelude::*;

fn links_strategy(l: usize, k: usize) -> impl Strategy<Value = ConnectivityMatrix> {
    proptest::collection::vec(any::<bool>(), l * k).prop_map(move |v| ConnectivityMatrix::new(l, k, v).unwrap())
}

fn instance() -> impl Strategy<Value = (Vec<u64>, ConnectivityMatrix)> {
    (1usize..6, 1usize..5).prop_flat_map(|(l, k)| (proptest::collection::vec(0u64..5, l), links_strategy(l, k)))
}

fn policy_strategy() -> impl Strategy<Value = PolicySpec> {
    let orderings = prop_oneof![
        Just(ServerOrdering::Natural),
        Just(ServerOrdering::RandomPerSlot),
        Just(ServerOrdering::LeastConnectedFirst),
        Just(ServerOrdering::MostConnectedFirst),
    ];
    let selections = prop_oneof![
        Just(QueueSelection::LongestConnected),
        Just(QueueSelection::ShortestConnectedNonempty),
        Just(QueueSelection::RandomConnectedNonempty),
    ];
    let modes = prop_oneof![Just(UpdateMode::Batch), Just(UpdateMode::Sequential)];
    (orderings, selections, modes).prop_map(|(o, s, m)| PolicySpec::new(o, s, m))
}

/// Brute-force margin: evaluate every bitmask from scratch.
fn brute_force_margin(rates: &[f64], probs: &ConnectivityModel) -> f64 {
    let l = rates.len();
    let k = probs.num_servers();
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << l) {
        let members: Vec<usize> = (0..l).filter(|i| mask >> i & 1 == 1).collect();
        let lhs: f64 = members.iter().map(|&i| rates[i]).sum();
        let rhs: f64 = (0..k).map(|s| 1.0 - members.iter().map(|&i| 1.0 - probs.prob(i, s)).product::<f64>()).sum();
        best = best.max(lhs - rhs);
    }
    best
}

proptest! {
    #[test]
    fn allocations_respect_slot_invariants((x, g) in instance(), spec in policy_strategy(), seed in any::<u64>()) {
        let mut rng = Streams::new(seed).policy;
        let h = allocate(&spec, &x, &g, &mut rng);
        prop_assert!(h.validate(&g, &x).is_ok());
        prop_assert!(h.departures().iter().sum::<u64>() <= g.num_servers() as u64);
    }

    #[test]
    fn batch_lcq_serves_an_argmax((x, g) in instance(), seed in any::<u64>()) {
        let mut rng = Streams::new(seed).policy;
        let h = allocate(&PolicySpec::as_lcq(), &x, &g, &mut rng);
        for k in 0..g.num_servers() {
            if let Some(i) = h.queue_of(k) {
                for j in 0..g.num_queues() {
                    if g.is_on(j, k) {
                        prop_assert!(x[i] >= x[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn sequential_policies_are_work_conserving((x, g) in instance(), spec in policy_strategy(), seed in any::<u64>()) {
        let spec = PolicySpec { update_mode: UpdateMode::Sequential, ..spec };
        let mut rng = Streams::new(seed).policy;
        let h = allocate(&spec, &x, &g, &mut rng);
        // Replay the decisions: an idle server must see only empty connected queues.
        let mut residual = x.clone();
        let order = lcqsim_core::policy::order_servers(&spec.ordering, &g, &mut Streams::new(seed).policy);
        if spec.ordering != ServerOrdering::RandomPerSlot {
            for k in order {
                match h.queue_of(k) {
                    Some(i) => residual[i] -= 1,
                    None => prop_assert!((0..g.num_queues()).all(|i| !g.is_on(i, k) || residual[i] == 0)),
                }
            }
        } else {
            // Without the order, check the end state: an idle server has no nonempty connected queue left.
            for i in h.assignment().iter().flatten() {
                residual[*i] -= 1;
            }
            for k in 0..g.num_servers() {
                if h.queue_of(k).is_none() {
                    prop_assert!((0..g.num_queues()).all(|i| !g.is_on(i, k) || residual[i] == 0));
                }
            }
        }
    }

    #[test]
    fn rhs_monotone_and_bounded(
        rows in (1usize..7, 1usize..4).prop_flat_map(|(l, k)| proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, k), l)),
        mask_a in any::<u32>(),
        mask_b in any::<u32>(),
    ) {
        let probs = ConnectivityModel::from_rows(&rows).unwrap();
        let l = probs.num_queues();
        let k = probs.num_servers();
        let full = (1u32 << l) - 1;
        let a = (mask_a & full).max(1);
        let b = a | (mask_b & full);
        let members = |m: u32| (0..l).filter(|i| m >> i & 1 == 1).collect::<Vec<_>>();
        let ra = subset_rhs(&members(a), &probs).unwrap();
        let rb = subset_rhs(&members(b), &probs).unwrap();
        prop_assert!(rb >= ra - 1e-12);
        let linear: f64 = members(a).iter().map(|&i| probs.row(i).iter().sum::<f64>()).sum();
        prop_assert!(ra <= (k as f64).min(linear) + 1e-12);
    }

    #[test]
    fn margin_matches_brute_force(
        rows in (1usize..8, 1usize..4).prop_flat_map(|(l, k)| proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, k), l)),
        scale in 0.0f64..1.5,
    ) {
        let probs = ConnectivityModel::from_rows(&rows).unwrap();
        let rates: Vec<f64> = (0..probs.num_queues()).map(|i| scale * (i as f64 + 1.0) / probs.num_queues() as f64).collect();
        let report = capacity_margin(&RateVector::new(rates.clone()).unwrap(), &probs).unwrap();
        prop_assert!((report.margin_m - brute_force_margin(&rates, &probs)).abs() < 1e-12);
        prop_assert!(!report.worst_subset.is_empty());
        prop_assert_eq!(report.inside_interior, report.margin_m < -1e-12);
        prop_assert_eq!(report.inside_closure, report.margin_m <= 1e-12);
        let rv = RateVector::new(rates).unwrap();
        if check_sufficient(&rv, &probs).unwrap() {
            prop_assert!(check_necessary(&rv, &probs).unwrap());
        }
    }

    #[test]
    fn symmetric_shortcut_is_exact(l in 1usize..13, k in 1usize..5, p in 0.0f64..=1.0, rate in 0.0f64..1.0) {
        let probs = ConnectivityModel::uniform(l, k, p).unwrap();
        let rates = RateVector::uniform(l, rate).unwrap();
        let full = capacity_margin(&rates, &probs).unwrap();
        let fast = capacity_margin_symmetric(&rates, &probs).unwrap().unwrap();
        prop_assert_eq!(full.margin_m, fast.margin_m);
        prop_assert_eq!(full.worst_subset, fast.worst_subset);
        prop_assert_eq!(full.inside_interior, fast.inside_interior);
        prop_assert_eq!(full.inside_closure, fast.inside_closure);
    }

    #[test]
    fn bound_positive_and_decreasing_in_margin(l in 1usize..20, k in 1usize..6, s2 in 0.0f64..50.0, m in 1e-6f64..5.0, extra in 1e-3f64..2.0) {
        let near = occupancy_bound(l, k, s2, -m).unwrap();
        let far = occupancy_bound(l, k, s2, -(m + extra)).unwrap();
        prop_assert!(near > 0.0);
        prop_assert!(far < near);
    }
}

#[test]
fn batch_and_sequential_agree_on_abundant_backlogs() {
    for l in 1..=3usize {
        for k in 1..=3usize {
            let backlog_choices: Vec<Vec<u64>> = (0..3u64.pow(l as u32))
                .map(|code| (0..l).map(|i| k as u64 + code / 3u64.pow(i as u32) % 3).collect())
                .collect();
            for bits in 0..1u64 << (l * k) {
                let g = ConnectivityMatrix::from_bits(l, k, bits);
                for x in &backlog_choices {
                    for ordering in [
                        ServerOrdering::Natural,
                        ServerOrdering::LeastConnectedFirst,
                        ServerOrdering::MostConnectedFirst,
                    ] {
                        let mut rng = Streams::new(0).policy;
                        let batch =
                            PolicySpec::new(ordering.clone(), QueueSelection::LongestConnected, UpdateMode::Batch);
                        let seq = PolicySpec::new(ordering, QueueSelection::LongestConnected, UpdateMode::Sequential);
                        let db: u64 = allocate(&batch, x, &g, &mut rng).departures().iter().sum();
                        let ds: u64 = allocate(&seq, x, &g, &mut rng).departures().iter().sum();
                        assert_eq!(db, ds, "l={l} k={k} bits={bits:b} x={x:?}");
                    }
                }
            }
        }
    }
}

fn symmetric_config(policy: PolicySpec, rate: f64, horizon: u64, seed: u64) -> SystemConfig {
    SystemConfig::new(
        ConnectivityModel::uniform(6, 3, 0.3).unwrap(),
        vec![ArrivalModel::Bernoulli { rate }; 6],
        policy,
        horizon,
        100,
        seed,
    )
}

#[test]
#[allow(clippy::needless_range_loop)]
fn per_slot_recursion_and_conservation() {
    for name in POLICY_NAMES {
        let mut cfg = symmetric_config(PolicySpec::named(name).unwrap(), 0.12, 3000, 5);
        cfg.initial_backlogs = vec![3, 0, 7, 1, 0, 2];
        let stats = run_simulation_with(&cfg, RunOptions { record_slots: true }).unwrap();
        let records = stats.slot_records.as_ref().unwrap();
        let mut prev = stats.window_start_backlogs.clone();
        for r in records {
            for i in 0..6 {
                assert_eq!(r.backlogs[i], prev[i] - r.departures[i] + r.arrivals[i]);
                assert!(r.departures[i] <= prev[i]);
            }
            prev = r.backlogs.clone();
        }
        assert!(telescoping_holds(&stats));
        for i in 0..6 {
            assert!(stats.total_departures[i] <= stats.total_arrivals[i] + stats.initial_backlogs[i]);
        }
    }
}

#[test]
fn identical_configs_are_bit_reproducible() {
    let cfg = symmetric_config(PolicySpec::randomized(), 0.15, 5000, 77);
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
    let other = run_simulation(&SystemConfig { seed: 78, ..cfg }).unwrap();
    assert_ne!(a.digest(), other.digest());
}

#[test]
fn policies_share_arrival_paths() {
    let arrivals = |policy| {
        let cfg = symmetric_config(policy, 0.2, 2000, 9);
        let stats = run_simulation_with(&cfg, RunOptions { record_slots: true }).unwrap();
        stats.slot_records.unwrap().into_iter().map(|r| r.arrivals).collect::<Vec<_>>()
    };
    let reference = arrivals(PolicySpec::as_lcq());
    for name in POLICY_NAMES {
        assert_eq!(arrivals(PolicySpec::named(name).unwrap()), reference, "{name}");
    }
}
