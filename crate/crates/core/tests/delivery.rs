use ebcache::experiments::trial_seed;
use ebcache::placement::decentralized_place;
use ebcache::sim::{run_delivery, simulate, SimOptions, SimResult, SlotAction, Workload};
use ebcache::{Demand, Params64, SystemConfig, UserSet};

fn set(users: &[usize]) -> UserSet {
    UserSet::from_users(users.iter().copied())
}

fn run(cfg: &SystemConfig, seed: u64, opts: &SimOptions) -> SimResult {
    let pm = decentralized_place(cfg, seed);
    run_delivery(cfg, &pm, &Demand::identity(cfg.users), seed, 1, opts).unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn scripted_two_user_exchange_decodes() {
    // four packets per file, no caches; the first packet of each file is
    // erased at its owner but overheard by the other user, then both are
    // served by one combination
    let cfg = SystemConfig::symmetric(2, 2, 0.5, 0.0, 4);
    let mut script = vec![set(&[1]), set(&[0, 1]), set(&[0]), set(&[0])];
    script.extend([set(&[0]), set(&[1]), set(&[0, 1]), set(&[1])]);
    script.push(set(&[0, 1]));
    let opts = SimOptions {
        receiver_script: script,
        payload_len: 8,
        verify_payloads: true,
        trace: true,
        ..SimOptions::default()
    };
    let r = run(&cfg, 0, &opts);
    assert_eq!(r.slots_total, 9);
    assert_eq!(r.slots_per_subphase[&set(&[0])], 4);
    assert_eq!(r.slots_per_subphase[&set(&[1])], 4);
    assert_eq!(r.slots_per_subphase[&set(&[0, 1])], 1);
    assert_eq!(r.transfer_count(set(&[0]), set(&[0, 1]), 0), 1);
    assert_eq!(r.transfer_count(set(&[1]), set(&[0, 1]), 1), 1);
    assert_eq!(r.decode_ok, Some(vec![true, true]));
    assert_eq!(r.cleanup_slots, 0);
    let actions: Vec<SlotAction> = r.trace.unwrap().iter().map(|t| t.action).collect();
    assert_eq!(actions[0], SlotAction::Promote);
    assert_eq!(actions[4], SlotAction::Promote);
    assert_eq!(actions[8], SlotAction::Deliver);
}

#[test]
fn scripted_waste_slots_are_retransmitted() {
    let cfg = SystemConfig::symmetric(2, 2, 0.5, 0.0, 1);
    let script = vec![UserSet::EMPTY, UserSet::EMPTY, set(&[0]), set(&[1])];
    let opts = SimOptions {
        receiver_script: script,
        trace: true,
        ..SimOptions::default()
    };
    let r = run(&cfg, 0, &opts);
    assert_eq!(r.slots_total, 4);
    let trace = r.trace.clone().unwrap();
    assert_eq!(trace[0].action, SlotAction::Waste);
    assert_eq!(trace[1].action, SlotAction::Waste);
    assert!(r.all_decoded());
}

#[test]
fn perfect_link_without_caches_sends_every_packet_once() {
    let cfg = SystemConfig {
        users: 3,
        files: 3,
        delta: vec![0.0; 3],
        mem: vec![0.0; 3],
        file_sizes: vec![10, 20, 30],
        field_order: 256,
    };
    let r = run(&cfg, 4, &SimOptions::default());
    assert_eq!(r.slots_total, 60);
    assert!(r.all_decoded());
}

#[test]
fn full_caches_need_no_slots() {
    let cfg = SystemConfig::symmetric(3, 3, 0.4, 3.0, 50);
    let r = run(&cfg, 1, &SimOptions::default());
    assert_eq!(r.slots_total, 0);
    assert_eq!(r.decode_ok, Some(vec![true; 3]));
}

#[test]
fn slot_totals_add_up() {
    let cfg = SystemConfig::symmetric(3, 3, 0.4, 1.0, 300);
    for seed in 0..5 {
        let r = run(&cfg, seed, &SimOptions::default());
        let sum: u64 = r.slots_per_subphase.values().sum();
        assert_eq!(r.slots_total, sum + r.cleanup_slots);
        assert!(r.all_decoded());
    }
}

#[test]
fn converges_to_phase_plan_at_large_f() {
    let configs = [
        SystemConfig::symmetric(2, 2, 0.5, 1.0, 100_000),
        SystemConfig::symmetric(3, 4, 0.5, 2.0, 100_000),
        SystemConfig::symmetric(4, 4, 0.3, 1.0, 100_000),
        SystemConfig {
            users: 3,
            files: 3,
            delta: vec![0.6, 0.4, 0.2],
            mem: vec![0.6, 1.2, 2.1],
            file_sizes: vec![100_000; 3],
            field_order: 256,
        },
    ];
    for cfg in configs {
        let params = Params64::from_config(&cfg, &Demand::identity(cfg.users)).unit_sizes();
        let target = params.phase_plan().unwrap().total;
        let samples: Vec<f64> = (0..20)
            .map(|i| {
                let seed = trial_seed(11, i);
                run(&cfg, seed, &SimOptions::counting()).slots_total as f64 / 100_000.0
            })
            .collect();
        let (mean, _) = mean_and_se(&samples);
        assert!(
            (mean - target).abs() < 0.01 * target,
            "K={}, δ={:?}: {mean} vs {target}",
            cfg.users,
            cfg.delta
        );
    }
}

#[test]
fn transfer_counts_match_expectation() {
    let cfg = SystemConfig {
        users: 3,
        files: 3,
        delta: vec![0.5, 0.4, 0.3],
        mem: vec![1.0, 1.0, 1.5],
        file_sizes: vec![10_000; 3],
        field_order: 256,
    };
    let params = Params64::from_config(&cfg, &Demand::identity(3)).unit_sizes();
    let plan = params.phase_plan().unwrap();
    let results: Vec<SimResult> = (0..30)
        .map(|i| run(&cfg, trial_seed(21, i), &SimOptions::counting()))
        .collect();
    for from in UserSet::all_nonempty(3) {
        for to in UserSet::all_nonempty(3) {
            if !from.is_subset(to) || from == to {
                continue;
            }
            for k in from.iter() {
                let expected = plan.transfer(from, to, k);
                let xs: Vec<f64> = results
                    .iter()
                    .map(|r| r.transfer_count(from, to, k) as f64 / 10_000.0)
                    .collect();
                let (mean, se) = mean_and_se(&xs);
                assert!(
                    (mean - expected).abs() <= 3.0 * se + 1e-4,
                    "{from}→{to}, user {}: {mean} ± {se} vs {expected}",
                    k + 1
                );
            }
        }
    }
}

#[test]
fn usefulness_rate_matches_erasure_products() {
    let cfg = SystemConfig {
        users: 3,
        files: 3,
        delta: vec![0.6, 0.5, 0.3],
        mem: vec![1.0; 3],
        file_sizes: vec![20_000; 3],
        field_order: 256,
    };
    let full = UserSet::full(3);
    let mut needing = vec![0u64; 8 * 3];
    let mut useful = vec![0u64; 8 * 3];
    for i in 0..5 {
        let r = run(&cfg, trial_seed(31, i), &SimOptions::counting());
        for u in &r.usefulness {
            let idx = u.subphase.bits() as usize * 3 + (u.user - 1);
            needing[idx] += u.needing_slots;
            useful[idx] += u.useful_slots;
        }
    }
    let mut checked = 0;
    for j in UserSet::all_nonempty(3) {
        for k in j.iter() {
            let idx = j.bits() as usize * 3 + k;
            let n = needing[idx];
            if n < 1000 {
                continue;
            }
            let erased: f64 = full
                .difference(j)
                .with(k)
                .iter()
                .map(|i| cfg.delta[i])
                .product();
            let p = 1.0 - erased;
            let rate = useful[idx] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (rate - p).abs() <= 3.0 * se + 1e-12,
                "J={j}, user {}: {rate} vs {p} ({n} slots)",
                k + 1
            );
            checked += 1;
        }
    }
    assert!(checked >= 9, "only {checked} sub-phases had enough slots");
}

#[test]
fn order_two_start_decodes_and_counts() {
    let cfg = SystemConfig::symmetric(3, 3, 0.5, 0.0, 200);
    let pm = decentralized_place(&cfg, 0);
    let r = run_delivery(
        &cfg,
        &pm,
        &Demand::identity(3),
        3,
        2,
        &SimOptions::default(),
    )
    .unwrap();
    assert!(r.all_decoded());
    for s in UserSet::all_nonempty(3) {
        if s.len() == 1 {
            assert_eq!(r.slots_per_subphase.get(&s).copied().unwrap_or(0), 0);
        }
    }
    assert!(run_delivery(
        &cfg,
        &pm,
        &Demand::identity(3),
        3,
        4,
        &SimOptions::default()
    )
    .is_err());
}

#[test]
fn non_identity_demand_decodes() {
    let cfg = SystemConfig {
        users: 2,
        files: 4,
        delta: vec![0.3, 0.6],
        mem: vec![1.0, 2.0],
        file_sizes: vec![100, 150, 200, 250],
        field_order: 256,
    };
    let pm = decentralized_place(&cfg, 2);
    let demand = Demand::new(vec![3, 1], &cfg).unwrap();
    let r = simulate(
        &cfg,
        Workload::Files {
            placement: &pm,
            demand: &demand,
        },
        2,
        &SimOptions {
            verify_payloads: true,
            ..SimOptions::default()
        },
    )
    .unwrap();
    assert!(r.all_decoded());
    assert!(Demand::new(vec![1, 1], &cfg).is_err());
}

#[test]
fn result_json_shape() {
    let cfg = SystemConfig::symmetric(2, 2, 0.5, 1.0, 50);
    let r = run(&cfg, 7, &SimOptions::default());
    let v = serde_json::to_value(&r).unwrap();
    for key in [
        "slots_total",
        "slots_per_subphase",
        "decode_ok",
        "cleanup_slots",
        "seed",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["slots_per_subphase"].get("[1,2]").is_some());
}
