use ebcache::analysis::order_j_capacity;
use ebcache::experiments::{
    monte_carlo, optimize_memory, summarize, sweep, McSpec, SweepParam, SweepSpec, SWEEP_COLUMNS,
};
use ebcache::{Demand, SystemConfig};

fn sym3(size: u64) -> SystemConfig {
    // p = M/N = 1/2
    SystemConfig::symmetric(3, 4, 0.5, 2.0, size)
}

#[test]
fn monte_carlo_mean_covers_closed_form() {
    let s = monte_carlo(&sym3(10_000), &Demand::identity(3), &McSpec::new(20, 5)).unwrap();
    let ci = s.ci95.unwrap();
    let target = 31.0 / 21.0;
    assert!(
        (s.mean - target).abs() <= ci,
        "mean {} ± {ci} vs {target}",
        s.mean
    );
}

#[test]
fn perfect_link_without_caches_has_zero_variance() {
    let cfg = SystemConfig {
        users: 3,
        files: 3,
        delta: vec![0.0; 3],
        mem: vec![0.0; 3],
        file_sizes: vec![100, 200, 300],
        field_order: 256,
    };
    let s = monte_carlo(&cfg, &Demand::identity(3), &McSpec::new(8, 1)).unwrap();
    assert_eq!(s.stderr, 0.0);
    assert_eq!(s.ci95, Some(0.0));
    assert_eq!(s.mean, 600.0 / 200.0);
}

#[test]
fn phase_two_start_reaches_order_two_capacity() {
    let size = 20_000u64;
    let cfg = SystemConfig::symmetric(3, 3, 0.5, 0.0, size);
    let mut spec = McSpec::new(10, 3);
    spec.start_phase = 2;
    let s = monte_carlo(&cfg, &Demand::identity(3), &spec).unwrap();
    let rate = 3.0 / s.mean;
    let target: f64 = order_j_capacity(3, 0.5, 2).unwrap();
    assert_eq!(target, 9.0 / 16.0);
    assert!((rate - target).abs() < 0.01 * target, "{rate} vs {target}");
}

#[test]
fn monte_carlo_rejects_zero_trials() {
    assert!(monte_carlo(&sym3(10), &Demand::identity(3), &McSpec::new(0, 0)).is_err());
}

#[test]
fn summary_of_known_samples() {
    let (mean, se, ci) = summarize(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(mean, 2.5);
    let sd = (5.0f64 / 3.0).sqrt();
    assert!((se - sd / 2.0).abs() < 1e-15);
    // t_{0.975, 3} = 3.182446305284263
    assert!((ci.unwrap() - 3.182446305284263 * se).abs() < 1e-12);
    assert_eq!(summarize(&[7.0]).2, None);
}

fn mem_sweep(trials: usize, seed: u64) -> SweepSpec {
    SweepSpec {
        varying: SweepParam::Mem,
        grid: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        fixed: SystemConfig::symmetric(3, 4, 0.5, 0.0, 1),
        trials,
        seed,
        file_size: 2_000,
    }
}

#[test]
fn sweep_is_reproducible() {
    let a = sweep(&mem_sweep(3, 9)).unwrap();
    let b = sweep(&mem_sweep(3, 9)).unwrap();
    assert_eq!(a, b);
    let c = sweep(&mem_sweep(3, 10)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn sweep_rows_serialize_with_fixed_columns() {
    let rows = sweep(&mem_sweep(2, 0)).unwrap();
    let v = serde_json::to_value(&rows[1]).unwrap();
    for col in SWEEP_COLUMNS {
        assert!(v.get(col).is_some(), "missing {col}");
    }
    let last = rows.last().unwrap();
    assert_eq!(last.t_fb, Some(0.0));
    assert_eq!(last.t_nofb, Some(0.0));
    assert_eq!(last.t_sim_mean, Some(0.0));
}

#[test]
fn sweep_reports_invalid_points_per_row() {
    let spec = SweepSpec {
        varying: SweepParam::K,
        grid: vec![2.0, 2.5, 9.0],
        ..mem_sweep(1, 0)
    };
    let rows = sweep(&spec).unwrap();
    assert!(rows[0].error.is_none());
    assert!(rows[1].error.is_some());
    // N = 4 < K = 9
    assert!(rows[2].error.is_some());
}

#[test]
fn sweep_simulation_lies_within_its_interval() {
    let spec = SweepSpec {
        varying: SweepParam::Delta,
        grid: vec![0.2, 0.5, 0.8],
        fixed: SystemConfig::symmetric(3, 4, 0.0, 2.0, 1),
        trials: 20,
        seed: 4,
        file_size: 10_000,
    };
    for row in sweep(&spec).unwrap() {
        let (fb, mean, ci) = (
            row.t_fb.unwrap(),
            row.t_sim_mean.unwrap(),
            row.t_sim_ci95.unwrap(),
        );
        assert!(
            (mean - fb).abs() <= ci,
            "δ={}: {mean} ± {ci} vs {fb}",
            row.param
        );
    }
}

fn fig6_template() -> SystemConfig {
    SystemConfig {
        users: 4,
        files: 20,
        delta: (1..=4).map(|k| k as f64 / 5.0).collect(),
        mem: vec![0.0; 4],
        file_sizes: vec![1; 20],
        field_order: 256,
    }
}

#[test]
fn optimized_objective_decreases_with_budget() {
    let template = fig6_template();
    let mut last = f64::INFINITY;
    for budget in [0.0, 8.0, 16.0, 40.0, 80.0] {
        let a = optimize_memory(&template, budget, 4.0).unwrap();
        let sum: f64 = a.mem.iter().sum();
        assert!((sum - budget).abs() < 1e-9);
        assert!(a.mem.iter().all(|&m| (0.0..=20.0).contains(&m)));
        assert!(a.objective <= last + 1e-12, "budget {budget}");
        if let Some(sym) = a.symmetric_objective {
            assert!(a.objective <= sym + 1e-12);
        }
        last = a.objective;
    }
    assert_eq!(last, 0.0);
}

#[test]
fn symmetric_allocation_is_a_minimizer_for_equal_links() {
    let template = SystemConfig::symmetric(3, 6, 0.4, 0.0, 1);
    let a = optimize_memory(&template, 6.0, 1.0).unwrap();
    let sym = a.symmetric_objective.unwrap();
    assert!(
        (a.objective - sym).abs() <= 1e-12 * sym.max(1.0),
        "{} vs {sym}",
        a.objective
    );
}
