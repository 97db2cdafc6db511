use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const FIG2: &str = r#"{"K": 2, "N": 3, "delta": [0.25, 0.5], "mem": [1.0, 2.0], "file_sizes": [1000, 1000, 1000]}"#;
const SYM3: &str = r#"{"K": 3, "N": 4, "delta": [0.5, 0.5, 0.5], "mem": [2.0, 2.0, 2.0], "file_sizes": [1000, 1000, 1000, 1000]}"#;

struct Fixtures {
    dir: TempDir,
}

impl Fixtures {
    fn new() -> Self {
        let f = Fixtures {
            dir: tempfile::tempdir().unwrap(),
        };
        f.write("fig2.json", FIG2);
        f.write("sym3.json", SYM3);
        f
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn ebcache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebcache"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn status(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(out: &Output) -> Value {
    assert_eq!(
        status(out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is valid JSON")
}

fn csv_table(out: &Output) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(&out.stdout[..]);
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn region_reports_two_user_coefficients() {
    let fx = Fixtures::new();
    let doc = json(&ebcache(&["region", "--config", p(&fx.path("fig2.json"))]));
    let mut coeffs: Vec<f64> = doc["inequalities"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|q| {
            q["coeffs"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c.as_f64().unwrap())
        })
        .collect();
    coeffs.sort_by(f64::total_cmp);
    coeffs.dedup_by(|a, b| close(*a, *b, 1e-12));
    let expected = [16.0 / 63.0, 2.0 / 3.0, 8.0 / 9.0];
    assert_eq!(coeffs.len(), 3);
    for (c, e) in coeffs.iter().zip(expected) {
        assert!(close(*c, e, 1e-12), "{c} vs {e}");
    }
    let corner = &doc["two_user"]["intersection"];
    assert!(close(corner[0].as_f64().unwrap(), 0.78, 5e-3));
    assert!(close(corner[1].as_f64().unwrap(), 1.20, 5e-3));
}

#[test]
fn region_csv_has_one_row_per_permutation() {
    let fx = Fixtures::new();
    let out = ebcache(&[
        "region",
        "--config",
        p(&fx.path("sym3.json")),
        "--output",
        "csv",
    ]);
    assert_eq!(status(&out), 0);
    let (header, rows) = csv_table(&out);
    assert_eq!(header, ["perm", "w1", "w2", "w3"]);
    assert_eq!(rows.len(), 6);
}

#[test]
fn verify_prints_residual_summary() {
    let out = ebcache(&["verify", "--K", "4", "--samples", "1000", "--seed", "7"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max residual < 1e-9"));
    let doc = json(&out);
    assert_eq!(doc["pass"], true);
    assert!(doc["max_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn simulate_matches_closed_form() {
    let fx = Fixtures::new();
    let doc = json(&ebcache(&[
        "simulate",
        "--config",
        p(&fx.path("sym3.json")),
        "--seed",
        "1",
        "--F",
        "100000",
    ]));
    let ratio = doc["slots_total"].as_f64().unwrap() / 100_000.0;
    let target = 31.0 / 21.0;
    assert!((ratio - target).abs() < 0.01 * target, "{ratio}");
    assert_eq!(doc["slots_per_F"].as_f64().unwrap(), ratio);
}

#[test]
fn simulate_is_reproducible_and_seed_defaults_to_zero() {
    let fx = Fixtures::new();
    let cfg = fx.path("fig2.json");
    let a = ebcache(&["simulate", "--config", p(&cfg), "--decode"]);
    let b = ebcache(&["simulate", "--config", p(&cfg), "--decode", "--seed", "0"]);
    let c = ebcache(&["simulate", "--config", p(&cfg), "--decode", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(json(&a)["decode_ok"], serde_json::json!([true, true]));
}

#[test]
fn simulate_writes_trace_and_placement() {
    let fx = Fixtures::new();
    let trace = fx.path("trace.csv");
    let placement = fx.path("placement.json");
    let out = ebcache(&[
        "simulate",
        "--config",
        p(&fx.path("fig2.json")),
        "--F",
        "30",
        "--decode",
        "--trace",
        p(&trace),
        "--placement-out",
        p(&placement),
        "--output",
        "csv",
    ]);
    assert_eq!(status(&out), 0, "{}", stderr(&out));
    let (header, rows) = csv_table(&out);
    assert_eq!(header[1], "slots_total");
    let slots: usize = rows[0][1].parse().unwrap();

    let mut r = csv::Reader::from_path(&trace).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["slot", "subphase", "receivers", "action"]);
    assert_eq!(r.records().count(), slots);

    let pm: Value = serde_json::from_str(&std::fs::read_to_string(&placement).unwrap()).unwrap();
    assert_eq!(pm["scheme"], "decentralized");
    assert_eq!(pm["files"].as_array().unwrap().len(), 3);
}

#[test]
fn large_placement_export_is_refused() {
    let fx = Fixtures::new();
    let out = ebcache(&[
        "simulate",
        "--config",
        p(&fx.path("sym3.json")),
        "--F",
        "100000",
        "--placement-out",
        p(&fx.path("pm.json")),
    ]);
    assert_eq!(status(&out), 1);
}

#[test]
fn order_two_start_runs() {
    let fx = Fixtures::new();
    let doc = json(&ebcache(&[
        "simulate",
        "--config",
        p(&fx.path("sym3.json")),
        "--start-phase",
        "2",
        "--F",
        "200",
        "--decode",
    ]));
    assert_eq!(doc["start_phase"], 2);
    assert_eq!(doc["decode_ok"], serde_json::json!([true, true, true]));
}

#[test]
fn ttot_and_plan_agree() {
    let fx = Fixtures::new();
    let cfg = fx.path("sym3.json");
    let t = json(&ebcache(&["ttot", "--config", p(&cfg)]));
    assert!(close(
        t["closed_form_per_F"].as_f64().unwrap(),
        31.0 / 21.0,
        1e-11
    ));
    assert_eq!(t["scheme_per_F"], t["closed_form_per_F"]);
    let plan = json(&ebcache(&["plan", "--config", p(&cfg)]));
    assert!(close(
        plan["total"].as_f64().unwrap(),
        1000.0 * 31.0 / 21.0,
        1e-8
    ));
    assert_eq!(plan["subphases"].as_array().unwrap().len(), 7);

    let out = ebcache(&["plan", "--config", p(&cfg), "--output", "csv"]);
    let (header, rows) = csv_table(&out);
    assert_eq!(header, ["subphase", "t", "t_user1", "t_user2", "t_user3"]);
    assert_eq!(rows.len(), 7);
}

#[test]
fn centralized_plan_needs_integer_b() {
    let fx = Fixtures::new();
    let out = ebcache(&[
        "plan",
        "--config",
        p(&fx.path("sym3.json")),
        "--placement",
        "centralized",
    ]);
    assert_eq!(status(&out), 1);
    let cfg = fx.write(
        "b1.json",
        r#"{"K": 3, "N": 3, "delta": [0.5, 0.5, 0.5], "mem": [1, 1, 1], "file_sizes": [3, 3, 3]}"#,
    );
    let doc = json(&ebcache(&[
        "plan",
        "--config",
        p(&cfg),
        "--placement",
        "centralized",
    ]));
    assert!(close(
        doc["total"].as_f64().unwrap(),
        3.0 * 16.0 / 9.0,
        1e-9
    ));
}

#[test]
fn feasible_checks_rates() {
    let fx = Fixtures::new();
    let cfg = fx.path("fig2.json");
    let inside = json(&ebcache(&[
        "feasible",
        "--config",
        p(&cfg),
        "--rates",
        "0.7,1.1",
    ]));
    assert_eq!(inside["feasible"], true);
    let outside = json(&ebcache(&[
        "feasible",
        "--config",
        p(&cfg),
        "--rates",
        "1,1.3",
    ]));
    assert_eq!(outside["feasible"], false);
    let out = ebcache(&["feasible", "--config", p(&cfg), "--rates", "1"]);
    assert_eq!(status(&out), 1);
}

#[test]
fn sweep_csv_keeps_header_on_bad_rows() {
    let fx = Fixtures::new();
    let out = ebcache(&[
        "sweep",
        "--config",
        p(&fx.path("sym3.json")),
        "--vary",
        "delta",
        "--grid",
        "0.2,1.5",
        "--trials",
        "2",
        "--F",
        "100",
        "--output",
        "csv",
    ]);
    assert_eq!(status(&out), 0);
    let (header, rows) = csv_table(&out);
    assert_eq!(
        header,
        [
            "param",
            "T_fb",
            "T_nofb",
            "T_cent",
            "T_sim_mean",
            "T_sim_ci95",
            "trials",
            "F",
            "seed"
        ]
    );
    assert_eq!(rows.len(), 2);
    assert!(!rows[0][1].is_empty() && !rows[0][4].is_empty());
    assert_eq!(rows[1][0], "1.5");
    assert!(rows[1][1..6].iter().all(|f| f.is_empty()));
    assert!(stderr(&out).contains("delta[1]"));
}

#[test]
fn sweep_json_is_reproducible() {
    let fx = Fixtures::new();
    let cfg = fx.path("sym3.json");
    let args = [
        "sweep",
        "--config",
        p(&cfg),
        "--vary",
        "mem",
        "--grid",
        "0,2,4",
        "--trials",
        "2",
        "--F",
        "100",
        "--seed",
        "5",
    ];
    let a = ebcache(&args);
    let b = ebcache(&args);
    assert_eq!(a.stdout, b.stdout);
    let doc = json(&a);
    assert_eq!(doc.as_array().unwrap().len(), 3);
    assert_eq!(doc[2]["T_fb"], 0.0);
}

#[test]
fn sweep_rejects_zero_trials() {
    let fx = Fixtures::new();
    let out = ebcache(&[
        "sweep",
        "--config",
        p(&fx.path("sym3.json")),
        "--vary",
        "delta",
        "--grid",
        "0.5",
        "--trials",
        "0",
    ]);
    assert_eq!(status(&out), 1);
}

#[test]
fn optimize_mem_round_trips() {
    let fx = Fixtures::new();
    let cfg = fx.path("sym3.json");
    let doc = json(&ebcache(&[
        "optimize-mem",
        "--config",
        p(&cfg),
        "--budget",
        "6",
        "--step",
        "1",
    ]));
    let total: f64 = doc["mem"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m.as_f64().unwrap())
        .sum();
    assert_eq!(total, 6.0);
    assert_eq!(doc["objective"], doc["symmetric_objective"]);
    let out = ebcache(&[
        "optimize-mem",
        "--config",
        p(&cfg),
        "--budget",
        "6",
        "--output",
        "csv",
    ]);
    let (header, rows) = csv_table(&out);
    assert_eq!(header[..3], ["mem1", "mem2", "mem3"]);
    assert_eq!(rows.len(), 1);
    let out = ebcache(&[
        "optimize-mem",
        "--config",
        p(&cfg),
        "--budget",
        "5",
        "--step",
        "2",
    ]);
    assert_eq!(status(&out), 1);
}

#[test]
fn invalid_config_names_the_field() {
    let fx = Fixtures::new();
    let bad = fx.write(
        "bad.json",
        r#"{"K": 2, "N": 3, "delta": [0.25, 1.5], "mem": [1, 2], "file_sizes": [5, 5, 5]}"#,
    );
    let out = ebcache(&["ttot", "--config", p(&bad)]);
    assert_eq!(status(&out), 1);
    assert!(stderr(&out).contains("delta[2]"), "{}", stderr(&out));

    let missing = fx.write("missing.json", r#"{"K": 2, "N": 3, "delta": [0.2, 0.2]}"#);
    let out = ebcache(&["region", "--config", p(&missing)]);
    assert_eq!(status(&out), 1);
    assert!(stderr(&out).contains("mem"), "{}", stderr(&out));

    let out = ebcache(&["region", "--config", p(&fx.path("absent.json"))]);
    assert_eq!(status(&out), 1);
}

#[test]
fn bad_arguments_exit_with_validation_status() {
    assert_eq!(status(&ebcache(&["frobnicate"])), 1);
    assert_eq!(status(&ebcache(&["verify", "--K", "x"])), 1);
    assert_eq!(status(&ebcache(&["verify", "--jobs", "0"])), 1);
    assert_eq!(status(&ebcache(&["--help"])), 0);
}

#[test]
fn exhausted_cleanup_budget_is_a_decode_failure() {
    let fx = Fixtures::new();
    // binary coefficients leave many combinations dependent
    let cfg = fx.write(
        "q2.json",
        r#"{"K": 3, "N": 3, "delta": [0.5, 0.5, 0.5], "mem": [1, 1, 1], "file_sizes": [40, 40, 40], "field_order": 2}"#,
    );
    let out = ebcache(&[
        "simulate",
        "--config",
        p(&cfg),
        "--decode",
        "--cleanup-budget",
        "0",
    ]);
    assert_eq!(status(&out), 2);
    assert!(stderr(&out).contains("unresolved"));
}

#[test]
fn every_verb_emits_parseable_csv() {
    let fx = Fixtures::new();
    let cfg = fx.path("fig2.json");
    let c = p(&cfg);
    let runs: [&[&str]; 6] = [
        &["region", "--config", c],
        &["feasible", "--config", c, "--rates", "0.5,0.5"],
        &["ttot", "--config", c],
        &["plan", "--config", c],
        &["simulate", "--config", c, "--F", "50"],
        &["verify", "--K", "3", "--samples", "20"],
    ];
    for args in runs {
        let mut full = args.to_vec();
        full.extend(["--output", "csv"]);
        let out = ebcache(&full);
        assert_eq!(status(&out), 0, "{args:?}: {}", stderr(&out));
        let (header, rows) = csv_table(&out);
        assert!(!rows.is_empty(), "{args:?}");
        assert!(rows.iter().all(|r| r.len() == header.len()), "{args:?}");

        let out = ebcache(args);
        json(&out);
    }
}

#[test]
fn numbers_carry_twelve_significant_digits() {
    let fx = Fixtures::new();
    let out = ebcache(&[
        "ttot",
        "--config",
        p(&fx.path("sym3.json")),
        "--output",
        "csv",
    ]);
    let (header, rows) = csv_table(&out);
    let col = header
        .iter()
        .position(|h| h == "closed_form_per_F")
        .unwrap();
    assert_eq!(rows[0][col], "1.47619047619");
}
