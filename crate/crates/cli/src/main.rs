mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ebcache::analysis::{region_vertices, symmetric_rate, NoFeedbackScheme};
use ebcache::experiments::{optimize_memory, sweep, SweepParam, SweepSpec, SWEEP_COLUMNS};
use ebcache::model::{is_one_sided_fair, RateVector};
use ebcache::placement::{centralized_b, centralized_place, decentralized_place};
use ebcache::sim::{run_delivery, SimError, SimOptions};
use ebcache::verify::{identity_suite, IDENTITY_TOL};
use ebcache::{Demand, Params64, SystemConfig};

use output::{emit_csv, emit_json, num, opt_num, users, Format};

/// Largest placement (in packets over all files) written by `--placement-out`.
const MAX_EXPORT_PACKETS: u64 = 100_000;

#[derive(Parser, Debug)]
#[command(
    name = "ebcache",
    version,
    about = "Cache-enabled erasure broadcast: rate regions, delivery plans and simulation"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    output: Format,
    /// Worker threads for parallel experiments (default: all processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// System configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Requested files, 1-based and comma separated (default: user k wants file k).
    #[arg(long, value_delimiter = ',')]
    demand: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Placement {
    Decentralized,
    Centralized,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// The K! inequalities of the feedback rate region, with vertices when available.
    Region(ConfigArgs),
    /// Checks a rate vector against the region.
    Feasible {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Per-user rates, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
    },
    /// Total transmission length: closed form and scheme.
    Ttot(ConfigArgs),
    /// Sub-phase lengths of the delivery scheme.
    Plan {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value_t = Placement::Decentralized)]
        placement: Placement,
    },
    /// One seeded delivery trial.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Packets per file, overriding the config.
        #[arg(long = "F")]
        file_size: Option<u64>,
        #[arg(long, default_value_t = 1)]
        start_phase: usize,
        #[arg(long, value_enum, default_value_t = Placement::Decentralized)]
        placement: Placement,
        /// Carry coded payloads and decode every user.
        #[arg(long)]
        decode: bool,
        /// Field elements per packet when decoding.
        #[arg(long, default_value_t = 1)]
        payload_len: usize,
        /// Cleanup slots allowed before decoding is declared failed (default: 64·K).
        #[arg(long)]
        cleanup_budget: Option<u64>,
        /// Per-slot trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Placement map as JSON (small instances only).
        #[arg(long)]
        placement_out: Option<PathBuf>,
    },
    /// One row per grid value of a symmetric parameter.
    Sweep {
        /// Template configuration; per-user vectors use their first entry.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vary: SweepParam,
        /// Grid values, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Packets per file in the simulated columns.
        #[arg(long = "F", default_value_t = 1000)]
        file_size: u64,
    },
    /// Exhaustive search for the best split of a total cache budget.
    OptimizeMem {
        #[arg(long)]
        config: PathBuf,
        /// Total cache memory Σ M_k, in files.
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    /// Randomized identity suite.
    Verify {
        #[arg(long = "K", default_value_t = 4)]
        users: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

/// Failure after a document was produced: decoding or an identity did not hold.
const STATUS_FAILURE: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        std::env::set_var("RAYON_NUM_THREADS", jobs.to_string());
    }
    match run(&cli) {
        Ok(status) => ExitCode::from(status),
        Err(Failure { status, error }) => {
            eprintln!("error: {}", describe(&error));
            ExitCode::from(status)
        }
    }
}

/// Error chain joined by `: `, dropping causes already spelled out by their parent.
fn describe(error: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in error.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

struct Failure {
    status: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            status: 1,
            error: e.into(),
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let fmt = cli.output;
    match &cli.verb {
        Verb::Region(args) => region(&load(args)?, fmt)?,
        Verb::Feasible { cfg, rates } => feasible(&load(cfg)?, rates, fmt)?,
        Verb::Ttot(args) => ttot(&load(args)?, fmt)?,
        Verb::Plan { cfg, placement } => plan(&load(cfg)?, *placement, fmt)?,
        Verb::Simulate {
            cfg,
            file_size,
            start_phase,
            placement,
            decode,
            payload_len,
            cleanup_budget,
            trace,
            placement_out,
        } => {
            let mut loaded = load(cfg)?;
            if let Some(f) = file_size {
                loaded.cfg = loaded.cfg.with_file_size(*f);
                loaded.cfg.validate()?;
            }
            let opts = SimOptions {
                decode: *decode,
                payload_len: *payload_len,
                cleanup_budget: *cleanup_budget,
                trace: trace.is_some(),
                ..SimOptions::default()
            };
            return simulate(
                &loaded,
                cli.seed,
                *start_phase,
                *placement,
                &opts,
                trace.as_deref(),
                placement_out.as_deref(),
                fmt,
            );
        }
        Verb::Sweep {
            config,
            vary,
            grid,
            trials,
            file_size,
        } => {
            let spec = SweepSpec {
                varying: *vary,
                grid: grid.clone(),
                fixed: read_config(config)?,
                trials: *trials,
                seed: cli.seed,
                file_size: *file_size,
            };
            run_sweep(&spec, fmt)?
        }
        Verb::OptimizeMem {
            config,
            budget,
            step,
        } => optimize(&read_config(config)?, *budget, *step, fmt)?,
        Verb::Verify { users, samples } => return verify(*users, *samples, cli.seed, fmt),
    }
    Ok(0)
}

struct Loaded {
    cfg: SystemConfig,
    demand: Demand,
}

impl Loaded {
    fn params(&self) -> Params64 {
        Params64::from_config(&self.cfg, &self.demand)
    }
}

fn read_config(path: &Path) -> Result<SystemConfig> {
    let cfg = SystemConfig::from_path(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load(args: &ConfigArgs) -> Result<Loaded> {
    let cfg = read_config(&args.config)?;
    let demand = match &args.demand {
        None => Demand::identity(cfg.users),
        Some(files) => {
            if files.contains(&0) {
                bail!("demand: files are numbered from 1");
            }
            Demand::new(files.iter().map(|f| f - 1).collect(), &cfg)?
        }
    };
    Ok(Loaded { cfg, demand })
}

fn region(loaded: &Loaded, fmt: Format) -> Result<()> {
    let params = loaded.params();
    let region = params.region()?;
    match fmt {
        Format::Json => {
            let mut doc = region.to_json();
            if params.users() == 2 {
                let v = params.vertices_two_user()?;
                doc["two_user"] = json!({
                    "r1_axis": [v.r1_axis.0, v.r1_axis.1],
                    "r2_axis": [v.r2_axis.0, v.r2_axis.1],
                    "intersection": v.intersection.map(|(a, b)| vec![a, b]),
                    "sum_rate": v.sum_rate(),
                    "file_size_ratio": v.file_size_ratio(),
                });
            }
            if params.is_symmetric() {
                let rates: Result<Vec<f64>, _> = (1..=params.users())
                    .map(|n| symmetric_rate(n, params.delta[0], params.p[0]))
                    .collect();
                doc["symmetric_rate_by_active_users"] = json!(rates?);
            }
            if params.users() <= 4 {
                doc["vertices"] = json!(region_vertices(&params)?);
            }
            emit_json(doc)
        }
        Format::Csv => {
            let k = params.users();
            let mut header = vec!["perm".to_string()];
            header.extend((1..=k).map(|i| format!("w{i}")));
            let rows: Vec<Vec<String>> = region
                .inequalities
                .iter()
                .map(|q| {
                    let mut row = vec![users(&q.perm)];
                    row.extend(q.coeffs.iter().map(|&c| num(c)));
                    row
                })
                .collect();
            emit_csv(&header, &rows)
        }
    }
}

fn feasible(loaded: &Loaded, rates: &[f64], fmt: Format) -> Result<()> {
    let params = loaded.params();
    if rates.len() != params.users() {
        bail!(
            "rates: {} entries for K = {} users",
            rates.len(),
            params.users()
        );
    }
    if let Some(i) = rates.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
        bail!("rates[{}]: must be a finite nonnegative number", i + 1);
    }
    let f = params.feasible(rates)?;
    let fair = is_one_sided_fair(&loaded.cfg, &RateVector(rates.to_vec())).ok();
    match fmt {
        Format::Json => emit_json(json!({
            "rates": rates,
            "feasible": f.feasible,
            "max_lhs": f.max_lhs,
            "worst_perm": f.worst_perm.iter().map(|u| u + 1).collect::<Vec<_>>(),
            "one_sided_fair": fair,
        })),
        Format::Csv => emit_csv(
            &["feasible", "max_lhs", "worst_perm", "one_sided_fair"].map(String::from),
            &[vec![
                f.feasible.to_string(),
                num(f.max_lhs),
                users(&f.worst_perm),
                fair.map(|b| b.to_string()).unwrap_or_default(),
            ]],
        ),
    }
}

fn ttot(loaded: &Loaded, fmt: Format) -> Result<()> {
    let params = loaded.params();
    let f = loaded.cfg.average_file_size();
    let report = params.ttot_report()?;
    let unit = params.unit_sizes();
    let nofb = ebcache::analysis::ttot_no_feedback(&unit, NoFeedbackScheme::Decentralized).ok();
    let fields = [
        ("closed_form_slots", Some(report.closed_form)),
        ("scheme_slots", Some(report.scheme)),
        ("gap_slots", Some(report.gap)),
        ("closed_form_per_F", Some(report.closed_form / f)),
        ("scheme_per_F", Some(report.scheme / f)),
        ("no_feedback_per_F", nofb),
    ];
    match fmt {
        Format::Json => {
            let mut doc = json!({
                "K": params.users(),
                "F": f,
                "maximizer": report.maximizer.iter().map(|u| u + 1).collect::<Vec<_>>(),
            });
            for (name, v) in fields {
                doc[name] = json!(v);
            }
            emit_json(doc)
        }
        Format::Csv => {
            let mut header: Vec<String> = vec!["K".into(), "F".into(), "maximizer".into()];
            header.extend(fields.iter().map(|(n, _)| n.to_string()));
            let mut row = vec![params.users().to_string(), num(f), users(&report.maximizer)];
            row.extend(fields.iter().map(|(_, v)| opt_num(*v)));
            emit_csv(&header, &[row])
        }
    }
}

fn plan(loaded: &Loaded, placement: Placement, fmt: Format) -> Result<()> {
    let params = loaded.params();
    let plan = match placement {
        Placement::Decentralized => params.phase_plan()?,
        Placement::Centralized => params.phase_plan_centralized(centralized_b(&loaded.cfg)?)?,
    };
    match fmt {
        Format::Json => emit_json(plan.to_json()),
        Format::Csv => {
            let k = params.users();
            let mut header = vec!["subphase".to_string(), "t".to_string()];
            header.extend((1..=k).map(|i| format!("t_user{i}")));
            let rows: Vec<Vec<String>> = plan
                .subphases()
                .into_iter()
                .map(|(s, t)| {
                    let mut row = vec![users(&s.iter().collect::<Vec<_>>()), num(t)];
                    row.extend((0..k).map(|u| {
                        if s.contains(u) {
                            num(plan.t_user(s, u))
                        } else {
                            String::new()
                        }
                    }));
                    row
                })
                .collect();
            emit_csv(&header, &rows)
        }
    }
}

fn sim_status(e: &SimError) -> u8 {
    match e {
        SimError::CleanupBudget { .. } | SimError::Gf(_) | SimError::PayloadMismatch { .. } => {
            STATUS_FAILURE
        }
        _ => 1,
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    loaded: &Loaded,
    seed: u64,
    start_phase: usize,
    placement: Placement,
    opts: &SimOptions,
    trace: Option<&Path>,
    placement_out: Option<&Path>,
    fmt: Format,
) -> Result<u8, Failure> {
    let cfg = &loaded.cfg;
    let pm = match placement {
        Placement::Decentralized => decentralized_place(cfg, seed),
        Placement::Centralized => centralized_place(cfg)?,
    };
    if let Some(path) = placement_out {
        let packets: u64 = cfg.file_sizes.iter().sum();
        if packets > MAX_EXPORT_PACKETS {
            return Err(anyhow::anyhow!(
                "placement export limited to {MAX_EXPORT_PACKETS} packets, config has {packets}"
            )
            .into());
        }
        std::fs::write(path, serde_json::to_string_pretty(&pm.to_json())?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let result =
        run_delivery(cfg, &pm, &loaded.demand, seed, start_phase, opts).map_err(|e| Failure {
            status: sim_status(&e),
            error: e.into(),
        })?;
    if let (Some(path), Some(rows)) = (trace, &result.trace) {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    let f = cfg.average_file_size();
    let per_f = result.slots_total as f64 / f;
    match fmt {
        Format::Json => {
            let mut doc = serde_json::to_value(&result)?;
            doc["F"] = json!(f);
            doc["slots_per_F"] = json!(per_f);
            doc["start_phase"] = json!(start_phase);
            emit_json(doc)?;
        }
        Format::Csv => {
            let decoded = result
                .decode_ok
                .as_ref()
                .map(|v| v.iter().all(|&b| b).to_string())
                .unwrap_or_default();
            emit_csv(
                &[
                    "seed",
                    "slots_total",
                    "slots_per_F",
                    "cleanup_slots",
                    "F",
                    "decoded",
                ]
                .map(String::from),
                &[vec![
                    result.seed.to_string(),
                    result.slots_total.to_string(),
                    num(per_f),
                    result.cleanup_slots.to_string(),
                    num(f),
                    decoded,
                ]],
            )?;
        }
    }
    if !result.all_decoded() {
        let failed: Vec<usize> = result
            .decode_ok
            .iter()
            .flatten()
            .enumerate()
            .filter(|(_, ok)| !**ok)
            .map(|(k, _)| k)
            .collect();
        eprintln!("error: decoding failed for users {}", users(&failed));
        return Ok(STATUS_FAILURE);
    }
    Ok(0)
}

fn run_sweep(spec: &SweepSpec, fmt: Format) -> Result<()> {
    let rows = sweep(spec)?;
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!(
                "warning: {} = {}: {e}",
                param_name(spec.varying),
                num(r.param)
            );
        }
    }
    match fmt {
        Format::Json => emit_json(serde_json::to_value(&rows)?),
        Format::Csv => {
            let header: Vec<String> = SWEEP_COLUMNS.iter().map(|s| s.to_string()).collect();
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        num(r.param),
                        opt_num(r.t_fb),
                        opt_num(r.t_nofb),
                        opt_num(r.t_cent),
                        opt_num(r.t_sim_mean),
                        opt_num(r.t_sim_ci95),
                        r.trials.to_string(),
                        r.file_size.to_string(),
                        r.seed.to_string(),
                    ]
                })
                .collect();
            emit_csv(&header, &body)
        }
    }
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Delta => "delta",
        SweepParam::Mem => "mem",
        SweepParam::K => "K",
    }
}

fn optimize(template: &SystemConfig, budget: f64, step: f64, fmt: Format) -> Result<()> {
    let a = optimize_memory(template, budget, step)?;
    match fmt {
        Format::Json => emit_json(serde_json::to_value(&a)?),
        Format::Csv => {
            let k = a.mem.len();
            let mut header: Vec<String> = (1..=k).map(|i| format!("mem{i}")).collect();
            header.extend(
                [
                    "objective",
                    "budget",
                    "symmetric_objective",
                    "bound_objective",
                    "points",
                ]
                .map(String::from),
            );
            let mut row: Vec<String> = a.mem.iter().map(|&m| num(m)).collect();
            row.extend([
                num(a.objective),
                num(a.budget),
                opt_num(a.symmetric_objective),
                num(a.bound_objective),
                a.points.to_string(),
            ]);
            emit_csv(&header, &[row])
        }
    }
}

fn verify(k: usize, samples: usize, seed: u64, fmt: Format) -> Result<u8, Failure> {
    if k == 0 || k > 16 {
        return Err(anyhow::anyhow!("K: must lie in [1, 16], got {k}").into());
    }
    let report = identity_suite(k, samples, seed)?;
    let summary = if report.pass {
        format!("max residual < {IDENTITY_TOL:e}")
    } else {
        format!(
            "max residual {:e} not below {IDENTITY_TOL:e}",
            report.max_residual
        )
    };
    match fmt {
        Format::Json => {
            let mut doc = serde_json::to_value(&report)?;
            doc["summary"] = Value::String(summary.clone());
            emit_json(doc)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .checks
                .iter()
                .map(|c| {
                    vec![
                        c.name.to_string(),
                        c.cases.to_string(),
                        c.failures.to_string(),
                        format!("{:e}", c.max_residual),
                        c.pass.to_string(),
                    ]
                })
                .collect();
            emit_csv(
                &["check", "cases", "failures", "max_residual", "pass"].map(String::from),
                &rows,
            )?;
        }
    }
    eprintln!("{summary}");
    Ok(if report.pass { 0 } else { STATUS_FAILURE })
}
