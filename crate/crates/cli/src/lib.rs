//! Experiment driver behind the `frisim` binary.
//!
//! Verbs:
//!
//! - `run`: optimize a policy (or use the greedy heuristic) and export one
//!   evaluated episode;
//! - `sweep`: repeat `run` over a parameter grid and seeds, aggregate, and
//!   optionally assert a monotone trend;
//! - `serve`: expose the environment over the line protocol on stdio or TCP;
//! - `validate-config`: parse and check a scenario file;
//! - `fit-table`: tabulate the fitted reflection-amplitude model.
//!
//! Exit codes: 0 success, 1 I/O or simulation failure, 2 configuration
//! error, 3 trend assertion failure.

use std::fmt;
use std::fs;
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use frisim_bridge::{config_digest, serve as serve_session};
use frisim_core::config::{annotated_toml, ScenarioConfig};
use frisim_core::em::{fit_table, write_fit_table};
use frisim_core::env::{Env, EpisodeSummary, StepInfo};
use frisim_core::optim::{
    cem_optimize, derive_seed, episode_objective, random_search, run_episode, CemSettings, PolicyKind,
};
use rayon::prelude::*;
use serde::Serialize;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "frisim", version, about = "Flexible-RIS covert UAV communication simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a policy and export one evaluated episode.
    Run(RunArgs),
    /// Run a parameter sweep and aggregate covert rates.
    Sweep(SweepArgs),
    /// Serve the environment over the line protocol.
    Serve(ServeArgs),
    /// Parse and validate a scenario file.
    ValidateConfig(ScenarioArgs),
    /// Write the fitted amplitude model on a (theta, iota) grid as CSV.
    FitTable(FitTableArgs),
}

/// Scenario selection shared by all verbs.
#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    /// Scenario TOML file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted-path override, e.g. `--set covert.epsilon=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Random,
    Cem,
    /// Waypoint policy holding the initial positions, no search.
    #[default]
    Greedy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    #[default]
    Waypoint,
    OpenLoop,
    Linear,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Waypoint => PolicyKind::Waypoint,
            PolicyArg::OpenLoop => PolicyKind::OpenLoop,
            PolicyArg::Linear => PolicyKind::Linear,
        }
    }
}

/// Optimization settings shared by `run` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, value_enum, default_value_t = Optimizer::Greedy)]
    pub optimizer: Optimizer,
    /// Episode budget of the optimizer.
    #[arg(long, default_value_t = 2000)]
    pub budget: usize,
    #[arg(long, value_enum, default_value_t = PolicyArg::Waypoint)]
    pub policy: PolicyArg,
}

impl Default for OptimArgs {
    fn default() -> Self {
        Self { optimizer: Optimizer::Greedy, budget: 2000, policy: PolicyArg::Waypoint }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Trend {
    /// Mean covert rate must not decrease along the value list.
    Increasing,
    /// Mean covert rate must not increase along the value list.
    Decreasing,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Dotted parameter path, e.g. `ris.elements`.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Seeds per value.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Fail with exit code 3 unless the aggregate follows this trend.
    #[arg(long, value_enum)]
    pub trend: Option<Trend>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Serve on standard input/output (default).
    #[arg(long, conflicts_with = "tcp")]
    pub stdio: bool,
    /// Listen on 127.0.0.1:PORT instead; 0 picks a free port.
    #[arg(long, value_name = "PORT")]
    pub tcp: Option<u16>,
}

#[derive(Debug, Clone, Args)]
pub struct FitTableArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 10.0)]
    pub theta_step: f64,
    #[arg(long, default_value_t = 5.0)]
    pub iota_step: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Loads the scenario from the optional file, then applies `--set` and
/// `--seed`.
pub fn load_scenario(args: &ScenarioArgs) -> Result<ScenarioConfig> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?,
        None => String::new(),
    };
    let origin = args.config.as_ref().map_or("<defaults>".to_string(), |p| p.display().to_string());
    let mut cfg = ScenarioConfig::from_toml_with_overrides(&text, &args.overrides)
        .map_err(|e| CliError::config(format!("invalid config {origin}: {e}")))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Result of optimizing one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct Optimized {
    pub optimizer: Optimizer,
    pub policy: PolicyKind,
    pub evaluations: usize,
    /// Best training objective (mean penalized reward).
    pub objective: f64,
    pub params: Vec<f64>,
    /// CSV of the optimizer's progress.
    #[serde(skip)]
    pub history_csv: String,
}

/// CEM population and iteration count for an episode budget.
pub fn cem_settings(budget: usize, seed: u64) -> CemSettings {
    let population = if budget >= 200 { 50 } else { (budget / 4).max(4) };
    let iterations = (budget / population).max(1);
    CemSettings { population, iterations, seed, ..CemSettings::default() }
}

pub fn optimize(cfg: &ScenarioConfig, optim: &OptimArgs) -> Result<Optimized> {
    let kind = PolicyKind::from(optim.policy);
    let seed = cfg.seed;
    let bounds = kind.bounds(cfg);
    let objective = episode_objective(cfg, kind);
    let sim = |e: frisim_core::optim::OptimError| CliError::io(e.to_string());
    Ok(match optim.optimizer {
        Optimizer::Greedy => {
            let params = PolicyKind::Waypoint.initial(cfg);
            let value = episode_objective(cfg, PolicyKind::Waypoint)(&params, seed);
            Optimized {
                optimizer: Optimizer::Greedy,
                policy: PolicyKind::Waypoint,
                evaluations: 1,
                objective: value,
                params,
                history_csv: format!("evaluation,best_value\n1,{value}\n"),
            }
        }
        Optimizer::Random => {
            let r = random_search(&bounds, optim.budget.max(1), seed, objective).map_err(sim)?;
            let mut csv = String::from("evaluation,best_value\n");
            for (i, v) in r.history.iter().enumerate() {
                csv.push_str(&format!("{},{v}\n", i + 1));
            }
            Optimized {
                optimizer: Optimizer::Random,
                policy: kind,
                evaluations: r.evaluations,
                objective: r.best_value,
                params: r.best.values,
                history_csv: csv,
            }
        }
        Optimizer::Cem => {
            let init = kind.initial(cfg);
            let r = cem_optimize(&bounds, Some(&init), &cem_settings(optim.budget, seed), objective).map_err(sim)?;
            let mut buf = Vec::new();
            r.write_history_csv(&mut buf).map_err(|e| CliError::io(e.to_string()))?;
            Optimized {
                optimizer: Optimizer::Cem,
                policy: kind,
                evaluations: r.evaluations,
                objective: r.best_value,
                params: r.best.values,
                history_csv: String::from_utf8(buf).expect("CSV is UTF-8"),
            }
        }
    })
}

/// Seed of the held-out evaluation episode for training seed `seed`.
pub fn evaluation_seed(seed: u64) -> u64 {
    derive_seed(seed, 1 << 40)
}

/// Runs the optimized policy on the evaluation episode; returns the trace.
pub fn evaluate(cfg: &ScenarioConfig, opt: &Optimized) -> Result<Vec<StepInfo>> {
    let mut env = Env::new(cfg.clone()).map_err(|e| CliError::config(e.to_string()))?;
    let mut policy = opt.policy.build(cfg, &opt.params).map_err(|e| CliError::io(e.to_string()))?;
    run_episode(&mut env, policy.as_mut(), evaluation_seed(cfg.seed)).map_err(|e| CliError::io(e.to_string()))?;
    Ok(env.trace().to_vec())
}

#[derive(Debug, Serialize)]
struct EpisodeRow {
    slot: usize,
    #[serde(rename = "R_b")]
    rate_bob: f64,
    #[serde(rename = "R_c")]
    rate_carol: f64,
    xi_star: f64,
    c1_ok: u8,
    reward: f64,
}

/// Episode CSV: `slot,R_b,R_c,xi_star,c1_ok,reward`.
pub fn episode_csv(trace: &[StepInfo]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in trace {
        w.serialize(EpisodeRow {
            slot: i.slot,
            rate_bob: i.rate_bob,
            rate_carol: i.rate_carol,
            xi_star: i.covert.xi_star,
            c1_ok: u8::from(i.covert.c1_ok),
            reward: i.reward,
        })
        .map_err(|e| CliError::io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    config_digest: String,
    seed: u64,
    evaluation_seed: u64,
    optimization: &'a Optimized,
    episode: EpisodeSummary,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))
}

/// `run`: writes `episode.csv`, `summary.json`, `history.csv` and
/// `resolved_config.toml` into the output directory.
pub fn cmd_run(args: &RunArgs) -> Result<EpisodeSummary> {
    let cfg = load_scenario(&args.scenario)?;
    let opt = optimize(&cfg, &args.optim)?;
    let trace = evaluate(&cfg, &opt)?;
    let episode = frisim_core::env::episode_metrics(&trace);
    create_dir(&args.out)?;
    write_file(&args.out.join("episode.csv"), &episode_csv(&trace)?)?;
    write_file(&args.out.join("history.csv"), &opt.history_csv)?;
    write_file(&args.out.join("resolved_config.toml"), &annotated_toml(&cfg))?;
    let summary = RunSummary {
        config_digest: config_digest(&cfg),
        seed: cfg.seed,
        evaluation_seed: evaluation_seed(cfg.seed),
        optimization: &opt,
        episode,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::io(e.to_string()))?;
    write_file(&args.out.join("summary.json"), &(json + "\n"))?;
    Ok(episode)
}

/// One optimized and evaluated sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub param: String,
    pub value: String,
    pub seed: u64,
    pub objective: f64,
    pub avg_rate_bob: f64,
    pub avg_rate_carol: f64,
    pub c1_fraction: f64,
    pub feasible: bool,
}

/// Aggregate over seeds for one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Parameter value.
    pub param: String,
    pub mean_covert_rate: f64,
    /// Half-width of the normal 95% interval of the mean.
    pub ci95: f64,
    pub public_rate: f64,
    pub feasible_frac: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub rows: Vec<SweepRow>,
}

/// Optimizes and evaluates every (value, seed) pair. Seed `k` uses scenario
/// seed `base + k` for every value, so points share random numbers across
/// the sweep.
pub fn sweep(base: &ScenarioArgs, optim: &OptimArgs, param: &str, values: &[String], seeds: u64) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    if seeds == 0 {
        return Err(CliError::config("sweep needs at least one seed"));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut args = base.clone();
        args.overrides.push(format!("{param}={v}"));
        let cfg = load_scenario(&args)?;
        configs.push(cfg);
    }
    let jobs: Vec<(usize, u64)> = (0..values.len()).flat_map(|i| (0..seeds).map(move |k| (i, k))).collect();
    let points: Vec<Result<SweepPoint>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let mut cfg = configs[i].clone();
            cfg.seed = cfg.seed.wrapping_add(k);
            let opt = optimize(&cfg, optim)?;
            let trace = evaluate(&cfg, &opt)?;
            let s = frisim_core::env::episode_metrics(&trace);
            Ok(SweepPoint {
                param: param.to_string(),
                value: values[i].clone(),
                seed: cfg.seed,
                objective: opt.objective,
                avg_rate_bob: s.avg_rate_bob,
                avg_rate_carol: s.avg_rate_carol,
                c1_fraction: s.c1_fraction,
                feasible: s.feasible,
            })
        })
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = values
        .iter()
        .map(|v| aggregate(v, points.iter().filter(|p| &p.value == v)))
        .collect();
    Ok(SweepOutcome { points, rows })
}

fn aggregate<'a>(value: &str, points: impl Iterator<Item = &'a SweepPoint>) -> SweepRow {
    let pts: Vec<&SweepPoint> = points.collect();
    let n = pts.len() as f64;
    let mean = pts.iter().map(|p| p.avg_rate_bob).sum::<f64>() / n;
    let ci95 = if pts.len() > 1 {
        let var = pts.iter().map(|p| (p.avg_rate_bob - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    SweepRow {
        param: value.to_string(),
        mean_covert_rate: mean,
        ci95,
        public_rate: pts.iter().map(|p| p.avg_rate_carol).sum::<f64>() / n,
        feasible_frac: pts.iter().filter(|p| p.feasible).count() as f64 / n,
    }
}

/// Whether consecutive means follow `trend` (ties allowed).
pub fn follows_trend(rows: &[SweepRow], trend: Trend) -> bool {
    rows.windows(2).all(|w| match trend {
        Trend::Increasing => w[1].mean_covert_rate >= w[0].mean_covert_rate,
        Trend::Decreasing => w[1].mean_covert_rate <= w[0].mean_covert_rate,
    })
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

/// `sweep`: writes `points.csv` and `aggregate.csv`.
pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepOutcome> {
    let outcome = sweep(&args.scenario, &args.optim, &args.param, &args.values, args.seeds)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("points.csv"), &to_csv(&outcome.points)?)?;
    write_file(&args.out.join("aggregate.csv"), &to_csv(&outcome.rows)?)?;
    if let Some(trend) = args.trend {
        if !follows_trend(&outcome.rows, trend) {
            let means: Vec<String> =
                outcome.rows.iter().map(|r| format!("{}={:.4}", r.param, r.mean_covert_rate)).collect();
            return Err(CliError { code: 3, msg: format!("trend {trend:?} violated: {}", means.join(", ")) });
        }
    }
    Ok(outcome)
}

/// `serve`: one session on stdio, or one session per TCP connection.
pub fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let cfg = load_scenario(&args.scenario)?;
    Env::new(cfg.clone()).map_err(|e| CliError::config(e.to_string()))?;
    match args.tcp {
        None => {
            let env = Env::new(cfg).map_err(|e| CliError::config(e.to_string()))?;
            let stdin = io::stdin();
            let summary = serve_session(env, stdin.lock(), io::stdout().lock()).map_err(|e| CliError::io(e.to_string()))?;
            eprintln!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            Ok(())
        }
        Some(port) => {
            let listener =
                TcpListener::bind(("127.0.0.1", port)).map_err(|e| CliError::io(format!("cannot bind port {port}: {e}")))?;
            let addr = listener.local_addr().map_err(|e| CliError::io(e.to_string()))?;
            eprintln!("listening on {addr}");
            for stream in listener.incoming() {
                let stream = match stream {
                    Ok(s) => s,
                    Err(e) => {
                        eprintln!("accept failed: {e}");
                        continue;
                    }
                };
                let cfg = cfg.clone();
                std::thread::spawn(move || {
                    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                    let reader = match stream.try_clone() {
                        Ok(r) => BufReader::new(r),
                        Err(e) => return eprintln!("{peer}: {e}"),
                    };
                    let env = Env::new(cfg).expect("validated scenario");
                    match serve_session(env, reader, stream) {
                        Ok(summary) => {
                            eprintln!("{peer}: {}", serde_json::to_string(&summary).expect("summary serializes"))
                        }
                        Err(e) => eprintln!("{peer}: {e}"),
                    }
                });
            }
            Ok(())
        }
    }
}

/// `validate-config`: prints the digest of a valid scenario.
pub fn cmd_validate(args: &ScenarioArgs) -> Result<String> {
    let cfg = load_scenario(args)?;
    Env::new(cfg.clone()).map_err(|e| CliError::config(e.to_string()))?;
    Ok(format!("ok {}", config_digest(&cfg)))
}

pub fn cmd_fit_table(args: &FitTableArgs) -> Result<()> {
    let cfg = load_scenario(&args.scenario)?;
    let rows = fit_table(&cfg.ris.fit, args.theta_step, args.iota_step).map_err(|e| CliError::config(e.to_string()))?;
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
            write_fit_table(io::BufWriter::new(file), &rows).map_err(|e| CliError::io(e.to_string()))
        }
        None => write_fit_table(io::stdout().lock(), &rows).map_err(|e| CliError::io(e.to_string())),
    }
}

/// Dispatches a parsed command line; returns the exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|s| {
            println!(
                "avg R_b {:.4}  avg R_c {:.4}  C1 {:.0}%  feasible {}",
                s.avg_rate_bob,
                s.avg_rate_carol,
                100.0 * s.c1_fraction,
                s.feasible
            );
        }),
        Command::Sweep(a) => cmd_sweep(a).map(|o| {
            for r in &o.rows {
                println!("{}={}: mean covert rate {:.4} +- {:.4}", a.param, r.param, r.mean_covert_rate, r.ci95);
            }
        }),
        Command::Serve(a) => cmd_serve(a),
        Command::ValidateConfig(a) => cmd_validate(a).map(|s| println!("{s}")),
        Command::FitTable(a) => cmd_fit_table(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io::stderr(), "frisim: {e}");
            e.code
        }
    }
}
