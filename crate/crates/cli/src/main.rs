//! `dendroflow` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::IntoDeserializer;
use serde::Deserialize;
use thiserror::Error;

use dendroflow::chains::{gen_gw_tree, ChainError, GwParams, JumpSampler};
use dendroflow::dynamics::{dss_residual, default_grid, iterate, CharacteristicFn, DynamicsError};
use dendroflow::experiments::{self, ExperimentConfig, ExperimentError, ProcessSpec};
use dendroflow::horton::{assign_orders, branch_decomposition, horton_stats, tokunaga_matrix, StatsRecord};
use dendroflow::io::{fmt_num, read_series, read_tree, write_series, write_tree, IoError};
use dendroflow::level_set::{level_set_tree, prune_series, LevelSetError, Series};
use dendroflow::rng::rng_from_seed;
use dendroflow::tree::{harris_path, Tree};

#[derive(Debug, Error)]
enum CliError {
    /// Bad input files, configs or flags: exit code 2.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Write(#[from] std::io::Error),
}

impl CliError {
    fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::input(e)
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        CliError::input(e)
    }
}

impl From<LevelSetError> for CliError {
    fn from(e: LevelSetError) -> Self {
        CliError::input(e)
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        CliError::input(e)
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Invalid(_) | ExperimentError::Parse(_) => CliError::input(e),
            e => CliError::Failed(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "dendroflow", version, about = "Level-set trees, Horton-Strahler statistics and pruning dynamics of time series")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "DENDROFLOW_THREADS")]
    threads: Option<usize>,
    /// Output format for tables and statistics.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write files into this directory instead of printing to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a chain, fBm path or Galton-Watson tree.
    Simulate(SimulateArgs),
    /// Build the level-set tree of a series (or read a tree) and report its statistics.
    Analyze(AnalyzeArgs),
    /// Prune a series (local minima) or a tree file.
    Prune(PruneArgs),
    /// Iterate the exact pruning maps, or evaluate the self-similarity residual.
    Dynamics(DynamicsArgs),
    /// Run Monte Carlo experiments from config files.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// gaussian, uniform, laplace, exp_mixture, rademacher, fbm or gw.
    #[arg(long)]
    kind: String,
    /// Number of points (fBm: increments, a power of two).
    #[arg(long, default_value_t = 1000)]
    length: usize,
    /// Standard deviation of `gaussian` steps
    #[arg(long)]
    sigma: Option<f64>,
    /// Half-width of `uniform` steps
    #[arg(long)]
    h: Option<f64>,
    /// Rate of `laplace` steps
    #[arg(long)]
    lambda: Option<f64>,
    /// Probability of an upward `exp_mixture` jump
    #[arg(long)]
    p: Option<f64>,
    /// Rate of upward `exp_mixture` jumps
    #[arg(long)]
    lambda_u: Option<f64>,
    /// Rate of downward `exp_mixture` jumps
    #[arg(long)]
    lambda_d: Option<f64>,
    /// Half-width of the uniform noise added to `rademacher` steps
    #[arg(long)]
    jitter: Option<f64>,
    /// Hurst index of `fbm`
    #[arg(long)]
    hurst: Option<f64>,
    /// Branching probability of a `gw` tree.
    #[arg(long)]
    p2: Option<f64>,
    /// Rate scale of `gw` edge lengths.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Node limit for `gw` trees.
    #[arg(long, default_value_t = 1_000_000)]
    max_nodes: usize,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Series CSV or tree file.
    input: PathBuf,
    /// Prune the series this many times first.
    #[arg(long, default_value_t = 0)]
    prune: u32,
    /// Count every branch in Tokunaga statistics, not only complete ones.
    #[arg(long)]
    all_branches: bool,
}

#[derive(Debug, Args)]
struct PruneArgs {
    /// Series CSV or tree file.
    input: PathBuf,
    /// Number of prunings
    #[arg(long, default_value_t = 1)]
    times: u32,
}

#[derive(Debug, Args)]
struct DynamicsArgs {
    /// Probability of an upward jump
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Rate of upward jumps
    #[arg(long, default_value_t = 1.0)]
    lambda_u: f64,
    /// Rate of downward jumps
    #[arg(long, default_value_t = 1.0)]
    lambda_d: f64,
    /// Number of pruning steps
    #[arg(long, default_value_t = 6)]
    steps: u32,
    /// Report the self-similarity residual of this density instead:
    /// exponential, uniform or gamma.
    #[arg(long)]
    dss: Option<String>,
    /// Rate (exponential, gamma) or width (uniform) of the `--dss` density.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Shape of the gamma density.
    #[arg(long, default_value_t = 2.0)]
    shape: f64,
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// Run one experiment config; exits nonzero if a check fails.
    Run {
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Input(_) => 2,
                _ => 1,
            })
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Analyze(a) => analyze(cli, a),
        Command::Prune(a) => prune(cli, a),
        Command::Dynamics(a) => dynamics(cli, a),
        Command::Experiment(ExperimentCommand::Run { config }) => experiment(cli, config),
    }
    .map(|done| done.unwrap_or(ExitCode::SUCCESS))
}

/// Prints to stdout or writes `name` into the output directory.
fn emit(cli: &Cli, name: &str, text: &str) -> Result<(), CliError> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

enum Input {
    Series(Series),
    Tree(Tree),
}

fn parse_input(path: &Path) -> Result<Input, CliError> {
    let text = read_input(path)?;
    if text.trim_start().starts_with("ghost") {
        Ok(Input::Tree(read_tree(&text)?))
    } else {
        Ok(Input::Series(read_series(&text)?))
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<Option<ExitCode>, CliError> {
    let seed = cli.seed.unwrap_or(0);
    if a.kind == "gw" {
        let p2 = a.p2.ok_or_else(|| CliError::Input("gw trees need --p2".into()))?;
        let tree = gen_gw_tree(&GwParams::new(p2, a.mu)?, a.max_nodes, seed)?;
        emit(cli, "tree.txt", &write_tree(&tree))?;
        return Ok(None);
    }
    // Assemble the process table from the given flags; the process schema
    // rejects keys that do not belong to the kind.
    let mut table = toml::Table::new();
    table.insert("kind".into(), a.kind.clone().into());
    for (key, value) in [
        ("sigma", a.sigma),
        ("h", a.h),
        ("lambda", a.lambda),
        ("p", a.p),
        ("lambda_u", a.lambda_u),
        ("lambda_d", a.lambda_d),
        ("jitter", a.jitter),
        ("hurst", a.hurst),
    ] {
        if let Some(v) = value {
            table.insert(key.into(), v.into());
        }
    }
    let process = ProcessSpec::deserialize(toml::Value::Table(table).into_deserializer())
        .map_err(|e| CliError::Input(format!("process: {e}")))?;
    let series = match process {
        ProcessSpec::Fbm { hurst } => dendroflow::chains::gen_fbm(hurst, a.length, seed)?,
        p => {
            let kernel = p.kernel().expect("non-fbm process");
            let sampler = JumpSampler::new(&kernel)?;
            if a.length == 0 {
                return Err(ChainError::EmptyChain.into());
            }
            let mut v = Vec::new();
            dendroflow::chains::fill_chain(&sampler, a.length, &mut rng_from_seed(seed), &mut v);
            Series::new(v)?
        }
    };
    emit(cli, "series.csv", &write_series(&series))?;
    Ok(None)
}

fn stats_outputs(cli: &Cli, tree: &Tree, complete_only: bool) -> Result<(), CliError> {
    let ot = assign_orders(tree);
    let bs = branch_decomposition(&ot);
    let stats = horton_stats(&bs);
    let tok = match tokunaga_matrix(&ot, complete_only) {
        Ok(t) => Some(t),
        Err(e) => {
            eprintln!("warning: no Tokunaga statistics: {e}");
            None
        }
    };
    let record = StatsRecord::new(&stats, tok.as_ref());
    match cli.format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&record).expect("serializable");
            text.push('\n');
            emit(cli, "stats.json", &text)?;
        }
        Format::Csv => {
            let mut horton = String::from("r,N_r,M_r,eta_r\n");
            for r in 0..stats.n_r.len() {
                horton.push_str(&format!(
                    "{},{},{},{}\n",
                    r + 1,
                    stats.n_r[r],
                    fmt_num(stats.m_r[r]),
                    stats.eta_r.get(r).map_or_else(String::new, |&e| fmt_num(e)),
                ));
            }
            let mut tokunaga = String::from("i,j,N_ij,T_ij\n");
            if let Some(t) = &tok {
                for j in 2..=t.omega {
                    for i in 1..j {
                        let ratio = t.ratio(i, j).map_or_else(String::new, fmt_num);
                        tokunaga.push_str(&format!("{i},{j},{},{ratio}\n", t.side_count(i, j)));
                    }
                }
            }
            if cli.out.is_some() {
                emit(cli, "horton.csv", &horton)?;
                emit(cli, "tokunaga.csv", &tokunaga)?;
            } else {
                print!("{horton}\n{tokunaga}");
            }
        }
    }
    Ok(())
}

fn analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<Option<ExitCode>, CliError> {
    let tree = match parse_input(&a.input)? {
        Input::Tree(t) => {
            if a.prune > 0 {
                return Err(CliError::Input("--prune applies to series input only".into()));
            }
            t
        }
        Input::Series(mut s) => {
            for _ in 0..a.prune {
                s = prune_series(&s);
                if s.is_empty() {
                    return Err(CliError::Input(format!(
                        "series has no local minima left after {} prunings",
                        a.prune
                    )));
                }
            }
            level_set_tree(&s)?
        }
    };
    if cli.out.is_some() {
        emit(cli, "tree.txt", &write_tree(&tree))?;
        let harris = Series::new(harris_path(&tree).heights())?;
        emit(cli, "harris.csv", &write_series(&harris))?;
    }
    stats_outputs(cli, &tree, !a.all_branches)?;
    Ok(None)
}

fn prune(cli: &Cli, a: &PruneArgs) -> Result<Option<ExitCode>, CliError> {
    match parse_input(&a.input)? {
        Input::Tree(mut t) => {
            for _ in 0..a.times {
                t = t.prune();
            }
            emit(cli, "tree.txt", &write_tree(&t))?;
        }
        Input::Series(mut s) => {
            for _ in 0..a.times {
                s = prune_series(&s);
            }
            if s.is_empty() {
                return Err(CliError::Input("pruned series is empty".into()));
            }
            emit(cli, "series.csv", &write_series(&s))?;
        }
    }
    Ok(None)
}

fn dynamics(cli: &Cli, a: &DynamicsArgs) -> Result<Option<ExitCode>, CliError> {
    if let Some(name) = &a.dss {
        let f = match name.as_str() {
            "exponential" => CharacteristicFn::Exponential { lambda: a.scale },
            "uniform" => CharacteristicFn::Uniform { width: a.scale },
            "gamma" => CharacteristicFn::Gamma { shape: a.shape, rate: a.scale },
            other => return Err(CliError::Input(format!("unknown density `{other}`"))),
        };
        let r = dss_residual(&f, &default_grid())?;
        let text = match cli.format {
            Format::Json => format!("{{\"density\":\"{name}\",\"residual\":{}}}\n", fmt_num(r)),
            Format::Csv => format!("density,residual\n{name},{}\n", fmt_num(r)),
        };
        emit(cli, "dss.csv", &text)?;
        return Ok(None);
    }
    let e = dendroflow::chains::EhmcParams::new(a.p, a.lambda_u, a.lambda_d)?;
    let rows = iterate(&e, a.steps);
    match cli.format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&rows).expect("serializable");
            text.push('\n');
            emit(cli, "dynamics.json", &text)?;
        }
        Format::Csv => {
            let mut text = String::from("m,p,lambda_u,lambda_d,A,gamma,p2,p_min\n");
            for r in rows {
                let cells = [r.p, r.lambda_u, r.lambda_d, r.a, r.gamma, r.p2, r.p_min].map(fmt_num);
                text.push_str(&format!("{},{}\n", r.m, cells.join(",")));
            }
            emit(cli, "dynamics.csv", &text)?;
        }
    }
    Ok(None)
}

fn experiment(cli: &Cli, path: &Path) -> Result<Option<ExitCode>, CliError> {
    let text = read_input(path)?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let started = Instant::now();
    let report = experiments::run(&cfg)?;
    eprintln!("{} finished in {:.1}s", path.display(), started.elapsed().as_secs_f64());

    let mut json = serde_json::to_string_pretty(&report).expect("serializable");
    json.push('\n');
    if cli.out.is_some() {
        emit(cli, "report.json", &json)?;
        for t in &report.tables {
            emit(cli, &format!("{}.csv", t.name), &t.to_csv())?;
        }
    } else {
        match cli.format {
            Format::Json => print!("{json}"),
            Format::Csv => {
                for t in &report.tables {
                    print!("# {}\n{}\n", t.name, t.to_csv());
                }
            }
        }
    }
    if report.exploratory {
        eprintln!("EXPLORATORY: conjecture probe, no theorem behind the reference values");
    }
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    for c in &report.checks {
        let value = c.value.map_or_else(|| "missing".to_string(), fmt_num);
        let mut bounds = Vec::new();
        if let (Some(t), Some(tol)) = (c.check.target, c.check.tolerance) {
            bounds.push(format!("{} ± {}", fmt_num(t), fmt_num(tol)));
        }
        if let Some(m) = c.check.min {
            bounds.push(format!(">= {}", fmt_num(m)));
        }
        if let Some(m) = c.check.max {
            bounds.push(format!("<= {}", fmt_num(m)));
        }
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        eprintln!("{verdict} {} = {value} ({})", c.check.quantity, bounds.join(", "));
    }
    Ok(Some(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) }))
}
