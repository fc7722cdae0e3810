//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check or verification failed, 2 the
//! configuration could not be used, 3 a solver failed.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::Error;
use crate::game::{build_example, check_assumptions, fix_a, AssumptionReport, ExampleKind, ExampleParams, F0Mode, GameSpec};
use crate::linalg::Vector;
use crate::riccati_ergodic::{solve_ergodic_system_with, ErgodicSolution};
use crate::riccati_finite::{hjb_residual, solve_finite_system_with, FiniteOptions, FiniteRiccatiSolution, TimeGrid};
use crate::simulate::{simulate_ergodic, simulate_finite, InitialState, NoisePlan, SimOptions};
use crate::turnpike::{
    deviation_profile, fit_profile, plot_script, uniform_scan, value_ergodicity, PathwiseMode, TurnpikeReport,
};
use crate::verify::{run_full_suite, SuiteConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lqg-turnpike", version, about = "LQG N-player games: equilibria and turnpike certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check structural assumptions and measure turnpike constants.
    Check(CommonArgs),
    /// Solve the finite-horizon equilibrium; writes finite.csv and finite.json.
    SolveFinite(CommonArgs),
    /// Solve the ergodic equilibrium; writes ergodic.json.
    SolveErgodic(CommonArgs),
    /// Simulate equilibrium paths; writes simulation.csv and simulation.json.
    Simulate(SimulateArgs),
    /// Deviation profiles, envelope fits and value ergodicity.
    Turnpike(TurnpikeArgs),
    /// Run the verification suite; writes verify.json.
    Verify(VerifyArgs),
    /// Print a fixture spec as JSON.
    Example(CommonArgs),
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// Game spec JSON file.
    #[arg(long, conflicts_with_all = ["spec_json", "example"])]
    spec: Option<PathBuf>,
    /// Game spec as an inline JSON string.
    #[arg(long, conflicts_with = "example")]
    spec_json: Option<String>,
    /// Built-in family: fix-a, symmetric or consensus.
    #[arg(long)]
    example: Option<String>,
    /// Number of players for --example.
    #[arg(long = "N", default_value_t = 2)]
    n: usize,
    /// State dimension for --example.
    #[arg(long = "d", default_value_t = 1)]
    d: usize,
    /// Family parameters as key=value (A a1 a2 Q B C D spread xbar mu0 Sigma0 uniform).
    #[arg(long, num_args = 1.., value_delimiter = ' ')]
    params: Vec<String>,
    /// Horizon T.
    #[arg(long = "T", default_value_t = 10.0)]
    horizon: f64,
    /// Time steps K of the finite-horizon grid (default: T/min(1e-3, T/1000)).
    #[arg(long = "K")]
    steps: Option<usize>,
    #[arg(long, default_value_t = 2023)]
    seed: u64,
    /// Monte Carlo path count M.
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Simulation step h.
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    /// Output directory.
    #[arg(long, env = "LQG_TURNPIKE_OUT", default_value = "out")]
    out: PathBuf,
    /// Use player i's covariance for every opponent in the constant cost term.
    #[arg(long = "paper-literal-F0")]
    own_covariance_f0: bool,
    /// Proceed and exit 0 even when gating assumptions fail.
    #[arg(long)]
    waive_assumptions: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    Finite,
    Ergodic,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value = "finite")]
    which: Which,
    /// Recorded times per path (plus the initial one).
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Also write every recorded state to paths.csv (at most 10^6 rows).
    #[arg(long)]
    full_paths: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pathwise {
    MonteCarlo,
    Moments,
    None,
}

#[derive(Debug, Args)]
struct TurnpikeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Horizons of the value-ergodicity series.
    #[arg(long, value_delimiter = ',', default_value = "10,20,40")]
    horizons: Vec<f64>,
    /// Also scan the --example family over --scan-ns.
    #[arg(long)]
    uniform_scan: bool,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    scan_ns: Vec<usize>,
    /// How E|X_T − X|² is computed.
    #[arg(long, value_enum, default_value = "monte-carlo")]
    pathwise: Pathwise,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Shift the initial mean in the simulation only (negative control).
    #[arg(long)]
    shift_mu0: Option<f64>,
    /// Skip the long-run cost check.
    #[arg(long)]
    no_long_run: bool,
    /// Horizon of the long-run cost run (window [10, this]).
    #[arg(long, default_value_t = 50.0)]
    long_run_horizon: f64,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn solver(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Json(_) => EXIT_CONFIG,
            _ => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: GameSpec,
    pub grid: TimeGrid,
    pub seed: u64,
    pub paths: usize,
    pub h: f64,
    pub out: PathBuf,
    pub f0_mode: F0Mode,
    pub waive: bool,
    example: Option<(ExampleKind, ExampleParams)>,
}

impl RunConfig {
    fn options(&self) -> FiniteOptions {
        FiniteOptions {
            f0_mode: self.f0_mode,
            ..FiniteOptions::default()
        }
    }

    fn plan(&self, horizon: f64) -> CliResult<NoisePlan> {
        NoisePlan::new(self.seed, self.paths, self.h, horizon).map_err(|e| CliError::config(e.to_string()))
    }
}

fn resolve_spec(args: &CommonArgs) -> CliResult<(GameSpec, Option<(ExampleKind, ExampleParams)>)> {
    let parse = |text: &str| GameSpec::from_json(text).map_err(|e| CliError::config(format!("invalid spec: {e}")));
    if let Some(path) = &args.spec {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        return Ok((parse(&text)?, None));
    }
    if let Some(text) = &args.spec_json {
        return Ok((parse(text)?, None));
    }
    let name = args
        .example
        .as_deref()
        .ok_or_else(|| CliError::config("one of --spec, --spec-json or --example is required"))?;
    if name == "fix-a" {
        return Ok((fix_a(), Some((ExampleKind::Consensus, ExampleParams::default()))));
    }
    let kind: ExampleKind = name.parse().map_err(|e: Error| CliError::config(e.to_string()))?;
    let params = ExampleParams::default()
        .apply_pairs(args.params.iter().map(String::as_str).filter(|s| !s.is_empty()))
        .map_err(|e| CliError::config(e.to_string()))?;
    let spec = build_example(kind, args.n, args.d, &params).map_err(|e| CliError::config(e.to_string()))?;
    Ok((spec, Some((kind, params))))
}

fn resolve(args: &CommonArgs) -> CliResult<RunConfig> {
    let (spec, example) = resolve_spec(args)?;
    if !(args.horizon > 0.0) {
        return Err(CliError::config(format!("T must be positive, got {}", args.horizon)));
    }
    if args.paths == 0 {
        return Err(CliError::config("--paths must be at least 1"));
    }
    if !(args.h > 0.0) {
        return Err(CliError::config(format!("h must be positive, got {}", args.h)));
    }
    let grid = match args.steps {
        Some(k) => TimeGrid::new(args.horizon, k),
        None => TimeGrid::with_default_steps(args.horizon),
    }
    .map_err(|e| CliError::config(e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::config(format!("{}: {e}", args.out.display())))?;
    Ok(RunConfig {
        spec,
        grid,
        seed: args.seed,
        paths: args.paths,
        h: args.h,
        out: args.out.clone(),
        f0_mode: if args.own_covariance_f0 {
            F0Mode::OwnCovariance
        } else {
            F0Mode::PerPlayer
        },
        waive: args.waive_assumptions,
        example,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::solver(e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Structural gate shared by the solve commands.
fn gate(cfg: &RunConfig) -> CliResult<Option<AssumptionReport>> {
    let report = check_assumptions(&cfg.spec, None, None);
    if report.gating_passed() || cfg.waive {
        Ok(None)
    } else {
        Ok(Some(report))
    }
}

fn gate_failure(report: &AssumptionReport) -> CliError {
    let names: Vec<String> = report
        .records
        .iter()
        .filter(|r| r.gating && r.status != crate::game::CheckStatus::Pass)
        .map(|r| format!("{} ({})", r.name, r.note))
        .collect();
    CliError {
        code: EXIT_CHECK_FAILED,
        message: format!("gating assumptions failed: {}", names.join("; ")),
    }
}

fn solve_both(cfg: &RunConfig) -> CliResult<(ErgodicSolution, FiniteRiccatiSolution)> {
    let erg = solve_ergodic_system_with(&cfg.spec, cfg.f0_mode).map_err(CliError::solver)?;
    let fin = solve_finite_system_with(&cfg.spec, &cfg.grid, cfg.options()).map_err(CliError::solver)?;
    Ok((erg, fin))
}

fn cmd_check(args: &CommonArgs) -> CliResult<i32> {
    let cfg = resolve(args)?;
    let structural = check_assumptions(&cfg.spec, None, None);
    let report = if structural.gating_passed() {
        let (erg, fin) = solve_both(&cfg)?;
        check_assumptions(&cfg.spec, Some(&erg), Some(&fin))
    } else {
        structural
    };
    write_json(&cfg.out.join("assumptions.json"), &report.to_json())?;
    for r in &report.records {
        println!(
            "{:<28} {:<14} {}",
            r.name,
            format!("{:?}", r.status).to_lowercase(),
            if r.gating { "gating" } else { "certificate" }
        );
    }
    if report.gating_passed() || cfg.waive {
        Ok(EXIT_OK)
    } else {
        Err(gate_failure(&report))
    }
}

fn cmd_solve_finite(args: &CommonArgs) -> CliResult<i32> {
    let cfg = resolve(args)?;
    if let Some(r) = gate(&cfg)? {
        return Err(gate_failure(&r));
    }
    let fin = solve_finite_system_with(&cfg.spec, &cfg.grid, cfg.options()).map_err(CliError::solver)?;
    fin.write_csv(create(&cfg.out.join("finite.csv"))?).map_err(CliError::solver)?;
    let horizon = cfg.grid.horizon;
    let zero = Vector::zeros(cfg.spec.dim);
    let mut interior: f64 = 0.0;
    let mut ends: f64 = 0.0;
    for i in 0..cfg.spec.n_players {
        for frac in [0.25, 0.5, 0.75] {
            interior = interior.max(hjb_residual(&fin, &cfg.spec, i, frac * horizon, &zero).map_err(CliError::solver)?.abs());
        }
        for t in [0.0, horizon] {
            ends = ends.max(hjb_residual(&fin, &cfg.spec, i, t, &zero).map_err(CliError::solver)?.abs());
        }
    }
    let mut manifest = fin.manifest();
    manifest["csv"] = json!("finite.csv");
    manifest["certificates"] = json!({
        "hjb_residual_interior": interior,
        "hjb_residual_endpoints": ends,
    });
    write_json(&cfg.out.join("finite.json"), &manifest)?;
    println!("wrote {} and {}", cfg.out.join("finite.csv").display(), cfg.out.join("finite.json").display());
    Ok(EXIT_OK)
}

fn cmd_solve_ergodic(args: &CommonArgs) -> CliResult<i32> {
    let cfg = resolve(args)?;
    if let Some(r) = gate(&cfg)? {
        return Err(gate_failure(&r));
    }
    let erg = solve_ergodic_system_with(&cfg.spec, cfg.f0_mode).map_err(CliError::solver)?;
    write_json(&cfg.out.join("ergodic.json"), &erg.to_json())?;
    for (i, p) in erg.players.iter().enumerate() {
        println!("player {i}: c = {:.9}", p.value);
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<i32> {
    let cfg = resolve(&args.common)?;
    if let Some(r) = gate(&cfg)? {
        return Err(gate_failure(&r));
    }
    let plan = cfg.plan(cfg.grid.horizon)?;
    let opts = SimOptions::with_samples(&plan, args.samples);
    let ensemble = match args.which {
        Which::Finite => {
            let fin = solve_finite_system_with(&cfg.spec, &cfg.grid, cfg.options()).map_err(CliError::solver)?;
            simulate_finite(&fin, &cfg.spec, &plan, &InitialState::SampleInitial, &opts)
        }
        Which::Ergodic => {
            let erg = solve_ergodic_system_with(&cfg.spec, cfg.f0_mode).map_err(CliError::solver)?;
            simulate_ergodic(&erg, &cfg.spec, &plan, &InitialState::SampleInitial, &opts)
        }
    }
    .map_err(CliError::solver)?;
    ensemble
        .write_summary_csv(create(&cfg.out.join("simulation.csv"))?)
        .map_err(CliError::solver)?;
    if args.full_paths {
        ensemble
            .write_paths_csv(create(&cfg.out.join("paths.csv"))?, 1_000_000)
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    write_json(
        &cfg.out.join("simulation.json"),
        &json!({
            "source": ensemble.source,
            "plan": plan,
            "record_every": ensemble.record_every,
            "samples": ensemble.times.len(),
            "summary": "simulation.csv",
        }),
    )?;
    println!("simulated {} paths over {} steps", plan.paths, plan.steps);
    Ok(EXIT_OK)
}

fn cmd_turnpike(args: &TurnpikeArgs) -> CliResult<i32> {
    let cfg = resolve(&args.common)?;
    if let Some(r) = gate(&cfg)? {
        return Err(gate_failure(&r));
    }
    let (erg, fin) = solve_both(&cfg)?;
    let mode = match args.pathwise {
        Pathwise::None => None,
        Pathwise::Moments => Some(PathwiseMode::Moments),
        Pathwise::MonteCarlo => Some(PathwiseMode::MonteCarlo {
            plan: cfg.plan(cfg.grid.horizon)?,
            samples: 200,
        }),
    };
    let profile = deviation_profile(&fin, &erg, &cfg.spec, mode).map_err(CliError::solver)?;
    profile
        .write_csv(create(&cfg.out.join("profiles.csv"))?)
        .map_err(CliError::solver)?;
    let pathwise_name = profile.pathwise.as_ref().map(|_| "pathwise.csv".to_string());
    if pathwise_name.is_some() {
        profile
            .write_pathwise_csv(create(&cfg.out.join("pathwise.csv"))?)
            .map_err(CliError::solver)?;
    }
    let fits = fit_profile(&profile, &erg);
    let mut horizons = args.horizons.clone();
    horizons.retain(|t| *t > 0.0);
    let value_series = value_ergodicity(&cfg.spec, &erg, &Vector::zeros(cfg.spec.dim), &horizons, &cfg.options())
        .map_err(|e| match e {
            Error::InvalidParameter(m) => CliError::config(m),
            other => CliError::solver(other),
        })?;
    let scan = if args.uniform_scan {
        let (kind, params) = cfg
            .example
            .clone()
            .ok_or_else(|| CliError::config("--uniform-scan needs --example"))?;
        let horizon = cfg.grid.horizon;
        let steps = args.common.steps;
        Some(
            uniform_scan(
                kind,
                &params,
                &args.scan_ns,
                args.common.d,
                |_| match steps {
                    Some(k) => TimeGrid::new(horizon, k),
                    None => TimeGrid::with_default_steps(horizon),
                },
                &cfg.options(),
            )
            .map_err(CliError::solver)?,
        )
    } else {
        None
    };
    let report = TurnpikeReport {
        horizon: cfg.grid.horizon,
        profiles: "profiles.csv".into(),
        pathwise: pathwise_name.clone(),
        fits,
        value_series,
        uniform_scan: scan,
    };
    write_json(
        &cfg.out.join("turnpike.json"),
        &serde_json::to_value(&report).map_err(|e| CliError::solver(e.into()))?,
    )?;
    fs::write(
        cfg.out.join("plots.txt"),
        plot_script(cfg.spec.n_players, "profiles.csv", pathwise_name.as_deref()),
    )
    .map_err(|e| CliError::config(e.to_string()))?;
    for f in &report.fits {
        if let Some(fit) = &f.fit {
            println!(
                "{:<14} {:<7} {:<10} K={:.4e} lambda={:.6}",
                f.quantity,
                f.player.map_or("all".into(), |p| p.to_string()),
                f.status,
                fit.khat,
                fit.lambdahat
            );
        } else {
            println!("{:<14} {:<7} {}", f.quantity, f.player.map_or("all".into(), |p| p.to_string()), f.status);
        }
    }
    for v in &report.value_series {
        println!("T={:<6} gap={:?}", v.horizon, v.gap);
    }
    if let Some(scan) = &report.uniform_scan {
        println!("uniform scan: worst lambda ratio {:.4}", scan.worst_lambda_ratio());
    }
    Ok(EXIT_OK)
}

fn cmd_verify(args: &VerifyArgs) -> CliResult<i32> {
    let cfg = resolve(&args.common)?;
    let mut config = SuiteConfig {
        horizon: cfg.grid.horizon,
        steps: cfg.grid.steps,
        seed: cfg.seed,
        paths: cfg.paths,
        h: cfg.h,
        simulation_mean_shift: args.shift_mu0,
        finite_options: cfg.options(),
        ..SuiteConfig::default()
    };
    config.cost_window = (!args.no_long_run).then_some((10.0, args.long_run_horizon));
    let result = run_full_suite(&cfg.spec, &config);
    write_json(
        &cfg.out.join("verify.json"),
        &json!({
            "config": config,
            "result": result,
        }),
    )?;
    print!("{}", result.summary_table());
    Ok(if result.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_example(args: &CommonArgs) -> CliResult<i32> {
    use std::io::Write;
    let (spec, _) = resolve_spec(args)?;
    let text = spec.to_json().map_err(CliError::solver)?;
    // A closed pipe (`| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(EXIT_OK)
}

/// Parse `args` (including the program name) and run; returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Check(a) => cmd_check(a),
        Command::SolveFinite(a) => cmd_solve_finite(a),
        Command::SolveErgodic(a) => cmd_solve_ergodic(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Turnpike(a) => cmd_turnpike(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Example(a) => cmd_example(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_subcommands() {
        for sub in ["check", "solve-finite", "solve-ergodic", "simulate", "turnpike", "verify", "example"] {
            assert!(Cli::try_parse_from(["lqg-turnpike", sub, "--example", "fix-a"]).is_ok(), "{sub}");
        }
    }

    #[test]
    fn missing_spec_is_config_error() {
        assert_eq!(run(["lqg-turnpike", "example"]), EXIT_CONFIG);
        assert_eq!(run(["lqg-turnpike", "bogus"]), EXIT_CONFIG);
    }

    #[test]
    fn params_list() {
        let cli = Cli::try_parse_from([
            "lqg-turnpike",
            "example",
            "--example",
            "symmetric",
            "--params",
            "B=0.1",
            "xbar=1",
            "--N",
            "3",
        ])
        .unwrap();
        let Command::Example(a) = cli.command else { panic!() };
        assert_eq!(a.params, vec!["B=0.1", "xbar=1"]);
        let (spec, _) = resolve_spec(&a).unwrap();
        assert_eq!(spec.n_players, 3);
        assert_eq!(spec.target(0, 1)[0], 1.0);
    }
}
