//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 validation
//! failure, 3 runtime or numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::Serialize;

use crate::bounds::{expectation_bound, expectation_bound_asymptotic, hp_bound_trajectory};
use crate::config::Config;
use crate::csvout::{fmt_num, CsvTable};
use crate::error::Error;
use crate::gplearn::{GPPosterior, SEKernel};
use crate::par::{stream_rng, with_jobs, Execution};
use crate::scenario::{build_scenario, late_relative_gap, plateau, run_suite, switch_responses, SuiteResult};
use crate::validation::{run_all, synthetic_instance};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "feedopt", version, about = "Online feedback optimization with intermittent measurements and learned costs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the switching-cost microgrid suite (all p values, both modes).
    RunScenario(CommonArgs),
    /// Monte Carlo checks of the tracking bounds and sampler tail classes.
    ValidateBounds(CommonArgs),
    /// Fit a GP to noisy samples of a scalar quadratic and export its gradient.
    GpDemo(CommonArgs),
    /// Export the bound curves of the synthetic validation instance.
    BoundCurve(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration; defaults are used for anything it omits (or for everything when absent).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Maximum worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Replace existing output files.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Output directory that refuses to clobber files unless told to.
struct OutputDir {
    dir: PathBuf,
    overwrite: bool,
}

impl OutputDir {
    fn create(dir: &Path, overwrite: bool) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), overwrite })
    }

    /// Fails before any work is done if a planned file already exists.
    fn reserve<S: AsRef<str>>(&self, names: &[S]) -> CliResult<()> {
        if self.overwrite {
            return Ok(());
        }
        if let Some(existing) = names.iter().map(|n| self.dir.join(n.as_ref())).find(|p| p.exists()) {
            return Err(CliError::Usage(format!("refusing to overwrite existing file {} (pass --overwrite)", existing.display())));
        }
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn table(&self, name: &str, table: &CsvTable) -> CliResult<()> {
        table.write_file(&self.path(name)).map_err(|e| CliError::Runtime(format!("writing {name}: {e}")))
    }

    fn text(&self, name: &str, text: &str) -> CliResult<()> {
        std::fs::write(self.path(name), text).map_err(|e| CliError::Runtime(format!("writing {name}: {e}")))
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    seed_overridden: bool,
}

const CONFIG_ECHO: &str = "config_resolved.toml";
const RUN_META: &str = "run_meta.json";

/// Loads the configuration and returns it together with the effective seed.
fn load(args: &CommonArgs) -> CliResult<(Config, u64)> {
    if args.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    Ok((cfg, seed))
}

fn write_preamble(out: &OutputDir, command: &str, cfg: &Config, seed: u64) -> CliResult<()> {
    out.text(CONFIG_ECHO, &cfg.to_toml_string()?)?;
    let meta = RunMeta { command, version: env!("CARGO_PKG_VERSION"), seed, seed_overridden: seed != cfg.seed };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.text(RUN_META, &(json + "\n"))
}

fn in_pool<R: Send>(jobs: Option<usize>, op: impl FnOnce() -> R + Send) -> CliResult<R> {
    with_jobs(jobs, op).map_err(|e| CliError::Usage(e.to_string()))
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("feedopt: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> CliResult<i32> {
    match command {
        Command::RunScenario(a) => run_scenario(a),
        Command::ValidateBounds(a) => validate_bounds(a),
        Command::GpDemo(a) => gp_demo(a),
        Command::BoundCurve(a) => bound_curve(a),
    }
}

fn run_scenario(args: &CommonArgs) -> CliResult<i32> {
    let (cfg, seed) = load(args)?;
    let run_cfg = Config { seed, ..cfg.clone() };
    let scenario = build_scenario(&run_cfg)?;

    let s = &cfg.suite;
    let mut names: Vec<String> =
        [CONFIG_ECHO, RUN_META, "scenario_instance.json", "suite_summary.csv", "suite_diagnostics.csv", "model_switches.csv"]
            .map(String::from)
            .to_vec();
    if s.write_trajectories {
        for p in &s.p_values {
            for mode in &s.modes {
                for e in 0..s.n_experiments {
                    names.push(format!("traj_p{}_{}_e{:02}.csv", p, mode.label(), e));
                }
            }
        }
    }
    let out = OutputDir::create(&args.out, args.overwrite)?;
    out.reserve(&names)?;

    let result = in_pool(args.jobs, || run_suite(&scenario, &run_cfg, Execution::Parallel))??;
    write_preamble(&out, "run-scenario", &cfg, seed)?;
    scenario.write_instance_json(&out.path("scenario_instance.json")).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.table("suite_summary.csv", &result.summary_table())?;
    out.table("model_switches.csv", &result.switch_table())?;
    out.table("suite_diagnostics.csv", &diagnostics(&result, &scenario.switch_times, s.late_start))?;
    if s.write_trajectories {
        for o in &result.outcomes {
            out.table(&SuiteResult::trajectory_file_name(o), &o.trajectory.to_table())?;
        }
    }
    for c in &result.curves {
        println!("p = {:<4} {:<10} d_0 = {:.4}  plateau (last 500 steps) = {:.5}", c.p, c.mode.label(), c.mean[0], plateau(c));
    }
    println!("wrote {} files to {}", names.len(), args.out.display());
    Ok(EXIT_OK)
}

/// Long-format table `p, mode, metric, value` with plateau, late-window and switch metrics.
fn diagnostics(result: &SuiteResult, switch_times: &[usize], late_start: usize) -> CsvTable {
    let mut t = CsvTable::new(["p", "mode", "metric", "value"]);
    for c in &result.curves {
        let mut push = |metric: String, v: f64| t.push(vec![fmt_num(c.p), c.mode.label().into(), metric, fmt_num(v)]);
        push("plateau".into(), plateau(c));
        push("late_mean".into(), c.window_mean(late_start, c.mean.len()));
        push("transient_mean_100_600".into(), c.window_mean(100, 601));
        for r in switch_responses(c, switch_times) {
            push(format!("switch_{}_pre_mean", r.switch_time), r.pre_mean);
            push(format!("switch_{}_at_switch", r.switch_time), r.at_switch);
            push(format!("switch_{}_settled", r.switch_time), r.settled);
        }
    }
    let exact = result.curves.iter().filter(|c| c.mode == crate::config::Mode::Exact);
    for ex in exact {
        if let Some(gp) = result.curve(ex.p, crate::config::Mode::GpLearned) {
            t.push(vec![
                fmt_num(ex.p),
                "gp-learned".into(),
                "late_relative_gap_vs_exact".into(),
                fmt_num(late_relative_gap(gp, ex, late_start)),
            ]);
        }
    }
    t
}

fn validate_bounds(args: &CommonArgs) -> CliResult<i32> {
    let (cfg, seed) = load(args)?;
    // Surfaces step-size violations as configuration errors before any output.
    synthetic_instance(&cfg.validation, cfg.validation.horizon, true, seed)?;
    let out = OutputDir::create(&args.out, args.overwrite)?;
    out.reserve(&[CONFIG_ECHO, RUN_META, "validation_report.csv", "validation_expectation.csv"])?;
    let full = in_pool(args.jobs, || run_all(&cfg.validation, seed, Execution::Parallel))??;
    write_preamble(&out, "validate-bounds", &cfg, seed)?;
    out.table("validation_report.csv", &full.report.to_table())?;
    out.table("validation_expectation.csv", &full.expectation.to_table())?;
    print!("{}", full.report.summary());
    if full.report.passed() {
        Ok(EXIT_OK)
    } else {
        Err(CliError::Validation(format!("{} of {} checks failed", full.report.n_failed(), full.report.checks.len())))
    }
}

fn gp_demo(args: &CommonArgs) -> CliResult<i32> {
    let (cfg, seed) = load(args)?;
    let d = &cfg.demo;
    let out = OutputDir::create(&args.out, args.overwrite)?;
    out.reserve(&[CONFIG_ECHO, RUN_META, "gp_demo.csv", "gp_demo_observations.csv", "gp_demo_state.json"])?;

    let mut rng = stream_rng(seed, 0);
    let u = |x: f64| d.a * x * x + d.b * x;
    let noise = crate::subweibull::ErrorSampler::gaussian(d.noise_std)?;
    let sites: Vec<f64> = (0..d.n_observations)
        .map(|_| if d.range[0] < d.range[1] { rng.random_range(d.range[0]..d.range[1]) } else { d.range[0] })
        .collect();
    let values: Vec<f64> = sites.iter().map(|x| u(*x) + noise.sample(&mut rng)).collect();
    let kernel = SEKernel::new(d.signal_variance, d.length_scale)?;
    let gp = GPPosterior::fit(kernel, d.noise_std * d.noise_std, sites.clone(), values.clone())?;

    let mut obs = CsvTable::new(["x", "z"]);
    for (x, z) in sites.iter().zip(&values) {
        obs.push(vec![fmt_num(*x), fmt_num(*z)]);
    }
    let mut grid = CsvTable::new(["x", "true_u", "posterior_mean", "posterior_sd", "true_gradient", "gp_gradient"]);
    let mut worst: f64 = 0.0;
    for i in 0..d.n_grid {
        let x = d.range[0] + (d.range[1] - d.range[0]) * i as f64 / (d.n_grid - 1) as f64;
        let g = gp.posterior_mean_gradient(x);
        worst = worst.max((g - (2.0 * d.a * x + d.b)).abs());
        grid.push(vec![
            fmt_num(x),
            fmt_num(u(x)),
            fmt_num(gp.posterior_mean(x)),
            fmt_num(gp.posterior_var(x).sqrt()),
            fmt_num(2.0 * d.a * x + d.b),
            fmt_num(g),
        ]);
    }
    write_preamble(&out, "gp-demo", &cfg, seed)?;
    out.table("gp_demo.csv", &grid)?;
    out.table("gp_demo_observations.csv", &obs)?;
    let state = serde_json::to_string_pretty(&gp.state()).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.text("gp_demo_state.json", &(state + "\n"))?;
    println!("fitted {} observations; max |gradient error| on the grid = {worst:.4e}", d.n_observations);
    Ok(EXIT_OK)
}

fn bound_curve(args: &CommonArgs) -> CliResult<i32> {
    let (cfg, seed) = load(args)?;
    let v = &cfg.validation;
    let horizon = cfg.bounds.horizon.unwrap_or(v.horizon);
    let inst = synthetic_instance(v, horizon, true, seed)?;
    let hp_names: Vec<String> = cfg.bounds.deltas.iter().map(|d| format!("bound_hp_delta{d}.csv")).collect();
    let mut names: Vec<String> =
        [CONFIG_ECHO, RUN_META, "bound_expectation.csv", "bound_expectation_asymptotic.csv"].map(String::from).to_vec();
    names.extend(hp_names.iter().cloned());
    let out = OutputDir::create(&args.out, args.overwrite)?;
    out.reserve(&names)?;

    let curves = in_pool(args.jobs, || -> crate::Result<_> {
        let (est, class) = inst.error_statistics(v.error_norm_samples, seed, Execution::Parallel)?;
        let inputs = inst.bound_inputs(est.upper(), class.nu())?;
        let direct = expectation_bound(&inputs, horizon, Execution::Parallel)?;
        let asymptotic = expectation_bound_asymptotic(&inputs, horizon)?;
        let hp = cfg
            .bounds
            .deltas
            .iter()
            .map(|d| hp_bound_trajectory(&inputs, horizon, *d, Execution::Parallel))
            .collect::<crate::Result<Vec<_>>>()?;
        Ok((direct, asymptotic, hp))
    })??;
    write_preamble(&out, "bound-curve", &cfg, seed)?;
    out.table("bound_expectation.csv", &curves.0.to_table())?;
    out.table("bound_expectation_asymptotic.csv", &curves.1.to_table())?;
    for (name, curve) in hp_names.iter().zip(&curves.2) {
        out.table(name, &curve.to_table())?;
    }
    println!("wrote {} bound curves (T = {horizon}) to {}", 2 + hp_names.len(), args.out.display());
    Ok(EXIT_OK)
}
