//! `kl`: scenario runs for slit kernels, slit evolution, SKLE sampling and
//! the transformed driver.

mod commands;
mod error;
mod output;
mod scenario;

use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::{execute, Target};
use error::CliError;
use kl_core::driver::DeterministicDriver;
use kl_core::exec;
use kl_core::geometry::Slit;
use kl_core::transform::IotaMethod;
use log::LevelFilter;
use output::{load_verified, write_atomic, RunStatus};
use scenario::{Grid, Scenario, Task};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kl", version, about = "Komatu-Loewner slit evolution and SKLE sampling")]
struct Cli {
    /// Base seed for stochastic runs; overrides the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, or a `.csv` path for the main table.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the kernel for one configuration and tabulate Ψ on a grid.
    Kernel {
        #[command(flatten)]
        slits: SlitArgs,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        xi: f64,
        /// `nx,ny,x_min,x_max,y_min,y_max`
        #[arg(long)]
        grid: Option<String>,
        /// Print b_BMD.
        #[arg(long)]
        bmd: bool,
        /// Also run the lattice oracle with this many cells across.
        #[arg(long)]
        oracle: Option<usize>,
    },
    /// Integrate the slit ODE under a deterministic driver.
    Evolve(EvolveArgs),
    /// Evolve tracked points with the map and record swallowing times.
    Map {
        #[command(flatten)]
        evolve: EvolveArgs,
        #[arg(long)]
        grid: Option<String>,
    },
    /// Sample SKLE paths and keep each trajectory.
    Skle(StochasticArgs),
    /// Monte Carlo explosion statistics.
    Mc(StochasticArgs),
    /// Compute the transformed driver of an earlier evolve, skle or mc run.
    Transform {
        /// Manifest of the earlier run.
        #[arg(long)]
        run: PathBuf,
        /// JSON file with tracked points `[[re, im], ...]`.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        path_index: usize,
        #[arg(long, value_enum, default_value_t = Method::Circle)]
        method: Method,
        #[arg(long)]
        tmax: Option<f64>,
    },
    /// Run an invariant suite and write its report.
    Verify {
        #[arg(default_value = "quick")]
        suite: String,
        /// Check the artifacts of this manifest instead of running a suite.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run a TOML or JSON scenario file.
    Run { scenario: PathBuf },
}

#[derive(Args)]
struct SlitArgs {
    /// JSON or TOML file with slits `{y, x, xr}` (none: the empty configuration).
    #[arg(long)]
    slits: Option<PathBuf>,
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    slits: SlitArgs,
    /// JSON or TOML driver (default: constant `--xi`).
    #[arg(long)]
    driver: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    xi: f64,
    #[arg(long)]
    tmax: f64,
}

#[derive(Args)]
struct StochasticArgs {
    #[command(flatten)]
    slits: SlitArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    xi: f64,
    /// `sqrt(6)`, `const:<a>`
    #[arg(long, default_value = "sqrt(6)")]
    alpha: String,
    /// `-bmd`, `bmd:<c>`, `const:<b>`, `zero`
    #[arg(long, default_value = "-bmd", allow_hyphen_values = true)]
    b: String,
    #[arg(long)]
    tmax: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1)]
    paths: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Circle,
    Contour,
}

fn parse_text<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = String::from_utf8(output::read(path)?)
        .map_err(|_| CliError::config(format!("{}: not UTF-8", path.display())))?;
    let json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with(['{', '[']);
    if json {
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

fn load_slits(args: &SlitArgs) -> Result<Vec<Slit>, CliError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum SlitFile {
        List(Vec<Slit>),
        Table { slits: Vec<Slit> },
    }
    match &args.slits {
        None => Ok(Vec::new()),
        Some(p) => Ok(match parse_text::<SlitFile>(p)? {
            SlitFile::List(v) | SlitFile::Table { slits: v } => v,
        }),
    }
}

fn evolve_scenario(name: &str, task: Task, a: &EvolveArgs) -> Result<Scenario, CliError> {
    let mut sc = Scenario::new(name, task);
    sc.slits = load_slits(&a.slits)?;
    sc.xi0 = a.xi;
    sc.driver = a.driver.as_deref().map(parse_text::<DeterministicDriver>).transpose()?;
    sc.t_max = Some(a.tmax);
    Ok(sc)
}

fn stochastic_scenario(name: &str, task: Task, a: &StochasticArgs) -> Result<Scenario, CliError> {
    let mut sc = Scenario::new(name, task);
    sc.slits = load_slits(&a.slits)?;
    sc.xi0 = a.xi;
    sc.alpha = Some(a.alpha.clone());
    sc.drift = Some(a.b.clone());
    sc.t_max = Some(a.tmax);
    sc.dt = Some(a.dt);
    sc.paths = Some(a.paths);
    Ok(sc)
}

/// Builds the scenario a subcommand describes.
fn scenario(cmd: &Command) -> Result<Scenario, CliError> {
    Ok(match cmd {
        Command::Kernel {
            slits,
            xi,
            grid,
            bmd,
            oracle,
        } => {
            let mut sc = Scenario::new("kernel", Task::Kernel);
            sc.slits = load_slits(slits)?;
            sc.xi0 = *xi;
            sc.grid = grid.as_deref().map(Grid::parse).transpose()?;
            sc.bmd = *bmd;
            sc.oracle_cells = *oracle;
            sc
        }
        Command::Evolve(a) => evolve_scenario("evolve", Task::Evolve, a)?,
        Command::Map { evolve, grid } => {
            let mut sc = evolve_scenario("map", Task::Map, evolve)?;
            sc.grid = grid.as_deref().map(Grid::parse).transpose()?;
            sc
        }
        Command::Skle(a) => stochastic_scenario("skle", Task::Skle, a)?,
        Command::Mc(a) => stochastic_scenario("mc", Task::Mc, a)?,
        Command::Transform {
            run,
            points,
            path_index,
            method,
            tmax,
        } => {
            let mut sc = Scenario::new("transform", Task::Transform);
            sc.run = Some(run.clone());
            sc.points = points.as_deref().map(parse_text::<Vec<[f64; 2]>>).transpose()?.unwrap_or_default();
            sc.path_index = *path_index;
            sc.tolerances.iota.method = match method {
                Method::Circle => IotaMethod::Circle,
                Method::Contour => IotaMethod::Contour,
            };
            sc.t_max = *tmax;
            sc
        }
        Command::Run { scenario } => Scenario::load(scenario)?,
        Command::Verify { .. } => unreachable!("verify has no scenario"),
    })
}

fn verify(suite: &str, manifest: Option<&Path>, out: Option<&Path>) -> Result<bool, CliError> {
    if let Some(m) = manifest {
        let (man, _) = load_verified(m)?;
        println!("{}: {} artifacts verified", m.display(), man.artifacts.len());
        return Ok(man.status == RunStatus::Success);
    }
    let report = kl_verify::run_suite_with(suite, |c| println!("{c}"))?;
    let dir = out.map_or_else(|| PathBuf::from("kl-out").join("verify"), Path::to_path_buf);
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&dir.join(format!("report-{suite}.json")), &bytes)?;
    let failing = report.checks.iter().filter(|c| !c.passed).count();
    println!("{suite}: {} checks, {failing} failing", report.checks.len());
    Ok(report.passed)
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    if let Command::Verify { suite, manifest } = &cli.command {
        return verify(suite, manifest.as_deref(), cli.out.as_deref());
    }
    let mut sc = scenario(&cli.command)?;
    if cli.seed.is_some() {
        sc.seed = cli.seed;
    }
    let target = Target::resolve(cli.out.as_deref(), &sc);
    let manifest = execute(&sc, &target)?;
    println!("{}", target.dir.join(output::MANIFEST).display());
    Ok(manifest.status == RunStatus::Success)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .parse_env("KL_LOG")
        .init();
    match exec::with_jobs(cli.jobs, || run(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("invariant failure; see the manifest or report");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
