use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lanecbf::acceptance::{self, AcceptanceOptions};
use lanecbf::report::{self, BatchConfig, ConfigFile, GainOverrides};
use lanecbf::sim::{self, Environment, Scenario, StrictTraffic};

/// Rule-based lane-change controller simulator.
#[derive(Parser)]
#[command(name = "lanecbf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and export its trace, summary and snapshots.
    Simulate(SimulateArgs),
    /// Run a Monte-Carlo batch of random scenarios.
    Random(RandomArgs),
    /// Run the acceptance suite.
    Check(CheckArgs),
    /// Write a scenario file to start from.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct Overrides {
    /// Control period in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Surrounding traffic never overlaps or passes through other vehicles.
    #[arg(long)]
    strict_traffic: bool,
    /// TOML file with a [gains] table overriding controller gains.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Overrides {
    fn gains(&self) -> Result<GainOverrides> {
        Ok(match &self.config {
            Some(path) => ConfigFile::load(path)?.gains,
            None => GainOverrides::default(),
        })
    }

    fn apply(&self, scn: &mut Scenario) -> Result<()> {
        if let Some(dt) = self.dt {
            scn.dt = dt;
        }
        if let Some(d) = self.duration {
            scn.duration = d;
        }
        if self.strict_traffic {
            scn.strict_traffic = Some(StrictTraffic::default());
        }
        self.gains()?.apply(&mut scn.gains);
        Ok(())
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Typical scenario number.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3), required_unless_present = "scenario_file", conflicts_with = "scenario_file")]
    scenario: Option<u32>,
    /// Scenario description in TOML.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct RandomArgs {
    #[arg(long)]
    env: Environment,
    #[arg(long, default_value_t = 500)]
    runs: usize,
    /// Base seed; run i uses seed + i.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value = "acceptance")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Runs per environment and traffic mode in the Monte-Carlo criterion.
    #[arg(long, default_value_t = 500)]
    runs: usize,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3), conflicts_with = "env")]
    typical: Option<u32>,
    #[arg(long, required_unless_present = "typical")]
    env: Option<Environment>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut scn = match (&args.scenario, &args.scenario_file) {
        (Some(n), _) => sim::build_typical(*n)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            Scenario::from_toml(&text).with_context(|| format!("in {}", path.display()))?
        }
        (None, None) => bail!("either --scenario or --scenario-file is required"),
    };
    args.overrides.apply(&mut scn)?;
    let trace = sim::run(&scn)?;
    report::write_simulation(&trace, &args.out)?;
    let s = &trace.summary;
    println!(
        "{}: {} after {:.2} s, {} steps, min h {}",
        s.scenario,
        s.outcome,
        s.end_time,
        s.steps,
        s.min_h.overall().map_or("-".into(), |h| format!("{h:.4}"))
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn random(args: &RandomArgs) -> Result<()> {
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let mut cfg = BatchConfig::new(args.env, args.runs, args.seed);
    cfg.workers = args.workers.unwrap_or_else(default_workers);
    cfg.strict_traffic = args.overrides.strict_traffic;
    cfg.dt = args.overrides.dt;
    cfg.duration = args.overrides.duration;
    cfg.gains = args.overrides.gains()?;
    let res = report::run_batch(&cfg)?;
    report::write_batch(&res, &args.out)?;
    print!("{}", report::format_report(&res.report));
    println!(
        "{:.1} s wall clock, mean control step {:.1} us; wrote {}",
        res.timing.wall_seconds,
        res.timing.mean_step_seconds * 1e6,
        args.out.display()
    );
    Ok(())
}

fn check(args: &CheckArgs) -> Result<bool> {
    let gains = match &args.config {
        Some(path) => ConfigFile::load(path)?.gains,
        None => GainOverrides::default(),
    };
    let opts = AcceptanceOptions { gains, mc_runs: args.runs, workers: args.workers.unwrap_or_else(default_workers) };
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let results: Vec<_> = acceptance::run_all(&opts)
        .into_iter()
        .inspect(|r| println!("{}", r.line()))
        .collect();
    let path = args.out.join("acceptance.json");
    fs::write(&path, serde_json::to_string_pretty(&results)? + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    let passed = results.iter().all(|r| r.passed);
    println!("{} of {} criteria passed", results.iter().filter(|r| r.passed).count(), results.len());
    Ok(passed)
}

fn scenario(args: &ScenarioArgs) -> Result<()> {
    let scn = match (args.typical, args.env) {
        (Some(n), _) => sim::build_typical(n)?,
        (None, Some(env)) => sim::build_random(env, args.seed),
        (None, None) => bail!("either --typical or --env is required"),
    };
    let text = scn.to_toml()?;
    match &args.out {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Random(a) => random(a).map(|_| true),
        Command::Check(a) => check(a),
        Command::Scenario(a) => scenario(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
