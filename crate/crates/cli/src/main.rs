use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cathrod::metrics::{self, LengthUnit};
use cathrod::scenario::{self, run_sweep, Scenario, STANDARD_GRAVITY};
use cathrod::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

/// Cosserat-rod catheter simulator.
#[derive(Debug, Parser)]
#[command(name = "cathrod", version, about)]
struct Cli {
    /// Directory for result files.
    #[arg(long, global = true, default_value = "cathrod-out")]
    out_dir: PathBuf,
    /// Sweep workers; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Reserved. The simulations are deterministic and draw no random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Unit of coordinates in input centerline files: m or mm.
    #[arg(long, global = true, default_value = "m")]
    units: LengthUnit,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario to equilibrium.
    Run { config: PathBuf },
    /// Run the scenario once per value of its [sweep] block.
    Sweep { config: PathBuf },
    /// Large-deflection cantilever curve, rod along +x and load along -y.
    Oracle {
        /// Endpoint load, N.
        #[arg(long, allow_negative_numbers = true, conflicts_with = "mass", required_unless_present = "mass")]
        force: Option<f64>,
        /// Hanging mass, kg, instead of --force.
        #[arg(long, allow_negative_numbers = true)]
        mass: Option<f64>,
        /// m
        #[arg(long, allow_negative_numbers = true)]
        length: f64,
        /// Pa
        #[arg(long, allow_negative_numbers = true)]
        youngs: f64,
        /// m
        #[arg(long, allow_negative_numbers = true)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Print the tip deflection over the small-load formula F·L³/(3·E·I).
        #[arg(long)]
        linear_check: bool,
        /// Write the curve here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare two centerline CSV files and print the error report as JSON.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Rod length used to normalize, m.
        #[arg(long)]
        length: f64,
        /// Report only one metric.
        #[arg(long)]
        metric: Option<Metric>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Tip,
    Area,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(seed) = cli.seed {
        log::debug!("--seed {seed} accepted but unused");
    }
    match dispatch(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Run { config } => run(cli, config),
        Command::Sweep { config } => sweep(cli, config),
        Command::Oracle {
            force,
            mass,
            length,
            youngs,
            radius,
            samples,
            linear_check,
            output,
        } => {
            let force = force.unwrap_or_else(|| mass.unwrap_or(f64::NAN) * STANDARD_GRAVITY);
            oracle(force, *length, *youngs, *radius, *samples, *linear_check, output.as_deref())
        }
        Command::Compare { a, b, length, metric } => compare(cli.units, a, b, *length, *metric),
    }
}

fn load(cli: &Cli, config: &Path) -> Result<Scenario> {
    let mut s = Scenario::load(config)?;
    s.default_units = cli.units;
    Ok(s)
}

fn run(cli: &Cli, config: &Path) -> Result<Status> {
    let scenario = load(cli, config)?;
    log::info!("running {}", scenario.name());
    let outcome = scenario.run()?;
    outcome.write(&cli.out_dir)?;
    let r = &outcome.result;
    log::info!(
        "{}: {} after {} steps ({} Newton iterations, {:.2} s), tip = {:?}",
        r.name,
        r.status,
        r.steps,
        r.newton_iterations,
        r.wall_time,
        r.tip
    );
    if let Some(m) = &r.metrics {
        log::info!("tip error vs {}: {:.4} of L", m.reference, m.tip_error_fraction);
    }
    if let Some(f) = &r.failure {
        log::error!("{f}");
    }
    Ok(if r.converged { Status::Ok } else { Status::NotConverged })
}

fn sweep(cli: &Cli, config: &Path) -> Result<Status> {
    let scenario = load(cli, config)?;
    let outcome = run_sweep(&scenario, cli.threads)?;
    outcome.write(&cli.out_dir)?;
    for (v, run) in outcome.values.iter().zip(&outcome.runs) {
        let r = &run.result;
        let err = r
            .metrics
            .as_ref()
            .map(|m| format!(", tip error {:.4}", m.tip_error_fraction))
            .unwrap_or_default();
        log::info!("{} = {v}: {} in {} steps{err}", outcome.parameter, r.status, r.steps);
    }
    Ok(if outcome.all_converged() {
        Status::Ok
    } else {
        Status::NotConverged
    })
}

fn oracle(
    force: f64,
    length: f64,
    youngs: f64,
    radius: f64,
    samples: usize,
    linear_check: bool,
    output: Option<&Path>,
) -> Result<Status> {
    let o = scenario::oracle_curve(force, length, youngs, radius, samples)?;
    log::info!(
        "alpha = {:.6}, tip angle = {:.6} rad, arc length = {:.6} m",
        o.load_parameter,
        o.tip_angle,
        o.arc_length
    );
    let mut stdout = std::io::stdout().lock();
    let io = |e| Error::Serialize(format!("stdout: {e}"));
    if linear_check {
        writeln!(stdout, "linear_ratio = {}", o.linear_ratio).map_err(io)?;
    }
    match output {
        Some(path) => metrics::write_centerline(&o.curve, path)?,
        None if !linear_check => {
            writeln!(stdout, "index,x_m,y_m").map_err(io)?;
            for (i, p) in o.curve.points.iter().enumerate() {
                writeln!(stdout, "{i},{:?},{:?}", p[0], p[1]).map_err(io)?;
            }
        }
        None => {}
    }
    Ok(Status::Ok)
}

fn compare(units: LengthUnit, a: &Path, b: &Path, length: f64, metric: Option<Metric>) -> Result<Status> {
    let read = |p: &Path| -> Result<metrics::Centerline2D> {
        let loaded = metrics::read_centerline(p, units)?;
        for w in &loaded.warnings {
            log::warn!("{}: {w}", p.display());
        }
        Ok(loaded.curve)
    };
    let (ca, cb) = (read(a)?, read(b)?);
    let json = match metric {
        None => serde_json::to_value(metrics::compare(&ca, &cb, length)?),
        Some(Metric::Tip) => Ok(serde_json::json!({
            "tip_error_fraction": metrics::tip_error(&ca, &cb, length)?,
            "rod_length": length,
        })),
        Some(Metric::Area) => Ok(serde_json::json!({
            "area_error": metrics::area_error(&ca, &cb, length)?,
            "rod_length": length,
        })),
    }
    .map_err(|e| Error::Serialize(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&json).expect("plain JSON"));
    Ok(Status::Ok)
}
