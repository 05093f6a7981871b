//! `vacts-kit`: model checks, wrench sweeps and scenario simulation.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use vacts_core::check::consistency_suite;
use vacts_core::model::{load_system, SystemDescription};
use vacts_core::report;
use vacts_core::sim::{load_scenario, run_scenario, RunOptions, RunSummary};
use vacts_core::wrench::{monotonicity, sweep, CapacityOptions, Metric, SweepAxis, SweepSpec, SweepTable, Variant};
use vacts_core::Error;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "vacts-kit", version, about = "Variable-length aerial cable towed system toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the model consistency suite on a system description.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Random states drawn per check.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "vacts-kit-out")]
        out: PathBuf,
    },
    /// Sweep the capacity margin or manipulability along one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// inclination (deg), drum_radius (m), winch_offset (m) or rotz (deg)
        #[arg(long)]
        axis: String,
        /// lo:hi:count, inclusive
        #[arg(long)]
        range: String,
        #[arg(long, value_enum, default_value_t = MetricArg::CapacityMargin)]
        metric: MetricArg,
        #[arg(long, value_enum, default_value_t = VariantArg::Both)]
        variant: VariantArg,
        #[arg(long, default_value = "vacts-kit-out")]
        out: PathBuf,
    },
    /// Run a scenario in closed loop.
    Simulate {
        /// System file; defaults to the one named in the scenario.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "vacts-kit-out")]
        out: PathBuf,
        /// Measurement noise model; `--noise` alone means `mocap`.
        #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "mocap", default_value_t = NoiseArg::None)]
        noise: NoiseArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    CapacityMargin,
    Manipulability,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Acts,
    Vacts,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    None,
    /// Gaussian position and attitude noise with the scenario's standard deviations.
    Mocap,
}

/// Failure with its stable exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } | Error::Io(_) | Error::InvalidArgument(_) => 1,
            Error::Invariant { .. }
            | Error::Degenerate { .. }
            | Error::RankDeficient { .. }
            | Error::CoupledCableMismatch { .. }
            | Error::Dimension(_) => 2,
            Error::InfeasibleMoment { .. }
            | Error::NoConvergence { .. }
            | Error::ZeroThrust { .. }
            | Error::ThrustReversal { .. }
            | Error::ConstraintSolve { .. }
            | Error::Divergence { .. } => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn parse_range(s: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || input_error(format!("--range `{s}` must be lo:hi:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect())
}

fn create_dir(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| input_error(format!("{}: {e}", out.display())))
}

fn load(path: &Path) -> Result<(SystemDescription, Vec<u8>), Failure> {
    let bytes = std::fs::read(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok((load_system(path)?, bytes))
}

fn cmd_check(config: &Path, samples: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    let (sys, bytes) = load(config)?;
    create_dir(out)?;
    let mut manifest = Manifest::new("check", config, &bytes);
    let result = consistency_suite(&sys, samples, seed);
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            if matches!(e, Error::Degenerate { .. }) {
                eprintln!("warning: {e}");
            }
            let f = Failure::from(e);
            manifest.fail(&f.message);
            manifest.write(out, start)?;
            return Err(f);
        }
    };
    println!("{:<36} {:>12} {:>10}  result", "check", "worst", "tolerance");
    for c in &report.checks {
        println!(
            "{:<36} {:>12.3e} {:>10.0e}  {}",
            c.name,
            c.worst,
            c.tolerance,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| input_error(e.to_string()))?;
    manifest.output(out, "check.json", json.as_bytes())?;
    if let Some(f) = report.first_failure() {
        let msg = format!("check `{}` failed: worst {:.3e} > {:.0e}", f.name, f.worst, f.tolerance);
        manifest.fail(&msg);
        manifest.write(out, start)?;
        return Err(Failure { code: 2, message: msg });
    }
    manifest.write(out, start)
}

fn print_trends(table: &SweepTable) {
    println!(
        "axis: {} [{}], metric: {}",
        table.axis.name(),
        table.axis.unit(),
        table.metric.name()
    );
    for t in table.trends() {
        let col = table.column(t.variant);
        // Shape of the curve from its maximum onward.
        let tail: Vec<f64> = match t.argmax {
            Some(a) => table
                .rows
                .iter()
                .zip(&col)
                .filter(|(r, _)| r.parameter >= a)
                .filter_map(|(_, v)| *v)
                .collect(),
            None => Vec::new(),
        };
        println!(
            "  {:<6} argmax {:>12} max {:>14} overall {:<15} after argmax {:<15} failed cells {}",
            t.variant.name(),
            t.argmax.map(|a| format!("{a:.6}")).unwrap_or_else(|| "-".into()),
            t.max.map(|m| format!("{m:.6e}")).unwrap_or_else(|| "-".into()),
            format!("{:?}", t.monotonicity).to_lowercase(),
            format!("{:?}", monotonicity(&tail, 1e-9)).to_lowercase(),
            t.failed_cells
        );
    }
    if table.variants.len() == 2 {
        let acts = table.column(Variant::Acts);
        let vacts = table.column(Variant::Vacts);
        let pairs: Vec<(f64, f64)> = acts.iter().zip(&vacts).filter_map(|(a, v)| Some(((*a)?, (*v)?))).collect();
        let holds = match table.metric {
            Metric::CapacityMargin => pairs.iter().all(|(a, v)| a >= v),
            Metric::Manipulability => pairs.iter().all(|(a, v)| v <= a),
        };
        let claim = match table.metric {
            Metric::CapacityMargin => "acts >= vacts",
            Metric::Manipulability => "vacts <= acts (1/w_s)",
        };
        println!("  {claim} on every row: {}", if holds { "yes" } else { "no" });
    }
}

fn cmd_sweep(config: &Path, axis: &str, range: &str, metric: MetricArg, variant: VariantArg, out: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    let axis: SweepAxis = axis.parse()?;
    let values = parse_range(range)?;
    let (sys, bytes) = load(config)?;
    let task = sys
        .nominal()
        .ok_or_else(|| input_error(format!("{}: sweeps need a [configuration] section", config.display())))?
        .task_state();
    create_dir(out)?;
    let spec = SweepSpec {
        axis,
        values,
        metric: match metric {
            MetricArg::CapacityMargin => Metric::CapacityMargin,
            MetricArg::Manipulability => Metric::Manipulability,
        },
        variants: match variant {
            VariantArg::Acts => vec![Variant::Acts],
            VariantArg::Vacts => vec![Variant::Vacts],
            VariantArg::Both => vec![Variant::Acts, Variant::Vacts],
        },
        capacity: CapacityOptions::default(),
    };
    let mut manifest = Manifest::new("sweep", config, &bytes);
    let table = sweep(&sys, &task, &spec)?;
    manifest.output(out, "sweep.csv", table.to_csv()?.as_bytes())?;
    manifest.output(out, "sweep.json", report::sweep_json(&table)?.as_bytes())?;
    print_trends(&table);
    manifest.write(out, start)
}

fn print_errors(summary: &RunSummary) {
    let cm = |v: f64| v * 100.0;
    println!("tracking error after takeoff ({} samples), cm", summary.payload_error.samples);
    println!("  {:<10} {:>10} {:>10} {:>10}", "", "mean", "std", "max|e|");
    for (k, a) in ["x", "y", "z"].iter().enumerate() {
        let e = &summary.payload_error;
        println!(
            "  payload {a:<2} {:>10.3} {:>10.3} {:>10.3}",
            cm(e.mean[k]),
            cm(e.std[k]),
            cm(e.max_abs[k])
        );
    }
    for i in 0..summary.length_error.mean.len() {
        let e = &summary.length_error;
        println!(
            "  cable {:<4} {:>10.3} {:>10.3} {:>10.3}",
            i + 1,
            cm(e.mean[i]),
            cm(e.std[i]),
            cm(e.max_abs[i])
        );
    }
    println!("max payload drift: {:.3} cm", cm(summary.max_payload_drift));
    let sat: usize = summary.saturated_ticks.iter().sum();
    if sat > 0 {
        println!("winch saturation: {:?} ticks per winch", summary.saturated_ticks);
    } else {
        println!("winch saturation: none");
    }
    if summary.slack_events > 0 {
        println!("slack events: {}", summary.slack_events);
    }
}

fn cmd_simulate(config: Option<&Path>, scenario_path: &Path, out: &Path, noise: NoiseArg, seed: u64) -> Result<(), Failure> {
    let start = Instant::now();
    let scenario = load_scenario(scenario_path)?;
    let config = match (config, &scenario.system_path) {
        (Some(c), _) => c.to_path_buf(),
        (None, Some(p)) => p.clone(),
        (None, None) => return Err(input_error("no --config given and the scenario names no system")),
    };
    let (sys, bytes) = load(&config)?;
    let scenario_bytes = std::fs::read(scenario_path).map_err(|e| input_error(format!("{}: {e}", scenario_path.display())))?;
    create_dir(out)?;
    let mut manifest = Manifest::new("simulate", &config, &bytes);
    manifest.scenario(scenario_path, &scenario_bytes);
    let opts = RunOptions {
        noise: noise == NoiseArg::Mocap,
        seed,
    };
    let result = run_scenario(&sys, &scenario, &opts)?;
    let (n, m) = (sys.quadrotor_count(), sys.cable_count());
    manifest.output(
        out,
        "timeseries.csv",
        report::timeseries_csv(&result.samples, n, m)?.as_bytes(),
    )?;
    manifest.output(out, "commands.csv", report::commands_csv(&result.samples, n, m)?.as_bytes())?;
    manifest.output(
        out,
        "summary.json",
        report::summary_json(&scenario, &result.summary, opts.noise, seed)?.as_bytes(),
    )?;
    print_errors(&result.summary);
    if let Some(e) = result.aborted {
        let f = Failure::from(e);
        eprintln!("run aborted; partial outputs kept");
        manifest.fail(&f.message);
        manifest.write(out, start)?;
        return Err(f);
    }
    manifest.write(out, start)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check {
            config,
            samples,
            seed,
            out,
        } => cmd_check(config, *samples, *seed, out),
        Command::Sweep {
            config,
            axis,
            range,
            metric,
            variant,
            out,
        } => cmd_sweep(config, axis, range, *metric, *variant, out),
        Command::Simulate {
            config,
            scenario,
            out,
            noise,
            seed,
        } => cmd_simulate(config.as_deref(), scenario, out, *noise, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
