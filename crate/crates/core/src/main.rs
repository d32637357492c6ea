use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::Matrix3;

use swivel_core::controller::ControlGains;
use swivel_core::scenario::{read_scenario, ScenarioError};
use swivel_core::sim::{run_scenario, sweep, write_sweep, write_telemetry_file};
use swivel_core::stability::{check_gain_rules, classify_equilibria, Classification};

const EXIT_SCENARIO: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "swivel", version, about = "Closed-loop attitude simulation and stability analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write telemetry.csv and metrics.json
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario's noise seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Linearized stability report for the scenario's gains
    Analyze { scenario: PathBuf },
    /// Run the scenario once per value of a numeric parameter
    Sweep {
        scenario: PathBuf,
        /// Dotted path such as `disturbance.inertia_scale`
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
}

fn scenario_error(e: ScenarioError) -> ExitCode {
    eprintln!("scenario error: {e}");
    ExitCode::from(EXIT_SCENARIO)
}

fn io_error(e: std::io::Error) -> ExitCode {
    eprintln!("i/o error: {e}");
    ExitCode::FAILURE
}

fn simulate(path: PathBuf, out: PathBuf, seed: Option<u64>) -> ExitCode {
    let mut sc = match read_scenario(&path) {
        Ok(sc) => sc,
        Err(e) => return scenario_error(e),
    };
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    let run = match run_scenario(&sc) {
        Ok(r) => r,
        Err(e) => return scenario_error(ScenarioError::Io(e.to_string())),
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        return io_error(e);
    }
    if let Err(e) = write_telemetry_file(&run.telemetry, &out.join("telemetry.csv")) {
        return io_error(e);
    }
    let json = serde_json::to_string_pretty(&run.metrics).expect("metrics serialize");
    if let Err(e) = std::fs::write(out.join("metrics.json"), json + "\n") {
        return io_error(e);
    }
    let m = &run.metrics;
    let settle = m.settling_time.map_or_else(|| "never".to_string(), |t| format!("{t:.3} s"));
    println!("settling time: {settle}");
    println!(
        "peak motor command: {:.3} N ({:.3} N after transient)",
        m.peak_motor_command, m.peak_motor_command_after_transient
    );
    println!("saturation duty: {:.2}%", 100.0 * m.saturation_duty);
    if let Some(e) = &run.error {
        eprintln!("run halted at t = {:.3} s: {e}", m.failure_time.unwrap_or(f64::NAN));
        return ExitCode::from(EXIT_DIVERGED);
    }
    ExitCode::SUCCESS
}

fn analysis_report(gains: &ControlGains, j: &Matrix3<f64>) -> Result<String, std::fmt::Error> {
    let mut out = String::new();
    match classify_equilibria(gains, j) {
        Ok(reports) => {
            writeln!(out, "equilibrium,classification,n_stable,re,im")?;
            for (i, r) in reports.iter().enumerate() {
                let class = match r.classification {
                    Classification::DesiredStable => "desired-stable",
                    Classification::Saddle => "saddle",
                };
                for l in &r.eigenvalues {
                    writeln!(out, "{i},{class},{},{},{}", r.n_stable, l.re, l.im)?;
                }
            }
        }
        Err(e) => writeln!(out, "classification failed: {e}")?,
    }
    writeln!(out)?;
    match check_gain_rules(gains, j) {
        Ok(rep) => {
            let verdict = |b: bool| if b { "PASS" } else { "FAIL" };
            writeln!(out, "moment loops overdamped (zeta >= 1): {}", verdict(rep.inner_overdamped))?;
            writeln!(
                out,
                "inner loop stiffer ({:.3} > {:.3}): {}",
                rep.inner_stiffness,
                rep.outer_stiffness,
                verdict(rep.inner_stiffer)
            )?;
            writeln!(out, "outer loop non-oscillatory: {}", verdict(rep.outer_non_oscillatory))?;
            writeln!(out, "gain rules: {}", verdict(rep.all_pass()))?;
        }
        Err(e) => writeln!(out, "gain rule check failed: {e}")?,
    }
    Ok(out)
}

fn analyze(path: PathBuf) -> ExitCode {
    let sc = match read_scenario(&path) {
        Ok(sc) => sc,
        Err(e) => return scenario_error(e),
    };
    let gains = sc.gains().expect("validated gains");
    let report = analysis_report(&gains, &sc.vehicle.nominal_inertia()).expect("formatting into a String");
    match std::io::stdout().lock().write_all(report.as_bytes()) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe (e.g. `| head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => io_error(e),
    }
}

fn run_sweep(path: PathBuf, param: String, values: Vec<f64>) -> ExitCode {
    let sc = match read_scenario(&path) {
        Ok(sc) => sc,
        Err(e) => return scenario_error(e),
    };
    match sweep(&sc, &param, &values) {
        Ok(rows) => {
            match write_sweep(&rows, &mut std::io::stdout().lock()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return io_error(e),
                _ => {}
            }
            if rows.iter().any(|r| r.metrics.failure.is_some()) {
                return ExitCode::from(EXIT_DIVERGED);
            }
            ExitCode::SUCCESS
        }
        Err(e) => scenario_error(e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Simulate { scenario, out, seed } => simulate(scenario, out, seed),
        Command::Analyze { scenario } => analyze(scenario),
        Command::Sweep { scenario, param, values } => run_sweep(scenario, param, values),
    }
}
