use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fiotrace::config::{load_config, Overrides, ScenarioConfig};
use fiotrace::pipeline::{
    num, parse_sweep, parse_w_grid, run_amplitude, run_check, run_oracle, CheckReport, OracleQuantity, PipelineError,
    RunOptions,
};
use fiotrace::report::{write_amplitude, write_check_outputs, write_checks, write_file, write_oracle, write_report};
use fiotrace::scenarios::{load_builtin, BUILTINS};
use fiotrace_core::stationary::PrefactorMode;

#[derive(Parser)]
#[command(name = "fiotrace", version, about = "Traces of Fourier integral operators on submanifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed for all sampling (overrides the scenario file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run downstream stages even when checks fail; output is labelled non-certified.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory for report.txt and the CSV tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Normalization of the leading amplitude.
    #[arg(long, global = true, default_value = "derived", value_parser = ["derived", "paper"])]
    prefactor: String,
}

#[derive(Args)]
struct Source {
    /// Scenario file.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Parameter override `name=value`, repeatable.
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the phase and decide the trace conditions.
    Check(Source),
    /// Checks plus samples of the traced Lagrangian.
    Trace(Source),
    /// Leading amplitude b₀ on a grid of chart points.
    Amplitude {
        #[command(flatten)]
        source: Source,
        /// `ray:W:λ1,λ2,...`, `line:W0:W1:n` or `points:W;W;...` (W = `w0` or comma list).
        #[arg(long, default_value = "ray:w0:1,2,4,8,16")]
        w_grid: String,
    },
    /// Brute-force quadrature against the predictions.
    Oracle {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_parser = ["trace_kernel", "amplitude", "wavepacket"])]
        quantity: String,
        /// Comma-separated λ (amplitude), ε (trace_kernel) or p₀ (wavepacket) values.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// List the built-in scenarios.
    ListScenarios,
}

type Error = Box<dyn std::error::Error>;

fn load(src: &Source, seed: Option<u64>) -> Result<ScenarioConfig, Error> {
    let overrides = Overrides { seed, ..Overrides::default() }.with_params(&src.params)?;
    Ok(match (&src.config, &src.scenario) {
        (Some(path), _) => load_config(path, &overrides)?,
        (None, Some(name)) => load_builtin(name, &overrides)?,
        (None, None) => unreachable!("clap requires a source"),
    })
}

fn out_dir(cli: &Cli, cfg: &ScenarioConfig) -> Option<PathBuf> {
    cli.out.clone().or_else(|| cfg.outputs.dir.clone())
}

fn check(cli: &Cli, cfg: &ScenarioConfig, opts: &RunOptions) -> Result<CheckReport, Error> {
    let report = run_check(cfg, opts)?;
    if let Some(dir) = out_dir(cli, cfg) {
        write_check_outputs(&report, &dir, &cfg.outputs)?;
    }
    Ok(report)
}

/// Downstream stage refused after failed checks: report why, keep the check exit code.
fn refused(report: &CheckReport, e: PipelineError) -> Result<i32, Error> {
    write_report(report, io::stderr().lock())?;
    eprintln!("error: {e}");
    Ok(report.exit_code())
}

fn run(cli: &Cli) -> Result<i32, Error> {
    let opts = RunOptions {
        force: cli.force,
        prefactor: PrefactorMode::from_name(&cli.prefactor).expect("validated by clap"),
    };
    let stdout = io::stdout();
    match &cli.command {
        Command::ListScenarios => {
            let mut out = stdout.lock();
            for b in BUILTINS {
                let cfg = load_builtin(b.name, &Overrides::default())?;
                let params: Vec<String> = cfg.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                writeln!(out, "{:<18} {:<40} [{}] {}", b.name, b.expectation.describe(), params.join(" "), cfg.description)?;
            }
            Ok(0)
        }
        Command::Check(src) => {
            let cfg = load(src, cli.seed)?;
            let report = check(cli, &cfg, &opts)?;
            write_report(&report, stdout.lock())?;
            Ok(report.exit_code())
        }
        Command::Trace(src) => {
            let cfg = load(src, cli.seed)?;
            let report = check(cli, &cfg, &opts)?;
            let mut out = stdout.lock();
            write_report(&report, &mut out)?;
            writeln!(out)?;
            write_checks(&report, &mut out)?;
            if let Some(t) = report.phase.as_ref().and_then(|p| p.traced.as_ref()) {
                writeln!(out)?;
                let k = cfg.embedding.dim_x;
                writeln!(out, "# i!(Λ) samples: x(1..{k}) p(1..{k}) x'(1..{k}) p'(1..{k})")?;
                for p in &t.points {
                    let row: Vec<String> = p.iter().map(|&v| num(v)).collect();
                    writeln!(out, "{}", row.join(","))?;
                }
            }
            Ok(report.exit_code())
        }
        Command::Amplitude { source, w_grid } => {
            let cfg = load(source, cli.seed)?;
            let report = check(cli, &cfg, &opts)?;
            let grid = parse_w_grid(w_grid, &cfg)?;
            let rows = match run_amplitude(&cfg, &report, &grid, &opts) {
                Err(e @ PipelineError::NotCertified(_)) => return refused(&report, e),
                r => r?,
            };
            match out_dir(cli, &cfg) {
                Some(dir) => {
                    write_file(&dir, &cfg.outputs.amplitude, |f| Ok(write_amplitude(&rows, f)?))?;
                }
                None => write_amplitude(&rows, stdout.lock())?,
            }
            Ok(report.exit_code())
        }
        Command::Oracle { source, quantity, sweep } => {
            let cfg = load(source, cli.seed)?;
            let report = check(cli, &cfg, &opts)?;
            let q = OracleQuantity::from_name(quantity).expect("validated by clap");
            let sweep = match sweep {
                Some(s) => parse_sweep(s)?,
                None => q.default_sweep(&cfg),
            };
            let rows = match run_oracle(&cfg, &report, q, &sweep, &opts) {
                Err(e @ PipelineError::NotCertified(_)) => return refused(&report, e),
                r => r?,
            };
            match out_dir(cli, &cfg) {
                Some(dir) => {
                    write_file(&dir, &cfg.outputs.oracle, |f| Ok(write_oracle(&rows, f)?))?;
                }
                None => write_oracle(&rows, stdout.lock())?,
            }
            Ok(report.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
