use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sv_backstep::commands;
use sv_backstep::config::{parse_config, Experiment};
use sv_backstep::{io, Error, Result};

const EXIT_VERIFY: u8 = 3;

#[derive(Debug, Parser)]
#[command(version, about = "Backstepping boundary control of linearized bilayer shallow-water flow")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (TOML). Without it the preset is used as is.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `output.dir` from the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base preset, overriding the config's `preset` key.
    #[arg(long)]
    preset: Option<String>,
    /// Run open loop (`U = 0`).
    #[arg(long)]
    no_control: bool,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Solve the kernel equations and write kernels.csv, delta.csv, residuals.txt.
    Kernels(Common),
    /// Closed-loop simulation; writes trace.csv and decay_report.txt.
    Simulate(Common),
    /// Run the invariant suite; exit status 3 if any check fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Perturb one kernel value before checking.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Summarize an existing trace.csv.
    Report {
        #[command(flatten)]
        common: Common,
        /// Trace to read; defaults to `<out>/trace.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(Experiment, PathBuf)> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text, common.preset.as_deref())?;
    if common.no_control {
        cfg.sim.controller_on = false;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((Experiment::build(cfg)?, out))
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.verb {
        Verb::Kernels(c) => {
            let (exp, out) = load(&c)?;
            print!("{}", commands::kernels(&exp, &out)?);
        }
        Verb::Simulate(c) => {
            let (exp, out) = load(&c)?;
            print!("{}", commands::simulate(&exp, &out)?);
        }
        Verb::Verify { common, inject_fault } => {
            let (exp, out) = load(&common)?;
            let rep = commands::verify(&exp, &out, inject_fault)?;
            println!("{rep}");
            if !rep.passed() {
                return Ok(EXIT_VERIFY);
            }
        }
        Verb::Report { common, trace } => {
            let out = common.out.clone();
            let path = trace
                .or_else(|| out.as_ref().map(|d| d.join(io::TRACE_FILE)))
                .unwrap_or_else(|| PathBuf::from("out").join(io::TRACE_FILE));
            print!("{}", commands::report(&path, out.as_deref())?);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
