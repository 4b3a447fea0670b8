use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dwipc::pipeline::{
    cmd_correct, cmd_evaluate, cmd_fit, cmd_reproduce, cmd_simulate, layout, CorrectRequest, ExperimentConfig,
    FitTarget, Status, OUTPUT_DIR_ENV,
};
use dwipc::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_REPORT: u8 = 4;

/// Simulate, phase-correct and evaluate complex-valued DW data.
#[derive(Debug, Parser)]
#[command(name = "dwipc", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Experiment config (JSON) or a manifest written by a previous run.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set noise.sigma0=2.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Cap on worker threads; outputs do not depend on it.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the phantom, noisy complex series and ground truth.
    Simulate,
    /// Phase-correct the simulated series; writes `<FILTER>[-new]/`.
    Correct {
        /// Filter to run (TV, CF, MPPCA). Repeatable; defaults to the config list.
        #[arg(long = "filter", value_name = "NAME")]
        filters: Vec<String>,
        /// Run only the calibrated (`true`) or uncalibrated (`false`) variant.
        #[arg(long, value_name = "BOOL")]
        calibrated: Option<bool>,
    },
    /// Fit tensors and FA for a method directory, the MAG baseline, or all.
    Fit {
        /// Method directory name, e.g. `TV-new`.
        #[arg(long, conflicts_with = "mag")]
        method: Option<String>,
        /// Fit the uncorrected magnitude baseline.
        #[arg(long)]
        mag: bool,
    },
    /// Write MAE/ME tables, FA error maps and renders.
    Evaluate,
    /// Run every stage and write `report.json`.
    Reproduce {
        /// Exit with status 4 when any criterion fails.
        #[arg(long)]
        strict: bool,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    if let Some(n) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))?;
    }
    let cfg = ExperimentConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?
        .resolve(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))?;
    let out = cfg.output_dir()?.to_path_buf();
    match cli.command {
        Command::Simulate => {
            let sim = cmd_simulate(&cfg)?;
            println!("simulated {} volumes of {} into {}", sim.noisy.len(), sim.noisy.dims(), out.display());
        }
        Command::Correct { filters, calibrated } => {
            let req = CorrectRequest { filters: (!filters.is_empty()).then_some(filters), calibrated };
            for (label, _) in cmd_correct(&cfg, &req)? {
                println!("corrected {}", out.join(label).display());
            }
        }
        Command::Fit { method, mag } => {
            let target = match (method, mag) {
                (Some(m), _) => FitTarget::Method(m),
                (None, true) => FitTarget::Mag,
                (None, false) => FitTarget::All,
            };
            for label in cmd_fit(&cfg, &target)? {
                println!("fitted {}", out.join(label).display());
            }
        }
        Command::Evaluate => {
            for m in cmd_evaluate(&cfg)? {
                println!("{:<10} mean MAE {:>10.4}  mean |ME| {:>8.4}", m.label, m.mae.mean(), m.me.mean_abs());
            }
            println!("metrics in {}", out.join(layout::METRICS).display());
        }
        Command::Reproduce { strict } => {
            let report = cmd_reproduce(&cfg)?;
            for c in &report.criteria {
                let status = match c.status {
                    Status::Pass => "PASS",
                    Status::Fail => "FAIL",
                    Status::Skipped => "SKIP",
                };
                println!("{} {status} {}", c.id, c.description);
            }
            println!("report in {}", out.join(layout::REPORT).display());
            if strict && !report.passed {
                return Ok(EXIT_REPORT);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
