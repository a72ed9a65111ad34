//! Command-line front end. Exit codes: 0 success, 1 bad input, 2 runtime
//! failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::harness::{preset, run_experiment, write_report, ExperimentConfig, ExperimentReport};
use crate::market::MarketInstance;
use crate::solver::{solve_eg_primal, SolverParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fisher-lab", version, about = "Online Fisher-market pricing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run a named experiment preset.
    Preset {
        name: String,
        /// Replace the preset's n values (repeat or comma-separate).
        #[arg(long = "n", value_delimiter = ',', num_args = 1..)]
        n: Vec<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Print the resolved config as JSON instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// Solve the Eisenberg-Gale program of a market instance file.
    Solve {
        instance: PathBuf,
        /// Print the full solution as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_json(&read_input(path)?).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", path.display()),
    })
}

fn execute(cfg: &ExperimentConfig, dir: &Path, force: bool, out: &mut dyn Write) -> Result<(), Failure> {
    let report = run_experiment(cfg)?;
    let files = write_report(&report, dir, force)?;
    for f in &files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
    let _ = writeln!(out, "config sha256 {}", report.config_hash);
    check_rows(&report)
}

fn check_rows(report: &ExperimentReport) -> Result<(), Failure> {
    if let Some(row) = report.rows.iter().find(|r| r.error.is_some()) {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!(
                "{} of {} rows failed; first: policy {} n {} replication {}: {}",
                report.failed_rows(),
                report.rows.len(),
                row.policy,
                row.n,
                row.replication,
                row.error.as_deref().unwrap_or_default()
            ),
        });
    }
    if report.rows.iter().all(|r| r.breach) {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: "every replication hit a nonpositive price".to_string(),
        });
    }
    Ok(())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out: dir, force } => {
            let cfg = load_config(&config)?;
            let dir = dir
                .or_else(|| cfg.output.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            execute(&cfg, &dir, force, out)
        }
        Command::Preset {
            name,
            n,
            reps,
            seed,
            out: dir,
            force,
            print_config,
        } => {
            let mut cfg = preset(&name)?;
            if !n.is_empty() {
                cfg.n_values = n;
            }
            if let Some(r) = reps {
                cfg.replications = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            if print_config {
                let _ = writeln!(out, "{}", cfg.to_json()?);
                return Ok(());
            }
            execute(&cfg, &dir, force, out)
        }
        Command::Solve { instance, json } => {
            let text = read_input(&instance)?;
            let inst = MarketInstance::from_json(&text).map_err(|e| Failure {
                code: EXIT_CONFIG,
                message: format!("{}: {e}", instance.display()),
            })?;
            let sol = solve_eg_primal(&inst, &SolverParams::default())?;
            if json {
                let _ = writeln!(out, "{}", sol.to_json(&inst)?);
            } else {
                let prices: Vec<String> = sol.prices.iter().map(|p| format!("{p}")).collect();
                let _ = writeln!(out, "prices {}", prices.join(" "));
                let _ = writeln!(out, "primal {}", sol.primal_value);
                let _ = writeln!(out, "dual {}", sol.dual_value);
                let _ = writeln!(out, "gap {}", sol.gap);
                let _ = writeln!(out, "iterations {}", sol.iterations);
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let _ = writeln!(out, "ok {} sha256 {}", cfg.name, cfg.hash());
            Ok(())
        }
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = if code == EXIT_OK {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
