use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lagmhd_cli::commands::{self, CertifyArgs};
use lagmhd_cli::{parse_config, CliError, RunConfig};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "mihd", version, about = "Lagrangian MHD simulator and verification runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify a field direction and report its Diophantine constant.
    CertifyOmega {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `algebraic`, `random` or three components.
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        truncation: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Band for the reported Poincare constant (default grid_n / 3).
        #[arg(long)]
        band: Option<u32>,
    },
    /// Run the nonlinear system and write a trajectory CSV and checkpoints.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run next to the closed-form linear evolution and write both series.
    CompareLinear {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Repeat the comparison over m_list and fit the error decay in m.
    SweepM {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Energy report for a checkpoint.
    Diagnose {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2)]
        hierarchy_s: u32,
    },
}

fn load(path: &PathBuf, out_dir: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = parse_config(&commands::read_config(path)?)?;
    if let Some(d) = out_dir {
        cfg.out_dir = d;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Value, CliError> {
    match cli.command {
        Command::CertifyOmega { config, omega, tau, truncation, seed, band } => {
            let config_text = config.map(|p| commands::read_config(&p)).transpose()?;
            commands::certify_omega(&CertifyArgs { config_text, omega, tau, truncation, seed, band })
        }
        Command::Simulate { config, out_dir } => commands::simulate(&load(&config, out_dir)?),
        Command::CompareLinear { config, out_dir } => commands::compare_linear(&load(&config, out_dir)?),
        Command::SweepM { config, out_dir } => commands::sweep_m(&load(&config, out_dir)?),
        Command::Diagnose { checkpoint, hierarchy_s } => {
            let r = commands::diagnose_checkpoint(&checkpoint, hierarchy_s)?;
            Ok(serde_json::to_value(r).expect("report serializes"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CliError::Certification(_, report) = &e {
                println!("{}", serde_json::to_string_pretty(report).expect("json"));
            }
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
