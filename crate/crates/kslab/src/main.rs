use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kslab::cli::{self, Suite, EXIT_ERROR};
use kslab::config;
use kslab::error::{CliError, ConfigError};

#[derive(Parser)]
#[command(name = "kslab", version, about = "Radial Keller-Segel blow-up laboratory")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Approximate profile at a given b
    Profile {
        #[command(subcommand)]
        action: ProfileCmd,
    },
    /// Coercivity and pairing certificates for the cutoff M
    Spectral {
        #[command(subcommand)]
        action: SpectralCmd,
    },
    /// Single run from a config file
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// directory under the output root (default: output.dir or "simulate")
        #[arg(long)]
        name: Option<String>,
    },
    /// Runs over sweep.b0 in parallel
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Inequality and identity suites
    VerifyBounds {
        #[arg(long, value_enum)]
        suite: Suite,
    },
}

#[derive(Subcommand)]
enum ProfileCmd {
    Build {
        #[arg(long)]
        b: f64,
        #[arg(long)]
        r_max: Option<f64>,
    },
}

#[derive(Subcommand)]
enum SpectralCmd {
    Check {
        #[arg(long = "M")]
        m: f64,
    },
}

fn run(args: Args) -> Result<i32, CliError> {
    let root = cli::output_root();
    match args.cmd {
        Cmd::Profile { action: ProfileCmd::Build { b, r_max } } => {
            cli::cmd_profile_build(b, r_max, &root.join(format!("profile_b_{b:e}")))
        }
        Cmd::Spectral { action: SpectralCmd::Check { m } } => cli::cmd_spectral(m, &root.join(format!("spectral_M_{m}"))),
        Cmd::Simulate { config, name } => {
            let cfg = config::load_config(&config)?;
            let dir = name.or(cfg.output_dir.clone()).unwrap_or_else(|| "simulate".into());
            cli::cmd_simulate(&cfg, &root.join(dir))
        }
        Cmd::Sweep { config, name } => {
            let cfg = config::load_config(&config)?;
            let dir = name.or(cfg.output_dir.clone()).unwrap_or_else(|| "sweep".into());
            cli::cmd_sweep(&cfg, &root.join(dir))
        }
        Cmd::VerifyBounds { suite } => cli::cmd_verify(suite, &root.join("verify")),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            if let CliError::Config(ConfigError::Invalid(list)) = &e {
                let doc = serde_json::json!({ "error": "invalid configuration", "violations": list });
                eprintln!("{doc}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
