//! `draftcheck`: run the feedback service, validate its configuration,
//! generate synthetic cohorts and compute usage analytics from a store.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors
//! (bad configuration, unreadable or corrupt store, failed exports).

mod commands;
mod render;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use draftcheck_core::PromptVersion;

#[derive(Debug, Parser)]
#[command(name = "draftcheck", version, about = "Formative feedback service and usage analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "DRAFTCHECK_CONFIG")]
        config: PathBuf,
        /// Overrides `listen` from the config file.
        #[arg(long, env = "DRAFTCHECK_LISTEN")]
        listen: Option<SocketAddr>,
    },
    /// Parse and validate a service configuration file.
    CheckConfig {
        #[arg(long, env = "DRAFTCHECK_CONFIG")]
        config: PathBuf,
    },
    /// Generate a seeded synthetic cohort into a store directory.
    Synth {
        /// Store directory to create; must not contain records yet.
        #[arg(long)]
        out: PathBuf,
        /// Cohort spec (TOML). Defaults to 76 students over two rounds.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Usage funnel: submitted, used, interacted, corrected.
    Funnel(AnalyticsArgs),
    /// Students per number of feedback requests.
    Histogram {
        #[command(flatten)]
        args: AnalyticsArgs,
        /// Divide by the number of submitting students.
        #[arg(long)]
        normalized: bool,
    },
    /// Tasks per submitted report, with outliers.
    Tasks(AnalyticsArgs),
    /// Distinct task categories per submitted report.
    Categories(AnalyticsArgs),
    /// Print the feedback table for a draft.
    Feedback {
        /// Draft file; reads standard input when omitted.
        file: Option<PathBuf>,
        /// Use the rule oracle with this prompt version.
        #[arg(long, value_enum, conflicts_with_all = ["config", "round"])]
        mock: Option<VersionArg>,
        /// Use the provider configured for `--round` in this service config.
        #[arg(long, env = "DRAFTCHECK_CONFIG", requires = "round")]
        config: Option<PathBuf>,
        #[arg(long)]
        round: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct AnalyticsArgs {
    /// Store directory.
    #[arg(long)]
    store: PathBuf,
    /// Round id; all rounds in the store when omitted.
    #[arg(long)]
    round: Option<String>,
    /// Print JSON instead of a text table.
    #[arg(long)]
    json: bool,
    /// Also write a CSV export here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VersionArg {
    V1,
    V2,
}

impl From<VersionArg> for PromptVersion {
    fn from(v: VersionArg) -> Self {
        match v {
            VersionArg::V1 => PromptVersion::V1,
            VersionArg::V2 => PromptVersion::V2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
