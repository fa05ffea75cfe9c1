//! Command surface for `smartaudit`: `audit`, `record`, `bench` and
//! `report render`.
//!
//! [`run`] takes its environment and live-provider factory from a
//! [`Runtime`] so tests can drive every command without touching the
//! process environment or the network.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smartaudit_core::eval::TableStyle;
use smartaudit_core::gateway::{ChatProvider, GatewayError, LiveConfig, LiveProvider};

mod audit;
mod bench;
mod setup;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

/// Builds the provider for `--provider live` (and the upstream of `record`).
pub type LiveFactory = dyn Fn(LiveConfig) -> Result<Box<dyn ChatProvider>, GatewayError> + Send + Sync;

pub struct Runtime {
    env: BTreeMap<String, String>,
    live: Box<LiveFactory>,
}

impl Runtime {
    pub fn new(env: BTreeMap<String, String>, live: Box<LiveFactory>) -> Self {
        Self { env, live }
    }

    /// Process environment and the HTTP provider.
    pub fn from_process() -> Self {
        Self::new(
            std::env::vars().collect(),
            Box::new(|config| Ok(Box::new(LiveProvider::new(config)?) as Box<dyn ChatProvider>)),
        )
    }

    pub(crate) fn var(&self, name: &str) -> Option<&str> {
        self.env.get(name).map(String::as_str).filter(|v| !v.trim().is_empty())
    }

    pub(crate) fn live(&self, config: LiveConfig) -> Result<Box<dyn ChatProvider>, GatewayError> {
        (self.live)(config)
    }
}

/// Marks an error as a configuration problem (exit status 2).
#[derive(Debug)]
pub(crate) struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub(crate) fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

#[derive(Parser, Debug)]
#[command(name = "smartaudit", version, about = "Multi-agent smart contract auditing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Audit Solidity files or directories and write one report per unit.
    Audit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = ProviderChoice::Live)]
        provider: ProviderChoice,
        /// Files or directories (searched recursively for `.sol`).
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Audit through the live provider, appending responses to `--store`.
    Record {
        #[command(flatten)]
        run: RunArgs,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Score audits against a labeled dataset or a real-world manifest, or
    /// render tables from precomputed counts.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = ProviderChoice::Live)]
        provider: ProviderChoice,
        /// Labeled dataset root (one directory per vulnerability type plus SECURE).
        #[arg(conflicts_with_all = ["realworld", "from_counts"])]
        dataset: Option<PathBuf>,
        /// Real-world manifest; project files live in `<manifest dir>/<project id>/`.
        #[arg(long, conflicts_with = "from_counts")]
        realworld: Option<PathBuf>,
        /// CSV with `tool,type,tp,fn,fp,tn[,supported]`; renders tables only.
        #[arg(long)]
        from_counts: Option<PathBuf>,
        #[arg(long)]
        style: Option<StyleChoice>,
        /// Row label in the results table (default: `<model> <mode>`).
        #[arg(long)]
        label: Option<String>,
    },
    /// Work with saved reports.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Subcommand, Debug)]
enum ReportCommand {
    /// Render a JSON report as Markdown.
    Render {
        report: PathBuf,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub(crate) struct RunArgs {
    #[arg(long, value_enum, default_value_t = ModeChoice::Ba)]
    pub mode: ModeChoice,
    /// Model id; defaults to `$LLM_MODEL`, then gpt-3.5-turbo.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 0.2)]
    pub temperature: f64,
    #[arg(long, default_value_t = 3)]
    pub max_rounds: u32,
    #[arg(long, default_value_t = 4096)]
    pub context_limit: usize,
    /// Tokens held back for instructions and dialogue.
    #[arg(long, default_value_t = 1000)]
    pub reserve: usize,
    /// Cap on tokens per response, sent to the live endpoint.
    #[arg(long)]
    pub max_response_tokens: Option<u32>,
    /// Replay/record store.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value = "reports")]
    pub out: PathBuf,
    /// Targeted mode: only these codes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<String>,
    /// TOML scenario pack extending the registry and catalog.
    #[arg(long)]
    pub scenario_pack: Option<PathBuf>,
    /// Contracts audited in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Stop a targeted run at the first failing scenario.
    #[arg(long)]
    pub fail_fast: bool,
    /// TOML file with live endpoint settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fixed report timestamp (RFC 3339), for reproducible output.
    #[arg(long)]
    pub created_at: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ModeChoice {
    Ba,
    Ta,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ProviderChoice {
    Live,
    Replay,
    Record,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum StyleChoice {
    PerTypeRecall,
    ConfusionF1,
    RealworldRecall,
}

impl From<StyleChoice> for TableStyle {
    fn from(s: StyleChoice) -> Self {
        match s {
            StyleChoice::PerTypeRecall => TableStyle::PerTypeRecall,
            StyleChoice::ConfusionF1 => TableStyle::ConfusionF1,
            StyleChoice::RealworldRecall => TableStyle::RealworldRecall,
        }
    }
}

/// Runs one command line and returns its exit status. Normal output goes to
/// `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, runtime: &Runtime, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Audit { run, provider, paths } => audit::audit(&run, provider, &paths, runtime, out, err),
        Command::Record { run, paths } => audit::audit(&run, ProviderChoice::Record, &paths, runtime, out, err),
        Command::Bench {
            run,
            provider,
            dataset,
            realworld,
            from_counts,
            style,
            label,
        } => {
            let style = style.map(TableStyle::from);
            if let Some(csv) = from_counts {
                bench::from_counts(&csv, style, out)
            } else if let Some(manifest) = realworld {
                bench::realworld(&run, provider, &manifest, style, label, runtime, out, err)
            } else if let Some(root) = dataset {
                bench::labeled(&run, provider, &root, style, label, runtime, out, err)
            } else {
                Err(config_error("bench needs a dataset root, --realworld or --from-counts"))
            }
        }
        Command::Report {
            command: ReportCommand::Render { report, out: target },
        } => audit::render(&report, target.as_deref(), out),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                EXIT_CONFIG
            } else {
                EXIT_FAILURE
            }
        }
    }
}
