//! Flags to pipeline configuration and provider construction.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use chrono::{DateTime, Utc};
use serde::Deserialize;
use smartaudit_core::gateway::{
    ChatProvider, GatewayError, LiveConfig, RecordingProvider, ReplayProvider, RetryPolicy, TokenBudget,
    DEFAULT_BASE_URL, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL,
};
use smartaudit_core::model::{Mode, VulnCode};
use smartaudit_core::prompts::{load_scenario_pack, scenario_catalog};
use smartaudit_core::PipelineConfig;

use crate::{config_error, ModeChoice, ProviderChoice, RunArgs, Runtime};

pub(crate) const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

impl From<ModeChoice> for Mode {
    fn from(m: ModeChoice) -> Self {
        match m {
            ModeChoice::Ba => Mode::Broad,
            ModeChoice::Ta => Mode::Targeted,
        }
    }
}

/// Optional `--config` file. Only endpoint settings live here; the
/// audit knobs are flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    live: LiveSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LiveSection {
    base_url: Option<String>,
    timeout_secs: Option<u64>,
    max_retries: Option<u32>,
    retry_base_delay_ms: Option<u64>,
}

pub(crate) fn pipeline_config(args: &RunArgs, runtime: &Runtime) -> anyhow::Result<PipelineConfig> {
    let model = args
        .model
        .clone()
        .or_else(|| runtime.var(ENV_MODEL).map(str::to_string))
        .unwrap_or_else(|| DEFAULT_MODEL.to_string());
    let mut config = PipelineConfig::new(model, args.mode.into());
    config.temperature = args.temperature;
    config.max_response_tokens = args.max_response_tokens;
    config.mode.max_rounds = args.max_rounds;
    config.mode.fail_fast = args.fail_fast;
    config.budget = TokenBudget::new(
        args.context_limit,
        args.reserve,
        TokenBudget::with_reserve(args.context_limit, args.reserve).contract_allowance(),
    )
    .map_err(|e| config_error(e.to_string()))?;
    if config.budget.contract_allowance() == 0 {
        return Err(config_error(format!(
            "reserve {} leaves no room for the contract in a {}-token context",
            args.reserve, args.context_limit
        )));
    }

    if let Some(pack) = &args.scenario_pack {
        let text = fs::read_to_string(pack)
            .with_context(|| format!("reading scenario pack {}", pack.display()))
            .map_err(|e| config_error(format!("{e:#}")))?;
        let (registry, extras) = load_scenario_pack(&text, &config.registry)
            .map_err(|e| config_error(format!("scenario pack {}: {e}", pack.display())))?;
        config.scenarios =
            scenario_catalog(&registry, &extras).map_err(|e| config_error(format!("scenario pack: {e}")))?;
        config.registry = registry;
    }

    if !args.scenarios.is_empty() {
        if config.mode.mode == Mode::Broad {
            return Err(config_error("--scenarios applies to targeted mode (--mode ta) only"));
        }
        let filter = args
            .scenarios
            .iter()
            .map(|s| VulnCode::new(s.trim().to_ascii_uppercase()))
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(|e| config_error(e.to_string()))?;
        config.mode.scenario_filter = Some(filter);
    }

    if let Some(ts) = &args.created_at {
        let at: DateTime<Utc> = DateTime::parse_from_rfc3339(ts)
            .map_err(|e| config_error(format!("--created-at `{ts}`: {e}")))?
            .with_timezone(&Utc);
        config.created_at = Some(at);
    }
    if args.jobs == 0 {
        return Err(config_error("--jobs must be at least 1"));
    }
    config.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(config)
}

fn live_config(args: &RunArgs, runtime: &Runtime) -> anyhow::Result<LiveConfig> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error(format!("reading config {}: {e}", path.display())))?;
            toml::from_str::<FileConfig>(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let key = runtime
        .var(ENV_API_KEY)
        .ok_or_else(|| config_error(format!("{ENV_API_KEY} is not set; the live provider needs an API key")))?;
    let base = file
        .live
        .base_url
        .clone()
        .or_else(|| runtime.var(ENV_BASE_URL).map(str::to_string))
        .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
    let mut config = LiveConfig::new(base, key);
    if let Some(secs) = file.live.timeout_secs {
        config.timeout = Duration::from_secs(secs);
    }
    let default = RetryPolicy::default();
    config.retry = RetryPolicy {
        max_retries: file.live.max_retries.unwrap_or(default.max_retries),
        base_delay: file
            .live
            .retry_base_delay_ms
            .map_or(default.base_delay, Duration::from_millis),
    };
    Ok(config)
}

fn require_store<'a>(args: &'a RunArgs, what: &str) -> anyhow::Result<&'a Path> {
    args.store
        .as_deref()
        .ok_or_else(|| config_error(format!("{what} needs --store <path>")))
}

/// Builds the provider. Every configuration check happens here, before any
/// request is sent.
pub(crate) fn provider(
    args: &RunArgs,
    choice: ProviderChoice,
    runtime: &Runtime,
) -> anyhow::Result<Box<dyn ChatProvider>> {
    let gateway = |e: GatewayError| config_error(e.to_string());
    match choice {
        ProviderChoice::Replay => {
            let store = require_store(args, "--provider replay")?;
            Ok(Box::new(ReplayProvider::open(store).map_err(gateway)?))
        }
        ProviderChoice::Live => {
            let config = live_config(args, runtime)?;
            runtime.live(config).map_err(gateway)
        }
        ProviderChoice::Record => {
            let store = require_store(args, "recording")?.to_path_buf();
            let config = live_config(args, runtime)?;
            let upstream = runtime.live(config).map_err(gateway)?;
            Ok(Box::new(RecordingProvider::new(upstream, store).map_err(gateway)?))
        }
    }
}
