//! Synthetic contract corpus and scripted agents for the test suites.
//!
//! [`OracleProvider`] plays every role deterministically from
//! `data/oracle.toml`. It was used to record `data/replay/fixtures.rec`;
//! tests replay that store and never call the oracle directly unless they
//! are checking that the recording is current.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use serde::Deserialize;
use smartaudit_core::eval::{load_labeled, LabeledDataset};
use smartaudit_core::gateway::{
    canonical_digest, ChatProvider, ChatRequest, ChatResponse, ChatRole, GatewayError, ProviderKind,
};
use smartaudit_core::model::{Contract, Mode, VulnCode};
use smartaudit_core::prompts::{load_scenario_pack, scenario_catalog, AGREEMENT_MARKER};
use smartaudit_core::{run_pipeline, AuditReport, PipelineConfig};

/// Model id used for every fixture recording.
pub const FIXTURE_MODEL: &str = "fixture-oracle-1";

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn labeled_root() -> PathBuf {
    data_dir().join("labeled")
}

pub fn replay_store_path() -> PathBuf {
    data_dir().join("replay").join("fixtures.rec")
}

pub fn scenario_pack_path() -> PathBuf {
    data_dir().join("scenarios").join("extended.toml")
}

pub fn tally_path() -> PathBuf {
    data_dir().join("tally.csv")
}

/// Published GPT-3.5 confusion counts (zero-shot, BA, TA) as a counts CSV.
pub fn published_counts_path() -> PathBuf {
    data_dir().join("published_counts.csv")
}

pub fn labeled_dataset() -> LabeledDataset {
    load_labeled(&labeled_root()).expect("fixture dataset loads")
}

/// Timestamp stamped on fixture reports so runs compare byte for byte.
pub fn fixed_created_at() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Pipeline configuration the replay store was recorded with.
pub fn fixture_config(mode: Mode) -> PipelineConfig {
    let mut config = PipelineConfig::new(FIXTURE_MODEL, mode);
    config.created_at = Some(fixed_created_at());
    config
}

/// Default registry and catalog extended by the 30-scenario pack.
pub fn extended_config(mode: Mode) -> PipelineConfig {
    let mut config = fixture_config(mode);
    let text = fs::read_to_string(scenario_pack_path()).expect("scenario pack readable");
    let (registry, extras) = load_scenario_pack(&text, &config.registry).expect("scenario pack parses");
    config.scenarios = scenario_catalog(&registry, &extras).expect("scenario pack covers its registry");
    config.registry = registry;
    config
}

#[derive(Debug, Clone, Deserialize)]
struct OracleFile {
    contract: Vec<Script>,
}

#[derive(Debug, Clone, Deserialize)]
struct Script {
    file: String,
    purpose: String,
    ba: Vec<String>,
    #[serde(default)]
    ba_first: Option<Vec<String>>,
    ta: Vec<String>,
    #[serde(default)]
    ta_dissent: Vec<String>,
    #[serde(default = "yes")]
    analysis_agrees: bool,
}

fn yes() -> bool {
    true
}

struct Entry {
    script: Script,
    source: String,
    name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Analysis,
    Broad,
    Targeted,
    Report,
}

/// Deterministic stand-in for a model, scripted per fixture contract.
pub struct OracleProvider {
    entries: Vec<Entry>,
}

impl OracleProvider {
    pub fn load() -> Self {
        let text = fs::read_to_string(data_dir().join("oracle.toml")).expect("oracle script readable");
        let file: OracleFile = toml::from_str(&text).expect("oracle script parses");
        let entries = file
            .contract
            .into_iter()
            .map(|script| {
                let source = fs::read_to_string(labeled_root().join(&script.file)).expect("fixture contract readable");
                let name = contract_name(&source);
                Entry { script, source, name }
            })
            .collect();
        Self { entries }
    }

    fn respond(&self, req: &ChatRequest) -> Result<String, String> {
        let system = req
            .messages
            .first()
            .filter(|m| m.role == ChatRole::System)
            .map(|m| m.content.as_str())
            .ok_or("request has no system message")?;
        let entry = self
            .entries
            .iter()
            .find(|e| system.contains(e.source.trim()))
            .ok_or("oracle has no script for this contract")?;
        let role =
            between(system, "Never forget you are the ", " and I am the").ok_or("no persona in system prompt")?;
        let user_seat = system.contains("You are the user agent");
        let spoken = req.messages.iter().filter(|m| m.role == ChatRole::Assistant).count();
        let stage = if system.contains("Phase: contract-analysis") {
            Stage::Analysis
        } else if system.contains("(broad analysis)") {
            Stage::Broad
        } else if system.contains("(targeted analysis)") {
            Stage::Targeted
        } else if system.contains("Phase: comprehensive-report") {
            Stage::Report
        } else {
            return Err("unrecognized phase".into());
        };
        let s = &entry.script;
        let name = &entry.name;

        if role == "Smart Contract Counselor" {
            return Ok(format!("Phase summary for {name}: {}", s.purpose));
        }
        Ok(match (stage, role) {
            (Stage::Analysis, "Project Manager") => {
                if spoken == 0 {
                    format!("Instruction: describe the purpose of {name}, its state variables and who may call each function.")
                } else if s.analysis_agrees {
                    format!("The description of {name} is complete and accurate.\n{AGREEMENT_MARKER}")
                } else {
                    format!("Instruction: the description of {name} still omits how ether leaves the contract. Cover every outgoing transfer.")
                }
            }
            (Stage::Analysis, _) => format!("{}\n{AGREEMENT_MARKER}", s.purpose),
            (Stage::Broad, "Smart Contract Auditor") => {
                let codes = match (&s.ba_first, spoken < 2) {
                    (Some(first), true) => first,
                    _ => &s.ba,
                };
                broad_answer(name, codes, user_seat)
            }
            (Stage::Broad, _) if user_seat && spoken == 0 => {
                format!("Instruction: examine every function of {name} and report the vulnerabilities you find.")
            }
            (Stage::Broad, _) => broad_answer(name, &s.ba, user_seat),
            (Stage::Targeted, _) if !user_seat || role == "Smart Contract Auditor" || spoken > 0 => {
                let code = between(system, "If it is not present, output only: NO ", "\n")
                    .ok_or("no sentinel in targeted prompt")?
                    .trim();
                let flagged = s.ta.iter().any(|c| c == code);
                let dissent = role != "Smart Contract Auditor" && s.ta_dissent.iter().any(|c| c == code);
                targeted_answer(name, code, flagged != dissent)
            }
            (Stage::Targeted, _) => {
                format!("Instruction: apply the thought template to {name} step by step.")
            }
            (Stage::Report, _) if user_seat => {
                format!("Instruction: write the final audit report for {name}.")
            }
            (Stage::Report, _) => format!("Audit report for {name}. {}", s.purpose),
        })
    }
}

impl ChatProvider for OracleProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let content = self.respond(req).map_err(GatewayError::Scripted)?;
        Ok(ChatResponse {
            content,
            request_digest: canonical_digest(req),
            provider: ProviderKind::Scripted,
        })
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Scripted
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    Some(&rest[..rest.find(end).unwrap_or(rest.len())])
}

fn contract_name(source: &str) -> String {
    source
        .lines()
        .find_map(|l| l.strip_prefix("contract "))
        .and_then(|rest| rest.split_whitespace().next())
        .unwrap_or("the contract")
        .to_string()
}

fn description(code: &str, name: &str) -> String {
    let what = match code {
        "RE" => "external call is made before the balance is cleared",
        "IO" => "multiplication of the recipient count and value can wrap",
        "USE" => "delegatecall forwards arbitrary calldata to a mutable target",
        "UD" => "return value of a low-level call is ignored",
        "TOD" => "reward can be changed while a claim is pending",
        "TM" => "block.timestamp decides the outcome",
        "RP" => "randomness comes from predictable block data",
        "TX" => "tx.origin is used for authorization",
        "USU" => "selfdestruct and initialize() are callable by anyone",
        "GL" => "loop over an unbounded recipient list",
        _ => "pattern matches the scenario",
    };
    format!("{what} in {name}")
}

fn broad_answer(name: &str, codes: &[String], instructing: bool) -> String {
    let mut out = if instructing {
        format!("My determination for {name} after re-examining the analysis:\n")
    } else {
        format!("Analysis of {name}, function by function.\n")
    };
    if codes.is_empty() {
        out.push_str("NO VULNERABILITIES");
    } else {
        let lines: Vec<String> = codes
            .iter()
            .map(|c| format!("VULN: {c} | high | {}", description(c, name)))
            .collect();
        out.push_str(&lines.join("\n"));
    }
    out
}

fn targeted_answer(name: &str, code: &str, flagged: bool) -> String {
    if flagged {
        format!(
            "Following the thought template over {name}, the vulnerable pattern is reachable.\nVULN: {code} | high | {}",
            description(code, name)
        )
    } else {
        format!("NO {code}")
    }
}

/// Runs every fixture contract in both modes against `provider`, in a fixed
/// order. Returns `(file id, mode, report)` triples.
pub fn run_fixture_suite(provider: &dyn ChatProvider) -> Vec<(String, Mode, AuditReport)> {
    let dataset = labeled_dataset();
    let mut out = Vec::new();
    for mode in [Mode::Broad, Mode::Targeted] {
        let config = fixture_config(mode);
        for contract in dataset.contracts() {
            let report = run_pipeline(contract, provider, &config, &smartaudit_core::engine::NullLog)
                .unwrap_or_else(|e| panic!("{} ({mode}): {e}", contract.id()));
            out.push((contract.id().to_string(), mode, report));
        }
    }
    out
}

/// Contract ids and the codes the fixture tally expects to be flagged.
pub fn expected_positives(contract: &Contract, mode: Mode) -> BTreeSet<VulnCode> {
    let oracle = OracleProvider::load();
    let entry = oracle
        .entries
        .iter()
        .find(|e| e.script.file == contract.id())
        .expect("fixture contract has a script");
    let codes = match mode {
        Mode::Broad => &entry.script.ba,
        Mode::Targeted => &entry.script.ta,
    };
    codes.iter().map(|c| VulnCode::new(c.as_str()).unwrap()).collect()
}

/// Scripted agents that never reach agreement: the auditor flags
/// `auditor_flags` (or the scenario when `ta_positive` says so) and the
/// expert always contradicts it. Contract analysis never agrees either.
pub fn disagreeing_provider(auditor_flags: Vec<String>, ta_positive: bool) -> impl ChatProvider {
    smartaudit_core::gateway::FnProvider::new(move |req: &ChatRequest| {
        let system = &req.messages[0].content;
        let role = between(system, "Never forget you are the ", " and I am the").unwrap_or("");
        let auditor = role == "Smart Contract Auditor";
        if system.contains("Phase: contract-analysis") || system.contains("Phase: comprehensive-report") {
            return Ok(format!("{role} position without agreement."));
        }
        if system.contains("(targeted analysis)") {
            let code = between(system, "If it is not present, output only: NO ", "\n")
                .unwrap_or("")
                .trim();
            return Ok(if auditor == ta_positive {
                format!("VULN: {code} | medium | scripted")
            } else {
                format!("NO {code}")
            });
        }
        // broad: the expert reports the complement of the auditor's set
        let registry = smartaudit_core::model::default_registry();
        let codes: Vec<String> = registry
            .codes()
            .map(|c| c.to_string())
            .filter(|c| auditor_flags.contains(c) == auditor)
            .collect();
        Ok(if codes.is_empty() {
            "NO VULNERABILITIES".to_string()
        } else {
            codes.iter().map(|c| format!("VULN: {c} | low | scripted\n")).collect()
        })
    })
}
