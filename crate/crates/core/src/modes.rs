//! Phase-two strategies. Broad analysis runs one thought-reasoning
//! conversation over all types; targeted analysis runs one buffer-reasoning
//! conversation per scenario and reads the sentinel.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::engine::{exchange_roles, seek_consensus, step_turn, ConversationState, EngineError, Session};
use crate::model::{
    Contract, DecisionRecord, Mode, Phase, RoleName, Severity, Turn, Verdict, VulnCode, VulnerabilityRegistry,
};
use crate::prompts::{cues, PromptForge, RoleProfile, ScenarioTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeConfig {
    pub mode: Mode,
    pub max_rounds: u32,
    /// Targeted mode only: run just these codes.
    pub scenario_filter: Option<BTreeSet<VulnCode>>,
    pub fail_fast: bool,
}

impl ModeConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            max_rounds: 3,
            scenario_filter: None,
            fail_fast: false,
        }
    }

    /// Every filter code must be registered.
    pub fn unknown_filter_codes(&self, registry: &VulnerabilityRegistry) -> Vec<VulnCode> {
        self.scenario_filter
            .iter()
            .flatten()
            .filter(|c| !registry.contains(c.as_str()))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub verdicts: Vec<Verdict>,
    pub raw: String,
    pub parse_notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct VulnLine {
    code: String,
    severity: Option<String>,
    description: Option<String>,
}

/// Recognizes `VULN: <CODE> | <severity> | <description>`, tolerating list
/// bullets, emphasis markers and a lowercase keyword.
fn parse_vuln_line(line: &str) -> Option<VulnLine> {
    let trimmed = line
        .trim()
        .trim_start_matches(|c: char| matches!(c, '-' | '*' | '`' | '>' | '#') || c.is_whitespace());
    let head = trimmed.get(..5)?;
    if !head.eq_ignore_ascii_case("vuln:") {
        return None;
    }
    let body = trimmed[5..]
        .trim()
        .trim_end_matches(['`', '*'])
        .trim_start_matches(['*', ' ']);
    let mut fields = body.split('|').map(str::trim);
    let code = fields.next()?.trim_matches(['*', '`']).to_ascii_uppercase();
    if code.is_empty() {
        return None;
    }
    let severity = fields.next().filter(|s| !s.is_empty()).map(str::to_string);
    let rest: Vec<&str> = fields.collect();
    let description = Some(rest.join(" | ").trim().to_string()).filter(|d| !d.is_empty());
    Some(VulnLine {
        code,
        severity,
        description,
    })
}

fn verdict_from_line(code: VulnCode, line: VulnLine, notes: &mut Vec<String>) -> Verdict {
    let severity = line.severity.as_deref().and_then(|s| match s.parse::<Severity>() {
        Ok(sev) => Some(sev),
        Err(_) => {
            notes.push(format!("{code}: unrecognized severity `{s}`"));
            None
        }
    });
    let description = line
        .description
        .unwrap_or_else(|| format!("{code} flagged without a description"));
    Verdict::positive(code, description).with_severity(severity)
}

/// Uppercase, punctuation replaced by spaces, whitespace collapsed.
fn normalized_tokens(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                ' '
            }
        })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn contains_sentinel(text: &str, code: &VulnCode) -> bool {
    normalized_tokens(text)
        .windows(2)
        .any(|w| w[0] == "NO" && w[1] == code.as_str())
}

/// Reads a targeted-analysis response. Negative only when the sentinel is
/// present and no `VULN:` line for the scenario's code is; anything else,
/// including an ambiguous answer, is positive so it gets reviewed.
pub fn parse_sentinel(response: &str, scenario: &ScenarioTemplate) -> ParsedResponse {
    let code = scenario.code();
    let mut notes = Vec::new();
    let mut matched = None;
    for line in response.lines() {
        if let Some(parsed) = parse_vuln_line(line) {
            if parsed.code == code.as_str() {
                if matched.is_none() {
                    matched = Some(parsed);
                }
            } else {
                notes.push(format!("{code}: ignored VULN line for other code {}", parsed.code));
            }
        }
    }
    let verdict = if let Some(line) = matched {
        verdict_from_line(code.clone(), line, &mut notes)
    } else if contains_sentinel(response, code) {
        Verdict::negative(code.clone())
    } else {
        notes.push(format!(
            "{code}: response has neither a VULN line nor the sentinel; flagged for review"
        ));
        let text = response.trim();
        let description = if text.is_empty() { "(empty response)" } else { text };
        Verdict::positive(code.clone(), description)
    };
    ParsedResponse {
        verdicts: vec![verdict],
        raw: response.to_string(),
        parse_notes: notes,
    }
}

/// Extracts every well-formed `VULN:` line whose code is registered. Only
/// positives are returned; see [`fill_negatives`].
pub fn parse_broad(response: &str, registry: &VulnerabilityRegistry) -> ParsedResponse {
    let mut notes = Vec::new();
    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut saw_line = false;
    for line in response.lines() {
        let Some(parsed) = parse_vuln_line(line) else { continue };
        saw_line = true;
        let Some(descriptor) = registry.get(&parsed.code) else {
            notes.push(format!("dropped VULN line with unknown code {}", parsed.code));
            continue;
        };
        if verdicts.iter().any(|v| v.vuln_code == descriptor.code) {
            notes.push(format!(
                "duplicate VULN line for {}; keeping the first",
                descriptor.code
            ));
            continue;
        }
        verdicts.push(verdict_from_line(descriptor.code.clone(), parsed, &mut notes));
    }
    if !saw_line {
        notes.push(if response.trim().is_empty() {
            "empty response; no VULN lines".to_string()
        } else {
            "no VULN lines in response".to_string()
        });
    }
    ParsedResponse {
        verdicts,
        raw: response.to_string(),
        parse_notes: notes,
    }
}

/// One verdict per registry type in registry order: the parsed positive when
/// present, otherwise negative.
pub fn fill_negatives(positives: &[Verdict], registry: &VulnerabilityRegistry) -> Vec<Verdict> {
    registry
        .codes()
        .map(|code| {
            positives
                .iter()
                .find(|v| &v.vuln_code == code)
                .cloned()
                .unwrap_or_else(|| Verdict::negative(code.clone()))
        })
        .collect()
}

/// Result of running phase two in either mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeOutcome {
    pub verdicts: Vec<Verdict>,
    pub summary: String,
    pub transcript: Vec<Turn>,
    pub decisions: Vec<DecisionRecord>,
    pub notes: Vec<String>,
}

impl ModeOutcome {
    pub fn max_rounds_used(&self) -> u32 {
        self.decisions.iter().map(|d| d.rounds_used).max().unwrap_or(0)
    }
}

fn detection_pair() -> (RoleProfile, RoleProfile) {
    (
        RoleProfile::standard(RoleName::Auditor),
        RoleProfile::standard(RoleName::SolidityExpert),
    )
}

/// Initial analysis, role exchange, then bounded consensus on one state.
fn decide(
    state: &mut ConversationState,
    session: &Session<'_>,
    parse: &dyn Fn(&str) -> ParsedResponse,
) -> Result<crate::engine::ConsensusResult, EngineError> {
    step_turn(state, session, &|s: &ConversationState| cues::open(s.assistant.role))?;
    exchange_roles(state)?;
    seek_consensus(state, session, parse, &|s: &ConversationState| {
        if s.round == 0 {
            cues::after_exchange(s.assistant.role)
        } else {
            cues::reconcile(s.assistant.role)
        }
    })
}

/// Broad analysis: one conversation, verdict for every registry type.
pub fn run_ba(
    contract: &Contract,
    session: &Session<'_>,
    forge: &PromptForge,
    config: &ModeConfig,
    registry: &VulnerabilityRegistry,
    prior_analysis: &str,
) -> Result<ModeOutcome, EngineError> {
    let inception = forge.build_thought_reasoning(contract, prior_analysis, registry)?;
    let (auditor, expert) = detection_pair();
    let mut state = ConversationState::new(
        Phase::VulnerabilityIdentification,
        forge,
        inception,
        auditor,
        expert,
        config.max_rounds,
    )?;
    let parse = |text: &str| {
        let mut parsed = parse_broad(text, registry);
        parsed.verdicts = fill_negatives(&parsed.verdicts, registry);
        parsed
    };
    let consensus = decide(&mut state, session, &parse)?;
    let summary = session.counselor_summary(forge, &state)?;
    Ok(ModeOutcome {
        verdicts: consensus.final_verdicts.clone(),
        summary,
        decisions: vec![consensus.record("broad")],
        notes: consensus.notes,
        transcript: state.transcript,
    })
}

/// Targeted analysis: one conversation per scenario (after filtering), in
/// catalog order.
pub fn run_ta(
    contract: &Contract,
    session: &Session<'_>,
    forge: &PromptForge,
    config: &ModeConfig,
    scenarios: &[ScenarioTemplate],
    prior_analysis: &str,
) -> Result<ModeOutcome, EngineError> {
    let selected: Vec<&ScenarioTemplate> = scenarios
        .iter()
        .filter(|s| config.scenario_filter.as_ref().is_none_or(|f| f.contains(s.code())))
        .collect();
    if selected.is_empty() {
        return Err(EngineError::NoScenarios);
    }
    let mut outcome = ModeOutcome {
        verdicts: Vec::with_capacity(selected.len()),
        summary: String::new(),
        transcript: Vec::new(),
        decisions: Vec::with_capacity(selected.len()),
        notes: Vec::new(),
    };
    for scenario in selected {
        let result = (|| {
            let inception = forge.build_buffer_reasoning(scenario, contract, prior_analysis)?;
            let (auditor, expert) = detection_pair();
            let mut state = ConversationState::new(
                Phase::VulnerabilityIdentification,
                forge,
                inception,
                auditor,
                expert,
                config.max_rounds,
            )?;
            let parse = |text: &str| parse_sentinel(text, scenario);
            let consensus = decide(&mut state, session, &parse)?;
            Ok::<_, EngineError>((consensus, state.transcript))
        })();
        match result {
            Ok((consensus, transcript)) => {
                outcome.decisions.push(consensus.record(&scenario.id));
                outcome.verdicts.extend(consensus.final_verdicts);
                outcome.notes.extend(consensus.notes);
                outcome.transcript.extend(transcript);
            }
            Err(err) if config.fail_fast || err.is_fatal() => return Err(err),
            Err(err) => outcome
                .notes
                .push(format!("scenario {} errored and was skipped: {err}", scenario.id)),
        }
    }
    let positives: Vec<&str> = outcome
        .verdicts
        .iter()
        .filter(|v| v.is_positive())
        .map(|v| v.vuln_code.as_str())
        .collect();
    outcome.summary = format!(
        "Targeted analysis ran {} scenario(s); positive: {}.",
        outcome.decisions.len(),
        if positives.is_empty() {
            "none".to_string()
        } else {
            positives.join(", ")
        }
    );
    Ok(outcome)
}
