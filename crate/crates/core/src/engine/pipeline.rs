//! The three-phase audit: contract analysis, vulnerability identification
//! (broad or targeted), comprehensive report.

use chrono::{DateTime, Utc};
use thiserror::Error;

use super::{step_turn, ConversationState, EngineError, RunLog, Session};
use crate::gateway::{admit_contract, Admission, ChatProvider, Rejection, TokenBudget, DEFAULT_TEMPERATURE};
use crate::model::{
    default_registry, validate_report, AuditReport, Contract, DecisionRecord, Finding, Mode, Phase, PhaseRecord,
    RoleName, Severity, Verdict, Violation, VulnerabilityRegistry,
};
use crate::modes::{run_ba, run_ta, ModeConfig, ModeOutcome};
use crate::prompts::{
    cues, scenario_catalog, PromptForge, RoleProfile, ScenarioError, ScenarioTemplate, AGREEMENT_MARKER,
};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub model_id: String,
    pub temperature: f64,
    pub max_response_tokens: Option<u32>,
    pub mode: ModeConfig,
    pub budget: TokenBudget,
    pub registry: VulnerabilityRegistry,
    /// Targeted-analysis catalog; ignored in broad mode.
    pub scenarios: Vec<ScenarioTemplate>,
    pub forge: PromptForge,
    /// Fixed timestamp for reproducible output; `None` uses the clock.
    pub created_at: Option<DateTime<Utc>>,
}

impl PipelineConfig {
    /// Stock registry, built-in scenarios, bundled templates, 4096-token budget.
    pub fn new(model_id: impl Into<String>, mode: Mode) -> Self {
        let registry = default_registry();
        let scenarios = scenario_catalog(&registry, &[]).expect("built-in scenarios cover the default registry");
        Self {
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_response_tokens: None,
            mode: ModeConfig::new(mode),
            budget: TokenBudget::default(),
            registry,
            scenarios,
            forge: PromptForge::default(),
            created_at: None,
        }
    }

    pub fn max_rounds(&self) -> u32 {
        self.mode.max_rounds
    }

    /// Scenarios targeted mode would run after filtering.
    pub fn selected_scenarios(&self) -> usize {
        match &self.mode.scenario_filter {
            None => self.scenarios.len(),
            Some(filter) => self.scenarios.iter().filter(|s| filter.contains(s.code())).count(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.mode.max_rounds == 0 {
            return Err(PipelineError::Config("max_rounds must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(PipelineError::Config(format!(
                "temperature {} is outside [0, 2]",
                self.temperature
            )));
        }
        let unknown = self.mode.unknown_filter_codes(&self.registry);
        if !unknown.is_empty() {
            let list: Vec<&str> = unknown.iter().map(|c| c.as_str()).collect();
            return Err(PipelineError::Config(format!(
                "unknown scenario code(s): {}",
                list.join(", ")
            )));
        }
        if self.mode.mode == Mode::Targeted && self.selected_scenarios() == 0 {
            return Err(PipelineError::Config(
                "no scenarios selected for targeted analysis".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("token budget: {0}")]
    Budget(Rejection),
    #[error("audit of {} failed: {source}", partial.contract_id)]
    Provider {
        /// Phases completed before the failure, with `failure` set.
        partial: Box<AuditReport>,
        #[source]
        source: EngineError,
    },
    #[error("report failed validation: {}", join_violations(.0))]
    InvalidReport(Vec<Violation>),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(Violation::to_string).collect::<Vec<_>>().join("; ")
}

/// Upper bound on provider calls for one audit with `max_rounds` = R:
/// contract analysis 2R + 1 (rounds plus the Counselor), one broad
/// conversation 2 + 2R + 1 or S targeted conversations 2 + 2R each, and a
/// 2-call report.
pub fn max_provider_calls(mode: Mode, scenarios: usize, max_rounds: u32) -> u64 {
    let r = u64::from(max_rounds);
    let analysis = 2 * r + 1;
    let identification = match mode {
        Mode::Broad => 2 + 2 * r + 1,
        Mode::Targeted => scenarios as u64 * (2 + 2 * r),
    };
    analysis + identification + 2
}

/// Splits an oversized contract into independently auditable units, or
/// rejects it. A contract within the allowance is its own single unit.
pub fn audit_units(contract: &Contract, budget: &TokenBudget) -> Result<Vec<Contract>, Rejection> {
    match admit_contract(contract, budget) {
        Admission::Admit(c) => Ok(vec![c]),
        Admission::Segment(units) => Ok(units),
        Admission::Reject(r) => Err(r),
    }
}

/// Runs all three phases over one unit. The unit must fit the budget; use
/// [`audit_units`] first for contracts that may need splitting.
pub fn run_pipeline(
    contract: &Contract,
    provider: &dyn ChatProvider,
    config: &PipelineConfig,
    log: &dyn RunLog,
) -> Result<AuditReport, PipelineError> {
    config.validate()?;
    let allowance = config.budget.contract_allowance();
    if contract.token_estimate() > allowance {
        return Err(PipelineError::Budget(Rejection {
            segment_id: contract.id().to_string(),
            estimate: contract.token_estimate(),
            allowance,
        }));
    }

    let session = Session::new(provider, config.model_id.clone(), config.temperature)
        .with_log(log, contract.id())
        .with_max_response_tokens(config.max_response_tokens);
    let mut report = AuditReport {
        created_at: config.created_at.unwrap_or_else(Utc::now),
        contract_id: contract.id().to_string(),
        mode: config.mode.mode,
        model_id: config.model_id.clone(),
        total_requests: 0,
        total_rounds_used: 0,
        failure: None,
        verdicts: Vec::new(),
        findings: Vec::new(),
        phase_records: Vec::new(),
    };
    let fail = |mut report: AuditReport, session: &Session<'_>, source: EngineError| {
        report.total_requests = session.requests();
        report.total_rounds_used = report.phase_records.iter().map(|r| r.rounds_used).sum();
        report.failure = Some(source.to_string());
        PipelineError::Provider {
            partial: Box::new(report),
            source,
        }
    };

    let analysis = match contract_analysis(contract, &session, config) {
        Ok(r) => r,
        Err(e) => return Err(fail(report, &session, e)),
    };
    let prior = analysis.summary.clone();
    report.phase_records.push(analysis);

    let outcome = match config.mode.mode {
        Mode::Broad => run_ba(
            contract,
            &session,
            &config.forge,
            &config.mode,
            &config.registry,
            &prior,
        ),
        Mode::Targeted => run_ta(
            contract,
            &session,
            &config.forge,
            &config.mode,
            &config.scenarios,
            &prior,
        ),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => return Err(fail(report, &session, e)),
    };
    let verdicts = outcome.verdicts.clone();
    report
        .phase_records
        .push(identification_record(outcome, config.mode.max_rounds));

    let final_report = match comprehensive_report(contract, &session, config, &verdicts) {
        Ok(r) => r,
        Err(e) => {
            report.verdicts = verdicts;
            return Err(fail(report, &session, e));
        }
    };
    report.phase_records.push(final_report);

    report.findings = findings_from(&verdicts);
    report.verdicts = verdicts;
    report.total_requests = session.requests();
    report.total_rounds_used = report.phase_records.iter().map(|r| r.rounds_used).sum();
    validate_report(&report, &config.registry).map_err(PipelineError::InvalidReport)?;
    Ok(report)
}

fn contract_analysis(
    contract: &Contract,
    session: &Session<'_>,
    config: &PipelineConfig,
) -> Result<PhaseRecord, EngineError> {
    let inception = config.forge.build_contract_analysis(contract)?;
    let mut state = ConversationState::new(
        Phase::ContractAnalysis,
        &config.forge,
        inception,
        RoleProfile::standard(RoleName::Auditor),
        RoleProfile::standard(RoleName::ProjectManager),
        config.mode.max_rounds,
    )?;
    let cue = |s: &ConversationState| {
        if s.round == 0 {
            cues::open(s.assistant.role)
        } else {
            cues::follow_up(s.assistant.role)
        }
    };
    let mut agreed = false;
    while state.round < state.max_rounds {
        step_turn(&mut state, session, &cue)?;
        state.round += 1;
        let n = state.transcript.len();
        if state.transcript[n - 2..]
            .iter()
            .all(|t| t.text.contains(AGREEMENT_MARKER))
        {
            agreed = true;
            break;
        }
    }
    // The Counselor's summary is the phase report either way; without
    // agreement it is also the last word.
    let summary = session.counselor_summary(&config.forge, &state)?;
    Ok(PhaseRecord {
        phase: Phase::ContractAnalysis,
        summary,
        verdicts: Vec::new(),
        rounds_used: state.round,
        max_rounds: state.max_rounds,
        decisions: vec![DecisionRecord {
            label: Phase::ContractAnalysis.as_str().to_string(),
            agreed,
            rounds_used: state.round,
            tie_broken_by: (!agreed).then_some(RoleName::Counselor),
        }],
        notes: Vec::new(),
        transcript: state.transcript,
    })
}

fn identification_record(outcome: ModeOutcome, max_rounds: u32) -> PhaseRecord {
    PhaseRecord {
        phase: Phase::VulnerabilityIdentification,
        rounds_used: outcome.max_rounds_used(),
        max_rounds,
        summary: outcome.summary,
        verdicts: outcome.verdicts,
        decisions: outcome.decisions,
        notes: outcome.notes,
        transcript: outcome.transcript,
    }
}

fn determinations(verdicts: &[Verdict], registry: &VulnerabilityRegistry) -> String {
    verdicts
        .iter()
        .filter(|v| v.is_positive())
        .map(|v| {
            let name = registry.get(v.vuln_code.as_str()).map_or("", |d| d.name.as_str());
            let severity = v.severity.unwrap_or(Severity::Medium);
            format!(
                "- {} ({name}), {severity}: {}",
                v.vuln_code,
                v.description.as_deref().unwrap_or("").trim()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn comprehensive_report(
    contract: &Contract,
    session: &Session<'_>,
    config: &PipelineConfig,
    verdicts: &[Verdict],
) -> Result<PhaseRecord, EngineError> {
    let inception = config
        .forge
        .build_report(contract, &determinations(verdicts, &config.registry))?;
    let mut state = ConversationState::new(
        Phase::ComprehensiveReport,
        &config.forge,
        inception,
        RoleProfile::standard(RoleName::Auditor),
        RoleProfile::standard(RoleName::SolidityExpert),
        1,
    )?;
    step_turn(&mut state, session, &|s: &ConversationState| {
        cues::open(s.assistant.role)
    })?;
    state.round += 1;
    let summary = state
        .latest_from(RoleName::Auditor)
        .map(|t| t.text.clone())
        .unwrap_or_default();
    Ok(PhaseRecord {
        phase: Phase::ComprehensiveReport,
        summary,
        verdicts: Vec::new(),
        rounds_used: state.round,
        max_rounds: state.max_rounds,
        decisions: Vec::new(),
        notes: Vec::new(),
        transcript: state.transcript,
    })
}

/// One finding per positive verdict; severity defaults to medium.
fn findings_from(verdicts: &[Verdict]) -> Vec<Finding> {
    verdicts
        .iter()
        .filter(|v| v.is_positive())
        .map(|v| Finding {
            vuln_code: v.vuln_code.clone(),
            severity: v.severity.unwrap_or(Severity::Medium),
            description: v.description.clone().unwrap_or_default(),
            location: None,
        })
        .collect()
}
