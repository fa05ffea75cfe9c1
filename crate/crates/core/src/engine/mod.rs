//! Assistant/user cooperative protocol: turn alternation, role exchange and
//! bounded consensus.
//!
//! Both seats are model-backed agents. One [`step_turn`] asks the user-seat
//! agent for its next message (prompted by a cue) and then asks the
//! assistant-seat agent to answer it, so each turn costs two provider calls
//! and appends two transcript entries. A consensus round is one such turn:
//! each side states a position once.

mod pipeline;
mod runlog;

pub use pipeline::{audit_units, max_provider_calls, run_pipeline, PipelineConfig, PipelineError};
pub use runlog::{CallLogEntry, MemoryLog, NullLog, RunLog, WriterLog};

use std::cell::Cell;
use std::collections::BTreeSet;
use std::time::Instant;

use thiserror::Error;

use crate::gateway::{ChatMessage, ChatProvider, ChatRequest, GatewayError};
use crate::model::{Decision, DecisionRecord, Phase, RoleName, Seat, Turn, Verdict, VulnCode};
use crate::modes::ParsedResponse;
use crate::prompts::{InceptionPrompt, PromptError, PromptForge, RoleProfile};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{phase} round {round}: {source}")]
    Provider {
        phase: Phase,
        round: u32,
        #[source]
        source: GatewayError,
    },
    #[error("round limit reached ({max_rounds}) in {phase}")]
    RoundLimit { phase: Phase, max_rounds: u32 },
    #[error("roles were already exchanged in this conversation")]
    AlreadyExchanged,
    #[error("role exchange is only defined for vulnerability identification, not {0}")]
    ExchangeOutsidePhase(Phase),
    #[error("consensus needs max_rounds >= 1 and an unused round budget")]
    NoRoundsAvailable,
    #[error("consensus needs the auditor in the conversation")]
    NoAuditor,
    #[error("no scenarios selected for targeted analysis")]
    NoScenarios,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl EngineError {
    /// Errors that abort an audit regardless of `fail_fast`: a replay miss
    /// means the recording is stale, not that one scenario failed.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            EngineError::Provider {
                source: GatewayError::CacheMiss { .. } | GatewayError::CorruptStore { .. },
                ..
            } | EngineError::Prompt(_)
        )
    }
}

/// Per-audit connection to the backend: model parameters, call accounting
/// and the run log. One session serves one sequential pipeline.
pub struct Session<'a> {
    provider: &'a dyn ChatProvider,
    model_id: String,
    temperature: f64,
    max_response_tokens: Option<u32>,
    log: &'a dyn RunLog,
    contract_id: String,
    requests: Cell<u32>,
}

/// Who is speaking, for the run log.
#[derive(Debug, Clone, Copy)]
pub struct CallContext {
    pub phase: Phase,
    pub speaker: RoleName,
    pub counterpart: RoleName,
    pub seat: Seat,
    pub round: u32,
}

impl<'a> Session<'a> {
    pub fn new(provider: &'a dyn ChatProvider, model_id: impl Into<String>, temperature: f64) -> Self {
        Self {
            provider,
            model_id: model_id.into(),
            temperature,
            max_response_tokens: None,
            log: &NullLog,
            contract_id: String::new(),
            requests: Cell::new(0),
        }
    }

    pub fn with_log(mut self, log: &'a dyn RunLog, contract_id: impl Into<String>) -> Self {
        self.log = log;
        self.contract_id = contract_id.into();
        self
    }

    pub fn with_max_response_tokens(mut self, max: Option<u32>) -> Self {
        self.max_response_tokens = max;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn requests(&self) -> u32 {
        self.requests.get()
    }

    pub fn call(&self, ctx: CallContext, messages: Vec<ChatMessage>) -> Result<String, EngineError> {
        let mut req = ChatRequest::new(self.model_id.clone(), messages).with_temperature(self.temperature);
        req.max_response_tokens = self.max_response_tokens;
        self.requests.set(self.requests.get() + 1);
        let started = Instant::now();
        let result = self.provider.complete(&req);
        let latency_ms = started.elapsed().as_millis() as u64;
        let (digest, ok) = match &result {
            Ok(r) => (r.request_digest.clone(), true),
            Err(_) => (crate::gateway::canonical_digest(&req), false),
        };
        self.log.record(&CallLogEntry {
            contract_id: self.contract_id.clone(),
            phase: ctx.phase,
            speaker: ctx.speaker,
            counterpart: ctx.counterpart,
            seat: ctx.seat,
            round: ctx.round,
            digest,
            latency_ms,
            ok,
        });
        result.map(|r| r.content).map_err(|source| EngineError::Provider {
            phase: ctx.phase,
            round: ctx.round,
            source,
        })
    }

    /// Asks the Counselor to summarize `state`'s discussion.
    pub fn counselor_summary(&self, forge: &PromptForge, state: &ConversationState) -> Result<String, EngineError> {
        let discussion = render_discussion(&state.transcript);
        let (system, user) = forge
            .counselor_summary(&state.inception.specified_task, &discussion)
            .map_err(PromptError::from)?;
        let ctx = CallContext {
            phase: state.phase,
            speaker: RoleName::Counselor,
            counterpart: state.user.role,
            seat: Seat::Assistant,
            round: state.round,
        };
        self.call(ctx, vec![ChatMessage::system(system), ChatMessage::user(user)])
    }
}

fn render_discussion(transcript: &[Turn]) -> String {
    transcript
        .iter()
        .map(|t| format!("{}: {}", t.speaker.title(), t.text.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

const EMPTY_PLACEHOLDER: &str = "(no response)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationState {
    pub phase: Phase,
    pub assistant: RoleProfile,
    pub user: RoleProfile,
    pub transcript: Vec<Turn>,
    pub round: u32,
    pub max_rounds: u32,
    pub exchanged: bool,
    /// Set when the last turn failed; the transcript is left as it was.
    pub error: Option<String>,
    inception: InceptionPrompt,
    swapped: InceptionPrompt,
}

impl ConversationState {
    pub fn new(
        phase: Phase,
        forge: &PromptForge,
        inception: InceptionPrompt,
        assistant: RoleProfile,
        user: RoleProfile,
        max_rounds: u32,
    ) -> Result<Self, PromptError> {
        let swapped = forge.seat(inception.specified_task.clone(), &user, &assistant)?;
        Ok(Self {
            phase,
            assistant,
            user,
            transcript: Vec::new(),
            round: 0,
            max_rounds,
            exchanged: false,
            error: None,
            inception,
            swapped,
        })
    }

    pub fn inception(&self) -> &InceptionPrompt {
        &self.inception
    }

    /// Latest message from `role`, if it has spoken.
    pub fn latest_from(&self, role: RoleName) -> Option<&Turn> {
        self.transcript.iter().rev().find(|t| t.speaker == role)
    }

    /// Messages for `speaker`: its own turns become `assistant` messages and
    /// everyone else's become `user` messages.
    fn history_for(&self, speaker: RoleName, system_prompt: &str) -> Vec<ChatMessage> {
        let mut messages = Vec::with_capacity(self.transcript.len() + 2);
        messages.push(ChatMessage::system(format!(
            "{}\n\n{}",
            system_prompt.trim_end(),
            self.inception.specified_task
        )));
        for turn in &self.transcript {
            let text = if turn.text.trim().is_empty() {
                EMPTY_PLACEHOLDER
            } else {
                turn.text.as_str()
            };
            messages.push(if turn.speaker == speaker {
                ChatMessage::assistant(text)
            } else {
                ChatMessage::user(text)
            });
        }
        messages
    }
}

/// One exchange: the user-seat agent speaks (prompted by `cue`), then the
/// assistant-seat agent answers. On error nothing is appended and
/// `state.error` records the failure.
pub fn step_turn(
    state: &mut ConversationState,
    session: &Session<'_>,
    cue: &dyn Fn(&ConversationState) -> String,
) -> Result<(), EngineError> {
    if state.round >= state.max_rounds {
        return Err(EngineError::RoundLimit {
            phase: state.phase,
            max_rounds: state.max_rounds,
        });
    }
    let result = (|| {
        let mut user_messages = state.history_for(state.user.role, &state.inception.user_prompt);
        user_messages.push(ChatMessage::user(cue(state)));
        let user_ctx = CallContext {
            phase: state.phase,
            speaker: state.user.role,
            counterpart: state.assistant.role,
            seat: Seat::User,
            round: state.round,
        };
        let user_text = session.call(user_ctx, user_messages)?;

        let mut assistant_messages = state.history_for(state.assistant.role, &state.inception.assistant_prompt);
        let shown = if user_text.trim().is_empty() {
            EMPTY_PLACEHOLDER
        } else {
            user_text.as_str()
        };
        assistant_messages.push(ChatMessage::user(shown));
        let assistant_ctx = CallContext {
            seat: Seat::Assistant,
            speaker: state.assistant.role,
            counterpart: state.user.role,
            ..user_ctx
        };
        let reply = session.call(assistant_ctx, assistant_messages)?;
        Ok::<_, EngineError>((user_text, reply))
    })();
    match result {
        Ok((user_text, reply)) => {
            state.transcript.push(Turn {
                speaker: state.user.role,
                seat: Seat::User,
                text: user_text,
            });
            state.transcript.push(Turn {
                speaker: state.assistant.role,
                seat: Seat::Assistant,
                text: reply,
            });
            state.error = None;
            Ok(())
        }
        Err(err) => {
            state.error = Some(err.to_string());
            Err(err)
        }
    }
}

/// Swaps the seats once so the former user re-evaluates the analysis.
pub fn exchange_roles(state: &mut ConversationState) -> Result<(), EngineError> {
    if state.phase != Phase::VulnerabilityIdentification {
        return Err(EngineError::ExchangeOutsidePhase(state.phase));
    }
    if state.exchanged {
        return Err(EngineError::AlreadyExchanged);
    }
    std::mem::swap(&mut state.assistant, &mut state.user);
    std::mem::swap(&mut state.inception, &mut state.swapped);
    state.exchanged = true;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusResult {
    pub agreed: bool,
    pub final_verdicts: Vec<Verdict>,
    pub rounds_used: u32,
    /// Always the auditor when `agreed` is false.
    pub tie_broken_by: Option<RoleName>,
    pub notes: Vec<String>,
}

impl ConsensusResult {
    pub fn record(&self, label: &str) -> DecisionRecord {
        DecisionRecord {
            label: label.to_string(),
            agreed: self.agreed,
            rounds_used: self.rounds_used,
            tie_broken_by: self.tie_broken_by,
        }
    }
}

fn decision_set(verdicts: &[Verdict]) -> BTreeSet<(VulnCode, Decision)> {
    verdicts.iter().map(|v| (v.vuln_code.clone(), v.decision)).collect()
}

/// Runs consensus rounds until both agents' latest verdict sets match or the
/// round budget is spent. The auditor's latest verdicts are final in both
/// cases; on disagreement the auditor is recorded as the tie-breaker.
pub fn seek_consensus(
    state: &mut ConversationState,
    session: &Session<'_>,
    parse: &dyn Fn(&str) -> ParsedResponse,
    cue: &dyn Fn(&ConversationState) -> String,
) -> Result<ConsensusResult, EngineError> {
    if state.max_rounds == 0 || state.round >= state.max_rounds {
        return Err(EngineError::NoRoundsAvailable);
    }
    if state.assistant.role != RoleName::Auditor && state.user.role != RoleName::Auditor {
        return Err(EngineError::NoAuditor);
    }
    let mut notes = Vec::new();
    let mut rounds_used = 0;
    let mut auditor_verdicts = Vec::new();
    while state.round < state.max_rounds {
        step_turn(state, session, cue)?;
        state.round += 1;
        rounds_used += 1;

        let n = state.transcript.len();
        let user_turn = &state.transcript[n - 2];
        let assistant_turn = &state.transcript[n - 1];
        let from_user = parse(&user_turn.text);
        let from_assistant = parse(&assistant_turn.text);
        notes.extend(
            from_user
                .parse_notes
                .iter()
                .map(|n| format!("{}: {n}", user_turn.speaker)),
        );
        notes.extend(
            from_assistant
                .parse_notes
                .iter()
                .map(|n| format!("{}: {n}", assistant_turn.speaker)),
        );

        let agreed = decision_set(&from_user.verdicts) == decision_set(&from_assistant.verdicts);
        auditor_verdicts = if user_turn.speaker == RoleName::Auditor {
            from_user.verdicts
        } else {
            from_assistant.verdicts
        };
        if agreed {
            return Ok(ConsensusResult {
                agreed: true,
                final_verdicts: auditor_verdicts,
                rounds_used,
                tie_broken_by: None,
                notes,
            });
        }
    }
    Ok(ConsensusResult {
        agreed: false,
        final_verdicts: auditor_verdicts,
        rounds_used,
        tie_broken_by: Some(RoleName::Auditor),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::FnProvider;
    use crate::model::default_registry;
    use crate::modes::parse_sentinel;
    use crate::prompts::builtin_scenario;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn state(phase: Phase, max_rounds: u32) -> ConversationState {
        let forge = PromptForge::default();
        let auditor = RoleProfile::standard(RoleName::Auditor);
        let expert = RoleProfile::standard(RoleName::SolidityExpert);
        let inception = forge.build_inception("Find bugs.", &auditor, &expert, &[]).unwrap();
        ConversationState::new(phase, &forge, inception, auditor, expert, max_rounds).unwrap()
    }

    fn cue(_: &ConversationState) -> String {
        "next".into()
    }

    #[test]
    fn step_turn_appends_user_then_assistant() {
        let p = FnProvider::new(|_r: &ChatRequest| Ok("analysis A".to_string()));
        let session = Session::new(&p, "m", 0.2);
        let mut s = state(Phase::VulnerabilityIdentification, 3);
        step_turn(&mut s, &session, &cue).unwrap();
        assert_eq!(s.transcript.len(), 2);
        assert_eq!(s.transcript[1].text, "analysis A");
        step_turn(&mut s, &session, &cue).unwrap();
        assert_eq!(s.transcript.len(), 4);
        assert_eq!(crate::model::alternation_break(&s.transcript), None);
        assert_eq!(s.round, 0);
        assert_eq!(session.requests(), 4);
    }

    #[test]
    fn step_turn_failure_leaves_transcript_untouched() {
        let calls = AtomicUsize::new(0);
        let p = FnProvider::new(move |_r: &ChatRequest| {
            // user seat answers, assistant seat fails on the second turn
            match calls.fetch_add(1, Ordering::SeqCst) {
                0..=2 => Ok("fine".to_string()),
                _ => Err("backend down".to_string()),
            }
        });
        let session = Session::new(&p, "m", 0.2);
        let mut s = state(Phase::VulnerabilityIdentification, 3);
        step_turn(&mut s, &session, &cue).unwrap();
        let before = s.transcript.clone();
        let err = step_turn(&mut s, &session, &cue).unwrap_err();
        assert!(matches!(err, EngineError::Provider { round: 0, .. }));
        assert_eq!(s.transcript, before);
        assert!(s.error.as_deref().unwrap().contains("backend down"));
    }

    #[test]
    fn step_turn_respects_round_limit() {
        let p = FnProvider::new(|_r: &ChatRequest| Ok("x".to_string()));
        let session = Session::new(&p, "m", 0.2);
        let mut s = state(Phase::VulnerabilityIdentification, 1);
        s.round = 1;
        assert!(matches!(
            step_turn(&mut s, &session, &cue),
            Err(EngineError::RoundLimit { .. })
        ));
        assert_eq!(session.requests(), 0);
    }

    #[test]
    fn exchange_swaps_once() {
        let mut s = state(Phase::VulnerabilityIdentification, 3);
        let len = s.transcript.len();
        let old_task = s.inception().specified_task.clone();
        exchange_roles(&mut s).unwrap();
        assert_eq!(s.assistant.role, RoleName::SolidityExpert);
        assert_eq!(s.user.role, RoleName::Auditor);
        assert_eq!(s.transcript.len(), len);
        assert_eq!(s.inception().specified_task, old_task);
        assert!(s
            .inception()
            .assistant_prompt
            .contains("Solidity Programming Expert and I am the Smart Contract Auditor"));
        assert!(matches!(exchange_roles(&mut s), Err(EngineError::AlreadyExchanged)));
    }

    #[test]
    fn exchange_outside_identification_is_rejected() {
        let mut s = state(Phase::ContractAnalysis, 3);
        assert!(matches!(
            exchange_roles(&mut s),
            Err(EngineError::ExchangeOutsidePhase(_))
        ));
    }

    fn tod_parse(text: &str) -> ParsedResponse {
        let reg = default_registry();
        parse_sentinel(text, &builtin_scenario(reg.get("TOD").unwrap()).unwrap())
    }

    #[test]
    fn consensus_agrees_in_first_round() {
        let p = FnProvider::new(|_r: &ChatRequest| Ok("NO TOD".to_string()));
        let session = Session::new(&p, "m", 0.2);
        let mut s = state(Phase::VulnerabilityIdentification, 3);
        let r = seek_consensus(&mut s, &session, &tod_parse, &cue).unwrap();
        assert!(r.agreed);
        assert_eq!(r.rounds_used, 1);
        assert_eq!(r.tie_broken_by, None);
        assert_eq!(r.final_verdicts[0].decision, Decision::Negative);
    }

    #[test]
    fn disagreement_runs_to_limit_and_auditor_wins() {
        // the auditor (assistant seat here) always flags, the expert never does
        let p = FnProvider::new(|r: &ChatRequest| {
            let system = &r.messages[0].content;
            Ok(
                if system.starts_with("Never forget you are the Smart Contract Auditor") {
                    "VULN: TOD | high | front-runnable".to_string()
                } else {
                    "NO TOD".to_string()
                },
            )
        });
        for max_rounds in 1..=4 {
            let session = Session::new(&p, "m", 0.2);
            let mut s = state(Phase::VulnerabilityIdentification, max_rounds);
            let r = seek_consensus(&mut s, &session, &tod_parse, &cue).unwrap();
            assert!(!r.agreed);
            assert_eq!(r.rounds_used, max_rounds);
            assert_eq!(r.tie_broken_by, Some(RoleName::Auditor));
            assert_eq!(r.final_verdicts[0].decision, Decision::Positive);
            assert_eq!(session.requests(), 2 * max_rounds);
            assert_eq!(s.round, max_rounds);
        }
    }

    #[test]
    fn consensus_needs_rounds() {
        let p = FnProvider::new(|_r: &ChatRequest| Ok("NO TOD".to_string()));
        let session = Session::new(&p, "m", 0.2);
        let mut s = state(Phase::VulnerabilityIdentification, 0);
        assert!(matches!(
            seek_consensus(&mut s, &session, &tod_parse, &cue),
            Err(EngineError::NoRoundsAvailable)
        ));
    }
}
