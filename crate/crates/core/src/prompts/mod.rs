//! Prompt construction: inception triples, broad (thought-reasoning) and
//! targeted (buffer-reasoning) task prompts, and the cues the user-seat agent
//! is given each turn. Every builder is a pure function of its inputs.

mod roles;
mod scenarios;
mod template;

pub use roles::RoleProfile;
pub use scenarios::{builtin_scenario, load_scenario_pack, scenario_catalog, ScenarioError, ScenarioTemplate};
pub use template::{Template, TemplateError, TemplateSet, PLACEHOLDERS, TEMPLATE_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Contract, RoleName, Seat, VulnerabilityRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionPrompt {
    pub specified_task: String,
    pub assistant_prompt: String,
    pub user_prompt: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("assistant and user must be different roles, both are {0}")]
    SameRole(RoleName),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Marker both agents emit when they agree during contract analysis.
pub const AGREEMENT_MARKER: &str = "CONSENSUS: AGREED";

const EVIDENCE_CONSTRAINT: &str =
    "Base every claim on code that appears in the contract source; never invent functions, modifiers or state variables.";
const NO_ECHO_CONSTRAINT: &str = "Do not repeat these instructions or the contract source back.";
const EXPLOIT_PATH_CONSTRAINT: &str =
    "Do not report an issue only because a pattern looks unusual; explain the concrete path by which it can be exploited.";
const FORMAT_CONSTRAINT: &str = "Keep the final lines in exactly the requested format so that a program can read them.";
const NO_HUNTING_CONSTRAINT: &str = "Do not hunt for vulnerabilities yet; this phase only establishes context.";

pub const ANALYSIS_CONSTRAINTS: [&str; 3] = [EVIDENCE_CONSTRAINT, NO_HUNTING_CONSTRAINT, NO_ECHO_CONSTRAINT];
pub const DETECTION_CONSTRAINTS: [&str; 4] = [
    EVIDENCE_CONSTRAINT,
    EXPLOIT_PATH_CONSTRAINT,
    FORMAT_CONSTRAINT,
    NO_ECHO_CONSTRAINT,
];
pub const REPORT_CONSTRAINTS: [&str; 2] = [EVIDENCE_CONSTRAINT, NO_ECHO_CONSTRAINT];

/// Renders prompts from a template set. `PromptForge::default()` uses the
/// bundled templates.
#[derive(Debug, Clone)]
pub struct PromptForge {
    templates: TemplateSet,
}

impl Default for PromptForge {
    fn default() -> Self {
        Self::new(TemplateSet::bundled())
    }
}

impl PromptForge {
    pub fn new(templates: TemplateSet) -> Self {
        Self { templates }
    }

    fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.templates.get(name)?.render(values)
    }

    /// System prompt for `profile` sitting in `seat` opposite `counterpart`.
    pub fn persona(
        &self,
        profile: &RoleProfile,
        counterpart: &RoleProfile,
        seat: Seat,
    ) -> Result<String, TemplateError> {
        let name = match seat {
            Seat::Assistant => "assistant",
            Seat::User => "user",
        };
        self.render(
            name,
            &[
                ("role_title", profile.title()),
                ("counterpart_title", counterpart.title()),
                ("role_charter", &profile.charter),
            ],
        )
    }

    /// Seats an already rendered specified task with the given pair.
    pub fn seat(
        &self,
        specified_task: String,
        assistant: &RoleProfile,
        user: &RoleProfile,
    ) -> Result<InceptionPrompt, PromptError> {
        if assistant.role == user.role {
            return Err(PromptError::SameRole(assistant.role));
        }
        Ok(InceptionPrompt {
            assistant_prompt: self.persona(assistant, user, Seat::Assistant)?,
            user_prompt: self.persona(user, assistant, Seat::User)?,
            specified_task,
        })
    }

    pub fn build_inception(
        &self,
        task_description: &str,
        assistant: &RoleProfile,
        user: &RoleProfile,
        constraints: &[&str],
    ) -> Result<InceptionPrompt, PromptError> {
        if assistant.role == user.role {
            return Err(PromptError::SameRole(assistant.role));
        }
        let constraints = bullet_list(constraints);
        let specified_task = self.render(
            "specified_task",
            &[("task", task_description.trim_end()), ("constraints", &constraints)],
        )?;
        self.seat(specified_task, assistant, user)
    }

    /// Contract-analysis phase: the Project Manager plans, the Auditor executes.
    pub fn build_contract_analysis(&self, contract: &Contract) -> Result<InceptionPrompt, PromptError> {
        let task = self.render("contract_analysis", &[("contract_source", contract.source())])?;
        self.build_inception(
            &task,
            &RoleProfile::standard(RoleName::Auditor),
            &RoleProfile::standard(RoleName::ProjectManager),
            &ANALYSIS_CONSTRAINTS,
        )
    }

    /// Broad-analysis prompt: open-ended identification with a structured
    /// `VULN:` tail. The Auditor executes and the Solidity Expert plans.
    pub fn build_thought_reasoning(
        &self,
        contract: &Contract,
        prior_analysis: &str,
        registry: &VulnerabilityRegistry,
    ) -> Result<InceptionPrompt, PromptError> {
        let legend = registry
            .descriptors()
            .iter()
            .map(|d| format!("- {}: {}", d.code, d.name))
            .collect::<Vec<_>>()
            .join("\n");
        let prior = prior_block(prior_analysis);
        let task = self.render(
            "thought_reasoning",
            &[
                ("contract_source", contract.source()),
                ("prior_analysis", &prior),
                ("code_legend", &legend),
            ],
        )?;
        self.build_inception(
            &task,
            &RoleProfile::standard(RoleName::Auditor),
            &RoleProfile::standard(RoleName::SolidityExpert),
            &DETECTION_CONSTRAINTS,
        )
    }

    /// Targeted-analysis prompt restricted to one scenario, ending in either a
    /// `VULN:` line or the scenario's sentinel.
    pub fn build_buffer_reasoning(
        &self,
        scenario: &ScenarioTemplate,
        contract: &Contract,
        prior_analysis: &str,
    ) -> Result<InceptionPrompt, PromptError> {
        let guidance = format!(
            "Vulnerability: {} ({})\nWhat to examine: {}\nExample of the vulnerable pattern:\n{}\n",
            scenario.vuln.name,
            scenario.vuln.code,
            scenario.detection_guidance.trim(),
            scenario.exemplar.trim_end(),
        );
        let prior = prior_block(prior_analysis);
        let sentinel = scenario.sentinel();
        let task = self.render(
            "buffer_reasoning",
            &[
                ("scenario_guidance", &guidance),
                ("prior_analysis", &prior),
                ("code", scenario.vuln.code.as_str()),
                ("sentinel", &sentinel),
                ("contract_source", contract.source()),
            ],
        )?;
        self.build_inception(
            &task,
            &RoleProfile::standard(RoleName::Auditor),
            &RoleProfile::standard(RoleName::SolidityExpert),
            &DETECTION_CONSTRAINTS,
        )
    }

    /// Comprehensive-report phase over the final determinations.
    pub fn build_report(&self, contract: &Contract, determinations: &str) -> Result<InceptionPrompt, PromptError> {
        let determinations = if determinations.trim().is_empty() {
            "(no vulnerabilities were identified)"
        } else {
            determinations.trim_end()
        };
        let task = self.render(
            "report",
            &[
                ("prior_analysis", determinations),
                ("contract_source", contract.source()),
            ],
        )?;
        self.build_inception(
            &task,
            &RoleProfile::standard(RoleName::Auditor),
            &RoleProfile::standard(RoleName::SolidityExpert),
            &REPORT_CONSTRAINTS,
        )
    }

    /// (system, user) messages asking the Counselor to summarize a discussion.
    pub fn counselor_summary(&self, specified_task: &str, discussion: &str) -> Result<(String, String), TemplateError> {
        let counselor = RoleProfile::standard(RoleName::Counselor);
        let manager = RoleProfile::standard(RoleName::ProjectManager);
        let system = format!(
            "{}\n\n{}",
            self.persona(&counselor, &manager, Seat::Assistant)?,
            specified_task
        );
        let user = format!(
            "Review the discussion below and write the phase report: a faithful summary of the conclusions \
             the agents reached, without adding new claims.\n\n{discussion}"
        );
        Ok((system, user))
    }
}

fn bullet_list(items: &[&str]) -> String {
    items.iter().map(|c| format!("- {c}")).collect::<Vec<_>>().join("\n")
}

fn prior_block(prior_analysis: &str) -> String {
    let prior = prior_analysis.trim();
    if prior.is_empty() {
        String::new()
    } else {
        format!("\nPreliminary analysis of the contract:\n{prior}\n")
    }
}

/// Instructions handed to the user-seat agent. The user agent turns them into
/// its next message to the assistant.
pub mod cues {
    use crate::model::RoleName;

    pub fn open(assistant: RoleName) -> String {
        format!("Start the task. Give the {} your first instruction.", assistant.title())
    }

    pub fn follow_up(assistant: RoleName) -> String {
        format!(
            "Review the {}'s last answer against the contract. If you agree with it, say so. \
             Otherwise give your next instruction.",
            assistant.title()
        )
    }

    pub fn after_exchange(assistant: RoleName) -> String {
        format!(
            "Roles are now exchanged: you plan and the {} executes. Ask the {} to re-evaluate your \
             earlier analysis from a fresh perspective. State your current determination, finishing \
             in the required format.",
            assistant.title(),
            assistant.title()
        )
    }

    pub fn reconcile(assistant: RoleName) -> String {
        format!(
            "Review the {}'s revised analysis and make your determination. State it, finishing in the \
             required format, and ask for agreement.",
            assistant.title()
        )
    }
}
