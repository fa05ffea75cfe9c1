//! Shared domain vocabulary: contracts, vulnerability types, verdicts,
//! findings and audit reports.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::estimate_tokens;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("duplicate vulnerability code `{0}`")]
    DuplicateCode(String),
    #[error("invalid vulnerability code `{0}`: expected 1-8 uppercase ASCII letters or digits")]
    InvalidCode(String),
    #[error("contract `{0}` has empty source")]
    EmptySource(String),
    #[error("unknown {kind} `{value}`")]
    UnknownVariant { kind: &'static str, value: String },
}

/// Short uppercase abbreviation naming a vulnerability type, e.g. `RE` or `TOD`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VulnCode(String);

impl VulnCode {
    pub fn new(code: impl Into<String>) -> Result<Self, ModelError> {
        let code = code.into();
        let ok = !code.is_empty()
            && code.len() <= 8
            && code.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
            && code.chars().next().is_some_and(|c| c.is_ascii_uppercase());
        if ok {
            Ok(Self(code))
        } else {
            Err(ModelError::InvalidCode(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for VulnCode {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<VulnCode> for String {
    fn from(value: VulnCode) -> Self {
        value.0
    }
}

impl FromStr for VulnCode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for VulnCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<&str> for VulnCode {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    /// Machine-auditable types that conventional tools target.
    Specific,
    /// Business-logic flaws that historically needed a human auditor.
    ComplexLogic,
}

impl FromStr for Category {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "specific" => Ok(Self::Specific),
            "complex-logic" | "complex_logic" | "complex" => Ok(Self::ComplexLogic),
            _ => Err(ModelError::UnknownVariant {
                kind: "category",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnTypeDescriptor {
    pub code: VulnCode,
    pub name: String,
    pub category: Category,
}

impl VulnTypeDescriptor {
    pub fn new(code: VulnCode, name: impl Into<String>, category: Category) -> Self {
        Self {
            code,
            name: name.into(),
            category,
        }
    }

    /// Negative output token a targeted scenario emits when nothing is found.
    pub fn sentinel(&self) -> String {
        format!("NO {}", self.code)
    }
}

const DEFAULT_TYPES: [(&str, &str); 10] = [
    ("RE", "Reentrancy"),
    ("IO", "Integer Overflow/Underflow"),
    ("USE", "Unchecked Send"),
    ("UD", "Unsafe Delegatecall"),
    ("TOD", "Transaction Order Dependence"),
    ("TM", "Time Manipulation"),
    ("RP", "Randomness Prediction"),
    ("TX", "Authorization through tx.origin"),
    ("USU", "Unsafe Suicide"),
    ("GL", "Gas Limitation"),
];

/// Ordered, code-unique list of vulnerability descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VulnerabilityRegistry {
    descriptors: Vec<VulnTypeDescriptor>,
}

impl VulnerabilityRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn descriptors(&self) -> &[VulnTypeDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&VulnTypeDescriptor> {
        self.descriptors.iter().find(|d| d.code.as_str() == code)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.get(code).is_some()
    }

    pub fn codes(&self) -> impl Iterator<Item = &VulnCode> {
        self.descriptors.iter().map(|d| &d.code)
    }

    /// Returns a new registry with `descriptor` appended. `self` is left untouched.
    pub fn extend(&self, descriptor: VulnTypeDescriptor) -> Result<Self, ModelError> {
        if self.contains(descriptor.code.as_str()) {
            return Err(ModelError::DuplicateCode(descriptor.code.to_string()));
        }
        let mut descriptors = self.descriptors.clone();
        descriptors.push(descriptor);
        Ok(Self { descriptors })
    }
}

/// The ten labeled-benchmark types in benchmark order.
pub fn default_registry() -> VulnerabilityRegistry {
    let descriptors = DEFAULT_TYPES
        .iter()
        .map(|(code, name)| {
            VulnTypeDescriptor::new(VulnCode::new(*code).expect("static code"), *name, Category::Specific)
        })
        .collect();
    VulnerabilityRegistry { descriptors }
}

/// Column header used when rendering tables. Gas Limitation is printed as `GS`
/// in the comparison table even though the code is `GL`.
pub fn table_alias(code: &VulnCode) -> &str {
    match code.as_str() {
        "GL" => "GS",
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    UserSupplied,
    LabeledDataset,
    RealWorldDataset,
}

impl Origin {
    pub fn is_dataset(self) -> bool {
        !matches!(self, Origin::UserSupplied)
    }
}

/// A Solidity source unit under audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    id: String,
    source: String,
    origin: Origin,
    ground_truth: Option<BTreeSet<VulnCode>>,
    token_estimate: usize,
}

impl Contract {
    pub fn user_supplied(id: impl Into<String>, source: impl Into<String>) -> Result<Self, ModelError> {
        Self::build(id.into(), source.into(), Origin::UserSupplied, None)
    }

    pub fn from_dataset(
        id: impl Into<String>,
        source: impl Into<String>,
        origin: Origin,
        ground_truth: BTreeSet<VulnCode>,
    ) -> Result<Self, ModelError> {
        let origin = if origin.is_dataset() {
            origin
        } else {
            Origin::LabeledDataset
        };
        Self::build(id.into(), source.into(), origin, Some(ground_truth))
    }

    fn build(
        id: String,
        source: String,
        origin: Origin,
        ground_truth: Option<BTreeSet<VulnCode>>,
    ) -> Result<Self, ModelError> {
        if source.trim().is_empty() {
            return Err(ModelError::EmptySource(id));
        }
        let token_estimate = estimate_tokens(&source);
        Ok(Self {
            id,
            source,
            origin,
            ground_truth,
            token_estimate,
        })
    }

    /// Same origin and labels, new identity and text. Used for segmentation.
    pub(crate) fn derive_segment(&self, id: String, source: String) -> Result<Self, ModelError> {
        Self::build(id, source, self.origin, self.ground_truth.clone())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn ground_truth(&self) -> Option<&BTreeSet<VulnCode>> {
        self.ground_truth.as_ref()
    }

    pub fn token_estimate(&self) -> usize {
        self.token_estimate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    High,
    Medium,
    Low,
    /// Also covers the "ground-level" tier of contest reports.
    Informational,
}

impl FromStr for Severity {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" | "critical" => Ok(Self::High),
            "medium" | "med" => Ok(Self::Medium),
            "low" => Ok(Self::Low),
            "informational" | "info" | "ground" | "ground-level" | "gas" => Ok(Self::Informational),
            _ => Err(ModelError::UnknownVariant {
                kind: "severity",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::High => "high",
            Severity::Medium => "medium",
            Severity::Low => "low",
            Severity::Informational => "informational",
        })
    }
}

/// Per-type decision. Evidence spans are 1-based inclusive line ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub vuln_code: VulnCode,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence_spans: Vec<(u32, u32)>,
}

impl Verdict {
    pub fn negative(code: VulnCode) -> Self {
        Self {
            vuln_code: code,
            decision: Decision::Negative,
            severity: None,
            description: None,
            evidence_spans: Vec::new(),
        }
    }

    pub fn positive(code: VulnCode, description: impl Into<String>) -> Self {
        Self {
            vuln_code: code,
            decision: Decision::Positive,
            severity: None,
            description: Some(description.into()),
            evidence_spans: Vec::new(),
        }
    }

    pub fn with_severity(mut self, severity: Option<Severity>) -> Self {
        self.severity = severity;
        self
    }

    pub fn is_positive(&self) -> bool {
        self.decision == Decision::Positive
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub vuln_code: VulnCode,
    pub severity: Severity,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Broad analysis: one conversation enumerating every suspected type.
    #[serde(rename = "BA")]
    Broad,
    /// Targeted analysis: one conversation per scenario.
    #[serde(rename = "TA")]
    Targeted,
}

impl Mode {
    pub fn short(self) -> &'static str {
        match self {
            Mode::Broad => "BA",
            Mode::Targeted => "TA",
        }
    }
}

impl FromStr for Mode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ba" | "broad" => Ok(Self::Broad),
            "ta" | "targeted" => Ok(Self::Targeted),
            _ => Err(ModelError::UnknownVariant {
                kind: "mode",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    ContractAnalysis,
    VulnerabilityIdentification,
    ComprehensiveReport,
}

impl Phase {
    pub const ORDER: [Phase; 3] = [
        Phase::ContractAnalysis,
        Phase::VulnerabilityIdentification,
        Phase::ComprehensiveReport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ContractAnalysis => "contract-analysis",
            Phase::VulnerabilityIdentification => "vulnerability-identification",
            Phase::ComprehensiveReport => "comprehensive-report",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleName {
    ProjectManager,
    Counselor,
    Auditor,
    SolidityExpert,
}

impl RoleName {
    pub const ALL: [RoleName; 4] = [
        RoleName::ProjectManager,
        RoleName::Counselor,
        RoleName::Auditor,
        RoleName::SolidityExpert,
    ];

    pub fn title(self) -> &'static str {
        match self {
            RoleName::ProjectManager => "Project Manager",
            RoleName::Counselor => "Smart Contract Counselor",
            RoleName::Auditor => "Smart Contract Auditor",
            RoleName::SolidityExpert => "Solidity Programming Expert",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoleName::ProjectManager => "project-manager",
            RoleName::Counselor => "counselor",
            RoleName::Auditor => "auditor",
            RoleName::SolidityExpert => "solidity-expert",
        }
    }
}

impl fmt::Display for RoleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which side of the cooperative pair produced a transcript entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Seat {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: RoleName,
    pub seat: Seat,
    pub text: String,
}

/// Outcome of one consensus point inside a phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// Scenario id for targeted runs, `broad` for the single broad decision.
    pub label: String,
    pub agreed: bool,
    pub rounds_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_broken_by: Option<RoleName>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub summary: String,
    pub verdicts: Vec<Verdict>,
    pub rounds_used: u32,
    pub max_rounds: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decisions: Vec<DecisionRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub transcript: Vec<Turn>,
}

/// Full result of one audit. `created_at` is the only nondeterministic field
/// and is serialized first so it can be masked by byte-level comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub created_at: DateTime<Utc>,
    pub contract_id: String,
    pub mode: Mode,
    pub model_id: String,
    pub total_requests: u32,
    pub total_rounds_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub verdicts: Vec<Verdict>,
    pub findings: Vec<Finding>,
    pub phase_records: Vec<PhaseRecord>,
}

impl AuditReport {
    pub fn positive_codes(&self) -> BTreeSet<VulnCode> {
        self.verdicts
            .iter()
            .filter(|v| v.is_positive())
            .map(|v| v.vuln_code.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingPhase {
        expected: usize,
        found: usize,
    },
    PhaseOrder {
        index: usize,
        expected: Phase,
        found: Phase,
    },
    UnknownCode(VulnCode),
    PositiveWithoutDescription(VulnCode),
    RoundsExceeded {
        phase: Phase,
        rounds_used: u32,
        max_rounds: u32,
    },
    BrokenAlternation {
        phase: Phase,
        index: usize,
    },
    EmptyFinding(VulnCode),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingPhase { expected, found } => {
                write!(f, "missing phase: expected {expected} phase records, found {found}")
            }
            Violation::PhaseOrder { index, expected, found } => {
                write!(f, "phase record {index} is {found}, expected {expected}")
            }
            Violation::UnknownCode(code) => write!(f, "positive verdict for unregistered code {code}"),
            Violation::PositiveWithoutDescription(code) => {
                write!(f, "positive verdict for {code} has no description")
            }
            Violation::RoundsExceeded {
                phase,
                rounds_used,
                max_rounds,
            } => {
                write!(f, "{phase} used {rounds_used} rounds, limit is {max_rounds}")
            }
            Violation::BrokenAlternation { phase, index } => {
                write!(
                    f,
                    "{phase} transcript breaks user/assistant alternation at entry {index}"
                )
            }
            Violation::EmptyFinding(code) => write!(f, "finding for {code} has empty description"),
        }
    }
}

/// Seat alternation check: user, assistant, user, assistant, ...
pub fn alternation_break(transcript: &[Turn]) -> Option<usize> {
    transcript.iter().enumerate().find_map(|(i, turn)| {
        let expected = if i % 2 == 0 { Seat::User } else { Seat::Assistant };
        (turn.seat != expected).then_some(i)
    })
}

/// Checks every report invariant. Violations are returned as data.
pub fn validate_report(report: &AuditReport, registry: &VulnerabilityRegistry) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();

    if report.phase_records.len() != Phase::ORDER.len() {
        violations.push(Violation::MissingPhase {
            expected: Phase::ORDER.len(),
            found: report.phase_records.len(),
        });
    }
    for (index, (record, expected)) in report.phase_records.iter().zip(Phase::ORDER).enumerate() {
        if record.phase != expected {
            violations.push(Violation::PhaseOrder {
                index,
                expected,
                found: record.phase,
            });
        }
    }
    for record in &report.phase_records {
        if record.rounds_used > record.max_rounds {
            violations.push(Violation::RoundsExceeded {
                phase: record.phase,
                rounds_used: record.rounds_used,
                max_rounds: record.max_rounds,
            });
        }
        if let Some(index) = alternation_break(&record.transcript) {
            violations.push(Violation::BrokenAlternation {
                phase: record.phase,
                index,
            });
        }
    }

    let all_verdicts = report
        .verdicts
        .iter()
        .chain(report.phase_records.iter().flat_map(|r| r.verdicts.iter()));
    for verdict in all_verdicts.filter(|v| v.is_positive()) {
        if !registry.contains(verdict.vuln_code.as_str()) {
            violations.push(Violation::UnknownCode(verdict.vuln_code.clone()));
        }
        if verdict.description.as_deref().is_none_or(|d| d.trim().is_empty()) {
            violations.push(Violation::PositiveWithoutDescription(verdict.vuln_code.clone()));
        }
    }
    for finding in &report.findings {
        if finding.description.trim().is_empty() {
            violations.push(Violation::EmptyFinding(finding.vuln_code.clone()));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
