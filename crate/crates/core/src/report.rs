//! Report serialization. The canonical form is pretty-printed JSON with the
//! struct field order, `created_at` first, LF line endings and a final
//! newline.

use std::fmt::Write as _;

use crate::model::{AuditReport, Phase};

pub const CREATED_AT_MASK: &str = "<masked>";

pub fn to_canonical_json(report: &AuditReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("audit reports always serialize");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<AuditReport, serde_json::Error> {
    serde_json::from_str(text)
}

/// Replaces the value of the top-level `created_at` line so two runs can be
/// compared byte for byte.
pub fn mask_created_at(canonical: &str) -> String {
    canonical
        .lines()
        .map(|line| {
            if line.starts_with("  \"created_at\": ") {
                format!("  \"created_at\": \"{CREATED_AT_MASK}\",")
            } else {
                line.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Human-readable rendering.
pub fn render_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Audit report: {}\n", report.contract_id);
    let _ = writeln!(out, "- Mode: {}", report.mode);
    let _ = writeln!(out, "- Model: {}", report.model_id);
    let _ = writeln!(out, "- Created: {}", report.created_at.to_rfc3339());
    let _ = writeln!(out, "- Provider requests: {}", report.total_requests);
    let _ = writeln!(out, "- Consensus rounds used: {}", report.total_rounds_used);
    if let Some(failure) = &report.failure {
        let _ = writeln!(out, "- Failure: {failure}");
    }

    let _ = writeln!(out, "\n## Findings\n");
    if report.findings.is_empty() {
        let _ = writeln!(out, "No vulnerabilities identified.");
    } else {
        let _ = writeln!(out, "| Code | Severity | Description |");
        let _ = writeln!(out, "|------|----------|-------------|");
        for f in &report.findings {
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                f.vuln_code,
                f.severity,
                f.description.replace('|', "\\|")
            );
        }
    }

    let _ = writeln!(out, "\n## Verdicts\n");
    for v in &report.verdicts {
        let _ = writeln!(out, "- {}: {:?}", v.vuln_code, v.decision);
    }

    for record in &report.phase_records {
        let _ = writeln!(out, "\n## {}\n", phase_title(record.phase));
        let _ = writeln!(out, "Rounds used: {} of {}\n", record.rounds_used, record.max_rounds);
        for d in &record.decisions {
            let outcome = if d.agreed {
                "agreed".to_string()
            } else {
                format!(
                    "no agreement, decided by {}",
                    d.tie_broken_by.map_or("-", |r| r.title())
                )
            };
            let _ = writeln!(out, "- {}: {} after {} round(s)", d.label, outcome, d.rounds_used);
        }
        if !record.decisions.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "{}", record.summary.trim());
        for note in &record.notes {
            let _ = writeln!(out, "\n> {note}");
        }
    }
    out
}

fn phase_title(phase: Phase) -> &'static str {
    match phase {
        Phase::ContractAnalysis => "Contract analysis",
        Phase::VulnerabilityIdentification => "Vulnerability identification",
        Phase::ComprehensiveReport => "Comprehensive report",
    }
}
