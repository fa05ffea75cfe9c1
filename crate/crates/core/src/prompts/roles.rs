use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Phase, RoleName};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleProfile {
    pub role: RoleName,
    pub charter: String,
    pub allowed_phases: BTreeSet<Phase>,
}

impl RoleProfile {
    /// The stock charter for each of the four audit roles.
    pub fn standard(role: RoleName) -> Self {
        let (charter, phases): (&str, &[Phase]) = match role {
            RoleName::ProjectManager => (
                "Set the primary goal of the audit for the team. Plan how the contract's purpose and \
                 structure will be assessed, break that work into concrete steps, and keep the \
                 discussion focused on the objective.",
                &[Phase::ContractAnalysis],
            ),
            RoleName::Counselor => (
                "Review the team's discussion, summarize the findings accurately and without adding \
                 claims of your own, and hand a clear phase report to the next step of the audit.",
                &Phase::ORDER,
            ),
            RoleName::Auditor => (
                "Analyze the contract for security weaknesses. Trace how state and funds move through \
                 every externally reachable function, justify each suspected vulnerability with the \
                 code that causes it, and make the final determination on each vulnerability \
                 classification.",
                &Phase::ORDER,
            ),
            RoleName::SolidityExpert => (
                "Provide detailed code-level analysis of the Solidity source: language semantics, \
                 compiler-version behavior, call and storage patterns. Re-evaluate the analysis you \
                 are given from a fresh perspective and correct any classification the code does not \
                 support.",
                &[Phase::VulnerabilityIdentification, Phase::ComprehensiveReport],
            ),
        };
        Self {
            role,
            charter: charter.to_string(),
            allowed_phases: phases.iter().copied().collect(),
        }
    }

    pub fn title(&self) -> &'static str {
        self.role.title()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_role_has_a_profile() {
        for role in RoleName::ALL {
            let p = RoleProfile::standard(role);
            assert!(!p.charter.is_empty());
            assert!(!p.allowed_phases.is_empty());
        }
        assert!(RoleProfile::standard(RoleName::Auditor)
            .allowed_phases
            .contains(&Phase::VulnerabilityIdentification));
    }
}
