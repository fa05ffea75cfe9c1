//! Consensus always terminates within the round bound, and the provider call
//! count never exceeds the closed-form maximum.

use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use proptest::prelude::*;
use smartaudit_core::engine::{max_provider_calls, NullLog};
use smartaudit_core::gateway::{CountingProvider, FnProvider};
use smartaudit_core::model::{default_registry, Decision, Mode, RoleName, VulnCode};
use smartaudit_core::{run_pipeline, Contract, PipelineConfig, PipelineError};
use smartaudit_fixtures::disagreeing_provider;

const CODES: [&str; 10] = ["RE", "IO", "USE", "UD", "TOD", "TM", "RP", "TX", "USU", "GL"];

fn contract() -> Contract {
    Contract::user_supplied(
        "Vault.sol",
        "pragma solidity ^0.8.0;\ncontract Vault {\n    mapping(address => uint) b;\n    function w() external { b[msg.sender] = 0; }\n}\n",
    )
    .unwrap()
}

fn config(mode: Mode, rounds: u32, filter: Option<BTreeSet<VulnCode>>) -> PipelineConfig {
    let mut c = PipelineConfig::new("scripted", mode);
    c.mode.max_rounds = rounds;
    c.mode.scenario_filter = filter;
    c
}

fn mode_strategy() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Broad), Just(Mode::Targeted)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn always_disagreeing_agents_hit_the_bound(
        mode in mode_strategy(),
        rounds in 1u32..=5,
        flags in proptest::collection::vec(any::<bool>(), 10),
        ta_positive in any::<bool>(),
        selected in proptest::collection::vec(any::<bool>(), 10),
    ) {
        let auditor_flags: Vec<String> =
            CODES.iter().zip(&flags).filter(|(_, f)| **f).map(|(c, _)| c.to_string()).collect();
        let mut filter: BTreeSet<VulnCode> =
            CODES.iter().zip(&selected).filter(|(_, s)| **s).map(|(c, _)| VulnCode::new(*c).unwrap()).collect();
        if filter.is_empty() {
            filter.insert(VulnCode::new("TOD").unwrap());
        }
        let scenarios = match mode { Mode::Broad => 0, Mode::Targeted => filter.len() };
        let cfg = config(mode, rounds, (mode == Mode::Targeted).then_some(filter));

        let provider = CountingProvider::new(disagreeing_provider(auditor_flags.clone(), ta_positive));
        let report = run_pipeline(&contract(), &provider, &cfg, &NullLog).unwrap();

        prop_assert_eq!(provider.calls() as u64, max_provider_calls(mode, scenarios, rounds));
        prop_assert_eq!(report.total_requests as usize, provider.calls());

        let analysis = &report.phase_records[0].decisions[0];
        prop_assert!(!analysis.agreed);
        prop_assert_eq!(analysis.rounds_used, rounds);
        prop_assert_eq!(analysis.tie_broken_by, Some(RoleName::Counselor));

        let identification = &report.phase_records[1];
        prop_assert_eq!(identification.decisions.len(), scenarios.max(1));
        for d in &identification.decisions {
            prop_assert!(!d.agreed);
            prop_assert_eq!(d.rounds_used, rounds);
            prop_assert_eq!(d.tie_broken_by, Some(RoleName::Auditor));
        }

        match mode {
            Mode::Broad => {
                let positives: Vec<String> = report.positive_codes().iter().map(|c| c.to_string()).collect();
                let mut expected = auditor_flags.clone();
                expected.sort();
                prop_assert_eq!(positives, expected);
            }
            Mode::Targeted => {
                let want = if ta_positive { Decision::Positive } else { Decision::Negative };
                prop_assert!(report.verdicts.iter().all(|v| v.decision == want));
                prop_assert_eq!(report.verdicts.len(), scenarios);
            }
        }
    }

    #[test]
    fn arbitrary_scripted_agents_stay_within_bound(
        mode in mode_strategy(),
        rounds in 1u32..=4,
        seed in any::<u64>(),
    ) {
        let pool = [
            "CONSENSUS: AGREED",
            "",
            "NO VULNERABILITIES",
            "VULN: RE | high | reentrant",
            "VULN: TOD | low | ordering",
            "NO RE\nNO TOD\nNO IO",
            "I am not sure.",
            "VULN: ZZZ | high | unknown code",
        ];
        let provider = CountingProvider::new(FnProvider::new(move |req: &smartaudit_core::gateway::ChatRequest| {
            let mut h = std::collections::hash_map::DefaultHasher::new();
            seed.hash(&mut h);
            req.messages.len().hash(&mut h);
            req.messages[0].content.len().hash(&mut h);
            Ok(pool[(h.finish() % pool.len() as u64) as usize].to_string())
        }));
        let cfg = config(mode, rounds, None);
        let scenarios = match mode { Mode::Broad => 0, Mode::Targeted => cfg.scenarios.len() };
        let outcome = run_pipeline(&contract(), &provider, &cfg, &NullLog);
        prop_assert!(provider.calls() as u64 <= max_provider_calls(mode, scenarios, rounds));
        match outcome {
            Ok(report) => {
                prop_assert!(report.phase_records.iter().all(|p| p.rounds_used <= p.max_rounds));
                let registry = default_registry();
                prop_assert!(report.verdicts.iter().all(|v| registry.contains(v.vuln_code.as_str())));
            }
            Err(PipelineError::InvalidReport(v)) => prop_assert!(false, "invalid report: {:?}", v),
            Err(e) => prop_assert!(false, "unexpected error: {}", e),
        }
    }
}

#[test]
fn closed_form_examples() {
    assert_eq!(max_provider_calls(Mode::Broad, 0, 3), 18);
    assert_eq!(max_provider_calls(Mode::Targeted, 10, 3), 7 + 80 + 2);
    assert_eq!(max_provider_calls(Mode::Broad, 0, 1), 10);
}

#[test]
fn provider_failure_keeps_completed_phases() {
    let provider = FnProvider::new(|req: &smartaudit_core::gateway::ChatRequest| {
        if req.messages[0].content.contains("(broad analysis)") {
            Err("backend unavailable".to_string())
        } else {
            Ok("CONSENSUS: AGREED".to_string())
        }
    });
    let err = run_pipeline(&contract(), &provider, &config(Mode::Broad, 3, None), &NullLog).unwrap_err();
    match err {
        PipelineError::Provider { partial, .. } => {
            assert_eq!(partial.phase_records.len(), 1);
            assert!(partial.failure.as_deref().unwrap().contains("backend unavailable"));
            assert_eq!(partial.total_requests, 3 + 1);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn over_budget_contract_makes_no_calls() {
    let provider = CountingProvider::new(FnProvider::new(|_r: &smartaudit_core::gateway::ChatRequest| {
        Ok(String::new())
    }));
    let big = Contract::user_supplied("Big.sol", format!("contract Big {{ {} }}", "x".repeat(13_000))).unwrap();
    let err = run_pipeline(&big, &provider, &config(Mode::Broad, 3, None), &NullLog).unwrap_err();
    assert!(matches!(err, PipelineError::Budget(_)));
    assert_eq!(provider.calls(), 0);
}
