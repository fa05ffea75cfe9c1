use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::dataset::RealWorldManifest;
use super::metrics::{classify, metrics, overall_recall, ConfusionCounts, MetricsSummary, Scalar};
use super::table::{ResultSet, TableRow};
use crate::model::{table_alias, Category, Contract, Verdict, VulnCode, VulnerabilityRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub code: VulnCode,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub contract_id: String,
    pub reason: String,
}

/// Per-type counts in registry order plus contracts that could not be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_type: Vec<TypeCounts>,
    pub excluded: Vec<Exclusion>,
}

impl Evaluation {
    pub fn empty(registry: &VulnerabilityRegistry) -> Self {
        Self {
            per_type: registry
                .codes()
                .map(|code| TypeCounts {
                    code: code.clone(),
                    counts: ConfusionCounts::default(),
                })
                .collect(),
            excluded: Vec::new(),
        }
    }

    /// Combines two partial evaluations over the same registry. Exclusions
    /// are kept sorted so the result does not depend on merge order.
    pub fn merge(mut self, other: Self) -> Self {
        for t in other.per_type {
            match self.per_type.iter_mut().find(|s| s.code == t.code) {
                Some(slot) => slot.counts = slot.counts.merge(t.counts),
                None => self.per_type.push(t),
            }
        }
        self.excluded.extend(other.excluded);
        self.excluded
            .sort_by(|a, b| (&a.contract_id, &a.reason).cmp(&(&b.contract_id, &b.reason)));
        self
    }

    pub fn counts(&self, code: &str) -> Option<ConfusionCounts> {
        self.per_type.iter().find(|t| t.code == code).map(|t| t.counts)
    }

    pub fn metrics<F: Scalar>(&self) -> Vec<(VulnCode, MetricsSummary<F>)> {
        self.per_type
            .iter()
            .map(|t| (t.code.clone(), metrics(&t.counts)))
            .collect()
    }

    pub fn overall_recall<F: Scalar>(&self) -> Option<F> {
        let all: Vec<ConfusionCounts> = self.per_type.iter().map(|t| t.counts).collect();
        overall_recall(&all)
    }

    /// Rows for the table renderer, with `GL` shown under its table alias.
    pub fn to_result_set(&self, label: impl Into<String>) -> ResultSet {
        ResultSet {
            label: label.into(),
            rows: self
                .per_type
                .iter()
                .map(|t| TableRow::new(table_alias(&t.code), t.counts))
                .collect(),
        }
    }
}

/// Scores one contract's verdicts: for every registry type, predicted means
/// a positive verdict for that type, actual means the type is labeled.
pub fn score_contract(contract: &Contract, verdicts: &[Verdict], registry: &VulnerabilityRegistry) -> Evaluation {
    let mut eval = Evaluation::empty(registry);
    let Some(truth) = contract.ground_truth() else {
        eval.excluded.push(Exclusion {
            contract_id: contract.id().to_string(),
            reason: "no ground truth".into(),
        });
        return eval;
    };
    let predicted: BTreeSet<&VulnCode> = verdicts
        .iter()
        .filter(|v| v.is_positive())
        .map(|v| &v.vuln_code)
        .collect();
    for t in &mut eval.per_type {
        t.counts
            .record(classify(predicted.contains(&t.code), truth.contains(&t.code)));
    }
    eval
}

/// Binary classification per (contract, type). A contract whose verdict
/// source fails is excluded and listed with the reason.
pub fn evaluate<'a, I, S>(contracts: I, mut verdict_source: S, registry: &VulnerabilityRegistry) -> Evaluation
where
    I: IntoIterator<Item = &'a Contract>,
    S: FnMut(&Contract) -> Result<Vec<Verdict>, String>,
{
    contracts
        .into_iter()
        .map(|c| match verdict_source(c) {
            Ok(verdicts) => score_contract(c, &verdicts, registry),
            Err(reason) => {
                let mut e = Evaluation::empty(registry);
                e.excluded.push(Exclusion {
                    contract_id: c.id().to_string(),
                    reason,
                });
                e
            }
        })
        .fold(Evaluation::empty(registry), Evaluation::merge)
}

/// Recall against audit reports, split by vulnerability class. Only TP and
/// FN are meaningful: audit reports list what exists, not what does not.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealWorldScore {
    pub specific: ConfusionCounts,
    pub complex_logic: ConfusionCounts,
    /// Findings whose file had no predictions at all.
    pub unscored_files: Vec<String>,
}

impl RealWorldScore {
    pub fn overall(&self) -> ConfusionCounts {
        self.specific.merge(self.complex_logic)
    }

    pub fn to_result_set(&self, label: impl Into<String>) -> ResultSet {
        ResultSet {
            label: label.into(),
            rows: vec![
                TableRow::new("Specific", self.specific),
                TableRow::new("Complex logic", self.complex_logic),
            ],
        }
    }
}

/// Key for predictions: (project id, file).
pub type FileKey = (String, String);

/// A finding counts as detected when the file has a positive verdict for the
/// finding's mapped code. Findings without a mapped code can only be missed.
pub fn score_realworld(
    manifest: &RealWorldManifest,
    predictions: &BTreeMap<FileKey, BTreeSet<VulnCode>>,
) -> RealWorldScore {
    let mut score = RealWorldScore::default();
    let mut unscored = BTreeSet::new();
    for (project, finding) in manifest.findings() {
        let key = (project.id.clone(), finding.file.clone());
        let predicted = predictions.get(&key);
        if predicted.is_none() {
            unscored.insert(format!("{}/{}", project.id, finding.file));
        }
        let hit = match (&finding.code, predicted) {
            (Some(code), Some(set)) => set.contains(code),
            _ => false,
        };
        let slot = match finding.class {
            Category::Specific => &mut score.specific,
            Category::ComplexLogic => &mut score.complex_logic,
        };
        slot.record(classify(hit, true));
    }
    score.unscored_files = unscored.into_iter().collect();
    score
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_registry, Origin};

    fn labeled(id: &str, truth: &[&str]) -> Contract {
        Contract::from_dataset(
            id,
            "contract C {}",
            Origin::LabeledDataset,
            truth.iter().map(|c| VulnCode::new(*c).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn failing_source_excludes_contract() {
        let reg = default_registry();
        let cs = [labeled("a", &["RE"]), labeled("b", &[])];
        let e = evaluate(
            &cs,
            |c: &Contract| if c.id() == "a" { Err("boom".into()) } else { Ok(vec![]) },
            &reg,
        );
        assert_eq!(
            e.excluded,
            vec![Exclusion {
                contract_id: "a".into(),
                reason: "boom".into()
            }]
        );
        assert_eq!(e.counts("RE"), Some(ConfusionCounts::new(0, 0, 0, 1)));
    }

    #[test]
    fn user_contracts_are_not_scored() {
        let reg = default_registry();
        let c = Contract::user_supplied("u", "contract U {}").unwrap();
        let e = score_contract(&c, &[], &reg);
        assert_eq!(e.excluded.len(), 1);
        assert!(e.per_type.iter().all(|t| t.counts.total() == 0));
    }

    #[test]
    fn realworld_matches_by_file_and_code() {
        let manifest = RealWorldManifest::parse(
            r#"
[[project]]
id = "p"
files = ["A.sol", "B.sol"]
[[project.finding]]
file = "A.sol"
class = "specific"
severity = "high"
code = "RE"
[[project.finding]]
file = "B.sol"
class = "specific"
severity = "medium"
code = "RE"
[[project.finding]]
file = "A.sol"
class = "complex-logic"
severity = "medium"
"#,
        )
        .unwrap();
        let mut preds = BTreeMap::new();
        preds.insert(
            ("p".to_string(), "A.sol".to_string()),
            BTreeSet::from([VulnCode::new("RE").unwrap()]),
        );
        let s = score_realworld(&manifest, &preds);
        assert_eq!(s.specific, ConfusionCounts::new(1, 1, 0, 0));
        assert_eq!(s.complex_logic, ConfusionCounts::new(0, 1, 0, 0));
        assert_eq!(s.unscored_files, ["p/B.sol"]);
    }
}
