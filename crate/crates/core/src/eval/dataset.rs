use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    default_registry, Category, Contract, ModelError, Origin, Severity, VulnCode, VulnerabilityRegistry,
};

/// Sub-dataset holding contracts with no vulnerability.
pub const SECURE_GROUP: &str = "SECURE";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown sub-dataset directory `{name}` in {}", root.display())]
    UnknownDirectory { name: String, root: PathBuf },
    #[error("sub-dataset directory `{name}` is missing from {}", root.display())]
    MissingGroup { name: String, root: PathBuf },
    #[error("{}: not valid UTF-8", path.display())]
    NotUtf8 { path: PathBuf },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGroup {
    pub name: String,
    pub contracts: Vec<Contract>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    /// Registry order, then `SECURE`.
    pub groups: Vec<LabeledGroup>,
    /// Non-fatal problems, such as an empty sub-dataset.
    pub warnings: Vec<String>,
}

impl LabeledDataset {
    pub fn contracts(&self) -> impl Iterator<Item = &Contract> {
        self.groups.iter().flat_map(|g| g.contracts.iter())
    }

    pub fn group(&self, name: &str) -> Option<&LabeledGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.contracts.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loads the labeled benchmark layout (one directory per registry code plus
/// `SECURE`, each holding `.sol` files) using the default registry.
pub fn load_labeled(root: &Path) -> Result<LabeledDataset, DatasetError> {
    load_labeled_with(root, &default_registry())
}

pub fn load_labeled_with(root: &Path, registry: &VulnerabilityRegistry) -> Result<LabeledDataset, DatasetError> {
    let mut expected: Vec<String> = registry.codes().map(|c| c.to_string()).collect();
    expected.push(SECURE_GROUP.to_string());

    let mut present = BTreeSet::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !entry.file_type().map_err(io_err(&entry.path()))?.is_dir() || name.starts_with('.') {
            continue;
        }
        if !expected.contains(&name) {
            return Err(DatasetError::UnknownDirectory {
                name,
                root: root.to_path_buf(),
            });
        }
        present.insert(name);
    }

    let mut groups = Vec::with_capacity(expected.len());
    let mut warnings = Vec::new();
    for name in expected {
        if !present.contains(&name) {
            return Err(DatasetError::MissingGroup {
                name,
                root: root.to_path_buf(),
            });
        }
        let dir = root.join(&name);
        let truth: BTreeSet<VulnCode> = if name == SECURE_GROUP {
            BTreeSet::new()
        } else {
            BTreeSet::from([VulnCode::new(name.as_str())?])
        };
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "sol"))
            .collect();
        files.sort();
        let mut contracts = Vec::with_capacity(files.len());
        for path in files {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let source = String::from_utf8(bytes).map_err(|_| DatasetError::NotUtf8 { path: path.clone() })?;
            let file = path.file_name().unwrap_or_default().to_string_lossy();
            contracts.push(Contract::from_dataset(
                format!("{name}/{file}"),
                source,
                Origin::LabeledDataset,
                truth.clone(),
            )?);
        }
        if contracts.is_empty() {
            let msg = format!("sub-dataset {name} is empty");
            tracing::warn!("{msg}");
            warnings.push(msg);
        }
        groups.push(LabeledGroup { name, contracts });
    }
    Ok(LabeledDataset { groups, warnings })
}

/// Real-world benchmark description. TOML schema:
///
/// ```toml
/// [[project]]
/// id = "2021-05-example"
/// files = ["contracts/Vault.sol"]
///
/// [[project.finding]]
/// file = "contracts/Vault.sol"
/// class = "specific"        # or "complex-logic"
/// severity = "high"         # high | medium | low | ground
/// code = "RE"               # registry code the finding maps to, if any
/// description = "reentrancy in withdraw"
/// location = "Vault.sol:120"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealWorldManifest {
    #[serde(default, rename = "project")]
    pub projects: Vec<Project>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub files: Vec<String>,
    #[serde(default, rename = "finding")]
    pub findings: Vec<ReportedFinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedFinding {
    pub file: String,
    #[serde(with = "category_serde")]
    pub class: Category,
    #[serde(with = "severity_serde")]
    pub severity: Severity,
    #[serde(default)]
    pub code: Option<VulnCode>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub location: Option<String>,
}

mod category_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::Category;

    pub fn serialize<S: Serializer>(c: &Category, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match c {
            Category::Specific => "specific",
            Category::ComplexLogic => "complex-logic",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Category, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod severity_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::Severity;

    pub fn serialize<S: Serializer>(v: &Severity, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Severity, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl RealWorldManifest {
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let manifest: Self = toml::from_str(text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        for project in &manifest.projects {
            for finding in &project.findings {
                if !project.files.contains(&finding.file) {
                    return Err(DatasetError::Manifest(format!(
                        "project {}: finding refers to unlisted file {}",
                        project.id, finding.file
                    )));
                }
            }
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn findings(&self) -> impl Iterator<Item = (&Project, &ReportedFinding)> {
        self.projects
            .iter()
            .flat_map(|p| p.findings.iter().map(move |f| (p, f)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_ground_severity() {
        let text = r#"
[[project]]
id = "p1"
files = ["A.sol", "B.sol"]

[[project.finding]]
file = "A.sol"
class = "specific"
severity = "high"
code = "RE"
description = "reentrant withdraw"

[[project.finding]]
file = "B.sol"
class = "complex-logic"
severity = "ground"
"#;
        let m = RealWorldManifest::parse(text).unwrap();
        assert_eq!(m.projects[0].findings.len(), 2);
        assert_eq!(m.projects[0].findings[1].severity, Severity::Informational);
        assert_eq!(m.projects[0].findings[1].code, None);
        let again = RealWorldManifest::parse(&toml::to_string(&m).unwrap()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn manifest_rejects_unlisted_file() {
        let text = r#"
[[project]]
id = "p1"
files = ["A.sol"]
[[project.finding]]
file = "C.sol"
class = "specific"
severity = "low"
"#;
        assert!(matches!(RealWorldManifest::parse(text), Err(DatasetError::Manifest(_))));
    }
}
