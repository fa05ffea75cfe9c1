//! `{{placeholder}}` templates with a closed placeholder vocabulary.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

/// Every placeholder a template may reference.
pub const PLACEHOLDERS: &[&str] = &[
    "contract_source",
    "prior_analysis",
    "role_charter",
    "scenario_guidance",
    "sentinel",
    "code",
    "code_legend",
    "task",
    "constraints",
    "role_title",
    "counterpart_title",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}`: unknown placeholder `{{{{{name}}}}}` at byte {offset}")]
    UnknownPlaceholder {
        template: String,
        name: String,
        offset: usize,
    },
    #[error("template `{template}`: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template `{template}`: no value supplied for `{name}`")]
    MissingValue { template: String, name: String },
    #[error("template set is missing `{0}`")]
    MissingTemplate(String),
    #[error("reading template `{path}`: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut rest = text;
        let mut consumed = 0;
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| TemplateError::Unterminated {
                template: name.to_string(),
                offset: consumed + open,
            })?;
            let slot = after[..close].trim();
            let known = PLACEHOLDERS
                .iter()
                .find(|p| **p == slot)
                .ok_or_else(|| TemplateError::UnknownPlaceholder {
                    template: name.to_string(),
                    name: slot.to_string(),
                    offset: consumed + open,
                })?;
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            pieces.push(Piece::Slot(known));
            let advance = open + 2 + close + 2;
            consumed += advance;
            rest = &rest[advance..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(Self {
            name: name.to_string(),
            pieces,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(*s),
            Piece::Text(_) => None,
        })
    }

    /// Single-pass substitution: values are inserted verbatim and never re-scanned.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(slot) => {
                    let value = values.iter().find(|(k, _)| k == slot).map(|(_, v)| *v).ok_or_else(|| {
                        TemplateError::MissingValue {
                            template: self.name.clone(),
                            name: slot.to_string(),
                        }
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

pub const TEMPLATE_VERSION: &str = "v1";

const BUNDLED: &[(&str, &str)] = &[
    ("assistant", include_str!("../../templates/v1/assistant.txt")),
    ("user", include_str!("../../templates/v1/user.txt")),
    ("specified_task", include_str!("../../templates/v1/specified_task.txt")),
    (
        "contract_analysis",
        include_str!("../../templates/v1/contract_analysis.txt"),
    ),
    (
        "thought_reasoning",
        include_str!("../../templates/v1/thought_reasoning.txt"),
    ),
    (
        "buffer_reasoning",
        include_str!("../../templates/v1/buffer_reasoning.txt"),
    ),
    ("report", include_str!("../../templates/v1/report.txt")),
];

/// A complete named set of templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: HashMap<String, Template>,
}

impl TemplateSet {
    pub const REQUIRED: [&'static str; 7] = [
        "assistant",
        "user",
        "specified_task",
        "contract_analysis",
        "thought_reasoning",
        "buffer_reasoning",
        "report",
    ];

    pub fn bundled() -> Self {
        let templates = BUNDLED
            .iter()
            .map(|(name, text)| {
                let t = Template::parse(name, text).expect("bundled templates are valid");
                (name.to_string(), t)
            })
            .collect();
        Self { templates }
    }

    /// Loads `<name>.txt` for every required template from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = HashMap::new();
        for name in Self::REQUIRED {
            let path = dir.join(format!("{name}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            templates.insert(name.to_string(), Template::parse(name, &text)?);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: &str) -> Result<&Template, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::MissingTemplate(name.to_string()))
    }
}
