use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{format_optional_percent, metrics, overall_recall, ConfusionCounts};

/// One cell group: a vulnerability type (or class) and its counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub counts: ConfusionCounts,
    /// False when the tool cannot detect this type at all; rendered `-`.
    pub supported: bool,
}

impl TableRow {
    pub fn new(label: impl Into<String>, counts: ConfusionCounts) -> Self {
        Self {
            label: label.into(),
            counts,
            supported: true,
        }
    }

    pub fn unsupported(label: impl Into<String>, actual_positives: u64) -> Self {
        Self {
            label: label.into(),
            counts: ConfusionCounts::new(0, actual_positives, 0, 0),
            supported: false,
        }
    }
}

/// All rows for one tool or configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultSet {
    pub label: String,
    pub rows: Vec<TableRow>,
}

impl ResultSet {
    /// Σtp / Σ(tp + fn) across rows; unsupported rows count as all missed.
    pub fn overall_recall(&self) -> Option<f64> {
        let counts: Vec<ConfusionCounts> = self.rows.iter().map(|r| r.counts).collect();
        overall_recall(&counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableStyle {
    /// One line per tool: detected count per type, overall recall.
    PerTypeRecall,
    /// One line per (tool, type): TP, FN, FP, TN, F1.
    ConfusionF1,
    /// One line per (tool, class): TP, total, recall.
    RealworldRecall,
}

impl std::str::FromStr for TableStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-type-recall" => Ok(Self::PerTypeRecall),
            "confusion-f1" => Ok(Self::ConfusionF1),
            "realworld-recall" => Ok(Self::RealworldRecall),
            other => Err(format!(
                "unknown table style `{other}` (expected per-type-recall, confusion-f1 or realworld-recall)"
            )),
        }
    }
}

fn count_cell(row: &TableRow, value: u64) -> String {
    if row.supported {
        value.to_string()
    } else {
        "-".to_string()
    }
}

/// Renders an aligned text table. Absent metrics and unsupported types are
/// shown as `-`; percentages have one decimal, without a trailing `.0`.
pub fn render_table(results: &[ResultSet], style: TableStyle) -> String {
    let mut lines: Vec<Vec<String>> = Vec::new();
    match style {
        TableStyle::PerTypeRecall => {
            let columns: Vec<String> = results
                .first()
                .map(|r| r.rows.iter().map(|row| row.label.clone()).collect())
                .unwrap_or_default();
            let mut header = vec!["Tool".to_string()];
            header.extend(columns.iter().cloned());
            header.push("Overall".into());
            lines.push(header);
            for set in results {
                let mut line = vec![set.label.clone()];
                for column in &columns {
                    line.push(match set.rows.iter().find(|r| &r.label == column) {
                        Some(row) => count_cell(row, row.counts.tp),
                        None => "-".into(),
                    });
                }
                line.push(format_optional_percent(set.overall_recall()));
                lines.push(line);
            }
        }
        TableStyle::ConfusionF1 => {
            lines.push(
                ["Tool", "Type", "TP", "FN", "FP", "TN", "F1"]
                    .map(String::from)
                    .to_vec(),
            );
            for set in results {
                for row in &set.rows {
                    let c = row.counts;
                    let f1 = if row.supported { metrics::<f64>(&c).f1 } else { None };
                    lines.push(vec![
                        set.label.clone(),
                        row.label.clone(),
                        count_cell(row, c.tp),
                        count_cell(row, c.fn_),
                        count_cell(row, c.fp),
                        count_cell(row, c.tn),
                        format_optional_percent(f1),
                    ]);
                }
            }
        }
        TableStyle::RealworldRecall => {
            lines.push(["Tool", "Class", "TP", "Total", "Recall"].map(String::from).to_vec());
            for set in results {
                for row in &set.rows {
                    let c = row.counts;
                    let recall = if row.supported { metrics::<f64>(&c).recall } else { None };
                    lines.push(vec![
                        set.label.clone(),
                        row.label.clone(),
                        count_cell(row, c.tp),
                        c.actual_positives().to_string(),
                        format_optional_percent(recall),
                    ]);
                }
            }
        }
    }
    align(&lines)
}

fn align(lines: &[Vec<String>]) -> String {
    let columns = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|i| {
            lines
                .iter()
                .filter_map(|l| l.get(i))
                .map(|c| c.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let render = |line: &Vec<String>| {
        line.iter()
            .enumerate()
            .map(|(i, cell)| format!("{cell:<width$}", width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        out.push_str(&render(line));
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum CountsError {
    #[error("counts file: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Deserialize)]
struct CountsRecord {
    tool: String,
    #[serde(rename = "type")]
    kind: String,
    tp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    fp: u64,
    tn: u64,
    #[serde(default)]
    supported: Option<bool>,
}

/// Reads a counts CSV with header `tool,type,tp,fn,fp,tn` and an optional
/// `supported` column. Rows are grouped by tool in first-seen order.
pub fn load_counts_csv(text: &str) -> Result<Vec<ResultSet>, CountsError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut sets: Vec<ResultSet> = Vec::new();
    for record in reader.deserialize::<CountsRecord>() {
        let r = record?;
        let row = TableRow {
            label: r.kind,
            counts: ConfusionCounts::new(r.tp, r.fn_, r.fp, r.tn),
            supported: r.supported.unwrap_or(true),
        };
        match sets.iter_mut().find(|s| s.label == r.tool) {
            Some(set) => set.rows.push(row),
            None => sets.push(ResultSet {
                label: r.tool,
                rows: vec![row],
            }),
        }
    }
    Ok(sets)
}
