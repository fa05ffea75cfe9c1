use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use smartaudit_core::eval::{
    evaluate, format_optional_percent, load_counts_csv, load_labeled, render_table, score_realworld, Evaluation,
    FileKey, RealWorldManifest, RealWorldScore, ResultSet, TableStyle,
};
use smartaudit_core::model::{default_registry, Verdict, VulnCode};
use smartaudit_core::{Contract, Mode, PipelineConfig};

use crate::audit::{audit_file, open_run_log, thread_pool, UnitOutcome};
use crate::setup::{pipeline_config, provider};
use crate::{ProviderChoice, RunArgs, Runtime};

#[derive(Serialize)]
struct LabeledResults<'a> {
    label: &'a str,
    mode: Mode,
    model_id: &'a str,
    evaluation: &'a Evaluation,
    table: &'a ResultSet,
}

#[derive(Serialize)]
struct RealWorldResults<'a> {
    label: &'a str,
    mode: Mode,
    model_id: &'a str,
    score: &'a RealWorldScore,
    table: &'a ResultSet,
}

/// Verdicts of every unit of one contract, or why the audit failed.
fn contract_verdicts(
    contract: &Contract,
    provider: &dyn smartaudit_core::gateway::ChatProvider,
    config: &PipelineConfig,
    log: &dyn smartaudit_core::engine::RunLog,
) -> Result<Vec<Verdict>, String> {
    let mut verdicts = Vec::new();
    for (unit, outcome) in audit_file(contract, provider, config, log) {
        match outcome {
            UnitOutcome::Done(report) => verdicts.extend(report.verdicts),
            UnitOutcome::Failed(_, reason) | UnitOutcome::Error(reason) => return Err(format!("{unit}: {reason}")),
        }
    }
    Ok(verdicts)
}

fn write_outputs(out: &Path, results: &impl Serialize, tables: &str) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut json = serde_json::to_string_pretty(results)?;
    json.push('\n');
    let path = out.join("results.json");
    fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    let path = out.join("tables.txt");
    fs::write(&path, tables).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn labeled(
    args: &RunArgs,
    choice: ProviderChoice,
    root: &Path,
    style: Option<TableStyle>,
    label: Option<String>,
    runtime: &Runtime,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<bool> {
    let config = pipeline_config(args, runtime)?;
    let dataset = load_labeled(root).with_context(|| format!("loading dataset {}", root.display()))?;
    for warning in &dataset.warnings {
        writeln!(err, "warning: {warning}")?;
    }
    if dataset.is_empty() {
        anyhow::bail!("dataset {} has no contracts", root.display());
    }
    let provider = provider(args, choice, runtime)?;
    let log = open_run_log(&args.out)?;

    let contracts: Vec<&Contract> = dataset.contracts().collect();
    let verdicts: BTreeMap<String, Result<Vec<Verdict>, String>> = thread_pool(args.jobs)?.install(|| {
        contracts
            .par_iter()
            .map(|c| {
                (
                    c.id().to_string(),
                    contract_verdicts(c, provider.as_ref(), &config, &log),
                )
            })
            .collect()
    });

    // scored against the dataset's own types even when a pack adds more
    let registry = default_registry();
    let evaluation = evaluate(contracts.iter().copied(), |c| verdicts[c.id()].clone(), &registry);
    let label = label.unwrap_or_else(|| format!("{} {}", config.model_id, config.mode.mode.short()));
    let set = evaluation.to_result_set(&label);
    let mut tables = render_table(std::slice::from_ref(&set), style.unwrap_or(TableStyle::ConfusionF1));
    tables.push_str(&format!(
        "\noverall recall: {}\n",
        format_optional_percent(set.overall_recall())
    ));
    out.write_all(tables.as_bytes())?;

    let results = LabeledResults {
        label: &label,
        mode: config.mode.mode,
        model_id: &config.model_id,
        evaluation: &evaluation,
        table: &set,
    };
    write_outputs(&args.out, &results, &tables)?;
    for ex in &evaluation.excluded {
        writeln!(err, "excluded {}: {}", ex.contract_id, ex.reason)?;
    }
    Ok(evaluation.excluded.is_empty())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn realworld(
    args: &RunArgs,
    choice: ProviderChoice,
    manifest_path: &Path,
    style: Option<TableStyle>,
    label: Option<String>,
    runtime: &Runtime,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<bool> {
    let config = pipeline_config(args, runtime)?;
    let manifest = RealWorldManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut files: Vec<(FileKey, std::path::PathBuf)> = Vec::new();
    for project in &manifest.projects {
        for file in &project.files {
            files.push(((project.id.clone(), file.clone()), base.join(&project.id).join(file)));
        }
    }
    if files.is_empty() {
        anyhow::bail!("manifest {} lists no files", manifest_path.display());
    }
    let provider = provider(args, choice, runtime)?;
    let log = open_run_log(&args.out)?;

    let outcomes: Vec<(FileKey, Result<BTreeSet<VulnCode>, String>)> = thread_pool(args.jobs)?.install(|| {
        files
            .par_iter()
            .map(|(key, path)| {
                let outcome = fs::read_to_string(path)
                    .map_err(|e| format!("reading {}: {e}", path.display()))
                    .and_then(|src| {
                        Contract::user_supplied(format!("{}/{}", key.0, key.1), src).map_err(|e| e.to_string())
                    })
                    .and_then(|c| contract_verdicts(&c, provider.as_ref(), &config, &log))
                    .map(|v| {
                        v.into_iter()
                            .filter(Verdict::is_positive)
                            .map(|v| v.vuln_code)
                            .collect()
                    });
                (key.clone(), outcome)
            })
            .collect()
    });

    let mut ok = true;
    let mut predictions = BTreeMap::new();
    for (key, outcome) in outcomes {
        match outcome {
            Ok(codes) => {
                predictions.insert(key, codes);
            }
            Err(e) => {
                ok = false;
                writeln!(err, "{}/{}: {e}", key.0, key.1)?;
            }
        }
    }
    let score = score_realworld(&manifest, &predictions);
    let label = label.unwrap_or_else(|| format!("{} {}", config.model_id, config.mode.mode.short()));
    let set = score.to_result_set(&label);
    let mut tables = render_table(std::slice::from_ref(&set), style.unwrap_or(TableStyle::RealworldRecall));
    let overall = score.overall();
    tables.push_str(&format!(
        "\noverall: {} of {} ({})\n",
        overall.tp,
        overall.actual_positives(),
        format_optional_percent(set.overall_recall())
    ));
    out.write_all(tables.as_bytes())?;
    let results = RealWorldResults {
        label: &label,
        mode: config.mode.mode,
        model_id: &config.model_id,
        score: &score,
        table: &set,
    };
    write_outputs(&args.out, &results, &tables)?;
    Ok(ok)
}

pub(crate) fn from_counts(path: &Path, style: Option<TableStyle>, out: &mut dyn Write) -> anyhow::Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let sets = load_counts_csv(&text)?;
    if sets.is_empty() {
        anyhow::bail!("{} has no rows", path.display());
    }
    out.write_all(render_table(&sets, style.unwrap_or(TableStyle::ConfusionF1)).as_bytes())?;
    Ok(true)
}
