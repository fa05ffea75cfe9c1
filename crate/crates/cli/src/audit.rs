use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use smartaudit_core::engine::{audit_units, RunLog, WriterLog};
use smartaudit_core::gateway::ChatProvider;
use smartaudit_core::report::{from_json, render_markdown, to_canonical_json};
use smartaudit_core::{run_pipeline, AuditReport, Contract, PipelineConfig, PipelineError};
use walkdir::WalkDir;

use crate::setup::{pipeline_config, provider};
use crate::{config_error, ProviderChoice, RunArgs, Runtime};

/// A source file to audit and the id its reports are filed under.
pub(crate) struct Input {
    pub id: String,
    pub path: PathBuf,
}

/// Expands files and directories into `.sol` inputs. Files keep their file
/// name as id; files found under a directory use the path relative to it.
pub(crate) fn collect_inputs(paths: &[PathBuf]) -> anyhow::Result<Vec<Input>> {
    let mut inputs = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found = Vec::new();
            for entry in WalkDir::new(path).sort_by_file_name() {
                let entry = entry.with_context(|| format!("walking {}", path.display()))?;
                let p = entry.path();
                if entry.file_type().is_file() && p.extension().is_some_and(|e| e == "sol") {
                    let rel = p.strip_prefix(path).unwrap_or(p);
                    let id = rel.iter().map(|c| c.to_string_lossy()).collect::<Vec<_>>().join("/");
                    found.push(Input {
                        id,
                        path: p.to_path_buf(),
                    });
                }
            }
            if found.is_empty() {
                return Err(config_error(format!("no .sol files under {}", path.display())));
            }
            inputs.extend(found);
        } else if path.is_file() {
            let id = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            inputs.push(Input { id, path: path.clone() });
        } else {
            return Err(config_error(format!("{} does not exist", path.display())));
        }
    }
    let mut seen = BTreeSet::new();
    for input in &inputs {
        if !seen.insert(input.id.as_str()) {
            return Err(config_error(format!("two inputs share the id `{}`", input.id)));
        }
    }
    Ok(inputs)
}

/// Report file stem: the unit id with path separators and other awkward
/// characters replaced by `_`.
pub(crate) fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub(crate) enum UnitOutcome {
    Done(AuditReport),
    /// Provider failure; the partial report is still written.
    Failed(AuditReport, String),
    Error(String),
}

/// Audits one source file, splitting it when it exceeds the budget.
/// Returns one outcome per unit, or a single error for the file.
pub(crate) fn audit_file(
    contract: &Contract,
    provider: &dyn ChatProvider,
    config: &PipelineConfig,
    log: &dyn RunLog,
) -> Vec<(String, UnitOutcome)> {
    let units = match audit_units(contract, &config.budget) {
        Ok(units) => units,
        Err(r) => {
            return vec![(
                contract.id().to_string(),
                UnitOutcome::Error(format!("token budget: {r}")),
            )]
        }
    };
    units
        .into_iter()
        .map(|unit| {
            let outcome = match run_pipeline(&unit, provider, config, log) {
                Ok(report) => UnitOutcome::Done(report),
                Err(PipelineError::Provider { partial, source }) => UnitOutcome::Failed(*partial, source.to_string()),
                Err(e) => UnitOutcome::Error(e.to_string()),
            };
            (unit.id().to_string(), outcome)
        })
        .collect()
}

/// Per input file: its units' outcomes, or why it could not be read.
type FileOutcome = (String, Result<Vec<(String, UnitOutcome)>, String>);

pub(crate) fn read_contract(input: &Input) -> Result<Contract, String> {
    let source = fs::read_to_string(&input.path).map_err(|e| format!("reading {}: {e}", input.path.display()))?;
    Contract::user_supplied(input.id.clone(), source).map_err(|e| e.to_string())
}

pub(crate) fn thread_pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker threads")
}

pub(crate) fn open_run_log(out: &Path) -> anyhow::Result<WriterLog<BufWriter<File>>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("run.log");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(WriterLog::new(BufWriter::new(file)))
}

fn write_report(out: &Path, report: &AuditReport) -> anyhow::Result<PathBuf> {
    let stem = format!(
        "{}.{}",
        file_stem(&report.contract_id),
        report.mode.short().to_ascii_lowercase()
    );
    let json = out.join(format!("{stem}.report.json"));
    fs::write(&json, to_canonical_json(report)).with_context(|| format!("writing {}", json.display()))?;
    let md = out.join(format!("{stem}.report.md"));
    fs::write(&md, render_markdown(report)).with_context(|| format!("writing {}", md.display()))?;
    Ok(json)
}

pub(crate) fn audit(
    args: &RunArgs,
    choice: ProviderChoice,
    paths: &[PathBuf],
    runtime: &Runtime,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<bool> {
    let config = pipeline_config(args, runtime)?;
    let inputs = collect_inputs(paths)?;
    let provider = provider(args, choice, runtime)?;
    let log = open_run_log(&args.out)?;

    let results: Vec<FileOutcome> = thread_pool(args.jobs)?.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                let outcome = read_contract(input).map(|c| audit_file(&c, provider.as_ref(), &config, &log));
                (input.id.clone(), outcome)
            })
            .collect()
    });

    let mut ok = true;
    for (file, outcome) in results {
        let units = match outcome {
            Ok(units) => units,
            Err(e) => {
                ok = false;
                writeln!(err, "{file}: {e}")?;
                continue;
            }
        };
        for (unit, outcome) in units {
            match outcome {
                UnitOutcome::Done(report) => {
                    let path = write_report(&args.out, &report)?;
                    let codes: Vec<String> = report.positive_codes().iter().map(|c| c.to_string()).collect();
                    let flagged = if codes.is_empty() {
                        "none".to_string()
                    } else {
                        codes.join(", ")
                    };
                    writeln!(out, "{unit}: {} {flagged} -> {}", report.mode.short(), path.display())?;
                }
                UnitOutcome::Failed(report, reason) => {
                    ok = false;
                    let path = write_report(&args.out, &report)?;
                    writeln!(err, "{unit}: {reason} (partial report {})", path.display())?;
                }
                UnitOutcome::Error(reason) => {
                    ok = false;
                    writeln!(err, "{unit}: {reason}")?;
                }
            }
        }
    }
    Ok(ok)
}

pub(crate) fn render(report: &Path, target: Option<&Path>, out: &mut dyn Write) -> anyhow::Result<bool> {
    let text = fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    let parsed = from_json(&text).with_context(|| format!("parsing {}", report.display()))?;
    let md = render_markdown(&parsed);
    match target {
        Some(path) => fs::write(path, md).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(md.as_bytes())?,
    }
    Ok(true)
}
