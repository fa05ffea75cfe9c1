#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use smartaudit_cli::{run, Runtime};
use smartaudit_core::gateway::{ChatProvider, ChatRequest, ChatResponse, GatewayError, LiveConfig, ProviderKind};
use smartaudit_fixtures::{replay_store_path, OracleProvider, FIXTURE_MODEL};

pub const CREATED_AT: &str = "2024-01-01T00:00:00Z";

/// Stands in for the network: the oracle behind a request counter.
struct CountedOracle {
    oracle: OracleProvider,
    calls: Arc<AtomicUsize>,
}

impl ChatProvider for CountedOracle {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.oracle.complete(req)
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }
}

/// A runtime whose "live" provider is the fixture oracle, with counters for
/// factory invocations and requests and the last live configuration seen.
pub struct Harness {
    pub runtime: Runtime,
    pub requests: Arc<AtomicUsize>,
    pub factory_calls: Arc<AtomicUsize>,
    pub last_config: Arc<Mutex<Option<LiveConfig>>>,
}

impl Harness {
    pub fn new(env: &[(&str, &str)]) -> Self {
        let requests = Arc::new(AtomicUsize::new(0));
        let factory_calls = Arc::new(AtomicUsize::new(0));
        let last_config = Arc::new(Mutex::new(None));
        let (r, f, l) = (requests.clone(), factory_calls.clone(), last_config.clone());
        let env: BTreeMap<String, String> = env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let runtime = Runtime::new(
            env,
            Box::new(move |config: LiveConfig| {
                f.fetch_add(1, Ordering::SeqCst);
                *l.lock().unwrap() = Some(config);
                Ok(Box::new(CountedOracle {
                    oracle: OracleProvider::load(),
                    calls: r.clone(),
                }) as Box<dyn ChatProvider>)
            }),
        );
        Self {
            runtime,
            requests,
            factory_calls,
            last_config,
        }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn factory_calls(&self) -> usize {
        self.factory_calls.load(Ordering::SeqCst)
    }

    pub fn run(&self, args: &[&str]) -> Outcome {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["smartaudit"];
        argv.extend_from_slice(args);
        let code = run(argv, &self.runtime, &mut out, &mut err);
        Outcome {
            code,
            out: String::from_utf8(out).unwrap(),
            err: String::from_utf8(err).unwrap(),
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub code: u8,
    pub out: String,
    pub err: String,
}

pub fn store() -> String {
    replay_store_path().display().to_string()
}

/// Replay flags for the committed fixture store.
pub fn replay_args<'a>(store: &'a str, out: &'a str, mode: &'a str) -> Vec<&'a str> {
    vec![
        "--provider",
        "replay",
        "--store",
        store,
        "--model",
        FIXTURE_MODEL,
        "--mode",
        mode,
        "--created-at",
        CREATED_AT,
        "--out",
        out,
    ]
}

pub fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Printed F1 cells, in percent, for the rows of the published counts file
/// (zero-shot, BA, TA; each in RE IO USE UD TOD TM RP TX USU GL order).
pub const PUBLISHED_F1: [Option<f64>; 30] = [
    Some(87.0),
    Some(75.0),
    Some(70.6),
    Some(82.3),
    None,
    Some(94.7),
    Some(82.4),
    Some(94.7),
    Some(66.7),
    Some(50.0),
    Some(87.0),
    Some(90.9),
    Some(82.4),
    Some(94.7),
    Some(33.3),
    Some(100.0),
    Some(82.4),
    Some(94.7),
    Some(66.7),
    Some(66.7),
    Some(95.2),
    Some(95.2),
    Some(95.2),
    Some(94.7),
    Some(94.7),
    Some(100.0),
    Some(100.0),
    Some(100.0),
    Some(73.7),
    Some(94.7),
];

/// Compares the F1 column of a confusion-f1 table with [`PUBLISHED_F1`].
/// Returns the mismatching rows.
pub fn f1_mismatches(table: &str) -> Vec<String> {
    let rows: Vec<&str> = table.lines().skip(2).filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != PUBLISHED_F1.len() {
        return vec![format!("expected {} rows, got {}", PUBLISHED_F1.len(), rows.len())];
    }
    rows.iter()
        .zip(PUBLISHED_F1)
        .filter_map(|(line, want)| {
            let cell = line.split_whitespace().last()?;
            let ok = match want {
                Some(w) => cell
                    .trim_end_matches('%')
                    .parse::<f64>()
                    .is_ok_and(|got| (got - w).abs() <= 0.1 + 1e-9),
                None => cell == "-",
            };
            (!ok).then(|| format!("{line} (published {want:?})"))
        })
        .collect()
}
