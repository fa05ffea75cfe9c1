use std::fmt;
use std::io::Write;
use std::sync::Mutex;

use crate::model::{Phase, RoleName, Seat};

/// One provider call, as written to the run log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallLogEntry {
    pub contract_id: String,
    pub phase: Phase,
    pub speaker: RoleName,
    pub counterpart: RoleName,
    pub seat: Seat,
    pub round: u32,
    pub digest: String,
    pub latency_ms: u64,
    pub ok: bool,
}

impl fmt::Display for CallLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seat = match self.seat {
            Seat::User => "user",
            Seat::Assistant => "assistant",
        };
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}ms\t{}",
            self.contract_id,
            self.phase,
            self.speaker,
            self.counterpart,
            seat,
            self.round,
            self.digest,
            self.latency_ms,
            if self.ok { "ok" } else { "error" }
        )
    }
}

pub trait RunLog: Send + Sync {
    fn record(&self, entry: &CallLogEntry);
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullLog;

impl RunLog for NullLog {
    fn record(&self, _entry: &CallLogEntry) {}
}

#[derive(Debug, Default)]
pub struct MemoryLog {
    entries: Mutex<Vec<CallLogEntry>>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> Vec<CallLogEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl RunLog for MemoryLog {
    fn record(&self, entry: &CallLogEntry) {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(entry.clone());
    }
}

/// Writes one tab-separated line per call. Write errors are logged and
/// otherwise ignored; the run log is diagnostic.
pub struct WriterLog<W> {
    out: Mutex<W>,
}

impl<W: Write + Send> WriterLog<W> {
    pub fn new(out: W) -> Self {
        Self { out: Mutex::new(out) }
    }
}

impl<W: Write + Send> RunLog for WriterLog<W> {
    fn record(&self, entry: &CallLogEntry) {
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(err) = writeln!(out, "{entry}").and_then(|_| out.flush()) {
            tracing::warn!(%err, "failed to write run log entry");
        }
    }
}
