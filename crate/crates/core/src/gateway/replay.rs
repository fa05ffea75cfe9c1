//! Record/replay backends. The store is a text file with one record per
//! line: `<64-hex digest>\t<base64 response>`.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;

use super::chat::{canonical_digest, is_digest, ChatProvider, ChatRequest, ChatResponse, GatewayError, ProviderKind};

/// Immutable digest -> response map loaded from a store file.
#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    entries: HashMap<String, String>,
    source: PathBuf,
}

impl ReplayStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| GatewayError::Storage {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&bytes, path)
    }

    pub fn parse(bytes: &[u8], source: &Path) -> Result<Self, GatewayError> {
        let corrupt = |offset: usize, reason: &str| GatewayError::CorruptStore {
            path: source.display().to_string(),
            offset,
            reason: reason.to_string(),
        };
        let mut entries = HashMap::new();
        let mut offset = 0;
        for line in bytes.split_inclusive(|b| *b == b'\n') {
            let start = offset;
            offset += line.len();
            let body = line.strip_suffix(b"\n").unwrap_or(line);
            if body.is_empty() {
                continue;
            }
            let tab = body
                .iter()
                .position(|b| *b == b'\t')
                .ok_or_else(|| corrupt(start, "missing tab separator"))?;
            let digest = std::str::from_utf8(&body[..tab])
                .ok()
                .filter(|d| is_digest(d))
                .ok_or_else(|| corrupt(start, "digest is not 64 lowercase hex characters"))?;
            let decoded = BASE64
                .decode(&body[tab + 1..])
                .map_err(|e| corrupt(start + tab + 1, &format!("invalid base64: {e}")))?;
            let content = String::from_utf8(decoded).map_err(|_| corrupt(start + tab + 1, "response is not UTF-8"))?;
            match entries.get(digest) {
                Some(existing) if existing != &content => {
                    return Err(corrupt(start, "conflicting responses for the same digest"));
                }
                _ => {
                    entries.insert(digest.to_string(), content);
                }
            }
        }
        Ok(Self {
            entries,
            source: source.to_path_buf(),
        })
    }

    pub fn get(&self, digest: &str) -> Option<&str> {
        self.entries.get(digest).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source(&self) -> &Path {
        &self.source
    }
}

pub fn encode_record(digest: &str, content: &str) -> String {
    format!("{digest}\t{}\n", BASE64.encode(content.as_bytes()))
}

/// Serves recorded responses; never touches the network.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    store: ReplayStore,
}

impl ReplayProvider {
    pub fn new(store: ReplayStore) -> Self {
        Self { store }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        ReplayStore::load(path).map(Self::new)
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let digest = canonical_digest(req);
        match self.store.get(&digest) {
            Some(content) => Ok(ChatResponse {
                content: content.to_string(),
                request_digest: digest,
                provider: ProviderKind::Replay,
            }),
            None => {
                let preview: String = req.last_user_message().unwrap_or("").chars().take(80).collect();
                Err(GatewayError::CacheMiss { digest, preview })
            }
        }
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Replay
    }
}

struct RecorderState {
    file: File,
    known: HashSet<String>,
}

/// Wraps a provider and appends every new (digest, response) pair to a store.
/// Appends are serialized; a digest already present is not written again.
pub struct RecordingProvider<P> {
    inner: P,
    path: PathBuf,
    state: Mutex<RecorderState>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    /// Opens (or creates) the store for appending. Fails before any request is
    /// made when the path is not writable or the existing store is corrupt.
    pub fn new(inner: P, path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let storage = |source| GatewayError::Storage {
            path: path.display().to_string(),
            source,
        };
        let known = if path.exists() {
            let existing = std::fs::read(&path).map_err(storage)?;
            ReplayStore::parse(&existing, &path)?.entries.into_keys().collect()
        } else {
            HashSet::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(storage)?;
        Ok(Self {
            inner,
            path,
            state: Mutex::new(RecorderState { file, known }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self.inner.complete(req)?;
        let digest = canonical_digest(req);
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if state.known.insert(digest.clone()) {
            let record = encode_record(&digest, &response.content);
            state
                .file
                .write_all(record.as_bytes())
                .and_then(|_| state.file.flush())
                .map_err(|source| GatewayError::Storage {
                    path: self.path.display().to_string(),
                    source,
                })?;
        }
        Ok(response)
    }

    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::chat::{ChatMessage, CountingProvider, FnProvider};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::system("s"), ChatMessage::user(text)])
    }

    fn echo() -> FnProvider<impl Fn(&ChatRequest) -> Result<String, String> + Send + Sync> {
        FnProvider::new(|r: &ChatRequest| Ok(format!("echo {}", r.last_user_message().unwrap())))
    }

    #[test]
    fn replay_hit_returns_recorded_text() {
        let r = req("check TOD");
        let bytes = encode_record(&canonical_digest(&r), "NO TOD");
        let store = ReplayStore::parse(bytes.as_bytes(), Path::new("mem")).unwrap();
        let p = ReplayProvider::new(store);
        let resp = p.complete(&r).unwrap();
        assert_eq!(resp.content, "NO TOD");
        assert_eq!(resp.provider, ProviderKind::Replay);
    }

    #[test]
    fn replay_miss_names_digest_and_preview() {
        let p = ReplayProvider::new(ReplayStore::default());
        let long = "y".repeat(200);
        let err = p.complete(&req(&long)).unwrap_err();
        match err {
            GatewayError::CacheMiss { digest, preview } => {
                assert_eq!(digest, canonical_digest(&req(&long)));
                assert_eq!(preview.len(), 80);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn corrupt_store_reports_offset() {
        let good = encode_record(&"a".repeat(64), "fine");
        let bytes = format!("{good}not-a-record\n");
        let err = ReplayStore::parse(bytes.as_bytes(), Path::new("s.rec")).unwrap_err();
        match err {
            GatewayError::CorruptStore { offset, .. } => assert_eq!(offset, good.len()),
            other => panic!("unexpected {other}"),
        }
        let bad_b64 = format!("{}\t!!!\n", "b".repeat(64));
        assert!(matches!(
            ReplayStore::parse(bad_b64.as_bytes(), Path::new("s")),
            Err(GatewayError::CorruptStore { offset: 65, .. })
        ));
    }

    #[test]
    fn record_then_replay_without_live_calls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.rec");
        let live = CountingProvider::new(echo());
        let recorder = RecordingProvider::new(&live, &path).unwrap();
        recorder.complete(&req("one")).unwrap();
        recorder.complete(&req("two")).unwrap();
        recorder.complete(&req("one")).unwrap();
        assert_eq!(live.calls(), 3);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2, "duplicate request stored once");

        // re-opening the recorder keeps it idempotent across runs
        let again = RecordingProvider::new(&live, &path).unwrap();
        again.complete(&req("two")).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);

        let replay = CountingProvider::new(ReplayProvider::open(&path).unwrap());
        assert_eq!(replay.complete(&req("one")).unwrap().content, "echo one");
        assert_eq!(replay.complete(&req("two")).unwrap().content, "echo two");
        assert_eq!(live.calls(), 4);
    }

    #[test]
    fn recorder_fails_early_on_unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing-dir").join("x.rec");
        assert!(matches!(
            RecordingProvider::new(echo(), path),
            Err(GatewayError::Storage { .. })
        ));
    }
}
