//! The committed replay store must match what the oracle produces today.
//! Run with `REGENERATE_FIXTURES=1` after changing prompts or fixtures.

use std::fs;

use smartaudit_core::gateway::{RecordingProvider, ReplayProvider};
use smartaudit_fixtures::{replay_store_path, run_fixture_suite, OracleProvider};

#[test]
fn committed_store_is_current() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = dir.path().join("fixtures.rec");
    let recorder = RecordingProvider::new(OracleProvider::load(), &fresh).unwrap();
    let recorded = run_fixture_suite(&recorder);
    drop(recorder);
    let fresh_bytes = fs::read(&fresh).unwrap();

    if std::env::var_os("REGENERATE_FIXTURES").is_some() {
        fs::write(replay_store_path(), &fresh_bytes).unwrap();
    }
    let committed = fs::read(replay_store_path()).expect("replay store committed; run with REGENERATE_FIXTURES=1");
    assert!(
        committed == fresh_bytes,
        "replay store is stale; rerun with REGENERATE_FIXTURES=1"
    );

    let replayed = run_fixture_suite(&ReplayProvider::open(replay_store_path()).unwrap());
    assert_eq!(recorded, replayed);
}
