use std::fs;

use smartaudit_core::eval::{load_labeled, DatasetError, SECURE_GROUP};
use smartaudit_fixtures::labeled_root;

const GROUPS: [&str; 11] = ["RE", "IO", "USE", "UD", "TOD", "TM", "RP", "TX", "USU", "GL", "SECURE"];

/// Every group directory with one trivial contract, except those in `empty`.
fn skeleton(empty: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for g in GROUPS {
        fs::create_dir(dir.path().join(g)).unwrap();
        if !empty.contains(&g) {
            fs::write(dir.path().join(g).join("C.sol"), "contract C {}\n").unwrap();
        }
    }
    dir
}

#[test]
fn fixture_tree_groups_and_truth() {
    let data = load_labeled(&labeled_root()).unwrap();
    assert_eq!(data.groups.len(), 11);
    assert_eq!(data.len(), 12);
    assert!(data.warnings.is_empty());

    for group in &data.groups {
        let expected = if group.name == SECURE_GROUP { 2 } else { 1 };
        assert_eq!(group.contracts.len(), expected, "{}", group.name);
        for c in &group.contracts {
            let truth: Vec<&str> = c.ground_truth().unwrap().iter().map(|v| v.as_str()).collect();
            if group.name == SECURE_GROUP {
                assert!(truth.is_empty(), "{}", c.id());
            } else {
                assert_eq!(truth, [group.name.as_str()], "{}", c.id());
            }
            assert!(c.id().starts_with(&format!("{}/", group.name)));
        }
    }
    let re = data.group("RE").unwrap();
    assert_eq!(re.contracts[0].id(), "RE/EtherBank.sol");
}

#[test]
fn unknown_directory_is_rejected() {
    let dir = skeleton(&[]);
    fs::create_dir(dir.path().join("FOO")).unwrap();
    fs::write(dir.path().join("FOO/B.sol"), "contract B {}\n").unwrap();
    match load_labeled(dir.path()) {
        Err(DatasetError::UnknownDirectory { name, .. }) => assert_eq!(name, "FOO"),
        other => panic!("expected UnknownDirectory, got {other:?}"),
    }
}

#[test]
fn missing_group_is_rejected() {
    let dir = skeleton(&[]);
    fs::remove_dir_all(dir.path().join("TOD")).unwrap();
    assert!(matches!(load_labeled(dir.path()), Err(DatasetError::MissingGroup { name, .. }) if name == "TOD"));
}

#[test]
fn hidden_entries_and_loose_files_are_skipped() {
    let dir = skeleton(&[]);
    fs::create_dir(dir.path().join(".git")).unwrap();
    fs::write(dir.path().join("README.md"), "notes").unwrap();
    let data = load_labeled(dir.path()).unwrap();
    assert_eq!(data.len(), 11);
}

#[test]
fn empty_group_warns() {
    let dir = skeleton(&["GL"]);
    let data = load_labeled(dir.path()).unwrap();
    assert_eq!(data.len(), 10);
    assert_eq!(data.warnings.len(), 1);
    assert!(data.warnings[0].contains("GL"));
}
