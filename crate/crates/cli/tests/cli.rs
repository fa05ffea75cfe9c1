mod common;

use std::collections::BTreeMap;
use std::fs;

use common::{f1_mismatches, path_str, replay_args, store, Harness, CREATED_AT};
use smartaudit_core::eval::{load_counts_csv, ConfusionCounts};
use smartaudit_core::report::{from_json, mask_created_at, render_markdown};
use smartaudit_fixtures::{labeled_root, published_counts_path, tally_path, FIXTURE_MODEL};

fn fixture(rel: &str) -> String {
    path_str(&labeled_root().join(rel))
}

#[test]
fn targeted_audit_over_replay_writes_reports() {
    let h = Harness::new(&[]);
    let dir = tempfile::tempdir().unwrap();
    let (store, out) = (store(), path_str(dir.path()));
    let mut args = vec!["audit"];
    args.extend(replay_args(&store, &out, "ta"));
    let target = fixture("RE/EtherBank.sol");
    args.push(&target);
    let r = h.run(&args);
    assert_eq!(r.code, 0, "{r:?}");
    assert!(r.out.contains("EtherBank.sol: TA RE"), "{}", r.out);

    let json = fs::read_to_string(dir.path().join("EtherBank.sol.ta.report.json")).unwrap();
    let report = from_json(&json).unwrap();
    assert_eq!(report.model_id, FIXTURE_MODEL);
    assert_eq!(
        report.created_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        CREATED_AT
    );
    let md = fs::read_to_string(dir.path().join("EtherBank.sol.ta.report.md")).unwrap();
    assert_eq!(md, render_markdown(&report));
    assert!(fs::read_to_string(dir.path().join("run.log")).unwrap().lines().count() > 0);
    assert_eq!((h.factory_calls(), h.requests()), (0, 0));
}

#[test]
fn live_without_key_is_a_config_error() {
    let h = Harness::new(&[]);
    let dir = tempfile::tempdir().unwrap();
    let target = fixture("RE/EtherBank.sol");
    let out = path_str(dir.path());
    let r = h.run(&["audit", "--provider", "live", "--out", &out, &target]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("LLM_API_KEY"), "{}", r.err);
    assert_eq!((h.factory_calls(), h.requests()), (0, 0));

    let r = h.run(&[
        "record",
        "--store",
        &path_str(&dir.path().join("s.rec")),
        "--out",
        &out,
        &target,
    ]);
    assert_eq!(r.code, 2);
    assert_eq!(h.factory_calls(), 0);
    assert!(!dir.path().join("s.rec").exists());
}

#[test]
fn over_budget_monolith_is_reported_with_numbers() {
    let h = Harness::new(&[]);
    let dir = tempfile::tempdir().unwrap();
    let big = dir.path().join("Big.sol");
    fs::write(&big, format!("contract Big {{\n// {}\n}}\n", "x".repeat(12_100))).unwrap();
    let (store, out) = (store(), path_str(&dir.path().join("out")));
    let mut args = vec!["audit"];
    args.extend(replay_args(&store, &out, "ba"));
    let big = path_str(&big);
    args.push(&big);
    let r = h.run(&args);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("Big.sol"), "{}", r.err);
    assert!(
        r.err.contains("3031 tokens") && r.err.contains("allowance is 3000"),
        "{}",
        r.err
    );
}

#[test]
fn record_then_replay_is_identical_and_rerecording_is_idempotent() {
    let h = Harness::new(&[("LLM_API_KEY", "sk-test")]);
    let dir = tempfile::tempdir().unwrap();
    let rec = path_str(&dir.path().join("new.rec"));
    let (first, second, third) = (
        path_str(&dir.path().join("recorded")),
        path_str(&dir.path().join("replayed")),
        path_str(&dir.path().join("again")),
    );
    let targets = [fixture("IO/RewardToken.sol"), fixture("SECURE/Timelock.sol")];
    let common = ["--model", FIXTURE_MODEL, "--mode", "ta", "--store", &rec];

    let mut args = vec!["record", "--out", &first];
    args.extend(common);
    args.extend(targets.iter().map(String::as_str));
    let r = h.run(&args);
    assert_eq!(r.code, 0, "{r:?}");
    let recorded_calls = h.requests();
    assert!(recorded_calls > 0);
    let store_bytes = fs::read(&rec).unwrap();

    let mut args = vec!["audit", "--provider", "replay", "--out", &second];
    args.extend(common);
    args.extend(targets.iter().map(String::as_str));
    assert_eq!(h.run(&args).code, 0);
    assert_eq!(h.requests(), recorded_calls);
    for name in ["RewardToken.sol.ta.report.json", "Timelock.sol.ta.report.json"] {
        let a = fs::read_to_string(dir.path().join("recorded").join(name)).unwrap();
        let b = fs::read_to_string(dir.path().join("replayed").join(name)).unwrap();
        assert_eq!(mask_created_at(&a), mask_created_at(&b), "{name}");
    }

    let mut args = vec!["record", "--out", &third];
    args.extend(common);
    args.extend(targets.iter().map(String::as_str));
    assert_eq!(h.run(&args).code, 0);
    assert_eq!(fs::read(&rec).unwrap(), store_bytes);
}

#[test]
fn unwritable_store_fails_before_any_request() {
    let h = Harness::new(&[("LLM_API_KEY", "sk-test")]);
    let dir = tempfile::tempdir().unwrap();
    // a directory cannot be opened for appending
    let store = path_str(dir.path());
    let out = path_str(&dir.path().join("out"));
    let target = fixture("RE/EtherBank.sol");
    let r = h.run(&["record", "--store", &store, "--out", &out, &target]);
    assert_eq!(r.code, 2, "{r:?}");
    assert_eq!(h.requests(), 0);
}

#[test]
fn bench_over_fixtures_matches_the_tally() {
    let h = Harness::new(&[]);
    let tally = load_counts_csv(&fs::read_to_string(tally_path()).unwrap()).unwrap();
    let root = path_str(&labeled_root());
    let store = store();
    for (mode, tool) in [("ba", "BA"), ("ta", "TA")] {
        let dir = tempfile::tempdir().unwrap();
        let out = path_str(dir.path());
        let mut args = vec!["bench", &root];
        args.extend(replay_args(&store, &out, mode));
        let r = h.run(&args);
        assert_eq!(r.code, 0, "{r:?}");
        assert!(r.out.contains("overall recall"));

        let results: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("results.json")).unwrap()).unwrap();
        let got: BTreeMap<String, ConfusionCounts> = results["evaluation"]["per_type"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| {
                (
                    t["code"].as_str().unwrap().to_string(),
                    serde_json::from_value(t["counts"].clone()).unwrap(),
                )
            })
            .collect();
        let want: BTreeMap<String, ConfusionCounts> = tally
            .iter()
            .find(|s| s.label == tool)
            .unwrap()
            .rows
            .iter()
            .map(|r| (r.label.clone(), r.counts))
            .collect();
        assert_eq!(got, want, "{tool}");
        assert_eq!(fs::read_to_string(dir.path().join("tables.txt")).unwrap(), r.out);
    }
    assert_eq!(h.factory_calls(), 0);
}

#[test]
fn bench_from_counts_prints_published_f1() {
    let h = Harness::new(&[]);
    let csv = path_str(&published_counts_path());
    let r = h.run(&["bench", "--from-counts", &csv]);
    assert_eq!(r.code, 0, "{r:?}");
    assert_eq!(f1_mismatches(&r.out), Vec::<String>::new());
}

#[test]
fn bench_on_empty_dataset_fails() {
    let h = Harness::new(&[]);
    let dir = tempfile::tempdir().unwrap();
    let root = path_str(dir.path());
    let store = store();
    let out = path_str(&dir.path().join("out"));
    let mut args = vec!["bench", &root];
    args.extend(replay_args(&store, &out, "ba"));
    let r = h.run(&args);
    assert_ne!(r.code, 0);
    assert!(!r.err.is_empty());
}

#[test]
fn realworld_bench_scores_findings_by_class() {
    let h = Harness::new(&[]);
    let dir = tempfile::tempdir().unwrap();
    let project = dir.path().join("2023-demo");
    fs::create_dir(&project).unwrap();
    fs::copy(labeled_root().join("RE/EtherBank.sol"), project.join("Bank.sol")).unwrap();
    fs::copy(labeled_root().join("RP/CoinFlip.sol"), project.join("Flip.sol")).unwrap();
    let manifest = dir.path().join("manifest.toml");
    fs::write(
        &manifest,
        r#"
[[project]]
id = "2023-demo"
files = ["Bank.sol", "Flip.sol"]

[[project.finding]]
file = "Bank.sol"
class = "specific"
severity = "high"
code = "RE"
description = "withdraw reenters"

[[project.finding]]
file = "Bank.sol"
class = "specific"
severity = "medium"
code = "TOD"

[[project.finding]]
file = "Flip.sol"
class = "complex-logic"
severity = "medium"
description = "payout math ignores fees"

[[project.finding]]
file = "Flip.sol"
class = "specific"
severity = "ground"
code = "RP"
"#,
    )
    .unwrap();
    let (store, out, manifest) = (store(), path_str(&dir.path().join("out")), path_str(&manifest));
    let mut args = vec!["bench", "--realworld", &manifest];
    args.extend(replay_args(&store, &out, "ta"));
    let r = h.run(&args);
    assert_eq!(r.code, 0, "{r:?}");
    assert!(r.out.contains("overall: 2 of 4 (50%)"), "{}", r.out);
    let specific = r.out.lines().find(|l| l.contains("Specific")).unwrap();
    assert!(specific.ends_with("66.7%"), "{specific}");
}

#[test]
fn parallel_jobs_give_the_same_reports() {
    let h = Harness::new(&[]);
    let root = path_str(&labeled_root());
    let store = store();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, jobs) in dirs.iter().zip(["1", "4"]) {
        let out = path_str(dir.path());
        let mut args = vec!["audit", "--jobs", jobs];
        args.extend(replay_args(&store, &out, "ba"));
        args.push(&root);
        assert_eq!(h.run(&args).code, 0);
    }
    let mut names: Vec<_> = fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".json"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 12);
    for name in names {
        let a = fs::read(dirs[0].path().join(&name)).unwrap();
        let b = fs::read(dirs[1].path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
}

#[test]
fn report_render_round_trips() {
    let h = Harness::new(&[]);
    let dir = tempfile::tempdir().unwrap();
    let (store, out) = (store(), path_str(dir.path()));
    let mut args = vec!["audit"];
    args.extend(replay_args(&store, &out, "ba"));
    let target = fixture("TX/OwnedVault.sol");
    args.push(&target);
    assert_eq!(h.run(&args).code, 0);
    let json = path_str(&dir.path().join("OwnedVault.sol.ba.report.json"));
    let r = h.run(&["report", "render", &json]);
    assert_eq!(r.code, 0);
    assert_eq!(
        r.out,
        fs::read_to_string(dir.path().join("OwnedVault.sol.ba.report.md")).unwrap()
    );

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{}").unwrap();
    assert_eq!(h.run(&["report", "render", &path_str(&bad)]).code, 1);
}

#[test]
fn configuration_errors_exit_with_two() {
    let h = Harness::new(&[]);
    let target = fixture("RE/EtherBank.sol");
    let store = store();
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    let cases: Vec<Vec<&str>> = vec![
        vec!["audit", "--mode", "xx", &target],
        vec!["audit", "--provider", "replay", &target],
        vec![
            "audit",
            "--provider",
            "replay",
            "--store",
            &store,
            "--scenarios",
            "RE",
            &target,
        ],
        vec![
            "audit",
            "--provider",
            "replay",
            "--store",
            &store,
            "--mode",
            "ta",
            "--scenarios",
            "ZZZ",
            &target,
        ],
        vec![
            "audit",
            "--provider",
            "replay",
            "--store",
            &store,
            "--max-rounds",
            "0",
            &target,
        ],
        vec![
            "audit",
            "--provider",
            "replay",
            "--store",
            &store,
            "--reserve",
            "5000",
            &target,
        ],
        vec![
            "audit",
            "--provider",
            "replay",
            "--store",
            &store,
            "--created-at",
            "yesterday",
            &target,
        ],
        vec!["bench", "--out", &out],
    ];
    for args in cases {
        let r = h.run(&args);
        assert_eq!(r.code, 2, "{args:?}: {r:?}");
    }
    assert_eq!(h.run(&["--help"]).code, 0);
}

#[test]
fn endpoint_comes_from_config_file_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smartaudit.toml");
    fs::write(
        &cfg,
        "[live]\nbase_url = \"http://from-file:9000\"\nmax_retries = 5\nretry_base_delay_ms = 10\n",
    )
    .unwrap();
    let target = fixture("UD/Forwarder.sol");
    let out = path_str(&dir.path().join("out"));
    let env = [
        ("LLM_API_KEY", "sk-live"),
        ("LLM_BASE_URL", "http://from-env:8000"),
        ("LLM_MODEL", FIXTURE_MODEL),
    ];

    let h = Harness::new(&env);
    let r = h.run(&[
        "audit",
        "--out",
        &out,
        "--config",
        &path_str(&cfg),
        "--created-at",
        CREATED_AT,
        &target,
    ]);
    assert_eq!(r.code, 0, "{r:?}");
    let config = h.last_config.lock().unwrap().clone().unwrap();
    assert_eq!(config.base_url, "http://from-file:9000");
    assert_eq!(config.api_key, "sk-live");
    assert_eq!(config.retry.max_retries, 5);
    assert!(h.requests() > 0);

    let h = Harness::new(&env);
    assert_eq!(h.run(&["audit", "--out", &out, &target]).code, 0);
    assert_eq!(
        h.last_config.lock().unwrap().as_ref().unwrap().base_url,
        "http://from-env:8000"
    );
}
