use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_smc-bandits"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_STATIC: &str =
    "version = 1\nexperiment = \"static-sim\"\nhorizon = 120\nreplications = 3\nparticles = 80\n";

fn manifest_outputs(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    manifest["outputs"].clone()
}

#[test]
fn sequential_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(tmp.path(), "run.toml", SMALL_STATIC);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["simulate", "--config", s(&config), "--out", s(&a), "--deterministic", "--seed", "17"]);
    run_ok(&["simulate", "--config", s(&config), "--out", s(&b), "--deterministic", "--seed", "17"]);
    for name in ["regret.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = tmp.path().join("c");
    run_ok(&["simulate", "--config", s(&config), "--out", s(&c), "--deterministic", "--seed", "18"]);
    assert_ne!(fs::read(a.join("regret.csv")).unwrap(), fs::read(c.join("regret.csv")).unwrap());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(tmp.path(), "run.toml", &format!("{SMALL_STATIC}workers = 4\n"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["simulate", "--config", s(&config), "--out", s(&a)]);
    run_ok(&["simulate", "--config", s(&config), "--out", s(&b), "--deterministic"]);
    assert_eq!(fs::read(a.join("regret.csv")).unwrap(), fs::read(b.join("regret.csv")).unwrap());
}

#[test]
fn manifest_and_resolved_config_reproduce_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(tmp.path(), "run.toml", SMALL_STATIC);
    let first = tmp.path().join("first");
    run_ok(&["simulate", "--config", s(&config), "--out", s(&first), "--seed", "5"]);
    let expected = manifest_outputs(&first);

    let from_manifest = tmp.path().join("m");
    run_ok(&["simulate", "--config", s(&first.join("manifest.json")), "--out", s(&from_manifest), "--deterministic"]);
    let from_toml = tmp.path().join("t");
    run_ok(&["simulate", "--config", s(&first.join("config.resolved.toml")), "--out", s(&from_toml)]);
    for dir in [&from_manifest, &from_toml] {
        let got = manifest_outputs(dir);
        for name in ["regret.csv", "summary.json"] {
            assert_eq!(got[name], expected[name], "{name} in {}", dir.display());
        }
    }
}

/// Log with rows (arm, reward): (1, 1), (2, 1), (1, 1), (2, 0).
fn hand_log(dir: &Path) -> PathBuf {
    write(dir, "log.json", "{\"arms\": 2, \"dim\": 1, \"logging_policy\": \"uniform-random\"}\n");
    write(dir, "log.csv", "t,arm,reward,x0\n1,1,1,1.0\n2,2,1,1.0\n3,1,1,1.0\n4,2,0,1.0\n")
}

#[test]
fn replay_of_fixed_first_arm_sums_rows_one_and_three() {
    let tmp = tempfile::tempdir().unwrap();
    hand_log(tmp.path());
    let config = write(
        tmp.path(),
        "replay.toml",
        "version = 1\nexperiment = \"replay\"\n[replay]\nlog = \"log.csv\"\nruns = 2\n\
         [[policies]]\nkind = \"fixed\"\narm = 1\n[[policies]]\nkind = \"fixed\"\narm = 2\n",
    );
    let out = tmp.path().join("out");
    run_ok(&["replay", "--config", s(&config), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("replay.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        match row[0] {
            "fixed-1" => assert_eq!(&row[2..], ["2", "2", "1"]),
            "fixed-2" => assert_eq!(&row[2..], ["2", "1", "0.5"]),
            other => panic!("{other}"),
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["baseline"], "fixed-1");
    assert_eq!(summary["policies"][1]["percent_diff"], -50.0);
}

#[test]
fn synthetic_replay_writes_its_log() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(
        tmp.path(),
        "replay.toml",
        "version = 1\nexperiment = \"replay\"\nparticles = 50\n[replay]\nsynthetic_rows = 800\nruns = 3\n",
    );
    let out = tmp.path().join("out");
    run_ok(&["replay", "--config", s(&config), "--out", s(&out)]);
    for name in ["log.csv", "log.json", "replay.csv", "summary.json", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let csv = fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 801);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["policies"].as_array().unwrap().len(), 4);
    assert!(summary["policies"][1]["welch"]["p"].is_number());
}

#[test]
fn dynamic_simulation_emits_regret_and_tracking() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(
        tmp.path(),
        "dyn.toml",
        "version = 1\nexperiment = \"dynamic-sim\"\nhorizon = 350\nreplications = 2\nparticles = 100\n\
         [[policies]]\nkind = \"smc-dynamic\"\n[[policies]]\nkind = \"random\"\n",
    );
    let out = tmp.path().join("out");
    run_ok(&["simulate", "--config", s(&config), "--out", s(&out)]);
    let regret = fs::read_to_string(out.join("regret.csv")).unwrap();
    assert_eq!(regret.lines().count(), 1 + 2 * 350);
    let tracking = fs::read_to_string(out.join("tracking.csv")).unwrap();
    assert!(tracking.lines().count() > 350);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary.to_string().contains("smc-dynamic"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["simulate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["explode"]).status.code(), Some(1));

    let bad_key = write(tmp.path(), "bad.toml", "version = 1\nexperiment = \"static-sim\"\nhorizn = 5\n");
    let out = run(&["simulate", "--config", s(&bad_key)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));

    let wrong_command = write(tmp.path(), "bench.toml", "version = 1\nexperiment = \"bench\"\n");
    assert_eq!(run(&["simulate", "--config", s(&wrong_command)]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--config", s(&tmp.path().join("absent.toml"))]).status.code(), Some(1));

    // A policy that never matches the log has no retained rows to average.
    hand_log(tmp.path());
    let never = write(
        tmp.path(),
        "never.toml",
        "version = 1\nexperiment = \"replay\"\n[replay]\nlog = \"log.csv\"\nruns = 1\n\
         [[policies]]\nkind = \"fixed\"\narm = 1\n",
    );
    fs::write(tmp.path().join("log.csv"), "t,arm,reward,x0\n1,2,1,1.0\n2,2,0,1.0\n").unwrap();
    let out = run(&["replay", "--config", s(&never), "--out", s(&tmp.path().join("never"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
