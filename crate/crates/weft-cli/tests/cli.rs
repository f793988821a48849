//! End-to-end checks of the binary: exit codes, JSON reports, and
//! determinism of repeated invocations.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn write_network(dir: &PathBuf, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).expect("network file");
    path
}

fn weft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weft"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("stdout is JSON lines"))
        .collect()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Two domains over principals H and L; d1 allows the downgrade, d2
/// allows nothing.
const TWO_DOMAINS: &str = r#"{
  "universe": ["H", "L"],
  "domains": { "d1": ["H<L"], "d2": [] },
  "refs": {
    "a": { "level": ["H"], "type": "bool", "init": "false" },
    "b": { "level": ["L"], "type": "bool", "init": "false" },
    "y": { "level": ["H", "L"], "type": "bool", "init": "false" }
  },
  "threads": []
}"#;

#[test]
fn typecheck_accepts_unit() {
    let dir = scratch("tc-unit");
    let net = write_network(&dir, "net.json", TWO_DOMAINS);
    let out = weft(&["typecheck", "--network", net.to_str().unwrap(), "--system", "dnd", "()"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let report = &stdout_lines(&out)[0];
    assert_eq!(report["accepted"], true);
    assert_eq!(report["type"], "unit");
}

#[test]
fn typecheck_rejects_migration_leak_at_the_conditional() {
    let dir = scratch("tc-leak");
    let net = write_network(&dir, "net.json", TWO_DOMAINS);
    let body = "allowed {H<L} then (b := true) else (b := false)";
    let prog = format!(
        "if !a then (thread<{{L}}> ({body}) at d1) else (thread<{{L}}> ({body}) at d2)"
    );
    let out = weft(&[
        "typecheck",
        "--network",
        net.to_str().unwrap(),
        "--system",
        "dnd",
        "--thread-level",
        "{L}",
        &prog,
    ]);
    assert_eq!(code(&out), 1, "{out:?}");
    let report = &stdout_lines(&out)[0];
    assert_eq!(report["accepted"], false);
    assert_eq!(report["rule"], "Cond");
}

#[test]
fn static_confinement_demands_a_policy_for_every_domain() {
    let dir = scratch("tc-missing-domain");
    let net = write_network(&dir, "net.json", TWO_DOMAINS);
    let out = weft(&[
        "typecheck",
        "--network",
        net.to_str().unwrap(),
        "--system",
        "confine-static",
        "thread<{L}> (flow {H<L} in ()) at elsewhere",
    ]);
    assert_eq!(code(&out), 2, "{out:?}");
    assert!(out.stdout.is_empty(), "usage errors keep stdout clean");
    assert!(String::from_utf8_lossy(&out.stderr).contains("elsewhere"));
}

#[test]
fn run_takes_the_allowed_branch_where_the_policy_holds() {
    let dir = scratch("run-allowed");
    let net = write_network(
        &dir,
        "net.json",
        r#"{
          "universe": ["H", "L"],
          "domains": { "d1": ["H<L"], "d2": [] },
          "refs": { "y": { "level": ["H", "L"], "type": "bool", "init": "false" } },
          "threads": [
            { "name": "t", "level": ["H", "L"], "domain": "d1",
              "program": "allowed {H<L} then (y := true) else (y := false)" }
          ]
        }"#,
    );
    let out = weft(&["run", "--network", net.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{out:?}");
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 3, "two labels plus a summary");
    assert_eq!(lines[0]["kind"], "allowedTrue");
    assert_eq!(lines[1]["kind"], "assign");
    assert_eq!(lines[2]["status"], "terminated");
    assert_eq!(lines[2]["store"]["y"], "true");
}

#[test]
fn run_blocks_an_annotated_migration_the_domain_refuses() {
    let dir = scratch("run-blocked");
    let net = write_network(
        &dir,
        "net.json",
        r#"{
          "universe": ["H", "L"],
          "domains": { "d1": ["H<L"], "d2": [] },
          "refs": { "a": { "level": ["H", "L"], "type": "bool", "init": "false" } },
          "threads": [
            { "name": "t", "level": ["H"], "domain": "d1",
              "program": "thread<{H}> (flow bot in a := true) at d2 with bot" }
          ]
        }"#,
    );
    let out = weft(&["run", "--network", net.to_str().unwrap(), "--mode", "annotated"]);
    assert_eq!(code(&out), 3, "{out:?}");
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 1, "no step happens");
    assert_eq!(lines[0]["status"], "blocked");
    assert_eq!(lines[0]["steps"], 0);
    assert_eq!(lines[0]["store"]["a"], "false");
}

#[test]
fn run_of_an_empty_pool_terminates_with_an_empty_trace() {
    let dir = scratch("run-empty");
    let net = write_network(&dir, "net.json", TWO_DOMAINS);
    let out = weft(&["run", "--network", net.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{out:?}");
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["status"], "terminated");
    assert_eq!(lines[0]["steps"], 0);
}

#[test]
fn annotate_reports_the_effect_it_pushed_onto_the_migration() {
    let dir = scratch("annotate");
    let net = write_network(&dir, "net.json", TWO_DOMAINS);
    let out = weft(&[
        "annotate",
        "--network",
        net.to_str().unwrap(),
        "thread<{H}> (flow {H<L} in y := !a) at d2",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let report = &stdout_lines(&out)[0];
    assert_eq!(report["accepted"], true);
    assert_eq!(report["effect"], serde_json::json!([]));
    let text = report["annotated"].as_str().unwrap();
    assert!(text.ends_with("with {H<L}"), "annotation is printed: {text}");
}

#[test]
fn verify_reports_a_violation_for_a_direct_leak() {
    let dir = scratch("verify-leak");
    let net = write_network(
        &dir,
        "net.json",
        r#"{
          "universe": ["H", "L"],
          "domains": { "d1": ["H<L"], "d2": [] },
          "refs": {
            "a": { "level": ["H"], "type": "bool", "init": "false" },
            "b": { "level": ["H", "L"], "type": "bool", "init": "false" }
          },
          "threads": [
            { "name": "t", "level": ["H"], "domain": "d1", "program": "b := !a" }
          ]
        }"#,
    );
    let out = weft(&["verify", "--network", net.to_str().unwrap(), "--property", "dnd", "--depth", "8"]);
    assert_eq!(code(&out), 5, "{out:?}");
    let report = &stdout_lines(&out)[0];
    assert_eq!(report["property"], "dnd");
    assert_eq!(report["verdict"], "violation");
    assert!(report["witness"]["label"]["kind"].is_string());
}

#[test]
fn verify_passes_a_harmless_pool() {
    let dir = scratch("verify-clean");
    let net = write_network(
        &dir,
        "net.json",
        r#"{
          "universe": ["H", "L"],
          "domains": { "d1": ["H<L"], "d2": [] },
          "refs": { "b": { "level": ["H", "L"], "type": "bool", "init": "false" } },
          "threads": [
            { "name": "t", "level": ["H", "L"], "domain": "d1", "program": "b := true" }
          ]
        }"#,
    );
    for property in ["dnd", "ndn", "fpc", "dni", "simulation"] {
        let out = weft(&[
            "verify",
            "--network",
            net.to_str().unwrap(),
            "--property",
            property,
            "--depth",
            "6",
        ]);
        assert_eq!(code(&out), 0, "{property}: {out:?}");
        let report = &stdout_lines(&out)[0];
        assert_eq!(report["verdict"], "noViolationUpTo", "{property}");
        assert_eq!(report["depth"], 6, "{property}");
    }
}

#[test]
fn combined_verdict_carries_all_three_games() {
    let dir = scratch("verify-combined");
    let net = write_network(
        &dir,
        "net.json",
        r#"{
          "universe": ["H", "L"],
          "domains": { "d1": ["H<L"], "d2": [] },
          "refs": {
            "a": { "level": ["H"], "type": "bool", "init": "false" },
            "b": { "level": ["H", "L"], "type": "bool", "init": "false" }
          },
          "threads": [
            { "name": "t", "level": ["H"], "domain": "d1",
              "program": "thread<{H}> (flow {H<L} in b := !a) at d1" }
          ]
        }"#,
    );
    let out = weft(&[
        "verify",
        "--network",
        net.to_str().unwrap(),
        "--property",
        "combined",
        "--depth",
        "6",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let report = &stdout_lines(&out)[0];
    assert_eq!(report["property"], "combined");
    assert_eq!(report["implicationHolds"], true);
    for game in ["dnd", "fpc", "dni"] {
        assert!(report[game]["verdict"].is_string(), "{game} verdict present");
    }
}

#[test]
fn parse_round_trips_and_flags_garbage() {
    let ok = weft(&["parse", "flow {H<L} in (b := !a; ())"]);
    assert_eq!(code(&ok), 0);
    assert_eq!(stdout_lines(&ok)[0]["pretty"], "flow {H<L} in b := !a; ()");
    let reparsed = weft(&["parse", "flow {H<L} in b := !a; ()"]);
    assert_eq!(stdout_lines(&reparsed)[0]["pretty"], "flow {H<L} in b := !a; ()");

    let bad = weft(&["parse", "allowed then else"]);
    assert_eq!(code(&bad), 1);
    assert_eq!(stdout_lines(&bad)[0]["accepted"], false);
}

#[test]
fn missing_network_is_a_usage_error() {
    let out = weft(&["typecheck", "--system", "dnd", "()"]);
    assert_eq!(code(&out), 2);
    let run = weft(&["run", "--network", "/nonexistent/net.json"]);
    assert_eq!(code(&run), 2);
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = scratch("determinism");
    let net = write_network(
        &dir,
        "net.json",
        r#"{
          "universe": ["H", "L"],
          "domains": { "d1": ["H<L"], "d2": [] },
          "refs": {
            "a": { "level": ["H"], "type": "bool", "init": "false" },
            "b": { "level": ["H", "L"], "type": "bool", "init": "false" }
          },
          "threads": [
            { "name": "t", "level": ["H"], "domain": "d1",
              "program": "thread<{H}> (allowed {H<L} then () else b := !a) at d1" }
          ]
        }"#,
    );
    let args = ["verify", "--network", net.to_str().unwrap(), "--property", "ndn", "--depth", "6"];
    let first = weft(&args);
    let second = weft(&args);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(code(&first), code(&second));

    let jobs = weft(&[
        "verify", "--network", net.to_str().unwrap(), "--property", "ndn", "--depth", "6",
        "--jobs", "2",
    ]);
    assert_eq!(first.stdout, jobs.stdout, "worker count never shows in output");
}
