mod common;

use std::path::Path;
use std::process::{Command, Output};

use edgewatt::control::TcpBrokerServer;
use edgewatt::telemetry::{read_trace, RunStatus};

fn edgewatt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgewatt"))
        .args(args)
        .env_remove("EDGEWATT_BROKER")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn short_plan(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("plan.toml");
    std::fs::write(
        &p,
        format!(
            "plan_id = \"short\"\n{extra}\ndeployment = {{ kind = \"Container\", software = \"sim\" }}\nphases = [\n  {{ kind = \"idle\", duration_s = 5 }},\n  {{ kind = \"traffic\", target_mbps = 300, duration_s = 5 }},\n]\n"
        ),
    )
    .unwrap();
    p
}

#[test]
fn simulated_run_exits_zero_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let plan = short_plan(dir.path(), "");
    let out = dir.path().join("out");
    let o = edgewatt(&[
        "run",
        "--simulate",
        "--seed",
        "4",
        "--plan",
        path(&plan),
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.jsonl", "trace.csv", "report/report.json", "report/steps.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let run = read_trace(&out.join("trace.jsonl")).unwrap();
    assert_eq!(run.run_id, "short-s4");
    assert_eq!(run.host_metadata.get("seed").map(String::as_str), Some("4"));
}

#[test]
fn usage_and_input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(edgewatt(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(edgewatt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        edgewatt(&["run", "--simulate", "--plan", "/nonexistent/plan.toml"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(edgewatt(&["run", "--simulate"]).status.code(), Some(1));
    let junk = dir.path().join("junk.jsonl");
    std::fs::write(&junk, "not json\n").unwrap();
    assert_eq!(
        edgewatt(&["replay", "--out", path(dir.path()), path(&junk)])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(edgewatt(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_profile_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let plan = short_plan(dir.path(), "sim_profile = \"edge-box\"");
    let o = edgewatt(&[
        "run",
        "--simulate",
        "--plan",
        path(&plan),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("edge-box"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "plan_file = \"plan.toml\"\n[broker]\nadress = \"x\"\n").unwrap();
    short_plan(dir.path(), "");
    let o = edgewatt(&["run", "--simulate", "--config", path(&config)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("adress"));
}

#[test]
fn run_without_agents_exits_two_with_partial_trace() {
    let server = TcpBrokerServer::bind("127.0.0.1:0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    short_plan(dir.path(), "");
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        format!(
            "plan_file = \"plan.toml\"\n[broker]\naddress = \"{}\"\nregister_timeout_s = 0.5\n",
            server.local_addr()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = edgewatt(&["run", "--config", path(&config), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let run = read_trace(&out.join("trace.jsonl")).unwrap();
    assert!(matches!(run.status, RunStatus::Incomplete { .. }));
    server.shutdown();
}

#[test]
fn replay_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let plan = short_plan(dir.path(), "");
    let out = dir.path().join("out");
    assert_eq!(
        edgewatt(&["run", "--simulate", "--plan", path(&plan), "--out", path(&out)])
            .status
            .code(),
        Some(0)
    );
    let trace = out.join("trace.jsonl");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert_eq!(
            edgewatt(&["replay", "--out", path(d), path(&trace)]).status.code(),
            Some(0)
        );
    }
    for f in std::fs::read_dir(&a).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
    assert!(std::fs::read(out.join("report/report.json")).unwrap() == std::fs::read(a.join("report.json")).unwrap());
}

#[test]
fn fit_prints_table_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let plan = common::repo_root().join("sweeps/vm.toml");
    assert_eq!(
        edgewatt(&["run", "--simulate", "--plan", path(&plan), "--out", path(&out)])
            .status
            .code(),
        Some(0)
    );
    let o = edgewatt(&["fit", path(&out.join("trace.jsonl"))]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let alpha = doc[0]["model"]["alpha"].as_f64().unwrap();
    let c = doc[0]["model"]["c"].as_f64().unwrap();
    assert!(
        (alpha - 9.99886).abs() < 1e-6 && (c - 7338.0).abs() < 1e-3,
        "{alpha} {c}"
    );
}

#[test]
fn shipped_configs_parse() {
    let root = common::repo_root();
    for name in ["sim", "controller", "meter-agent", "load-agent"] {
        let p = root.join(format!("configs/{name}.toml"));
        edgewatt::config::RunConfig::load(&p).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for name in ["bm", "vm", "co", "cpu"] {
        edgewatt::config::load_plan(&root.join(format!("sweeps/{name}.toml"))).unwrap();
    }
}
