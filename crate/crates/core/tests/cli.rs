use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_wdn-gft");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

/// Runs simulate, build-gft, select, recover, profile, sweep and compare in `dir`.
fn pipeline(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["simulate", "--count", "3", "--steps", "168", "--seed", "5", "--out", s(&data)]);
    let graph = data.join("graph.json");
    let signal = data.join("scenario_001.csv");
    let work = dir.join("work");
    fs::create_dir_all(&work).unwrap();
    let op = work.join("op.json");
    let plan = work.join("plan.json");
    ok(&["build-gft", "--signal", s(&signal), "--graph", s(&graph), "--out", s(&op)]);
    ok(&["select", "--operator", s(&op), "--out", s(&plan)]);
    ok(&[
        "recover",
        "--operator",
        s(&op),
        "--plan",
        s(&plan),
        "--signal",
        s(&signal),
        "--out",
        s(&work.join("estimate.csv")),
        "--report",
        s(&work.join("report.json")),
    ]);
    ok(&["profile", "--signal", s(&signal), "--graph", s(&graph), "--out", s(&work.join("profile.csv"))]);
    ok(&[
        "sweep",
        "--signal",
        s(&signal),
        "--graph",
        s(&graph),
        "--step",
        "25",
        "--out",
        s(&work.join("sweep.csv")),
    ]);
    ok(&[
        "compare",
        "--bank",
        s(&data),
        "--graph",
        s(&graph),
        "--schemes",
        "gft,laplacian",
        "--out",
        s(&work.join("table.csv")),
    ]);
    work
}

#[test]
fn identical_runs_write_identical_files() {
    let root = tempfile::tempdir().unwrap();
    // both runs use the same relative layout, so manifests agree byte for byte
    let a = pipeline(&root.path().join("run"));
    let first = (files(&root.path().join("run/data")), files(&a));
    fs::remove_dir_all(root.path().join("run")).unwrap();
    let b = pipeline(&root.path().join("run"));
    let second = (files(&root.path().join("run/data")), files(&b));
    assert_eq!(first.0.len(), 3 + 3);
    assert!(first == second, "outputs differ between identical runs");

    let report: serde_json::Value = serde_json::from_slice(&fs::read(b.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "wdn-gft/recovery-report/v1");
    assert!(report["rmse"].as_f64().unwrap() < 1e-8);
    for (name, bytes) in &second.1 {
        let text = String::from_utf8_lossy(bytes);
        if name.ends_with(".csv") && !name.ends_with("basis.csv") && !name.starts_with("estimate") {
            assert!(text.starts_with("# schema=wdn-gft/"), "{name} lacks a schema line");
        }
        if name.ends_with(".json") {
            assert!(text.contains("\"schema\": \"wdn-gft/"), "{name} lacks a schema");
        }
    }
    for (name, bytes) in second.0.iter().chain(&second.1) {
        if name.ends_with("manifest.json") {
            let m: serde_json::Value = serde_json::from_slice(bytes).unwrap();
            for out in m["outputs"].as_array().unwrap() {
                let schema = out["schema"].as_str().unwrap_or_default();
                assert!(schema.starts_with("wdn-gft/"), "{name}: {} has no schema", out["path"]);
            }
        }
    }
    let table = String::from_utf8_lossy(&fs::read(b.join("table.csv")).unwrap()).into_owned();
    assert_eq!(table.lines().filter(|l| l.starts_with("scenario_0")).count(), 3);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["select", "--operator", "x.json", "--out", "y", "--bogus"]), 1);

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("missing.json");
    assert_eq!(code(&["select", "--operator", s(&missing), "--out", s(&d.join("p.json"))]), 2);

    let graph = d.join("g.json");
    fs::write(
        &graph,
        r#"{"schema":"wdn-gft/graph/v1","nodes":[{"id":"a","kind":"junction"},{"id":"b","kind":"junction"}],"edges":[{"from":0,"to":1}]}"#,
    )
    .unwrap();
    let x = d.join("x.csv");
    fs::write(&x, "1,2\n0,0\n").unwrap();
    let op = d.join("op.json");
    // headerless CSV without a graph
    assert_eq!(code(&["build-gft", "--signal", s(&x), "--out", s(&op)]), 1);
    fs::write(d.join("bad.csv"), "1,z\n0,0\n").unwrap();
    assert_eq!(
        code(&["build-gft", "--signal", s(&d.join("bad.csv")), "--graph", s(&graph), "--out", s(&op)]),
        2
    );
    ok(&["build-gft", "--signal", s(&x), "--graph", s(&graph), "--out", s(&op)]);
    let plan = d.join("plan.json");
    ok(&["select", "--operator", s(&op), "--out", s(&plan)]);
    let est = d.join("est.csv");
    assert_eq!(
        code(&[
            "recover", "--operator", s(&op), "--plan", s(&plan), "--signal", s(&x), "--samples", s(&x), "--out", s(&est)
        ]),
        1
    );
    // a sensor on the row where the only active frequency vanishes
    let text = fs::read_to_string(&plan).unwrap().replace("\"a\"", "\"b\"");
    let bad_plan = d.join("bad_plan.json");
    fs::write(&bad_plan, text).unwrap();
    assert_eq!(
        code(&["recover", "--operator", s(&op), "--plan", s(&bad_plan), "--signal", s(&x), "--out", s(&est)]),
        3
    );
}
