use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(data: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_socket-store"));
    c.env("SOCKSTORE_DATA_DIR", data).arg("--seed").arg("3");
    c
}

fn run(data: &Path, args: &[&str]) -> Output {
    bin(data).args(args).output().unwrap()
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = run(data, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fail(data: &Path, args: &[&str]) -> String {
    let out = run(data, args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).display().to_string()
}

#[test]
fn lifecycle_walk() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["register-specialist", "km-lab"]);
    ok(d, &["register-specialist", "reviewer"]);
    assert_eq!(ok(d, &["submit", &fixture("flash-delivery")]).trim(), "flash-delivery in_review");
    assert!(fail(d, &["review", "flash-delivery", "--accept", "--reviewer", "km-lab"]).contains("self-review"));
    ok(d, &["eval", "flash-delivery"]);
    ok(d, &["review", "flash-delivery", "--accept", "--reviewer", "reviewer"]);
    let hits = ok(d, &["search", "flash"]);
    assert_eq!(hits.lines().count(), 1, "{hits}");
    assert!(hits.starts_with("flash-delivery"));

    let token = ok(d, &["purchase", "--app", "demo", "--module", "flash-delivery"]).trim().to_string();
    assert_eq!(token.len(), 32);
    assert!(ok(d, &["authorize", "--token", &token, "--module", "flash-delivery"]).starts_with("allow"));

    let inst = ok(
        d,
        &[
            "instantiate",
            "--token",
            &token,
            "--module",
            "flash-delivery",
            "--input",
            "endpointA=A:5000",
            "--input",
            "endpointB=B:5000",
            "--input",
            "K=2",
            "--input",
            "rate=10",
            "--input",
            "max_latency=5",
        ],
    );
    let id = inst.lines().next().unwrap().to_string();
    assert!(inst.contains("path 0: A-R1-R3-R4-B"), "{inst}");
    assert!(ok(d, &["cost", &id]).contains("total"));
    ok(d, &["teardown", &id]);
    ok(d, &["teardown", &id]);

    ok(d, &["bind", "Device_B", "--device", "dev-b", "--endpoint", "B:5000/0", "--endpoint", "B:5000/1"]);
    assert_eq!(ok(d, &["resolve", "Device_B"]).lines().count(), 2);
    ok(d, &["revoke", &token]);
    assert!(fail(d, &["authorize", "--token", &token, "--module", "flash-delivery"]).contains("denied"));
    ok(d, &["retire", "flash-delivery"]);
    assert!(ok(d, &["search", "flash"]).contains("no modules found"));
    assert!(ok(d, &["library"]).contains("KMirror"));
    let log = ok(d, &["log"]);
    assert!(log.contains("purchase"));
    assert!(!log.contains(&token), "log must hold fingerprints only");
    assert!(Path::new(d).join("state.json").exists());
}

#[test]
fn review_of_submitted_module_is_illegal() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["register-specialist", "km-lab"]);
    ok(d, &["register-specialist", "reviewer"]);
    ok(d, &["submit", &fixture("flash-delivery"), "--no-review"]);
    let err = fail(d, &["review", "flash-delivery", "--accept", "--reviewer", "reviewer"]);
    assert!(err.contains("illegal transition"), "{err}");
    assert!(err.starts_with("error: "));
}

#[test]
fn resubmit_after_revision() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["register-specialist", "km-lab"]);
    ok(d, &["register-specialist", "reviewer"]);
    ok(d, &["submit", &fixture("flash-delivery")]);
    ok(d, &["review", "flash-delivery", "--revise", "--reviewer", "reviewer"]);
    let bundle = dir.path().join("v2");
    std::fs::create_dir(&bundle).unwrap();
    let src = PathBuf::from(fixture("flash-delivery"));
    let manifest = std::fs::read_to_string(src.join("manifest.toml")).unwrap().replace("version = 1", "version = 2");
    std::fs::write(bundle.join("manifest.toml"), manifest).unwrap();
    std::fs::copy(src.join("nsd.xml"), bundle.join("nsd.xml")).unwrap();
    assert_eq!(ok(d, &["resubmit", bundle.to_str().unwrap()]).trim(), "flash-delivery in_review");
    assert!(fail(d, &["start-review", "flash-delivery"]).contains("illegal transition"));
    ok(d, &["publish", "flash-delivery", "--reviewer", "reviewer"]);
    assert!(ok(d, &["search", ""]).contains("v2"));
}

#[test]
fn experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = d.join("a.csv");
    let b = d.join("b.csv");
    let svg = d.join("a.svg");
    let out =
        ok(d, &["run-experiment", "--output", a.to_str().unwrap(), "--plot", svg.to_str().unwrap(), "--with-baseline"]);
    assert!(out.contains("mode: module"));
    assert!(out.contains("violations: 0"));
    assert!(out.contains("violations: 20"));
    ok(d, &["run-experiment", "--output", b.to_str().unwrap()]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(d.join("a-baseline.csv").exists());
    assert!(d.join("a-baseline.svg").exists());
    assert!(svg.exists());
}

#[test]
fn experiment_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.toml");
    std::fs::write(&cfg, "packet_count = 0\n").unwrap();
    let err = fail(d, &["run-experiment", "--config", cfg.to_str().unwrap()]);
    assert!(err.contains("packet_count"), "{err}");
    std::fs::write(&cfg, "module = \"flash-delivery\"\npurchase = false\n").unwrap();
    let out =
        ok(d, &["run-experiment", "--config", cfg.to_str().unwrap(), "--output", d.join("x.csv").to_str().unwrap()]);
    assert!(out.contains("mode: fallback"), "{out}");
}
