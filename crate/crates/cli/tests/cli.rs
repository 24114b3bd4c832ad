use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tempfile::TempDir;

fn repsel(data_dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_repsel"));
    cmd.env_remove("REPSEL_SERVER").env("REPSEL_DATA_DIR", data_dir);
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn repsel");
    assert!(
        out.status.success(),
        "repsel failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

/// Small synthetic dataset under `<tmp>/ds`.
fn dataset() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    run(repsel(dir.path()).args(["generate", "--out", "ds", "--dims", "10,10,3", "--per-family", "6"]));
    assert!(dir.path().join("ds/manifest.json").exists());
    assert!(dir.path().join("ds/channel_voi.json").exists());
    dir
}

fn voi(dir: &TempDir) -> String {
    dir.path().join("ds/channel_voi.json").display().to_string()
}

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(data_dir: &Path) -> Server {
    let mut child = repsel(data_dir)
        .args(["serve", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    Server(child, format!("http://{addr}"))
}

#[test]
fn auto_select_picks_one_member_per_cluster() {
    let dir = dataset();
    let voi = voi(&dir);
    let args = ["auto-select", "--json", "--manifest", "ds/manifest.json", "--voi", voi.as_str(), "--k", "3"];
    let members = stdout_json(&run(repsel(dir.path()).args(args)));
    let members: Vec<usize> = serde_json::from_value(members).unwrap();
    assert_eq!(members.len(), 3);
    let again: Vec<usize> = serde_json::from_value(stdout_json(&run(repsel(dir.path()).args(args)))).unwrap();
    assert_eq!(members, again);

    let graph = stdout_json(&run(repsel(dir.path()).args([
        "cluster", "--json", "--manifest", "ds/manifest.json", "--voi", &voi, "--k", "3",
    ])));
    assert_eq!(graph["graph"]["nodes"].as_array().unwrap().len(), 18);
    assert_eq!(graph["members"], serde_json::to_value(&members).unwrap());
}

#[test]
fn variance_summarizes_the_model() {
    let dir = dataset();
    let v = stdout_json(&run(repsel(dir.path()).args(["variance", "--json", "--manifest", "ds/manifest.json"])));
    let n = v["cells"].as_array().unwrap().len();
    assert_eq!(n, 300);
    assert_eq!(v["values"].as_array().unwrap().len(), n);
    let text = run(repsel(dir.path()).args(["variance", "--manifest", "ds/manifest.json"]));
    assert!(String::from_utf8_lossy(&text.stdout).starts_with("cells 300"));
}

#[test]
fn golden_traces_replay_through_the_service() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let mut seen = 0;
    for entry in std::fs::read_dir(&golden).unwrap() {
        let trace = entry.unwrap().path();
        if trace.extension().and_then(|e| e.to_str()) != Some("trace") {
            continue;
        }
        let expected = trace.with_extension("golden");
        let out = run(repsel(&golden).arg("replay").arg(&trace).arg("--golden").arg(&expected));
        assert_eq!(out.stdout, std::fs::read(&expected).unwrap(), "{}", trace.display());
        seen += 1;
    }
    assert_eq!(seen, 8);

    let tmp = tempfile::tempdir().unwrap();
    let wrong = tmp.path().join("wrong.golden");
    std::fs::write(&wrong, "nothing\n").unwrap();
    let out = repsel(tmp.path())
        .arg("replay")
        .arg(golden.join("rotate.trace"))
        .arg("--golden")
        .arg(&wrong)
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn decisions_persist_on_a_shared_server_and_replay_from_export() {
    let dir = dataset();
    let server = serve(dir.path());
    let voi = voi(&dir);
    let remote = |args: &[&str]| run(repsel(dir.path()).args(["--server", &server.1]).args(args));

    let graph = stdout_json(&remote(&["cluster", "--json", "--manifest", "ds/manifest.json", "--voi", &voi]));
    let top = graph["ranking"][0][0].as_u64().unwrap();

    let report = stdout_json(&remote(&["evaluate", "--json", "--no-cluster"]));
    assert_eq!(report["candidate"].as_u64().unwrap(), top);

    let saved = dir.path().join("session.json");
    let decided = stdout_json(&remote(&[
        "decide", "--json", "--no-cluster", "--action", "accept", "--export", saved.to_str().unwrap(),
    ]));
    let members = decided["members"].clone();
    assert!(members.as_array().unwrap().iter().any(|m| m.as_u64() == Some(top)));
    assert_eq!(members.as_array().unwrap().len(), 4);

    // the shared server kept the decision
    let again = stdout_json(&remote(&["cluster", "--json", "--no-cluster"]));
    assert_eq!(again["members"], members);

    // a fresh private server reaches the same set from the export
    let replayed = stdout_json(&run(repsel(dir.path()).args([
        "auto-select", "--json", "--import", saved.to_str().unwrap(),
    ])));
    assert_eq!(replayed, members);

    let copy = dir.path().join("copy.json");
    run(repsel(dir.path()).args(["--server", &server.1, "export", "--out", copy.to_str().unwrap()]));
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&saved).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&copy).unwrap()).unwrap();
    assert_eq!(a["decisions"], b["decisions"]);
}

#[test]
fn service_errors_reach_the_user() {
    let dir = tempfile::tempdir().unwrap();
    let out = repsel(dir.path()).args(["evaluate", "--no-cluster"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("workflow_order"));

    let out = repsel(dir.path()).args(["variance", "--manifest", "missing/manifest.json"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("404"));

    let out = repsel(dir.path()).args(["generate", "--out", "x", "--dims", "3,3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
