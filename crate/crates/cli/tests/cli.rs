use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn rapport(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rapport")).args(args).output().expect("run rapport")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_check_and_emit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("sa.jsonl");
    let out = rapport(&["simulate", "--scenario", "student_advance", "--seed", "5", "--record", path(&trace)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("not-teacher"));

    let out = rapport(&["check", path(&trace)]);
    assert_eq!(code(&out), 0);
    let report = stdout(&out);
    for name in ["sequencing", "replay", "lesson-phases", "reciprocity", "display-bounds"] {
        assert!(report.contains(&format!("PASS {name}")), "{report}");
    }

    let csv = dir.path().join("d.csv");
    let out = rapport(&["emit-display", path(&trace), "--participant", "sensei", "--out", path(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("heart_radius"));
    assert!(lines.count() > 10);

    let out = rapport(&["emit-display", path(&trace), "--participant", "nobody", "--out", path(&csv)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn tampered_trace_exits_one_and_garbage_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    assert_eq!(code(&rapport(&["simulate", "--scenario", "student_advance", "--record", path(&trace)])), 0);

    let text = std::fs::read_to_string(&trace).unwrap();
    let needle = r#""recipients":["p1"]"#;
    assert!(text.contains(needle));
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, text.replacen(needle, r#""recipients":["p1","p2"]"#, 1)).unwrap();
    let out = rapport(&["check", path(&tampered)]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("FAIL reciprocity"));

    let garbage = dir.path().join("garbage.jsonl");
    std::fs::write(&garbage, "not a trace\n").unwrap();
    assert_eq!(code(&rapport(&["check", path(&garbage)])), 2);
    assert_eq!(code(&rapport(&["check", path(&dir.path().join("missing.jsonl"))])), 2);
    assert_eq!(code(&rapport(&["simulate", "--scenario", "no_such_scenario"])), 2);
    assert_eq!(code(&rapport(&["frobnicate"])), 2);
}

#[test]
fn gen_writes_a_readable_signal_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("bvp.jsonl");
    let out = rapport(&["gen", "--channel", "bvp", "--hr", "60", "--duration", "20", "--seed", "7", "--out", path(&out_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    let meta: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(meta["meta"]["channel"], "BVP");
    assert_eq!(meta["meta"]["seed"], 7);
    assert_eq!(lines.count(), 20 * 32);

    let again = dir.path().join("again.jsonl");
    rapport(&["gen", "--channel", "bvp", "--hr", "60", "--duration", "20", "--seed", "7", "--out", path(&again)]);
    assert_eq!(std::fs::read(&again).unwrap(), text.as_bytes());

    assert_eq!(code(&rapport(&["gen", "--channel", "sc", "--scr", "oops", "--out", path(&again)])), 2);
}

/// `rapport serve` on free ports; killed on drop.
struct Served {
    child: Child,
    http: String,
    socket: String,
}

impl Served {
    fn start() -> Served {
        let mut child = Command::new(env!("CARGO_BIN_EXE_rapport"))
            .args(["serve", "--port", "0", "--socket-port", "0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        // "http://HOST:PORT (web socket /ws), ndjson HOST:PORT"
        let http = line.split_whitespace().next().unwrap().to_string();
        let socket = line.split_whitespace().last().unwrap().to_string();
        Served { child, http, socket }
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        self.child.kill().ok();
        self.child.wait().ok();
    }
}

#[test]
fn commands_run_against_a_live_service() {
    let served = Served::start();
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("remote.jsonl");
    let out = rapport(&["simulate", "--scenario", "revocation", "--record", path(&trace), "--server", &served.http]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let local = dir.path().join("local.jsonl");
    assert_eq!(code(&rapport(&["simulate", "--scenario", "revocation", "--record", path(&local)])), 0);
    assert_eq!(std::fs::read(&trace).unwrap(), std::fs::read(&local).unwrap());

    let out = rapport(&["check", path(&trace), "--server", &served.http]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("PASS reciprocity"));

    let out = rapport(&["join", "--addr", &served.socket, "--sid", "live", "--name", "sensei", "--role", "teacher", "--share", "bvp,sc", "--duration", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("joined live as p1"), "{text}");
    assert!(text.contains("leaving at seq"), "{text}");
}
