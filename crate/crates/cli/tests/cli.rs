use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pointkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointkit")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const RECORD: &str = r#"{"id":"ID","task":"REG","width":10,"height":10,"verification":{"kind":"mask","mask":{"width":10,"height":10,"boxes":[[0,0,4,4]]}}}"#;

fn dataset(dir: &Path, extra: &str) -> (String, String) {
    let lines: Vec<String> = ["a", "b"].iter().map(|id| RECORD.replace("ID", id)).collect();
    let d = write(dir, "d.jsonl", &format!("{}\n{extra}", lines.join("\n")));
    let r = write(
        dir,
        "r.jsonl",
        concat!(
            r#"{"id":"a","response":"<think>t</think><answer><point>[[1, 1]]</point></answer>"}"#,
            "\n",
            r#"{"id":"b","response":"<think>t</think><answer><point>[[8, 8]]</point></answer>"}"#,
        ),
    );
    (d, r)
}

#[test]
fn score_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let (d, r) = dataset(dir.path(), "");
    let out = dir.path().join("report.md");
    let o = pointkit(&["score", "--dataset", &d, "--responses", &r, "--out", out.to_str().unwrap(), "--workers", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let md = fs::read_to_string(&out).unwrap();
    assert!(md.contains("| REG | accuracy | 50.00 | 2 | 0 |"), "{md}");
}

#[test]
fn rejects_above_threshold_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (d, r) = dataset(dir.path(), "{broken");
    let out = dir.path().join("report.csv");
    let args = ["score", "--dataset", &d, "--responses", &r, "--out", out.to_str().unwrap(), "--format", "csv"];
    assert_eq!(pointkit(&args).status.code(), Some(2));
    assert!(out.exists());
    let mut tolerant = args.to_vec();
    tolerant.extend(["--max-rejects", "1"]);
    assert_eq!(pointkit(&tolerant).status.code(), Some(0));
}

#[test]
fn unreadable_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.md");
    let o = pointkit(&["score", "--dataset", "/no/such/file", "--responses", "/no/such/r", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reward_prints_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let resp = write(dir.path(), "resp.txt", "<think>between</think><answer><point>[[5, 5]]</point></answer>");
    let v = write(
        dir.path(),
        "v.json",
        r#"{"kind":"mask","mask":{"width":100,"height":100,"boxes":[[0,0,9,9]]}}"#,
    );
    let o = pointkit(&["reward", "--task", "rrg", "--response", &resp, "--verification", &v]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(b["task"], "RRG");
    assert_eq!(b["total"], 1.0);
    let o = pointkit(&["reward", "--task", "rrg", "--alternative", "rrg-main-text", "--response", &resp, "--verification", &v]);
    assert!(o.status.success());
    let o = pointkit(&["reward", "--task", "vtg", "--response", &resp, "--verification", &v]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn trace_process_emits_eight_points() {
    let dir = tempfile::tempdir().unwrap();
    let t = write(
        dir.path(),
        "t.json",
        r#"[{"points":[[10,10],[20,30]],"width":200,"height":200},
            {"points":[[10,10],[60,40],[90,120],[150,130],[170,180]],"width":200,"height":200}]"#,
    );
    let o = pointkit(&["trace", "process", "--in", &t, "--points", "8", "--smooth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let pts = v["points"].as_array().unwrap();
    assert_eq!(pts.len(), 8);
    assert_eq!(pts[0], serde_json::json!([10.0, 10.0]));
    assert_eq!(pts[7], serde_json::json!([170.0, 180.0]));
}

#[test]
fn grpo_demo_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_grpo-demo"))
        .args(["--task", "reg", "--steps", "5", "--group-size", "4", "--seed", "3", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,mean_reward,mean_format_rate");
    assert_eq!(lines.len(), 6);
    let bad = Command::new(env!("CARGO_BIN_EXE_grpo-demo"))
        .args(["--task", "reg", "--clip-eps", "1.5", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
