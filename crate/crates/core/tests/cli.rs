use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use sopforge::store::{load_tvid, read_checkpoint, save_tvid};
use sopforge::toyworld::{oracle_render, prompt_vector, OracleParams};

fn sopforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sopforge"))
        .args(args)
        .env_remove("SOPFORGE_DATA_DIR")
        .output()
        .unwrap()
}

fn sopforge_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sopforge"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_clip(path: &Path, text: &str, t: usize) {
    let p = OracleParams {
        prompt_vec: prompt_vector(text).unwrap(),
        digital_style: false,
    };
    save_tvid(&oracle_render(&p, t).unwrap(), path).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.tvid"), dir.path().join("b.tvid"));
    let args = |out: &Path| {
        vec![
            "run".to_string(), "--task".into(), "text_to_video".into(), "--prompt".into(),
            "a small red blob".into(), "--seed".into(), "7".into(), "--auto".into(),
            "--out".into(), p(out).to_string(),
        ]
    };
    let run = |out: &Path| {
        let a = args(out);
        sopforge(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let (x, y) = (run(&a), run(&b));
    assert!(x.status.success() && y.status.success());
    assert_eq!(x.stdout, y.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report = json(&x);
    assert!(report["video_ti"].as_f64().is_some());
    assert_eq!(load_tvid(&a).unwrap().len(), 6);

    let other = dir.path().join("c.tvid");
    sopforge(&["run", "--task", "text_to_video", "--prompt", "a small red blob", "--seed", "8", "--auto", "--out", p(&other)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn task_inputs_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (v1, v2) = (dir.path().join("v1.tvid"), dir.path().join("v2.tvid"));
    write_clip(&v1, "one", 4);
    write_clip(&v2, "two", 5);

    let one = sopforge(&["run", "--task", "connect_videos", "--input", p(&v1), "--auto"]);
    assert_eq!(one.status.code(), Some(2));
    assert!(!one.stderr.is_empty());

    let out = dir.path().join("joined.tvid");
    let both = sopforge(&["run", "--task", "connect_videos", "--input", p(&v1), "--input", p(&v2), "--auto", "--out", p(&out)]);
    let report = json(&both);
    assert!(report["tmean"].as_f64().is_some());
    assert_eq!(load_tvid(&out).unwrap().len(), 4 + 4 + 5);

    let ext = dir.path().join("ext.tvid");
    let r = sopforge(&["run", "--task", "extend_video", "--input", p(&v1), "--auto", "--out", p(&ext)]);
    assert!(json(&r)["tcon"].as_f64().is_some());
    assert_eq!(load_tvid(&ext).unwrap().first_frame(), load_tvid(&v1).unwrap().last_frame());

    let missing = sopforge(&["run", "--task", "extend_video", "--input", p(&dir.path().join("nope.tvid")), "--auto"]);
    assert_ne!(missing.status.code(), Some(0));
    let no_prompt = sopforge(&["run", "--task", "text_to_video", "--auto"]);
    assert_eq!(no_prompt.status.code(), Some(2));
}

#[test]
fn interactive_run_reads_decisions() {
    let args = ["run", "--task", "text_to_video", "--prompt", "blob", "--seed", "1"];
    let done = sopforge_stdin(&args, "approve\nretry\nedit\napprove\napprove\n");
    assert!(done.status.success(), "{}", String::from_utf8_lossy(&done.stderr));
    let aborted = sopforge_stdin(&args, "approve\n");
    assert_eq!(aborted.status.code(), Some(1));
    let exhausted = sopforge_stdin(&args, "r\nr\nr\nr\n");
    assert_eq!(exhausted.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&exhausted.stderr).contains("retr"));
}

#[test]
fn gradcheck_passes() {
    let out = sopforge(&["gradcheck"]);
    let report = json(&out);
    assert!(report["max_relative_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(report["chains"].as_array().unwrap().len(), 2);
}

#[test]
fn train_writes_checkpoint_and_resumable_history() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path| ["train", "--iterations", "1", "--prompts", "4", "--epochs", "3", "--seed", "4", "--out", p(out)].map(String::from);
    let x = json(&sopforge(&args(&a).each_ref().map(String::as_str)));
    json(&sopforge(&args(&b).each_ref().map(String::as_str)));
    assert_eq!(x["iterations"].as_array().unwrap().len(), 1);
    for f in ["manifest.json", "weights.bin", "history.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ck = read_checkpoint(&a).unwrap();
    assert_eq!(ck.meta.epoch, 3);

    let vid = dir.path().join("trained.tvid");
    let r = sopforge(&["run", "--task", "text_to_video", "--prompt", "blob", "--auto", "--checkpoint", p(&a), "--out", p(&vid)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn metrics_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v.tvid");
    write_clip(&v, "blob", 6);
    let r = json(&sopforge(&["metrics", "--video", p(&v), "--ref", p(&v), "--prompt", "blob"]));
    assert!((r["tcon"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(r["tmean"].is_null());
    let r = json(&sopforge(&["metrics", "--video", p(&v), "--prev", p(&v), "--next", p(&v)]));
    assert!((r["tmean"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(sopforge(&["metrics", "--video", p(&v), "--prev", p(&v)]).status.code(), Some(2));
}
