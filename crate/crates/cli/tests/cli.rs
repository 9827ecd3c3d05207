use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reasoner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reasoner"))
        .args(args)
        .output()
        .expect("spawn reasoner")
}

fn ok(args: &[&str]) -> String {
    let out = reasoner(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"
seed = 11

[data]
pool_size = 48

[distill]
iterations = 2
pretrain_steps = 2
sft_steps = 4
batch_size = 8

[rl]
steps = 6
prompts_per_step = 8
pool_size = 24

[eval]
min_effective = 48
"#;

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn distill_then_rl_from_checkpoint_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let d = dir.path().join(name).join("distill");
            let r = dir.path().join(name).join("rl");
            ok(&["distill", "--config", &cfg, "--out", s(&d)]);
            let ckpt = d.join("policy.ckpt");
            ok(&["rl", "--config", &cfg, "--out", s(&r), "--init", s(&ckpt)]);
            (d, r)
        })
        .collect();
    for file in ["distill_baseline.csv", "distill.csv", "distill_control.csv"] {
        assert_eq!(fs::read(runs[0].0.join(file)).unwrap(), fs::read(runs[1].0.join(file)).unwrap(), "{file}");
    }
    let rl = fs::read_to_string(runs[0].1.join("rl.csv")).unwrap();
    assert_eq!(rl.lines().count(), 7);
    assert_eq!(rl, fs::read_to_string(runs[1].1.join("rl.csv")).unwrap());
    assert!(fs::read_to_string(runs[0].0.join("summary.md")).unwrap().contains("Iterative distillation"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["rl", "--config", &cfg, "--out", s(&a)]);
    ok(&["rl", "--config", &cfg, "--seed", "12", "--out", s(&b)]);
    assert_ne!(fs::read(a.join("rl.csv")).unwrap(), fs::read(b.join("rl.csv")).unwrap());
}

#[test]
fn evaluate_uniform_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = ok(&["evaluate", "--config", &cfg, "--out", s(dir.path())]);
    assert!(out.contains("over 1 runs of 48 prompts"), "{out}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["runs"], 1);
}

#[test]
fn rewards_writes_audit_log() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.jsonl");
    fs::write(
        &samples,
        concat!(
            r#"{"id":"m1","prompt":"compute 3 + 4 mod 5","reference_answer":"2","task_label":"math"}"#,
            "\n",
            r#"{"id":"g1","prompt":"describe the sea","task_label":"general"}"#,
            "\n"
        ),
    )
    .unwrap();
    let responses = dir.path().join("responses.jsonl");
    fs::write(
        &responses,
        concat!(
            r#"{"sample_id":"m1","response":"<think> 3 + 4 = 7 </think> 2"}"#,
            "\n",
            r#"{"sample_id":"m1","response":"3"}"#,
            "\n",
            r#"{"sample_id":"g1","response":"waves and salt under a grey sky"}"#,
            "\n"
        ),
    )
    .unwrap();
    ok(&["rewards", "--samples", s(&samples), "--responses", s(&responses), "--out", s(dir.path())]);
    let lines: Vec<serde_json::Value> = fs::read_to_string(dir.path().join("rewards.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    let m1: Vec<f64> = lines
        .iter()
        .filter(|l| l["sample_id"] == "m1")
        .map(|l| l["total"].as_f64().unwrap())
        .collect();
    assert_eq!(m1, vec![1.0, 0.0]);

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, r#"{"sample_id":"nope","response":"1"}"#).unwrap();
    assert!(!reasoner(&["rewards", "--samples", s(&samples), "--responses", s(&bad), "--out", s(dir.path())])
        .status
        .success());
}

#[test]
fn dedup_and_zipselect() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pool.jsonl");
    let prompts = [
        "the quick brown fox jumps over the lazy dog near the river bank",
        "the quick brown fox jumps over the lazy dog near the river bank",
        "integrate x squared from zero to one and simplify the result",
        "list every prime below fifty and explain how you checked each",
    ];
    let body: String = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{{\"id\":\"s{i}\",\"prompt\":\"{p}\",\"task_label\":\"general\"}}\n"))
        .collect();
    fs::write(&input, body).unwrap();
    let out = ok(&["dedup", "--input", s(&input), "--out", s(dir.path())]);
    assert!(out.contains("kept 3 of 4"), "{out}");
    let out = ok(&["zipselect", "--input", s(&input), "--budget", "3", "--out", s(dir.path())]);
    assert!(out.contains("selected 3"), "{out}");
    let picked = fs::read_to_string(dir.path().join("zipselect.jsonl")).unwrap();
    assert!(!(picked.contains("\"s0\"") && picked.contains("\"s1\"")));
    assert!(!reasoner(&["zipselect", "--input", s(&input), "--budget", "9", "--out", s(dir.path())])
        .status
        .success());
}

#[test]
fn scheduler_bsp_equals_ssp_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("bsp");
    let b = dir.path().join("ssp0");
    ok(&["simulate-scheduler", "--batches", "12", "--mode", "bsp", "--out", s(&a)]);
    let trace = a.join("trace.jsonl");
    ok(&["simulate-scheduler", "--trace", s(&trace), "--mode", "ssp", "--staleness", "0", "--out", s(&b)]);
    assert_eq!(fs::read(a.join("events.csv")).unwrap(), fs::read(b.join("events.csv")).unwrap());
    let out = ok(&["simulate-scheduler", "--trace", s(&trace), "--workers", "2,2,1,1", "--compare", "2", "--out", s(&b)]);
    assert!(out.contains("ssp-s2"), "{out}");
    assert!(!reasoner(&["simulate-scheduler", "--workers", "1,1", "--out", s(&b)]).status.success());
}

#[test]
fn detect_repetition_ablation_and_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["detect-repetition", "--sequences", "6", "--max-len", "8192", "--out", s(dir.path())]);
    assert!(out.contains("self_repair: flagged 3 injected 3 truncated 0"), "{out}");
    assert!(dir.path().join("repetition_events.csv").exists());

    let toml = dir.path().join("det.toml");
    fs::write(
        &toml,
        "[detector]\nngram_size = 8\nwindow = 16\nsubgram = 2\njaccard_threshold = 0.6\nt_detect = 24\ncontrol_prompt = [3]\nself_repair = true\n",
    )
    .unwrap();
    let looping: Vec<String> = (0..48).map(|i| (4 + i % 3).to_string()).collect();
    let input = dir.path().join("tokens.jsonl");
    fs::write(
        &input,
        format!(
            "{{\"id\":\"loop\",\"tokens\":[{}]}}\n{{\"id\":\"short\",\"tokens\":[4,5,6]}}\n",
            looping.join(",")
        ),
    )
    .unwrap();
    let out = ok(&["detect-repetition", "--config", s(&toml), "--input", s(&input), "--out", s(dir.path())]);
    assert!(out.contains("1 of 2 sequences flagged"), "{out}");
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = reasoner(&["evaluate", "--config", "/definitely/missing.toml", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[distill]\niterations = 0\n").unwrap();
    assert_eq!(reasoner(&["distill", "--config", s(&bad), "--out", s(dir.path())]).status.code(), Some(1));
    fs::write(&bad, "[distill]\nunknown_key = 1\n").unwrap();
    assert_eq!(reasoner(&["distill", "--config", s(&bad), "--out", s(dir.path())]).status.code(), Some(1));
    assert!(!reasoner(&["no-such-command"]).status.success());
}
