use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_codectrace"));
    c.env("RUST_LOG", "warn").env_remove("CODECTRACE_OUT_ROOT");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_corpus(dir: &Path, out: &str, seed: &str) {
    ok(dir, &["gen-corpus", "--out", out, "--task", "aux", "--n-utts", "12", "--id-threshold", "8", "--seed", seed]);
}

#[test]
fn help_lists_every_flag_of_every_command() {
    let t = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 7] = [
        ("gen-corpus", &["--out", "--force", "--config", "--task", "--n-utts", "--id-threshold", "--seed"]),
        ("pretrain-semantic", &["--corpus", "--profile", "--epochs", "--seed"]),
        (
            "train",
            &[
                "--variant", "--task", "--epochs", "--batch-size", "--lr", "--mask-ratio", "--margin", "--augment",
                "--coarse-init", "--tuned-from", "--semantic", "--resume", "--dry-run",
            ],
        ),
        ("eval", &["--checkpoint", "--semantic", "--grid", "--correlation"]),
        ("ablate", &["--variants", "--coarse-init", "--tuned-from"]),
        ("attn", &["--checkpoint", "--keys", "--limit"]),
        ("plot", &["--cell", "--out"]),
    ];
    for (cmd, flags) in cases {
        let o = run(t.path(), &[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let text = String::from_utf8(o.stdout).unwrap();
        for f in flags.iter().chain(&["--threads"]) {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn usage_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(t.path(), &["train", "--bogus"])), 2);
    assert_eq!(code(&run(t.path(), &["no-such-command"])), 2);
    assert_eq!(code(&run(t.path(), &["gen-corpus", "--out", "c", "--task", "xyz"])), 2);
}

#[test]
fn corpus_is_reproducible_and_guarded() {
    let t = tempfile::tempdir().unwrap();
    small_corpus(t.path(), "a", "3");
    small_corpus(t.path(), "b", "3");
    let (a, b) = (json(&t.path().join("a/run.json")), json(&t.path().join("b/run.json")));
    assert_eq!(a["config_digest"], b["config_digest"]);
    assert_eq!(a["outputs"], b["outputs"]);
    for f in a["outputs"].as_array().unwrap() {
        let f = f.as_str().unwrap();
        let read = |d: &str| std::fs::read(t.path().join(d).join(f)).unwrap();
        assert_eq!(read("a"), read("b"), "{f} differs");
    }

    let o = run(t.path(), &["gen-corpus", "--out", "a", "--n-utts", "12"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    ok(t.path(), &["gen-corpus", "--out", "a", "--n-utts", "12", "--id-threshold", "8", "--force"]);
    assert_ne!(json(&t.path().join("a/run.json"))["config_digest"], b["config_digest"]);
}

#[test]
fn aux_flag_balances_aux_classes() {
    let t = tempfile::tempdir().unwrap();
    small_corpus(t.path(), "c", "0");
    let text = std::fs::read_to_string(t.path().join("c/manifest.jsonl")).unwrap();
    let mut counts = [0usize; 3];
    for line in text.lines().skip(1) {
        let r: Value = serde_json::from_str(line).unwrap();
        if r["unseen_codec"].as_bool().unwrap() {
            continue;
        }
        let class = match r["label"]["aux"].as_str().unwrap() {
            "real" => 0,
            "semantic_distill" => 1,
            "disentangle" => 2,
            _ => continue,
        };
        counts[class] += 1;
    }
    assert_eq!(counts[0], counts[1]);
    assert_eq!(counts[1], counts[2]);
}

#[test]
fn paper_profile_echo() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(t.path(), &["train", "--profile", "paper", "--dry-run", "--corpus", "c", "--out", "o"]);
    let field = |k: &str| {
        out.lines()
            .find(|l| l.split_whitespace().next() == Some(k))
            .and_then(|l| l.split_whitespace().nth(1))
            .unwrap_or_else(|| panic!("no `{k}` in echo:\n{out}"))
            .to_string()
    };
    assert_eq!(field("lr"), "5e-6");
    assert_eq!(field("batch"), "12");
    assert_eq!(field("epochs"), "40");
    assert_eq!(field("mask"), "0.4");
    assert_eq!(field("margin"), "0.1");
    assert!(!t.path().join("o").exists());
}

#[test]
fn tuned_init_without_baseline_names_the_artifact() {
    let t = tempfile::tempdir().unwrap();
    small_corpus(t.path(), "c", "0");
    let o = run(t.path(), &["train", "--corpus", "c", "--out", "r", "--variant", "coarse_plus_mae", "--coarse-init", "tuned", "--epochs", "1"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--tuned-from"));
    let o = run(
        t.path(),
        &["train", "--corpus", "c", "--out", "r", "--variant", "coarse_plus_mae", "--coarse-init", "tuned", "--tuned-from", "nowhere", "--epochs", "1"],
    );
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn missing_corpus_is_an_io_failure() {
    let t = tempfile::tempdir().unwrap();
    let o = run(t.path(), &["train", "--corpus", "absent", "--out", "r", "--variant", "baseline"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent"));
}

#[test]
fn pipeline_end_to_end() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    small_corpus(d, "c", "0");
    ok(d, &["pretrain-semantic", "--corpus", "c", "--out", "sem", "--epochs", "2"]);
    let train = |out: &str, extra: &[&str]| {
        let mut args = vec!["train", "--corpus", "c", "--out", out, "--semantic", "sem", "--epochs", "1", "--augment", "false"];
        args.extend_from_slice(extra);
        ok(d, &args)
    };
    train("base", &["--variant", "baseline"]);
    train("s1", &["--variant", "sastnet", "--coarse-init", "tuned", "--tuned-from", "base/best"]);
    train("s1b", &["--variant", "sastnet", "--coarse-init", "tuned", "--tuned-from", "base/best"]);
    let log = |r: &str| std::fs::read_to_string(d.join(r).join("train_log.jsonl")).unwrap();
    assert_eq!(log("s1"), log("s1b"));
    assert_eq!(
        std::fs::read(d.join("s1/best/model.safetensors")).unwrap(),
        std::fs::read(d.join("s1b/best/model.safetensors")).unwrap()
    );

    ok(d, &["train", "--corpus", "c", "--out", "s2", "--semantic", "sem", "--resume", "s1", "--epochs", "2"]);
    let steps = |r: &str| -> Vec<u64> { log(r).lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["step"].as_u64().unwrap()).collect() };
    let (first, resumed) = (steps("s1"), steps("s2"));
    assert_eq!(resumed[0], first.last().unwrap() + 1);
    assert_eq!(json(&d.join("s2/last/checkpoint.json"))["epoch"], 1);

    ok(d, &["eval", "--corpus", "c", "--checkpoint", "s2/best", "--semantic", "sem", "--grid", "--out", "ev"]);
    let grid = json(&d.join("ev/grid.json"));
    assert_eq!(grid["cells"].as_array().unwrap().len(), 4);
    let mut tags: Vec<String> = grid["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| format!("{}/{}", c["conditions"]["content"].as_str().unwrap(), c["conditions"]["silence"].as_str().unwrap()))
        .collect();
    tags.sort();
    assert_eq!(tags, ["seen/with", "seen/without", "unseen/with", "unseen/without"]);

    ok(d, &["eval", "--corpus", "c", "--checkpoint", "s2/best", "--semantic", "sem", "--grid", "--out", "ev2"]);
    for f in ["grid.json", "reports/seen_with_silence.json", "summary.txt"] {
        assert_eq!(std::fs::read(d.join("ev").join(f)).unwrap(), std::fs::read(d.join("ev2").join(f)).unwrap());
    }

    ok(d, &["attn", "--corpus", "c", "--checkpoint", "s2/best", "--semantic", "sem", "--out", "at", "--limit", "2"]);
    let exports: Vec<_> = std::fs::read_dir(d.join("at/attn")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(exports.len(), 2);
    for e in &exports {
        let v = json(e);
        let stages: Vec<&str> = v["maps"].as_array().unwrap().iter().map(|m| m["stage"].as_str().unwrap()).collect();
        assert_eq!(stages, ["sa", "as", "fusion"]);
    }

    ok(d, &["plot", "ev/reports", "at", "--out", "pl"]);
    let pngs: Vec<String> = std::fs::read_dir(d.join("pl"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    assert_eq!(pngs.iter().filter(|n| n.ends_with("_confusion.png")).count(), 5);
    assert_eq!(pngs.len(), 5 + 3 * exports.len());

    // A wrong-schema input is rejected with the field named.
    let o = run(d, &["plot", "s2/best/checkpoint.json", "--out", "bad"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`schema`"));

    // Evaluating with a different backbone is refused.
    ok(d, &["pretrain-semantic", "--corpus", "c", "--out", "sem2", "--epochs", "2", "--seed", "9"]);
    let o = run(d, &["eval", "--corpus", "c", "--checkpoint", "s2/best", "--semantic", "sem2", "--out", "ev3"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("semantic_digest"));
}

#[test]
fn out_root_env_relocates_relative_outputs() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path().join("root");
    let o = bin()
        .current_dir(t.path())
        .env("CODECTRACE_OUT_ROOT", &root)
        .args(["gen-corpus", "--out", "c", "--n-utts", "4", "--id-threshold", "2"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("c/manifest.jsonl").exists());
    assert!(!t.path().join("c").exists());
}
