use std::path::Path;
use std::process::{Command, Output};

fn forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn synth(dir: &Path, n: &str) {
    let out = forge(dir, &["synth", "--n", n, "--out", "c.jsonl", "--gold", "g.tsv", "--refs", "r.txt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(forge(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(forge(d, &["--help"]).status.code(), Some(0));
    assert_eq!(forge(d, &["stats", "--in", "missing.jsonl"]).status.code(), Some(2));

    synth(d, "12");
    assert_eq!(
        forge(d, &["gen", "train", "--mode", "rl", "--corpus", "c.jsonl", "--out", "x.ckpt"]).status.code(),
        Some(1)
    );
    assert_eq!(
        forge(d, &["gen", "train", "--corpus", "c.jsonl", "--out", "x.ckpt", "--set", "generator.dropout=2"])
            .status
            .code(),
        Some(1)
    );
    std::fs::write(d.join("bad.ckpt"), b"FORGECKPgarbage").unwrap();
    assert_eq!(
        forge(d, &["gen", "decode", "--checkpoint", "bad.ckpt", "--in", "c.jsonl", "--out", "o.txt"]).status.code(),
        Some(2)
    );
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "15");
    std::fs::write(
        d.join("exp.toml"),
        "seed = 3\n[paths]\ncorpus = \"c.jsonl\"\ncheckpoint = \"b.ckpt\"\n[generator]\nepochs = 1\nhidden_dim = 5\nembed_dim = 5\n",
    )
    .unwrap();
    let out = forge(d, &["gen", "train", "--config", "exp.toml", "--set", "generator.hidden_dim=4", "--set", "generator.embed_dim=4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("b.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["generator"]["hidden_dim"], 4);
    assert_eq!(manifest["config"]["generator"]["seed"], 3);
    assert!(manifest["inputs"].get("exp.toml").is_some());
    assert!(d.join("b.ckpt.loss.tsv").exists());
    assert!(d.join("b.ckpt.tensors.txt").exists());

    std::fs::write(d.join("typo.toml"), "[generator]\nepoch = 1\n").unwrap();
    assert_eq!(forge(d, &["gen", "train", "--config", "typo.toml", "--corpus", "c.jsonl"]).status.code(), Some(1));
}

#[test]
fn rerun_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "10");
    assert!(forge(d, &["template", "--in", "c.jsonl", "--out", "t.txt"]).status.success());
    assert!(forge(d, &["rerun", "t.txt.manifest.json"]).status.success());
    let mut text = std::fs::read_to_string(d.join("c.jsonl")).unwrap();
    text.truncate(text.trim_end().rfind('\n').unwrap() + 1);
    std::fs::write(d.join("c.jsonl"), text).unwrap();
    assert_eq!(forge(d, &["rerun", "t.txt.manifest.json"]).status.code(), Some(2));
}

#[test]
fn bleu_against_itself_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "10");
    let out = forge(d, &["eval", "bleu", "--cand", "r.txt", "--refs", "r.txt,r.txt"]);
    assert!(out.status.success());
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.starts_with("bleu4\t1.000000"), "{report}");
    assert!(report.contains("segments\t10"));
}
