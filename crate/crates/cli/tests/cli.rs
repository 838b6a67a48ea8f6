use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use recdiff::synthetic::{generate, SyntheticSpec};

fn recdiff(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_recdiff"));
    cmd.args(args).env("RUST_LOG", "warn");
    match out_env {
        Some(p) => cmd.env("RECDIFF_OUT", p),
        None => cmd.env_remove("RECDIFF_OUT"),
    };
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_log(path: &Path, seed: u64) {
    let data = generate(&SyntheticSpec { users: 60, items: 40, semantic_dim: 6, seed, ..Default::default() }).unwrap();
    let mut s = String::from("user,item,timestamp\n");
    for r in &data.interactions {
        writeln!(s, "{},{},{}", r.user, r.item, r.timestamp).unwrap();
    }
    fs::write(path, s).unwrap();
}

const CONFIG: &str = r#"
[data]
dir = "prep"
semantic = "semantic.csv"

[embedding]
dim = 8

[fusion]
strategy = "gated"

[encoder]
heads = 2
layers = 1
max_len = 10

[intent]
k = 3
clustering_interval = 4

[diffusion]
steps = 5
hidden_width = 8
time_dim = 4

[train]
batch_size = 32
epochs = 2
"#;

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&recdiff(&["--help"], None)), 0);
    assert_eq!(code(&recdiff(&["train", "--help"], None)), 0);
    assert_eq!(code(&recdiff(&[], None)), 1);
    assert_eq!(code(&recdiff(&["frobnicate"], None)), 1);
    assert_eq!(code(&recdiff(&["train"], None)), 1);
}

#[test]
fn prepare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("log.csv");
    write_log(&raw, 0);
    let out = dir.path().join("prep");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let o = recdiff(&["prepare", "--raw", &s(&raw), "--kind", "magic", "--out", &s(&out)], None);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("valid kinds"), "{}", stderr(&o));

    let missing = dir.path().join("nope.csv");
    let o = recdiff(&["prepare", "--raw", &s(&missing), "--kind", "toys", "--out", &s(&out)], None);
    assert_eq!(code(&o), 2);

    let o = recdiff(&["prepare", "--raw", &s(&raw), "--kind", "toys", "--out", &s(&out)], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("users"));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn end_to_end_with_output_root_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    write_log(&p.join("log.csv"), 0);
    let steps: [&[&str]; 2] = [
        &["prepare", "--raw", &s(&p.join("log.csv")), "--kind", "beauty", "--out", &s(&p.join("prep"))],
        &["embed-pseudo", "--prompts", &s(&p.join("prep/prompts.jsonl")), "--dim", "6", "--out", &s(&p.join("semantic.csv"))],
    ];
    for args in steps {
        let o = recdiff(args, None);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    }
    fs::write(p.join("config.toml"), CONFIG).unwrap();
    let runs = p.join("runs");

    let o = recdiff(&["train", "--config", &s(&p.join("config.toml")), "--override", "fusion.strategy=magic"], Some(&runs));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("fusion.strategy"), "{}", stderr(&o));

    let o = recdiff(&["train", "--config", &s(&p.join("config.toml")), "--override", "train.epochs=1"], Some(&runs));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = runs.join("train").join("checkpoint.bin");
    assert!(ck.exists());
    assert_eq!(fs::read_to_string(runs.join("train").join("train_log.jsonl")).unwrap().lines().count(), 1);

    let o = recdiff(&["evaluate", "--checkpoint", &s(&ck), "--out", &s(&p.join("eval"))], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("HR@10"));

    // a differently generated dataset has another vocabulary
    write_log(&p.join("other.csv"), 7);
    let o = recdiff(&["prepare", "--raw", &s(&p.join("other.csv")), "--kind", "beauty", "--out", &s(&p.join("other"))], None);
    assert_eq!(code(&o), 0);
    let o = recdiff(&["evaluate", "--checkpoint", &s(&ck), "--data", &s(&p.join("other")), "--out", &s(&p.join("e2"))], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("vocabulary"), "{}", stderr(&o));
}
