use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 8] = [
    "synth",
    "build-vocab",
    "build-graph",
    "embed-graph",
    "train",
    "eval",
    "sweep-alpha",
    "ablate",
];

/// Small model so end-to-end runs finish in seconds.
const DESK_CONFIG: &str = r#"{
  "world": {"n_users": 300},
  "model": {"word_dim": 12, "char_dim": 8, "filter_sizes": [2, 3, 4], "filters_per_size": 4,
            "heads": 2, "layers": 1, "ffn_dim": 24, "max_tweets": 6, "max_tokens": 10, "max_chars": 10},
  "train": {"max_epochs": 2, "lr_initial": 0.001, "lr_reduced": 0.0001},
  "line": {"dim": 24}
}"#;

fn hlpnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlpnn"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn hlpnn")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "help for {name} drifted; rerun with UPDATE_GOLDEN=1 if intended");
}

#[test]
fn help_matches_golden_files() {
    let out = hlpnn(&["--help"]);
    assert!(out.status.success());
    let top = String::from_utf8(out.stdout).unwrap();
    for sub in SUBCOMMANDS {
        assert!(top.contains(sub), "top-level help lists {sub}");
    }
    check_golden("hlpnn", &top);
    for sub in SUBCOMMANDS {
        let out = hlpnn(&[sub, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        for flag in ["--config", "--seed", "--threads", "--out"] {
            assert!(text.contains(flag), "{sub} --help lists {flag}");
        }
        check_golden(sub, &text);
    }
}

#[test]
fn unknown_subcommand_and_bad_flags_exit_2() {
    assert_eq!(hlpnn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(hlpnn(&["train", "--threads", "0"]).status.code(), Some(2));
    assert_eq!(hlpnn(&["synth", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(hlpnn(&["eval", "--data", "x.jsonl"]).status.code(), Some(2));
}

#[test]
fn train_without_registry_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("default.json");
    fs::write(&cfg, "{}").unwrap();
    let out = hlpnn(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--registry"));
}

#[test]
fn runtime_errors_exit_1_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.ckpt");
    let out = hlpnn(&["eval", "--checkpoint", s(&missing), "--data", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(stderr.trim().lines().last().unwrap()).unwrap();
    assert!(v["error"].as_str().unwrap().contains("absent.ckpt"));

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"modle": {}}"#).unwrap();
    let out = hlpnn(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: PathBuf,
}

impl Pipeline {
    fn new() -> Pipeline {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let cfg = root.join("cfg.json");
        fs::write(&cfg, DESK_CONFIG).unwrap();
        let world = root.join("world");
        let out = hlpnn(&["synth", "--config", s(&cfg), "--seed", "5", "--out", s(&world)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Pipeline { _dir: dir, root, cfg }
    }

    fn data(&self, name: &str) -> PathBuf {
        self.root.join("world").join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.root.join(out);
        let (cfg, train, dev, reg) = (
            self.cfg.clone(),
            self.data("train.jsonl"),
            self.data("dev.jsonl"),
            self.data("cities.tsv"),
        );
        let mut args = vec![
            "train", "--config", s(&cfg), "--train", s(&train), "--dev", s(&dev), "--registry", s(&reg),
            "--threads", "1", "--seed", "2", "--out", s(&out),
        ];
        args.extend_from_slice(extra);
        let res = hlpnn(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        out
    }
}

#[test]
fn synth_writes_registry_splits_and_edges() {
    let p = Pipeline::new();
    for f in ["cities.tsv", "train.jsonl", "dev.jsonl", "test.jsonl", "edges.tsv", "manifest.json"] {
        assert!(p.data(f).is_file(), "{f}");
    }
    let again = p.root.join("again");
    let out = hlpnn(&["synth", "--config", s(&p.cfg), "--seed", "5", "--out", s(&again)]);
    assert!(out.status.success());
    for f in ["cities.tsv", "train.jsonl", "dev.jsonl", "test.jsonl", "edges.tsv"] {
        assert_eq!(fs::read(p.data(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn graph_and_embedding_commands_are_reproducible() {
    let p = Pipeline::new();
    let files = [p.data("train.jsonl"), p.data("dev.jsonl"), p.data("test.jsonl")];
    let mut outputs = Vec::new();
    for run in 0..2 {
        let edges = p.root.join(format!("edges{run}.tsv"));
        let emb = p.root.join(format!("emb{run}.txt"));
        let out = hlpnn(&[
            "build-graph", "--data", s(&files[0]), s(&files[1]), s(&files[2]), "--out", s(&edges),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = hlpnn(&[
            "embed-graph", "--config", s(&p.cfg), "--edges", s(&edges), "--threads", "1", "--out", s(&emb),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((fs::read(&edges).unwrap(), fs::read(&emb).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn train_is_byte_reproducible_and_eval_reports_five_metrics() {
    let p = Pipeline::new();
    let vocab = p.root.join("vocab");
    let out = hlpnn(&["build-vocab", "--train", s(&p.data("train.jsonl")), "--out", s(&vocab)]);
    assert!(out.status.success());
    let a = p.train("a", &["--vocab", s(&vocab)]);
    let b = p.train("b", &["--vocab", s(&vocab)]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
    assert!(manifest["version"].is_string());

    let (ckpt, test, reg) = (a.join("model.ckpt"), p.data("test.jsonl"), p.data("cities.tsv"));
    let report = p.root.join("report.json");
    let out = hlpnn(&[
        "eval", "--checkpoint", s(&ckpt), "--data", s(&test), "--registry", s(&reg), "--out", s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    for key in ["accuracy", "acc161", "median_km", "mean_km", "relative_country_error"] {
        assert!(v[key].is_number(), "{key}");
    }
    let stdout = hlpnn(&["eval", "--checkpoint", s(&ckpt), "--data", s(&test), "--threads", "3"]);
    let w: serde_json::Value = serde_json::from_slice(&stdout.stdout).unwrap();
    assert_eq!(v, w, "evaluation does not depend on the thread count");
}

#[test]
fn eval_rejects_a_foreign_registry() {
    let p = Pipeline::new();
    let a = p.train("a", &[]);
    let other = p.root.join("other.tsv");
    fs::write(&other, "x\tX\t1.0\t2.0\n").unwrap();
    let out = hlpnn(&[
        "eval", "--checkpoint", s(&a.join("model.ckpt")), "--data", s(&p.data("dev.jsonl")), "--registry", s(&other),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_alpha_and_seed() {
    let p = Pipeline::new();
    let csv = p.root.join("sweep.csv");
    let (cfg, tr, dv, te, reg) = (
        p.cfg.clone(),
        p.data("train.jsonl"),
        p.data("dev.jsonl"),
        p.data("test.jsonl"),
        p.data("cities.tsv"),
    );
    let args = [
        "sweep-alpha", "--config", s(&cfg), "--train", s(&tr), "--dev", s(&dv), "--test", s(&te), "--registry",
        s(&reg), "--alphas", "0,1", "--seeds", "0,1", "--out", s(&csv),
    ];
    let out = hlpnn(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,seed,rce,accuracy");
    assert_eq!(lines.len(), 5);
    let first = fs::read(&csv).unwrap();
    assert!(hlpnn(&args).status.success());
    assert_eq!(first, fs::read(&csv).unwrap());

    let bad = hlpnn(&["sweep-alpha", "--alphas=-1", "--out", s(&csv)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ablate_reports_each_variant_and_seed() {
    let p = Pipeline::new();
    let json = p.root.join("ablation.json");
    let (cfg, tr, dv, te, reg) = (
        p.cfg.clone(),
        p.data("train.jsonl"),
        p.data("dev.jsonl"),
        p.data("test.jsonl"),
        p.data("cities.tsv"),
    );
    let out = hlpnn(&[
        "ablate", "--config", s(&cfg), "--train", s(&tr), "--dev", s(&dv), "--test", s(&te), "--registry", s(&reg),
        "--variants", "full,no-char-cnn,no-country", "--seeds", "0", "--out", s(&json),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["full", "no-char-cnn", "no-country"]);
    assert!(rows.iter().all(|r| r["test"]["accuracy"].is_number()));
}
