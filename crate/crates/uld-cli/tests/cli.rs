//! End-to-end behaviors of the `uld` binary: exit codes, output formats,
//! seeded byte-reproducibility, and help/config-schema consistency.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uld_cli::config::CONFIG_KEYS;

fn uld() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uld"))
}

fn run(args: &[&str]) -> Output {
    uld().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Builds a tiny but fully trained world under `dir`: corpus, teacher,
/// answered corpus.
fn build_world(dir: &Path) {
    let d = dir.to_str().unwrap();
    let out = run(&[
        "gen-corpus",
        "--out-dir",
        d,
        "--seed",
        "42",
        "--n-items",
        "100",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let corpus = format!("{d}/corpus.jsonl");
    let out = run(&[
        "train-teacher",
        "--out-dir",
        d,
        "--corpus",
        &corpus,
        "--merges",
        "48",
        "--epochs",
        "12",
        "--max-lr",
        "8e-3",
        "--seed",
        "5",
        "--d-model",
        "32",
        "--n-heads",
        "2",
        "--n-layers",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let out = run(&[
        "gen-answers",
        "--out-dir",
        d,
        "--corpus",
        &corpus,
        "--teacher-ckpt",
        &format!("{d}/teacher.ckpt"),
        "--teacher-vocab",
        &format!("{d}/teacher.vocab"),
        "--teacher-merges",
        &format!("{d}/teacher.merges"),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
}

#[test]
fn gen_corpus_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run(&[
            "gen-corpus",
            "--out-dir",
            d.to_str().unwrap(),
            "--seed",
            "7",
            "--n-items",
            "120",
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    assert_eq!(
        fs::read(a.join("corpus.jsonl")).unwrap(),
        fs::read(b.join("corpus.jsonl")).unwrap()
    );
}

#[test]
fn pipeline_outputs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    build_world(dir.path());
    let d = dir.path().to_str().unwrap();
    let run_distill = |out_dir: &Path| {
        let out = run(&[
            "distill",
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--corpus",
            &format!("{d}/answered.jsonl"),
            "--teacher-ckpt",
            &format!("{d}/teacher.ckpt"),
            "--teacher-vocab",
            &format!("{d}/teacher.vocab"),
            "--teacher-merges",
            &format!("{d}/teacher.merges"),
            "--mode",
            "uld",
            "--seed",
            "3",
            "--epochs",
            "1",
            "--dataset-fraction",
            "0.5",
            "--d-model",
            "16",
            "--n-heads",
            "2",
            "--n-layers",
            "1",
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
    };
    let a = dir.path().join("run_a");
    let b = dir.path().join("run_b");
    run_distill(&a);
    run_distill(&b);
    for file in ["student.ckpt", "student.vocab", "metrics.jsonl"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file} differs between identical seeded runs"
        );
    }
}

#[test]
fn kl_mode_across_tokenizers_exits_2_and_names_sizes() {
    let dir = tempfile::tempdir().unwrap();
    build_world(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = run(&[
        "distill",
        "--out-dir",
        d,
        "--corpus",
        &format!("{d}/answered.jsonl"),
        "--teacher-ckpt",
        &format!("{d}/teacher.ckpt"),
        "--teacher-vocab",
        &format!("{d}/teacher.vocab"),
        "--teacher-merges",
        &format!("{d}/teacher.merges"),
        "--mode",
        "kl",
        "--epochs",
        "1",
        "--d-model",
        "16",
        "--n-heads",
        "2",
        "--n-layers",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    // The diagnostic must name both vocabulary sizes.
    assert!(err.contains("33"), "missing student vocab size: {err}");
    assert!(err.contains("support mismatch"), "unexpected message: {err}");
}

#[test]
fn kl_mode_with_shared_tokenizer_trains() {
    let dir = tempfile::tempdir().unwrap();
    build_world(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = run(&[
        "distill",
        "--out-dir",
        d,
        "--corpus",
        &format!("{d}/answered.jsonl"),
        "--teacher-ckpt",
        &format!("{d}/teacher.ckpt"),
        "--teacher-vocab",
        &format!("{d}/teacher.vocab"),
        "--teacher-merges",
        &format!("{d}/teacher.merges"),
        "--mode",
        "kl",
        "--student-tokenizer",
        "teacher",
        "--epochs",
        "1",
        "--dataset-fraction",
        "0.25",
        "--d-model",
        "16",
        "--n-heads",
        "2",
        "--n-layers",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    // A subword student also writes its merge list for evaluation.
    assert!(dir.path().join("student.merges").exists());
}

#[test]
fn vocab_overlap_prints_percentage() {
    let dir = tempfile::tempdir().unwrap();
    build_world(dir.path());
    let d = dir.path().to_str().unwrap();
    let vocab = format!("{d}/teacher.vocab");
    let out = run(&["vocab-overlap", "--probe", &vocab, "--reference", &vocab]);
    assert!(out.status.success());
    assert!(
        stdout_of(&out).contains("overlap_pct=100.00"),
        "got {}",
        stdout_of(&out)
    );
}

#[test]
fn ot_check_reports_max_deviation() {
    let out = run(&["ot-check", "--n", "16", "--trials", "100"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("max_abs_dev="), "got {text}");
    let value: f64 = text
        .split("max_abs_dev=")
        .nth(1)
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .expect("deviation parses");
    assert!(value < 1e-9, "deviation {value} exceeds 1e-9");
}

#[test]
fn bench_ot_writes_csv_with_slope_footer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&[
        "bench-ot",
        "--out-dir",
        d,
        "--sizes",
        "16,32,64",
        "--reps",
        "2",
        "--exact-cap",
        "64",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("method,n,rep,seconds\n"), "header missing");
    assert!(csv.contains("closed_form,16,0,"));
    assert!(csv.contains("exact_ot,64,1,"));
    assert!(csv.contains("\nslope,closed_form,"));
    assert!(csv.contains("\nslope,exact_ot,"));
}

#[test]
fn unknown_flag_and_unknown_config_key_exit_1() {
    let out = run(&["gen-corpus", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("config error"));

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    fs::write(&config, "sead = 7\n").unwrap();
    let out = run(&["gen-corpus", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("unknown key"));
}

#[test]
fn missing_input_file_exits_1() {
    let out = run(&[
        "gen-answers",
        "--corpus",
        "/nonexistent/corpus.jsonl",
        "--teacher-ckpt",
        "/nonexistent/t.ckpt",
        "--teacher-vocab",
        "/nonexistent/t.vocab",
        "--teacher-merges",
        "/nonexistent/t.merges",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    fs::write(
        &config,
        "n_items = 40\nseed = 3\nout_dir = should-be-overridden\n",
    )
    .unwrap();
    let out_dir = dir.path().join("from-flag");
    let out = run(&[
        "gen-corpus",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(out_dir.join("corpus.jsonl").exists());
    let text = fs::read_to_string(out_dir.join("corpus.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 40, "n_items from config file");
}

#[test]
fn uld_out_environment_variable_is_default_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = uld()
        .args(["gen-corpus", "--seed", "1", "--n-items", "10"])
        .env("ULD_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(dir.path().join("corpus.jsonl").exists());
}

/// Every accepted config key appears in the help text of each subcommand
/// that uses it, so the documented surface and the config schema cannot
/// drift apart.
#[test]
fn help_lists_all_accepted_keys() {
    let schema: &[(&str, &[&str])] = &[
        ("gen-corpus", &["seed", "n_items", "out_dir"]),
        (
            "train-teacher",
            &[
                "corpus",
                "merges",
                "seed",
                "lambda",
                "tau",
                "epochs",
                "batch_size",
                "max_lr",
                "dataset_fraction",
                "eval_every",
                "max_new",
                "d_model",
                "n_heads",
                "n_layers",
                "context_len",
                "vocab_size",
                "out_dir",
            ],
        ),
        (
            "gen-answers",
            &[
                "corpus",
                "teacher_ckpt",
                "teacher_vocab",
                "teacher_merges",
                "max_new",
                "out_dir",
            ],
        ),
        (
            "distill",
            &[
                "corpus",
                "teacher_ckpt",
                "teacher_vocab",
                "teacher_merges",
                "mode",
                "cost_kind",
                "student_tokenizer",
                "student_init",
                "seed",
                "lambda",
                "tau",
                "epochs",
                "batch_size",
                "max_lr",
                "dataset_fraction",
                "eval_every",
                "max_new",
                "d_model",
                "n_heads",
                "n_layers",
                "context_len",
                "vocab_size",
                "out_dir",
            ],
        ),
        (
            "ablate-lambda",
            &[
                "corpus",
                "teacher_ckpt",
                "teacher_vocab",
                "teacher_merges",
                "lambdas",
                "seed",
                "lambda",
                "tau",
                "epochs",
                "batch_size",
                "max_lr",
                "dataset_fraction",
                "eval_every",
                "max_new",
                "d_model",
                "n_heads",
                "n_layers",
                "context_len",
                "vocab_size",
                "out_dir",
            ],
        ),
        (
            "eval",
            &[
                "corpus",
                "student_ckpt",
                "student_vocab",
                "student_merges",
                "split",
                "max_new",
                "out_dir",
            ],
        ),
        ("vocab-overlap", &["probe", "reference"]),
        ("ot-check", &["n", "trials", "seed"]),
        ("bench-ot", &["sizes", "reps", "exact_cap", "seed", "out_dir"]),
    ];

    let mut covered: Vec<&str> = Vec::new();
    for (subcommand, keys) in schema {
        let out = run(&[subcommand, "--help"]);
        assert!(out.status.success());
        let help = stdout_of(&out);
        for key in *keys {
            let flag = format!("--{}", key.replace('_', "-"));
            assert!(
                help.contains(&flag),
                "{subcommand} --help does not list {flag}"
            );
            covered.push(key);
        }
    }
    // The global key registry and the per-subcommand surfaces must agree.
    for key in CONFIG_KEYS {
        assert!(
            covered.contains(key),
            "config key {key} is not accepted by any subcommand"
        );
    }
}
