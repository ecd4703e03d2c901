//! Single command-line entry point for the distillation pipeline: corpus
//! generation, teacher training, answer generation, student distillation,
//! lambda ablation, evaluation, vocabulary overlap, transport oracle
//! checks, and the scaling benchmark.
//!
//! Outputs are files-first under `--out-dir` (default `$ULD_OUT`, then
//! `out`), so sweeps compose in the shell. Config files hold flat
//! `key = value` lines; flags override file values. Exit codes: 0 success,
//! 1 configuration errors, 2 runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use uld_cli::bench::{bench_scaling, mean_seconds, CLOSED_FORM, EXACT_OT};
use uld_cli::config::{parse_list, Settings};
use uld_cli::{formats, CliError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uld_core::distill::{
    ablate_lambda, evaluate, gen_corpus, teacher_answers, train_student, training_text,
    DistillContext, Split, TrainConfig, TrainMode, ALPHABET,
};
use uld_core::distributions::{sort_desc, ProbVector};
use uld_core::losses::uld_w1_step;
use uld_core::model::{ModelConfig, TinyCausalLm};
use uld_core::ot::{exact_ot, CostKind, CostMatrix};
use uld_core::tokenizer::{bpe_train, char_tokenizer, vocab_overlap, Tokenizer};

#[derive(Parser)]
#[command(
    name = "uld",
    version,
    about = "Cross-tokenizer knowledge distillation with a sorted-Wasserstein logit loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic extractive-QA corpus as JSON lines.
    GenCorpus(GenCorpusArgs),
    /// Train the subword teacher on the train split and save checkpoint,
    /// vocabulary and merge list.
    TrainTeacher(TrainTeacherArgs),
    /// Replace train/val answers with frozen-teacher greedy generations.
    GenAnswers(GenAnswersArgs),
    /// Train a student under raw / uld / kl / uld_costed objectives.
    Distill(DistillArgs),
    /// One full distillation run per lambda value; emits a CSV table.
    AblateLambda(AblateLambdaArgs),
    /// Evaluate a student checkpoint: accuracy, perplexity, token F1.
    Eval(EvalArgs),
    /// Percentage of reference vocabulary tokens present in the probe.
    VocabOverlap(VocabOverlapArgs),
    /// Verify the closed form against the exact transport oracle.
    OtCheck(OtCheckArgs),
    /// Wall-clock scaling of the closed form vs the exact solver.
    BenchOt(BenchOtArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $ULD_OUT, then `out`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model width.
    #[arg(long)]
    d_model: Option<usize>,
    /// Attention heads (must divide d_model).
    #[arg(long)]
    n_heads: Option<usize>,
    /// Transformer blocks.
    #[arg(long)]
    n_layers: Option<usize>,
    /// Maximum sequence length.
    #[arg(long)]
    context_len: Option<usize>,
    /// Expected vocabulary size; checked against the tokenizer when set.
    #[arg(long)]
    vocab_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Seed for initialization and data order.
    #[arg(long)]
    seed: Option<u64>,
    /// Distillation weight in the combined objective.
    #[arg(long)]
    lambda: Option<f64>,
    /// Softmax temperature for both models.
    #[arg(long)]
    tau: Option<f64>,
    /// Passes over the train split.
    #[arg(long)]
    epochs: Option<usize>,
    /// Sequences per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak of the one-cycle learning-rate schedule.
    #[arg(long)]
    max_lr: Option<f64>,
    /// Fraction of the train split to use (seeded selection).
    #[arg(long)]
    dataset_fraction: Option<f64>,
    /// Validation cadence in optimizer steps (0 = auto).
    #[arg(long)]
    eval_every: Option<usize>,
    /// Generation budget for answers and evaluation.
    #[arg(long)]
    max_new: Option<usize>,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of QA items to generate.
    #[arg(long)]
    n_items: Option<usize>,
}

#[derive(Args)]
struct TrainTeacherArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSON-lines file with gold answers.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Pair-merge count for the subword tokenizer.
    #[arg(long)]
    merges: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct GenAnswersArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSON-lines file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Teacher checkpoint path.
    #[arg(long)]
    teacher_ckpt: Option<PathBuf>,
    /// Teacher vocabulary file.
    #[arg(long)]
    teacher_vocab: Option<PathBuf>,
    /// Teacher merge-list file.
    #[arg(long)]
    teacher_merges: Option<PathBuf>,
    /// Generation budget per answer.
    #[arg(long)]
    max_new: Option<usize>,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSON-lines file (teacher answers on train/val).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Teacher checkpoint path.
    #[arg(long)]
    teacher_ckpt: Option<PathBuf>,
    /// Teacher vocabulary file.
    #[arg(long)]
    teacher_vocab: Option<PathBuf>,
    /// Teacher merge-list file.
    #[arg(long)]
    teacher_merges: Option<PathBuf>,
    /// Objective: raw | uld | kl | uld_costed.
    #[arg(long)]
    mode: Option<String>,
    /// Transport costs for uld_costed: uniform01 | levenshtein |
    /// embedding_l2.
    #[arg(long)]
    cost_kind: Option<String>,
    /// Student tokenizer: char, or teacher to share the teacher's.
    #[arg(long)]
    student_tokenizer: Option<String>,
    /// Optional checkpoint to continue from instead of a fresh init.
    #[arg(long)]
    student_init: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct AblateLambdaArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSON-lines file (teacher answers on train/val).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Teacher checkpoint path.
    #[arg(long)]
    teacher_ckpt: Option<PathBuf>,
    /// Teacher vocabulary file.
    #[arg(long)]
    teacher_vocab: Option<PathBuf>,
    /// Teacher merge-list file.
    #[arg(long)]
    teacher_merges: Option<PathBuf>,
    /// Comma-separated lambda grid; must include 0.
    #[arg(long)]
    lambdas: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSON-lines file with gold answers.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Student checkpoint path.
    #[arg(long)]
    student_ckpt: Option<PathBuf>,
    /// Student vocabulary file.
    #[arg(long)]
    student_vocab: Option<PathBuf>,
    /// Student merge list; present for subword students.
    #[arg(long)]
    student_merges: Option<PathBuf>,
    /// Which split to evaluate: train | val | test.
    #[arg(long)]
    split: Option<String>,
    /// Generation budget per answer.
    #[arg(long)]
    max_new: Option<usize>,
}

#[derive(Args)]
struct VocabOverlapArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Vocabulary whose coverage is measured.
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Vocabulary being covered.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct OtCheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Support size of the random distribution pairs.
    #[arg(long)]
    n: Option<usize>,
    /// Number of random pairs to check.
    #[arg(long)]
    trials: Option<usize>,
    /// Seed for the random pairs.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchOtArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated ascending support sizes.
    #[arg(long)]
    sizes: Option<String>,
    /// Repetitions per size.
    #[arg(long)]
    reps: Option<usize>,
    /// Largest size the exact solver runs at.
    #[arg(long)]
    exact_cap: Option<usize>,
    /// Seed for the random distribution pairs.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("config error: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus(args) => run_gen_corpus(args),
        Command::TrainTeacher(args) => run_train_teacher(args),
        Command::GenAnswers(args) => run_gen_answers(args),
        Command::Distill(args) => run_distill(args),
        Command::AblateLambda(args) => run_ablate(args),
        Command::Eval(args) => run_eval(args),
        Command::VocabOverlap(args) => run_vocab_overlap(args),
        Command::OtCheck(args) => run_ot_check(args),
        Command::BenchOt(args) => run_bench(args),
    }
}

fn settings_of(common: &CommonArgs) -> Result<Settings, CliError> {
    match &common.config {
        Some(path) => Settings::from_file(path),
        None => Ok(Settings::empty()),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("creating out_dir {dir:?}: {e}")))
}

fn parse_mode(raw: &str) -> Result<TrainMode, CliError> {
    match raw {
        "raw" => Ok(TrainMode::Raw),
        "uld" => Ok(TrainMode::Uld),
        "kl" => Ok(TrainMode::Kl),
        "uld_costed" => Ok(TrainMode::UldCosted),
        other => Err(CliError::config(format!(
            "unknown mode {other:?}; expected raw | uld | kl | uld_costed"
        ))),
    }
}

fn parse_cost_kind(raw: &str) -> Result<CostKind, CliError> {
    match raw {
        "uniform01" => Ok(CostKind::Uniform01),
        "levenshtein" => Ok(CostKind::Levenshtein),
        "embedding_l2" => Ok(CostKind::EmbeddingL2),
        other => Err(CliError::config(format!(
            "unknown cost_kind {other:?}; expected uniform01 | levenshtein | embedding_l2"
        ))),
    }
}

fn parse_split(raw: &str) -> Result<Split, CliError> {
    match raw {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::config(format!(
            "unknown split {other:?}; expected train | val | test"
        ))),
    }
}

fn resolve_model_config(
    settings: &Settings,
    args: &ModelArgs,
    vocab_size: usize,
    seed: u64,
) -> Result<ModelConfig, CliError> {
    if let Some(expected) = settings.resolve_opt("vocab_size", args.vocab_size)? {
        if expected != vocab_size {
            return Err(CliError::config(format!(
                "vocab_size {expected} does not match the tokenizer's {vocab_size}"
            )));
        }
    }
    let config = ModelConfig {
        vocab_size,
        context_len: settings.resolve("context_len", args.context_len, 128)?,
        d_model: settings.resolve("d_model", args.d_model, 64)?,
        n_heads: settings.resolve("n_heads", args.n_heads, 4)?,
        n_layers: settings.resolve("n_layers", args.n_layers, 2)?,
        seed,
    };
    config
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(config)
}

fn resolve_train_config(
    settings: &Settings,
    args: &TrainArgs,
    mode: TrainMode,
    cost_kind: CostKind,
) -> Result<TrainConfig, CliError> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        seed: settings.resolve("seed", args.seed, defaults.seed)?,
        lambda: settings.resolve("lambda", args.lambda, defaults.lambda)?,
        tau: settings.resolve("tau", args.tau, defaults.tau)?,
        epochs: settings.resolve("epochs", args.epochs, defaults.epochs)?,
        batch_size: settings.resolve("batch_size", args.batch_size, defaults.batch_size)?,
        max_lr: settings.resolve("max_lr", args.max_lr, defaults.max_lr)?,
        mode,
        dataset_fraction: settings.resolve(
            "dataset_fraction",
            args.dataset_fraction,
            defaults.dataset_fraction,
        )?,
        cost_kind,
        eval_every: settings.resolve("eval_every", args.eval_every, defaults.eval_every)?,
        max_new_tokens: settings.resolve("max_new", args.max_new, defaults.max_new_tokens)?,
    };
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

fn run_gen_corpus(args: GenCorpusArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let out_dir = settings.out_dir(args.common.out_dir.clone());
    ensure_out_dir(&out_dir)?;
    let seed = settings.resolve("seed", args.seed, 1234u64)?;
    let n_items = settings.resolve("n_items", args.n_items, 1000usize)?;
    let items = gen_corpus(seed, n_items).map_err(|e| CliError::config(e.to_string()))?;
    let path = out_dir.join("corpus.jsonl");
    formats::write_corpus(&path, &items)?;
    let count = |s: Split| items.iter().filter(|it| it.split == s).count();
    println!(
        "wrote {} items to {} (train {}, val {}, test {})",
        items.len(),
        path.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(())
}

fn run_train_teacher(args: TrainTeacherArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let out_dir = settings.out_dir(args.common.out_dir.clone());
    ensure_out_dir(&out_dir)?;
    let corpus_path = settings.require_path("corpus", args.corpus.clone())?;
    let corpus = formats::read_corpus(&corpus_path)?;
    let merges = settings.resolve("merges", args.merges, 256usize)?;

    let tokenizer = Tokenizer::Bpe(
        bpe_train(&training_text(&corpus), merges).map_err(|e| CliError::config(e.to_string()))?,
    );
    let mut cfg = resolve_train_config(&settings, &args.train, TrainMode::Raw, CostKind::Uniform01)?;
    cfg.lambda = 0.0;
    // Teacher defaults favor overfitting the train split.
    if args.train.epochs.is_none() {
        cfg.epochs = settings.resolve("epochs", None, 10usize)?;
    }
    if args.train.max_lr.is_none() {
        cfg.max_lr = settings.resolve("max_lr", None, 6e-3)?;
    }
    let model_cfg =
        resolve_model_config(&settings, &args.model, tokenizer.vocab().size(), cfg.seed)?;
    let init = TinyCausalLm::init(model_cfg).map_err(|e| CliError::config(e.to_string()))?;

    let start = Instant::now();
    let ctx = DistillContext {
        teacher: &init,
        teacher_tok: &tokenizer,
        student_tok: &tokenizer,
    };
    let (teacher, metrics) = train_student(&cfg, &corpus, &ctx, init.clone())?;
    let elapsed = start.elapsed();

    formats::save_model(&out_dir.join("teacher.ckpt"), &teacher)?;
    formats::write_vocab(&out_dir.join("teacher.vocab"), tokenizer.vocab())?;
    if let Tokenizer::Bpe(bpe) = &tokenizer {
        formats::write_merges(&out_dir.join("teacher.merges"), bpe.merges())?;
    }
    formats::write_metrics(&out_dir.join("teacher_metrics.jsonl"), &metrics)?;
    let last_val = metrics.records.iter().rev().find(|r| r.split == "val");
    println!(
        "teacher trained in {elapsed:?}: vocab {} ({merges} merges), params {}, final val ce {:.6}",
        tokenizer.vocab().size(),
        teacher.param_count(),
        last_val.map_or(f64::NAN, |r| r.ce)
    );
    Ok(())
}

fn run_gen_answers(args: GenAnswersArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let out_dir = settings.out_dir(args.common.out_dir.clone());
    ensure_out_dir(&out_dir)?;
    let corpus = formats::read_corpus(&settings.require_path("corpus", args.corpus.clone())?)?;
    let teacher =
        formats::load_model(&settings.require_path("teacher_ckpt", args.teacher_ckpt.clone())?)?;
    let tokenizer = formats::load_bpe_tokenizer(
        &settings.require_path("teacher_vocab", args.teacher_vocab.clone())?,
        &settings.require_path("teacher_merges", args.teacher_merges.clone())?,
    )?;
    let max_new = settings.resolve("max_new", args.max_new, 12usize)?;
    let answered = teacher_answers(&teacher, &tokenizer, &corpus, max_new)?;
    let path = out_dir.join("answered.jsonl");
    formats::write_corpus(&path, &answered)?;
    let replaced = answered
        .iter()
        .zip(&corpus)
        .filter(|(a, b)| a.answer != b.answer)
        .count();
    println!(
        "wrote {} items to {} ({replaced} answers changed by the teacher)",
        answered.len(),
        path.display()
    );
    Ok(())
}

struct TeacherSide {
    teacher: TinyCausalLm,
    tokenizer: Tokenizer,
}

fn load_teacher_side(
    settings: &Settings,
    ckpt: Option<PathBuf>,
    vocab: Option<PathBuf>,
    merges: Option<PathBuf>,
) -> Result<TeacherSide, CliError> {
    let teacher = formats::load_model(&settings.require_path("teacher_ckpt", ckpt)?)?;
    let tokenizer = formats::load_bpe_tokenizer(
        &settings.require_path("teacher_vocab", vocab)?,
        &settings.require_path("teacher_merges", merges)?,
    )?;
    if teacher.config().vocab_size != tokenizer.vocab().size() {
        return Err(CliError::config(format!(
            "teacher checkpoint vocabulary {} does not match the vocabulary file's {}",
            teacher.config().vocab_size,
            tokenizer.vocab().size()
        )));
    }
    Ok(TeacherSide { teacher, tokenizer })
}

fn student_tokenizer_for(
    settings: &Settings,
    flag: Option<String>,
    teacher_tok: &Tokenizer,
) -> Result<Tokenizer, CliError> {
    let choice = settings.resolve("student_tokenizer", flag, String::from("char"))?;
    match choice.as_str() {
        "char" => Ok(Tokenizer::Char(
            char_tokenizer(ALPHABET).map_err(|e| CliError::config(e.to_string()))?,
        )),
        "teacher" => Ok(teacher_tok.clone()),
        other => Err(CliError::config(format!(
            "unknown student_tokenizer {other:?}; expected char | teacher"
        ))),
    }
}

fn run_distill(args: DistillArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let out_dir = settings.out_dir(args.common.out_dir.clone());
    ensure_out_dir(&out_dir)?;
    let corpus = formats::read_corpus(&settings.require_path("corpus", args.corpus.clone())?)?;
    let side = load_teacher_side(
        &settings,
        args.teacher_ckpt.clone(),
        args.teacher_vocab.clone(),
        args.teacher_merges.clone(),
    )?;
    let mode = parse_mode(&settings.resolve("mode", args.mode.clone(), String::from("uld"))?)?;
    let cost_kind = parse_cost_kind(&settings.resolve(
        "cost_kind",
        args.cost_kind.clone(),
        String::from("uniform01"),
    )?)?;
    let cfg = resolve_train_config(&settings, &args.train, mode, cost_kind)?;
    let student_tok =
        student_tokenizer_for(&settings, args.student_tokenizer.clone(), &side.tokenizer)?;

    let student_init_path = settings.resolve_opt("student_init", args.student_init.clone())?;
    let student = match student_init_path {
        Some(path) => {
            let model = formats::load_model(&path)?;
            if model.config().vocab_size != student_tok.vocab().size() {
                return Err(CliError::config(format!(
                    "student_init vocabulary {} does not match the student tokenizer's {}",
                    model.config().vocab_size,
                    student_tok.vocab().size()
                )));
            }
            model
        }
        None => {
            let model_cfg =
                resolve_model_config(&settings, &args.model, student_tok.vocab().size(), cfg.seed)?;
            TinyCausalLm::init(model_cfg).map_err(|e| CliError::config(e.to_string()))?
        }
    };

    let ctx = DistillContext {
        teacher: &side.teacher,
        teacher_tok: &side.tokenizer,
        student_tok: &student_tok,
    };
    let start = Instant::now();
    let (trained, metrics) = train_student(&cfg, &corpus, &ctx, student)?;
    let elapsed = start.elapsed();

    formats::save_model(&out_dir.join("student.ckpt"), &trained)?;
    formats::write_vocab(&out_dir.join("student.vocab"), student_tok.vocab())?;
    if let Tokenizer::Bpe(bpe) = &student_tok {
        formats::write_merges(&out_dir.join("student.merges"), bpe.merges())?;
    }
    formats::write_metrics(&out_dir.join("metrics.jsonl"), &metrics)?;
    let last_val = metrics.records.iter().rev().find(|r| r.split == "val");
    println!(
        "mode {} trained in {elapsed:?}: final val ce {:.6}, val uld_w1 {:.6}",
        cfg.mode.as_str(),
        last_val.map_or(f64::NAN, |r| r.ce),
        last_val.and_then(|r| r.uld_w1).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_ablate(args: AblateLambdaArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let out_dir = settings.out_dir(args.common.out_dir.clone());
    ensure_out_dir(&out_dir)?;
    let corpus = formats::read_corpus(&settings.require_path("corpus", args.corpus.clone())?)?;
    let side = load_teacher_side(
        &settings,
        args.teacher_ckpt.clone(),
        args.teacher_vocab.clone(),
        args.teacher_merges.clone(),
    )?;
    let raw_lambdas = settings.resolve(
        "lambdas",
        args.lambdas.clone(),
        String::from("0,0.5,1,1.5,2,3"),
    )?;
    let lambdas: Vec<f64> = parse_list(&raw_lambdas, "lambdas")?;
    let cfg = resolve_train_config(&settings, &args.train, TrainMode::Uld, CostKind::Uniform01)?;
    let student_tok =
        Tokenizer::Char(char_tokenizer(ALPHABET).map_err(|e| CliError::config(e.to_string()))?);
    let model_cfg =
        resolve_model_config(&settings, &args.model, student_tok.vocab().size(), cfg.seed)?;
    let template = TinyCausalLm::init(model_cfg).map_err(|e| CliError::config(e.to_string()))?;
    let ctx = DistillContext {
        teacher: &side.teacher,
        teacher_tok: &side.tokenizer,
        student_tok: &student_tok,
    };
    let rows = ablate_lambda(&lambdas, &cfg, &corpus, &ctx, &template)?;
    let path = out_dir.join("ablation.csv");
    formats::write_ablation(&path, &rows)?;
    println!("lambda,metric,value,seed");
    for row in &rows {
        println!("{},{},{},{}", row.lambda, row.metric, row.value, row.seed);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let out_dir = settings.out_dir(args.common.out_dir.clone());
    ensure_out_dir(&out_dir)?;
    let corpus = formats::read_corpus(&settings.require_path("corpus", args.corpus.clone())?)?;
    let student =
        formats::load_model(&settings.require_path("student_ckpt", args.student_ckpt.clone())?)?;
    let vocab_path = settings.require_path("student_vocab", args.student_vocab.clone())?;
    let merges_path = settings.resolve_opt("student_merges", args.student_merges.clone())?;
    let tokenizer = match merges_path {
        Some(merges) => formats::load_bpe_tokenizer(&vocab_path, &merges)?,
        None => formats::load_char_tokenizer(&vocab_path)?,
    };
    if student.config().vocab_size != tokenizer.vocab().size() {
        return Err(CliError::config(format!(
            "student checkpoint vocabulary {} does not match the vocabulary file's {}",
            student.config().vocab_size,
            tokenizer.vocab().size()
        )));
    }
    let split = parse_split(&settings.resolve("split", args.split.clone(), String::from("test"))?)?;
    let max_new = settings.resolve("max_new", args.max_new, 16usize)?;
    let items: Vec<_> = corpus
        .iter()
        .filter(|it| it.split == split)
        .cloned()
        .collect();
    let report = evaluate(&student, &tokenizer, &items, max_new)?;
    formats::write_eval(&out_dir.join("eval.json"), &report)?;
    println!(
        "token_accuracy={:.4} perplexity={:.4} token_f1={:.4}",
        report.token_accuracy, report.perplexity, report.token_f1
    );
    Ok(())
}

fn run_vocab_overlap(args: VocabOverlapArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let probe = formats::read_vocab(&settings.require_path("probe", args.probe.clone())?)?;
    let reference =
        formats::read_vocab(&settings.require_path("reference", args.reference.clone())?)?;
    let pct = vocab_overlap(&probe, &reference)?;
    println!("overlap_pct={pct:.2}");
    Ok(())
}

fn run_ot_check(args: OtCheckArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let n = settings.resolve("n", args.n, 16usize)?;
    let trials = settings.resolve("trials", args.trials, 100usize)?;
    let seed = settings.resolve("seed", args.seed, 0u64)?;
    if n < 2 {
        return Err(CliError::config("ot-check needs n >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    let cost = CostMatrix::uniform01(n);
    for _ in 0..trials {
        let draw = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-6..1.0)).collect();
            let total: f64 = raw.iter().sum();
            ProbVector::new(raw.into_iter().map(|x| x / total).collect()).expect("normalized")
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let w1 = uld_w1_step(&p, &q);
        let (ps, _) = sort_desc(&p);
        let (qs, _) = sort_desc(&q);
        let plan = exact_ot(&ps, &qs, &cost)?;
        max_dev = max_dev.max((w1 - 2.0 * plan.cost()).abs());
    }
    println!("max_abs_dev={max_dev:e} trials={trials} n={n}");
    const THRESHOLD: f64 = 1e-9;
    if max_dev >= THRESHOLD {
        return Err(CliError::runtime(format!(
            "closed form deviates from 2x exact transport by {max_dev:e} (threshold {THRESHOLD:e})"
        )));
    }
    Ok(())
}

fn run_bench(args: BenchOtArgs) -> Result<(), CliError> {
    let settings = settings_of(&args.common)?;
    let out_dir = settings.out_dir(args.common.out_dir.clone());
    ensure_out_dir(&out_dir)?;
    let raw_sizes = settings.resolve(
        "sizes",
        args.sizes.clone(),
        String::from("16,32,64,128,256,512,1024,4096,16384,65536,262144"),
    )?;
    let sizes: Vec<usize> = parse_list(&raw_sizes, "sizes")?;
    let reps = settings.resolve("reps", args.reps, 3usize)?;
    let exact_cap = settings.resolve("exact_cap", args.exact_cap, 512usize)?;
    let seed = settings.resolve("seed", args.seed, 0u64)?;
    let report = bench_scaling(&sizes, reps, exact_cap, seed)?;
    let path = out_dir.join("bench.csv");
    formats::write_bench(&path, &report)?;
    for (method, slope) in &report.slopes {
        println!("slope,{method},{slope:.4}");
    }
    if let Some(&largest) = sizes.last() {
        if let Some(mean) = mean_seconds(&report, CLOSED_FORM, largest) {
            println!("closed_form at n={largest}: {:.3} ms per call", mean * 1e3);
        }
    }
    if report.rows.iter().any(|r| r.method == EXACT_OT) {
        println!(
            "max |closed_form - 2*exact| = {:e}",
            report.max_identity_dev
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
