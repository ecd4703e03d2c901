//! File formats: vocabulary and merge lists, model checkpoints, JSON-lines
//! corpora and metrics, and the CSV tables emitted by the ablation and
//! benchmark harnesses.

use std::fs;
use std::io::Write;
use std::path::Path;

use uld_core::distill::{AblationRow, CorpusItem, EvalReport, RunMetrics};
use uld_core::model::TinyCausalLm;
use uld_core::tokenizer::{BpeTokenizer, CharTokenizer, Tokenizer, Vocabulary};

use crate::bench::BenchReport;
use crate::CliError;

/// One token per line, specials first, UTF-8, newline terminated.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), CliError> {
    let mut out = String::new();
    for token in vocab.tokens() {
        out.push_str(token);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::runtime(format!("writing {path:?}: {e}")))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("reading vocabulary {path:?}: {e}")))?;
    let tokens: Vec<String> = text.lines().map(String::from).collect();
    Vocabulary::from_full_token_list(tokens)
        .map_err(|e| CliError::config(format!("vocabulary {path:?}: {e}")))
}

/// Merge rules as `tokenA<TAB>tokenB` lines in merge order.
pub fn write_merges(path: &Path, merges: &[(String, String)]) -> Result<(), CliError> {
    let mut out = String::new();
    for (a, b) in merges {
        out.push_str(a);
        out.push('\t');
        out.push_str(b);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::runtime(format!("writing {path:?}: {e}")))
}

pub fn read_merges(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("reading merges {path:?}: {e}")))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_once('\t')
                .map(|(a, b)| (String::from(a), String::from(b)))
                .ok_or_else(|| {
                    CliError::config(format!("merges {path:?} line {}: missing tab", i + 1))
                })
        })
        .collect()
}

pub fn load_char_tokenizer(vocab_path: &Path) -> Result<Tokenizer, CliError> {
    let vocab = read_vocab(vocab_path)?;
    let tok = CharTokenizer::from_vocabulary(vocab)
        .map_err(|e| CliError::config(format!("vocabulary {vocab_path:?}: {e}")))?;
    Ok(Tokenizer::Char(tok))
}

pub fn load_bpe_tokenizer(vocab_path: &Path, merges_path: &Path) -> Result<Tokenizer, CliError> {
    let vocab = read_vocab(vocab_path)?;
    let merges = read_merges(merges_path)?;
    Ok(Tokenizer::Bpe(BpeTokenizer::from_parts(vocab, merges)))
}

pub fn save_model(path: &Path, model: &TinyCausalLm) -> Result<(), CliError> {
    fs::write(path, model.encode_checkpoint())
        .map_err(|e| CliError::runtime(format!("writing checkpoint {path:?}: {e}")))
}

pub fn load_model(path: &Path) -> Result<TinyCausalLm, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::config(format!("reading checkpoint {path:?}: {e}")))?;
    TinyCausalLm::decode_checkpoint(&bytes)
        .map_err(|e| CliError::runtime(format!("checkpoint {path:?}: {e}")))
}

/// JSON lines, one `{"context":…,"question":…,"answer":…,"split":…}` per
/// item.
pub fn write_corpus(path: &Path, items: &[CorpusItem]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| CliError::runtime(format!("encoding corpus item: {e}")))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| CliError::runtime(format!("writing {path:?}: {e}")))
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusItem>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("reading corpus {path:?}: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| CliError::config(format!("corpus {path:?} line {}: {e}", i + 1)))
        })
        .collect()
}

/// JSON lines with the fields `step, split, ce, uld_w1, kl, total, lr,
/// seed`; absent values serialize as null.
pub fn write_metrics(path: &Path, metrics: &RunMetrics) -> Result<(), CliError> {
    let mut out = Vec::new();
    for record in &metrics.records {
        serde_json::to_writer(&mut out, record)
            .map_err(|e| CliError::runtime(format!("encoding metric record: {e}")))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| CliError::runtime(format!("writing {path:?}: {e}")))
}

/// CSV `lambda,metric,value,seed`.
pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<(), CliError> {
    let mut out = String::from("lambda,metric,value,seed\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.lambda, row.metric, row.value, row.seed
        ));
    }
    fs::write(path, out).map_err(|e| CliError::runtime(format!("writing {path:?}: {e}")))
}

/// CSV `method,n,rep,seconds` with one `slope,<method>,<value>` footer line
/// per method.
pub fn write_bench(path: &Path, report: &BenchReport) -> Result<(), CliError> {
    let mut out = String::from("method,n,rep,seconds\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.method, row.n, row.rep, row.seconds
        ));
    }
    for (method, slope) in &report.slopes {
        out.push_str(&format!("slope,{method},{slope}\n"));
    }
    fs::write(path, out).map_err(|e| CliError::runtime(format!("writing {path:?}: {e}")))
}

pub fn write_eval(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    let mut out = serde_json::to_vec_pretty(report)
        .map_err(|e| CliError::runtime(format!("encoding eval report: {e}")))?;
    out.push(b'\n');
    fs::write(path, out).map_err(|e| CliError::runtime(format!("writing {path:?}: {e}")))
}

/// Writes a file only through a buffered handle; used for large outputs.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::runtime(format!("creating {path:?}: {e}")))?;
    let mut writer = std::io::BufWriter::new(file);
    for line in lines {
        writeln!(writer, "{line}")
            .map_err(|e| CliError::runtime(format!("writing {path:?}: {e}")))?;
    }
    Ok(())
}
