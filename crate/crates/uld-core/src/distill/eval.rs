//! Student evaluation: next-token accuracy and perplexity under teacher
//! forcing on gold answers, plus token-level F1 of greedy generations.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::distributions::{softmax_scaled, ProbVector};
use crate::losses::ce_step;
use crate::model::TinyCausalLm;
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

use super::corpus::CorpusItem;

/// Test-split metrics of a trained student.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub token_accuracy: f64,
    pub perplexity: f64,
    pub token_f1: f64,
}

/// Bag-of-tokens F1 between a prediction and the gold answer: lowercase,
/// whitespace-split, multiset overlap. Two empty strings score 1.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let bag = |text: &str| {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for tok in text.to_lowercase().split_whitespace() {
            *counts.entry(String::from(tok)).or_insert(0) += 1;
        }
        counts
    };
    let pred = bag(prediction);
    let gold = bag(gold);
    let pred_len: usize = pred.values().sum();
    let gold_len: usize = gold.values().sum();
    if pred_len == 0 && gold_len == 0 {
        return 1.0;
    }
    if pred_len == 0 || gold_len == 0 {
        return 0.0;
    }
    let overlap: usize = pred
        .iter()
        .map(|(tok, &c)| c.min(gold.get(tok).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_len as f64;
    let recall = overlap as f64 / gold_len as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Teacher-forced statistics over the answer region of `ids`:
/// `(correct_argmax, total_steps, ce_sum)`.
pub(crate) fn teacher_forced_stats(
    model: &TinyCausalLm,
    ids: &[usize],
    answer_start: usize,
) -> Result<(usize, usize, f64)> {
    let rows = model.forward(ids)?;
    let mut correct = 0;
    let mut ce_sum = 0.0;
    let steps = ids.len() - answer_start;
    for k in 0..steps {
        let row = &rows[answer_start - 1 + k];
        let gold = ids[answer_start + k];
        let logits: Vec<f64> = row.iter().map(|&x| x as f64).collect();
        let p = ProbVector::new(softmax_scaled(&logits, 1.0))?;
        ce_sum += ce_step(&p, gold)?;
        let argmax = (0..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .expect("non-empty row");
        if argmax == gold {
            correct += 1;
        }
    }
    Ok((correct, steps, ce_sum))
}

/// Evaluates a student on items with gold answers: next-token accuracy and
/// perplexity under teacher forcing, and token-level F1 of greedy answers.
pub fn evaluate(
    student: &TinyCausalLm,
    student_tok: &Tokenizer,
    items: &[CorpusItem],
    max_new: usize,
) -> Result<EvalReport> {
    let usable: Vec<&CorpusItem> = items.iter().filter(|it| !it.answer.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::degenerate("no items with answers to evaluate"));
    }
    let specials = student_tok.vocab().specials();
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut ce_sum = 0.0;
    let mut f1_sum = 0.0;
    for item in &usable {
        let mut ids = vec![specials.begin];
        ids.extend(student_tok.encode(&item.prompt()).ids);
        let answer_start = ids.len();
        ids.extend(student_tok.encode(&alloc::format!(" {}", item.answer)).ids);
        ids.push(specials.end);
        let (c, t, ce) = teacher_forced_stats(student, &ids, answer_start)?;
        correct += c;
        total += t;
        ce_sum += ce;

        let prompt_ids = &ids[..answer_start];
        let generated = student.greedy_generate(prompt_ids, max_new, specials.end)?;
        let answer_text = student_tok.decode(&generated[answer_start..]);
        f1_sum += token_f1(answer_text.trim(), &item.answer);
    }
    Ok(EvalReport {
        token_accuracy: correct as f64 / total as f64,
        perplexity: (ce_sum / total as f64).exp(),
        token_f1: f1_sum / usable.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::corpus::{gen_corpus, Split};
    use crate::model::{ModelConfig, TinyCausalLm};
    use crate::tokenizer::char_tokenizer;
    use approx::assert_abs_diff_eq;

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("blue", "blue"), 1.0);
        assert_abs_diff_eq!(token_f1("cat", "the cat"), 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("red", ""), 0.0);
        assert_eq!(token_f1("", "red"), 0.0);
        assert_eq!(token_f1("green", "blue"), 0.0);
        // Multiset counting: repeated tokens only match as often as they
        // appear in the gold answer.
        assert_abs_diff_eq!(token_f1("a a", "a b"), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn uniform_model_has_vocabulary_sized_perplexity() {
        // A model whose logits are all zero predicts uniformly over its
        // four-token vocabulary, so perplexity is exactly 4.
        let mut model = TinyCausalLm::init(ModelConfig {
            vocab_size: 4,
            context_len: 8,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            seed: 0,
        })
        .unwrap();
        model
            .param_mut("tok_embedding")
            .unwrap()
            .iter_mut()
            .for_each(|w| *w = 0.0);
        let ids = [0usize, 1, 2, 3, 1, 2];
        let (_, steps, ce_sum) = teacher_forced_stats(&model, &ids, 2).unwrap();
        let perplexity = (ce_sum / steps as f64).exp();
        assert_abs_diff_eq!(perplexity, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn perfect_generation_scores_full_f1() {
        // Evaluate a model against items whose answers it will reproduce:
        // use greedy output as gold, so F1 must be 1 by construction.
        let tok = Tokenizer::Char(char_tokenizer("abcdefghijklmnopqrstuvwxyz .?").unwrap());
        let model = TinyCausalLm::init(ModelConfig {
            vocab_size: tok.vocab().size(),
            context_len: 96,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            seed: 5,
        })
        .unwrap();
        let mut items = gen_corpus(9, 6).unwrap();
        let specials = tok.vocab().specials();
        for item in &mut items {
            item.split = Split::Test;
            let mut prompt_ids = alloc::vec![specials.begin];
            prompt_ids.extend(tok.encode(&item.prompt()).ids);
            let generated = model.greedy_generate(&prompt_ids, 8, specials.end).unwrap();
            let text = tok.decode(&generated[prompt_ids.len()..]);
            item.answer = String::from(text.trim());
        }
        let items: Vec<CorpusItem> = items
            .into_iter()
            .filter(|it| !it.answer.is_empty())
            .collect();
        if items.is_empty() {
            // An untrained model may generate only specials; nothing to
            // check in that case.
            return;
        }
        let report = evaluate(&model, &tok, &items, 8).unwrap();
        assert_abs_diff_eq!(report.token_f1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn evaluate_rejects_empty_input() {
        let tok = Tokenizer::Char(char_tokenizer("ab").unwrap());
        let model = TinyCausalLm::init(ModelConfig {
            vocab_size: tok.vocab().size(),
            context_len: 8,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            seed: 0,
        })
        .unwrap();
        assert!(matches!(
            evaluate(&model, &tok, &[], 4),
            Err(Error::DegenerateInput(_))
        ));
    }
}
