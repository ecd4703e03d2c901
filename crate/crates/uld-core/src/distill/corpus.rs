//! Deterministic synthetic QA corpus: templated context/question/answer
//! triples over a small entity-attribute world. Answers are always literal
//! substrings of their context, so the task is extractive.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Every character any corpus text can contain.
pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz .?";

const OBJECTS: [&str; 8] = ["cat", "dog", "fox", "owl", "bee", "ant", "elk", "hen"];
const COLORS: [&str; 6] = ["red", "blue", "green", "gold", "pink", "gray"];
const COUNTS: [&str; 6] = ["one", "two", "three", "four", "five", "six"];
const THINGS: [&str; 4] = ["hats", "cups", "pens", "toys"];

/// Which split an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One QA triple. `answer` holds the gold answer until
/// `teacher_answers` replaces it on the train and validation splits.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusItem {
    pub context: String,
    pub question: String,
    pub answer: String,
    pub split: Split,
}

impl CorpusItem {
    /// The conditioning text a model sees before producing the answer.
    pub fn prompt(&self) -> String {
        format!("{} {}", self.context, self.question)
    }

    /// Prompt plus answer, the full teacher-forcing text.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.prompt(), self.answer)
    }
}

/// Generates `n_items` templated QA triples. The split is fixed by item
/// index — indices 0-7 of every block of ten are train, 8 is validation,
/// 9 is test — so 1000 items yield exactly 800/100/100.
pub fn gen_corpus(seed: u64, n_items: usize) -> Result<Vec<CorpusItem>> {
    if n_items == 0 {
        return Err(Error::parameter("n_items must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n_items);
    for index in 0..n_items {
        let split = match index % 10 {
            8 => Split::Val,
            9 => Split::Test,
            _ => Split::Train,
        };
        let first = rng.gen_range(0..OBJECTS.len());
        let second = loop {
            let candidate = rng.gen_range(0..OBJECTS.len());
            if candidate != first {
                break candidate;
            }
        };
        let ask_first = rng.gen_bool(0.5);
        let target = if ask_first { first } else { second };

        let item = if rng.gen_bool(0.5) {
            let c1 = COLORS[rng.gen_range(0..COLORS.len())];
            let c2 = COLORS[rng.gen_range(0..COLORS.len())];
            CorpusItem {
                context: format!(
                    "the {} is {c1} . the {} is {c2} .",
                    OBJECTS[first], OBJECTS[second]
                ),
                question: format!("what color is the {} ?", OBJECTS[target]),
                answer: String::from(if ask_first { c1 } else { c2 }),
                split,
            }
        } else {
            let thing = THINGS[rng.gen_range(0..THINGS.len())];
            let n1 = COUNTS[rng.gen_range(0..COUNTS.len())];
            let n2 = COUNTS[rng.gen_range(0..COUNTS.len())];
            CorpusItem {
                context: format!(
                    "the {} has {n1} {thing} . the {} has {n2} {thing} .",
                    OBJECTS[first], OBJECTS[second]
                ),
                question: format!("how many {thing} has the {} ?", OBJECTS[target]),
                answer: String::from(if ask_first { n1 } else { n2 }),
                split,
            }
        };
        items.push(item);
    }
    Ok(items)
}

/// Concatenated train-split texts, the input for subword training.
pub fn training_text(items: &[CorpusItem]) -> String {
    let texts: Vec<String> = items
        .iter()
        .filter(|it| it.split == Split::Train)
        .map(CorpusItem::full_text)
        .collect();
    texts.join(" ")
}
