//! Two deliberately mismatched toy tokenizers — character-level and trained
//! pair-merge subword — plus vocabulary-overlap measurement and token edit
//! distance.
//!
//! The two tokenizers give the teacher and student different vocabularies
//! with different sizes, which is exactly the situation that makes KL
//! distillation impossible and the sorted-Wasserstein loss necessary.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// Text forms of the special tokens, in vocabulary order.
pub const SPECIAL_TOKENS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Ids of the special tokens. Specials always occupy the first vocabulary
/// slots, in the order of [`SPECIAL_TOKENS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub begin: usize,
    pub end: usize,
    pub pad: usize,
    pub unknown: usize,
}

impl SpecialIds {
    const fn leading() -> Self {
        SpecialIds {
            begin: 0,
            end: 1,
            pad: 2,
            unknown: 3,
        }
    }
}

/// An ordered token inventory with a reverse index and special-token slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    specials: SpecialIds,
}

impl Vocabulary {
    /// Builds a vocabulary from regular tokens; the four specials are
    /// prepended automatically.
    pub fn from_regular_tokens<I, S>(regular: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(regular.into_iter().map(Into::into));
        Self::from_full_token_list(tokens)
    }

    /// Builds a vocabulary from a complete token list (specials first), as
    /// stored in a vocabulary file.
    pub fn from_full_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::input("vocabulary is missing its special tokens"));
        }
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::input(format!(
                    "vocabulary slot {i} must be the special token {expected:?}, got {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = BTreeMap::new();
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::input(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            specials: SpecialIds::leading(),
        })
    }

    /// Total vocabulary size, specials included.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// All tokens in id order (specials first).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    /// Tokens excluding the specials.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[SPECIAL_TOKENS.len()..]
    }
}

/// A tokenized text: vocabulary ids plus the string they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub source_text: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One token per character. Unknown characters map to the unknown id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharTokenizer {
    vocab: Vocabulary,
}

/// Builds the character-level tokenizer for an alphabet. The alphabet is
/// deduplicated and sorted so the resulting vocabulary is deterministic.
pub fn char_tokenizer(alphabet: &str) -> Result<CharTokenizer> {
    let chars: BTreeSet<char> = alphabet.chars().collect();
    if chars.is_empty() {
        return Err(Error::parameter("alphabet must not be empty"));
    }
    let vocab = Vocabulary::from_regular_tokens(chars.iter().map(|c| c.to_string()))?;
    Ok(CharTokenizer { vocab })
}

impl CharTokenizer {
    /// Rebuilds the tokenizer from a previously stored vocabulary.
    pub fn from_vocabulary(vocab: Vocabulary) -> Result<Self> {
        if let Some(tok) = vocab
            .regular_tokens()
            .iter()
            .find(|t| t.chars().count() != 1)
        {
            return Err(Error::input(format!(
                "character vocabulary contains multi-character token {tok:?}"
            )));
        }
        Ok(CharTokenizer { vocab })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let unk = self.vocab.specials().unknown;
        let ids = text
            .chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.vocab.id_of(c.encode_utf8(&mut buf)).unwrap_or(unk)
            })
            .collect();
        TokenSequence {
            ids,
            source_text: text.to_owned(),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        decode_ids(&self.vocab, ids)
    }
}

/// A greedy pair-merge subword tokenizer trained on a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeTokenizer {
    vocab: Vocabulary,
    merges: Vec<(String, String)>,
}

/// Trains a pair-merge tokenizer: repeatedly merge the most frequent
/// adjacent token pair in the corpus; frequency ties break lexicographically
/// on the pair. The vocabulary is the corpus base characters plus the merged
/// tokens plus the specials.
pub fn bpe_train(corpus: &str, num_merges: usize) -> Result<BpeTokenizer> {
    if corpus.is_empty() {
        return Err(Error::degenerate("training corpus is empty"));
    }
    let base: BTreeSet<char> = corpus.chars().collect();
    let mut token_set: BTreeSet<String> = base.iter().map(|c| c.to_string()).collect();
    let mut seq: Vec<String> = corpus.chars().map(|c| c.to_string()).collect();
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut merged_tokens: Vec<String> = Vec::new();

    for _ in 0..num_merges {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for pair in seq.windows(2) {
            *counts
                .entry((pair[0].as_str(), pair[1].as_str()))
                .or_insert(0) += 1;
        }
        // BTreeMap iterates pairs in ascending lexicographic order, so
        // keeping strictly-greater counts picks the smallest pair on ties.
        let mut best: Option<((&str, &str), usize)> = None;
        for (&pair, &count) in &counts {
            if best.map_or(true, |(_, c)| count > c) {
                best = Some((pair, count));
            }
        }
        let Some(((a, b), _)) = best else {
            break; // sequence shorter than 2 tokens, nothing left to merge
        };
        let (a, b) = (a.to_owned(), b.to_owned());
        let merged = format!("{a}{b}");
        seq = apply_merge(&seq, &a, &b, &merged);
        if token_set.insert(merged.clone()) {
            merged_tokens.push(merged);
        }
        merges.push((a, b));
    }

    let mut regular: Vec<String> = base.iter().map(|c| c.to_string()).collect();
    regular.extend(merged_tokens);
    let vocab = Vocabulary::from_regular_tokens(regular)?;
    Ok(BpeTokenizer { vocab, merges })
}

fn apply_merge(seq: &[String], a: &str, b: &str, merged: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == a && seq[i + 1] == b {
            out.push(merged.to_owned());
            i += 2;
        } else {
            out.push(seq[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeTokenizer {
    /// Rebuilds the tokenizer from stored vocabulary and merge list.
    pub fn from_parts(vocab: Vocabulary, merges: Vec<(String, String)>) -> Self {
        BpeTokenizer { vocab, merges }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Merge rules in training order.
    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let unk = self.vocab.specials().unknown;
        let mut seq: Vec<String> = text.chars().map(|c| c.to_string()).collect();
        for (a, b) in &self.merges {
            let merged = format!("{a}{b}");
            seq = apply_merge(&seq, a, b, &merged);
        }
        let ids = seq
            .iter()
            .map(|tok| self.vocab.id_of(tok).unwrap_or(unk))
            .collect();
        TokenSequence {
            ids,
            source_text: text.to_owned(),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        decode_ids(&self.vocab, ids)
    }
}

fn decode_ids(vocab: &Vocabulary, ids: &[usize]) -> String {
    let mut out = String::new();
    for &id in ids {
        if vocab.is_special(id) {
            continue;
        }
        if let Some(tok) = vocab.token(id) {
            out.push_str(tok);
        }
    }
    out
}

/// Either toy tokenizer behind one interface; the pipeline mixes them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tokenizer {
    Char(CharTokenizer),
    Bpe(BpeTokenizer),
}

impl Tokenizer {
    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Tokenizer::Char(t) => t.vocab(),
            Tokenizer::Bpe(t) => t.vocab(),
        }
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        match self {
            Tokenizer::Char(t) => t.encode(text),
            Tokenizer::Bpe(t) => t.encode(text),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        match self {
            Tokenizer::Char(t) => t.decode(ids),
            Tokenizer::Bpe(t) => t.decode(ids),
        }
    }
}

/// Percentage of `reference`'s regular tokens that also appear verbatim in
/// `probe`. Specials are excluded on both sides; comparison is exact string
/// equality.
pub fn vocab_overlap(probe: &Vocabulary, reference: &Vocabulary) -> Result<f64> {
    let reference_tokens: BTreeSet<&str> = reference
        .regular_tokens()
        .iter()
        .map(String::as_str)
        .collect();
    if reference_tokens.is_empty() {
        return Err(Error::degenerate(
            "reference vocabulary has no regular tokens",
        ));
    }
    let probe_tokens: BTreeSet<&str> = probe.regular_tokens().iter().map(String::as_str).collect();
    let shared = reference_tokens.intersection(&probe_tokens).count();
    Ok(100.0 * shared as f64 / reference_tokens.len() as f64)
}

/// Classic Levenshtein edit distance with unit insert/delete/substitute
/// costs, computed over characters with a rolling DP row.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut prev_diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let substitute = prev_diag + usize::from(ca != cb);
            prev_diag = row[j + 1];
            row[j + 1] = substitute.min(row[j] + 1).min(prev_diag + 1);
        }
    }
    row[b.len()]
}
