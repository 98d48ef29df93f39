//! Spelling probe: does a model know which characters make up its tokens?
//!
//! Items are long tokens; the expected answer lists the token's characters
//! separated by `<|extra_1|>`. Two failure rates are reported: exact-match
//! failures, and the subset where even the number of characters is wrong.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charclass::{CjkRanges, TokenClass};
use crate::vocab::{Vocabulary, EXTRA_1};

pub const PROBE_INSTRUCTION: &str = "List all the characters in the following token: ";

/// Published failure rates, as (overall, by character count), for rendering
/// next to locally scored runs. They come from 7B-scale models and cannot be
/// reproduced here.
pub const REFERENCE_TOKEN_BASED_7B: (f64, f64) = (0.099, 0.017);
pub const REFERENCE_TOKEN_FREE_7B: (f64, f64) = (0.005, 0.001);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProbeError {
    #[error("asked for {wanted} probe items but the vocabulary has only {available} eligible long tokens")]
    InsufficientTokens { wanted: usize, available: usize },
    #[error("{items} items but {outputs} outputs")]
    LengthMismatch { items: usize, outputs: usize },
    #[error("invalid probe item {token:?}: {reason}")]
    InvalidItem { token: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub token: String,
    pub expected_chars: Vec<String>,
}

impl ProbeItem {
    /// Builds an item from a token, listing its Chinese characters.
    pub fn new(token: &str, ranges: &CjkRanges) -> Result<Self, ProbeError> {
        let expected_chars: Vec<String> = token
            .chars()
            .filter(|&c| ranges.is_chinese(c))
            .map(String::from)
            .collect();
        let item = Self {
            token: token.to_string(),
            expected_chars,
        };
        item.check(ranges)?;
        Ok(item)
    }

    pub fn check(&self, ranges: &CjkRanges) -> Result<(), ProbeError> {
        let invalid = |reason: &str| ProbeError::InvalidItem {
            token: self.token.clone(),
            reason: reason.to_string(),
        };
        let chinese: String = self.token.chars().filter(|&c| ranges.is_chinese(c)).collect();
        if self.expected_chars.concat() != chinese {
            return Err(invalid("expected characters do not spell the token's Chinese content"));
        }
        if self.expected_chars.iter().any(|c| c.chars().count() != 1) {
            return Err(invalid("each expected entry must be a single character"));
        }
        let mixed = chinese.chars().count() != self.token.chars().count();
        if self.expected_chars.is_empty() || (self.expected_chars.len() < 2 && !mixed) {
            return Err(invalid("a probe token needs at least two characters"));
        }
        Ok(())
    }

    pub fn expected(&self) -> String {
        self.expected_chars.join(EXTRA_1)
    }

    pub fn prompt(&self) -> String {
        format!("{PROBE_INSTRUCTION}{EXTRA_1}{}", self.token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePrompt {
    pub prompt: String,
    pub expected: String,
}

pub fn probe_prompt(item: &ProbeItem) -> ProbePrompt {
    ProbePrompt {
        prompt: item.prompt(),
        expected: item.expected(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSplit {
    pub test: Vec<ProbeItem>,
    pub train: Vec<ProbeItem>,
}

/// Long tokens eligible as probe items, in id order. Mixed-script tokens
/// are skipped unless `include_mixed`.
pub fn eligible_items(vocab: &Vocabulary, ranges: &CjkRanges, include_mixed: bool) -> Vec<ProbeItem> {
    let mut seen = HashSet::new();
    vocab
        .iter()
        .filter(|&(id, bytes)| !vocab.is_special(id) && ranges.classify_token(bytes) == TokenClass::Long)
        .filter_map(|(_, bytes)| std::str::from_utf8(bytes).ok())
        .filter(|s| include_mixed || s.chars().all(|c| ranges.is_chinese(c)))
        .filter(|s| seen.insert(s.to_string()))
        .filter_map(|s| ProbeItem::new(s, ranges).ok())
        .collect()
}

/// Seeded uniform split: `n` test items, the rest for training.
pub fn build_probe_set(
    vocab: &Vocabulary,
    n: usize,
    seed: u64,
    ranges: &CjkRanges,
    include_mixed: bool,
) -> Result<ProbeSplit, ProbeError> {
    let mut items = eligible_items(vocab, ranges, include_mixed);
    if items.len() < n {
        return Err(ProbeError::InsufficientTokens {
            wanted: n,
            available: items.len(),
        });
    }
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = items.split_off(n);
    Ok(ProbeSplit { test: items, train })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureRates {
    pub overall: f64,
    pub by_char_count: f64,
    pub n: usize,
}

pub fn score_probe(items: &[ProbeItem], outputs: &[String]) -> Result<FailureRates, ProbeError> {
    if items.len() != outputs.len() {
        return Err(ProbeError::LengthMismatch {
            items: items.len(),
            outputs: outputs.len(),
        });
    }
    let mut overall = 0usize;
    let mut by_count = 0usize;
    for (item, out) in items.iter().zip(outputs) {
        if *out != item.expected() {
            overall += 1;
        }
        if out.split(EXTRA_1).count() != item.expected_chars.len() {
            by_count += 1;
        }
    }
    let n = items.len();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(FailureRates {
        overall: rate(overall),
        by_char_count: rate(by_count),
        n,
    })
}

/// Reads JSON-lines probe items.
pub fn read_items(text: &str) -> Result<Vec<ProbeItem>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn write_items(items: &[ProbeItem]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("items serialize") + "\n")
        .collect()
}
