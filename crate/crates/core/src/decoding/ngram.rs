//! A character-level interpolated trigram model with add-k smoothing.
//!
//! This is a desk-scale stand-in for a finetuned language model: it knows
//! nothing about the prompt and only continues the poem it has generated so
//! far. It scores every single-character token and `[EOP]`; all other tokens
//! get a fixed floor.

use std::collections::HashMap;
use std::sync::Arc;

use super::backend::{Backend, BackendError, Context};
use crate::vocab::{PrunedVocabulary, TokenId, EOP};

/// Bundled training corpus: one poem per blank-line separated block.
pub const BUNDLED_CORPUS: &str = include_str!("../../data/poems.txt");

const BOS: u32 = 0;
const EOS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramConfig {
    /// Add-k smoothing constant.
    pub k: f64,
    /// Interpolation weights for trigram, bigram and unigram estimates.
    pub lambdas: [f64; 3],
    /// Logit for tokens the model cannot score.
    pub floor: f64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self {
            k: 0.01,
            lambdas: [0.6, 0.3, 0.1],
            floor: -30.0,
        }
    }
}

/// Counts over a symbol alphabet (characters plus begin/end markers).
#[derive(Debug, Clone)]
pub struct NgramModel {
    config: NgramConfig,
    symbols: HashMap<char, u32>,
    alphabet: usize,
    unigram: Vec<u32>,
    total: u32,
    bigram: HashMap<(u32, u32), u32>,
    bigram_ctx: HashMap<u32, u32>,
    trigram: HashMap<(u32, u32, u32), u32>,
    trigram_ctx: HashMap<(u32, u32), u32>,
}

impl NgramModel {
    pub fn train<'a>(poems: impl IntoIterator<Item = &'a str>, config: NgramConfig) -> Self {
        let mut symbols: HashMap<char, u32> = HashMap::new();
        let mut seqs: Vec<Vec<u32>> = Vec::new();
        for poem in poems {
            let mut seq = vec![BOS, BOS];
            for c in poem.trim().chars() {
                let next = symbols.len() as u32 + 2;
                seq.push(*symbols.entry(c).or_insert(next));
            }
            seq.push(EOS);
            seqs.push(seq);
        }
        let alphabet = symbols.len() + 2;
        let mut model = Self {
            config,
            symbols,
            alphabet,
            unigram: vec![0; alphabet],
            total: 0,
            bigram: HashMap::new(),
            bigram_ctx: HashMap::new(),
            trigram: HashMap::new(),
            trigram_ctx: HashMap::new(),
        };
        for seq in &seqs {
            for w in seq.windows(3) {
                let (a, b, c) = (w[0], w[1], w[2]);
                model.unigram[c as usize] += 1;
                model.total += 1;
                *model.bigram.entry((b, c)).or_default() += 1;
                *model.bigram_ctx.entry(b).or_default() += 1;
                *model.trigram.entry((a, b, c)).or_default() += 1;
                *model.trigram_ctx.entry((a, b)).or_default() += 1;
            }
        }
        model
    }

    /// Trains on blank-line separated poems.
    pub fn train_on_corpus(corpus: &str, config: NgramConfig) -> Self {
        Self::train(split_corpus(corpus), config)
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn symbol(&self, c: char) -> Option<u32> {
        self.symbols.get(&c).copied()
    }

    /// Interpolated P(next | a, b); `next == None` stands for a character
    /// never seen in training.
    pub fn prob(&self, a: u32, b: u32, next: Option<u32>) -> f64 {
        let k = self.config.k;
        let v = (self.alphabet + 1) as f64;
        let [l3, l2, l1] = self.config.lambdas;
        let (c3, c2, c1) = match next {
            Some(c) => (
                self.trigram.get(&(a, b, c)).copied().unwrap_or(0),
                self.bigram.get(&(b, c)).copied().unwrap_or(0),
                self.unigram[c as usize],
            ),
            None => (0, 0, 0),
        };
        let h3 = self.trigram_ctx.get(&(a, b)).copied().unwrap_or(0);
        let h2 = self.bigram_ctx.get(&b).copied().unwrap_or(0);
        let est = |count: u32, ctx: u32| (count as f64 + k) / (ctx as f64 + k * v);
        l3 * est(c3, h3) + l2 * est(c2, h2) + l1 * est(c1, self.total)
    }

    fn history(&self, text: &str) -> (u32, u32) {
        let mut a = BOS;
        let mut b = BOS;
        for c in text.chars() {
            a = b;
            // Unseen history characters fall back to the begin marker.
            b = self.symbol(c).unwrap_or(BOS);
        }
        (a, b)
    }
}

/// Splits a blank-line separated corpus into trimmed, non-empty poems.
pub fn split_corpus(corpus: &str) -> impl Iterator<Item = &str> {
    corpus.split("\n\n").map(str::trim).filter(|p| !p.is_empty())
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Char(Option<u32>),
    End,
    Floor,
}

/// Backend adapter mapping vocabulary ids onto the character model.
#[derive(Debug, Clone)]
pub struct NgramBackend {
    model: Arc<NgramModel>,
    vocab: Arc<PrunedVocabulary>,
    targets: Vec<Target>,
}

impl NgramBackend {
    pub fn new(model: NgramModel, vocab: Arc<PrunedVocabulary>) -> Self {
        let eop = vocab.special_id(EOP);
        let base = vocab.vocabulary();
        let targets = (0..base.len() as TokenId)
            .map(|id| {
                if Some(id) == eop {
                    return Target::End;
                }
                if base.is_special(id) {
                    return Target::Floor;
                }
                let single = base
                    .token_bytes(id)
                    .and_then(|b| std::str::from_utf8(b).ok())
                    .and_then(|s| {
                        let mut it = s.chars();
                        match (it.next(), it.next()) {
                            (Some(c), None) => Some(c),
                            _ => None,
                        }
                    });
                match single {
                    Some(c) => Target::Char(model.symbol(c)),
                    None => Target::Floor,
                }
            })
            .collect();
        Self {
            model: Arc::new(model),
            vocab,
            targets,
        }
    }

    /// Trains on the bundled corpus.
    pub fn bundled(vocab: Arc<PrunedVocabulary>) -> Self {
        Self::new(
            NgramModel::train_on_corpus(BUNDLED_CORPUS, NgramConfig::default()),
            vocab,
        )
    }

    pub fn model(&self) -> &NgramModel {
        &self.model
    }
}

impl Backend for NgramBackend {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
        let bytes = self
            .vocab
            .detokenize_bytes(ctx.generated)
            .map_err(|e| BackendError::Failed(e.to_string()))?;
        let text = String::from_utf8_lossy(&bytes);
        let (a, b) = self.model.history(&text);
        let floor = self.model.config.floor;
        let mut cache: HashMap<Option<u32>, f64> = HashMap::new();
        let out = self
            .targets
            .iter()
            .map(|t| match *t {
                Target::Floor => floor,
                Target::End => self.model.prob(a, b, Some(EOS)).ln(),
                Target::Char(sym) => *cache.entry(sym).or_insert_with(|| self.model.prob(a, b, sym).ln()),
            })
            .collect();
        Ok(out)
    }

    fn name(&self) -> &str {
        "ngram"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_sum_to_one_over_alphabet() {
        let m = NgramModel::train(["床前明月光", "明月几时有"], NgramConfig::default());
        let (a, b) = m.history("床前");
        let seen: f64 = (0..m.alphabet_size() as u32).map(|s| m.prob(a, b, Some(s))).sum();
        let unseen = m.prob(a, b, None);
        assert!((seen + unseen - 1.0).abs() < 1e-9, "{}", seen + unseen);
    }

    #[test]
    fn follows_training_text() {
        let m = NgramModel::train(["床前明月光"; 5], NgramConfig::default());
        let (a, b) = m.history("床前");
        let ming = m.symbol('明');
        let guang = m.symbol('光');
        assert!(m.prob(a, b, ming) > 0.5);
        assert!(m.prob(a, b, guang) < 0.1);
        let (a, b) = m.history("床前明月光");
        assert!(m.prob(a, b, Some(EOS)) > 0.5);
    }

    #[test]
    fn corpus_splitting() {
        let poems: Vec<&str> = split_corpus("a\nb\n\n\nc\n\n").collect();
        assert_eq!(poems, vec!["a\nb", "c"]);
    }

    #[test]
    fn bundled_corpus_is_nonempty() {
        assert!(split_corpus(BUNDLED_CORPUS).count() >= 1000);
    }
}
