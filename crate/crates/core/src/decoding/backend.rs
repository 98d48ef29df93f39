//! The next-token backend contract and the simple in-process backends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vocab::{PrunedVocabulary, TokenId, VocabError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("backend returned {got} logits, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("backend failed: {0}")]
    Failed(String),
}

/// What a backend sees at each step.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    /// The tokenized prompt.
    pub prompt: &'a [TokenId],
    /// Tokens generated so far in this session.
    pub generated: &'a [TokenId],
}

impl Context<'_> {
    pub fn ids(&self) -> Vec<TokenId> {
        let mut v = Vec::with_capacity(self.prompt.len() + self.generated.len());
        v.extend_from_slice(self.prompt);
        v.extend_from_slice(self.generated);
        v
    }
}

/// Scores every vocabulary id given a context.
///
/// Implementations are shared across decode sessions and must not keep
/// per-session state; the context carries everything.
pub trait Backend: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
        (**self).logits(ctx)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
        (**self).logits(ctx)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Replays a fixed token sequence, then `[EOP]`.
///
/// Each step puts a large logit on the scripted token and zero elsewhere.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    vocab_size: usize,
    script: Vec<TokenId>,
    eop: TokenId,
    peak: f64,
}

impl ScriptedBackend {
    pub const PEAK: f64 = 40.0;

    pub fn new(vocab_size: usize, script: Vec<TokenId>, eop: TokenId) -> Self {
        Self {
            vocab_size,
            script,
            eop,
            peak: Self::PEAK,
        }
    }

    /// Scripts the pruned tokenization of `text`.
    pub fn from_text(vocab: &PrunedVocabulary, text: &str) -> Result<Self, VocabError> {
        let eop = vocab
            .special_id(crate::vocab::EOP)
            .ok_or_else(|| VocabError::UnknownSpecial(crate::vocab::EOP.into()))?;
        Ok(Self::new(vocab.len(), vocab.tokenize(text)?, eop))
    }

    pub fn script(&self) -> &[TokenId] {
        &self.script
    }
}

impl Backend for ScriptedBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
        let target = self.script.get(ctx.generated.len()).copied().unwrap_or(self.eop);
        let mut out = vec![0.0; self.vocab_size];
        if let Some(v) = out.get_mut(target as usize) {
            *v = self.peak;
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Every token equally likely.
#[derive(Debug, Clone)]
pub struct UniformBackend {
    vocab_size: usize,
}

impl UniformBackend {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }
}

impl Backend for UniformBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logits(&self, _ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
        Ok(vec![0.0; self.vocab_size])
    }

    fn name(&self) -> &str {
        "uniform"
    }
}

/// Logits drawn uniformly from `[-spread, spread]`, a pure function of the
/// backend seed and the generated context.
#[derive(Debug, Clone)]
pub struct RandomBackend {
    vocab_size: usize,
    seed: u64,
    spread: f64,
}

impl RandomBackend {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            seed,
            spread: 4.0,
        }
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Backend for RandomBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
        let key = ctx
            .generated
            .iter()
            .fold(splitmix64(self.seed), |h, &id| splitmix64(h ^ id as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        Ok((0..self.vocab_size)
            .map(|_| rng.random_range(-self.spread..=self.spread))
            .collect())
    }

    fn name(&self) -> &str {
        "random"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replays_then_stops() {
        let b = ScriptedBackend::new(10, vec![3, 4], 9);
        let at = |generated: &[TokenId]| {
            crate::logitmask::argmax(
                &b.logits(Context {
                    prompt: &[1],
                    generated,
                })
                .unwrap(),
            )
        };
        assert_eq!(at(&[]), 3);
        assert_eq!(at(&[3]), 4);
        assert_eq!(at(&[3, 4]), 9);
        assert_eq!(at(&[3, 4, 9, 9]), 9);
    }

    #[test]
    fn random_is_a_function_of_context() {
        let b = RandomBackend::new(50, 7);
        let c1 = Context {
            prompt: &[1, 2],
            generated: &[5],
        };
        let c2 = Context {
            prompt: &[9],
            generated: &[5],
        };
        assert_eq!(b.logits(c1).unwrap(), b.logits(c2).unwrap());
        let c3 = Context {
            prompt: &[1, 2],
            generated: &[6],
        };
        assert_ne!(b.logits(c1).unwrap(), b.logits(c3).unwrap());
        assert_ne!(b.logits(c1).unwrap(), RandomBackend::new(50, 8).logits(c1).unwrap());
        assert!(b.logits(c1).unwrap().iter().all(|v| v.abs() <= 4.0));
    }
}
