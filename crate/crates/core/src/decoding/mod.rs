//! Character-by-character poem generation.
//!
//! Each step asks the backend for logits over the full vocabulary, adds the
//! long-token penalty, optionally adds the same penalty to everything the
//! template forbids at the current position, and samples. Long tokens always
//! end up with probability exactly zero, so no step emits more than one
//! Chinese character.

mod backend;
pub mod ngram;
pub mod remote;
mod sampler;
mod template;

use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{splitmix64, Backend, BackendError, Context, RandomBackend, ScriptedBackend, UniformBackend};
pub use ngram::NgramBackend;
pub use remote::RemoteBackend;
pub use sampler::{nucleus, sample_index, tempered, Strategy};
pub use template::{Slot, SlotRule, TemplateConstraint, TemplateCursor};

use crate::forms::PoemForm;
use crate::logitmask::{apply_long_token_mask_in_place, Penalty};
use crate::prompting::{build_generation_prompt_with, InstructionLang, PromptError};
use crate::vocab::{PrunedVocabulary, TokenId, VocabError, EOP, MASK, SOP};
use template::SlotIndex;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("prompt could not be tokenized: {0}")]
    Tokenize(#[from] VocabError),
    #[error("vocabulary has no {0} token")]
    MissingSpecial(&'static str),
    #[error("backend scores {backend} tokens but the vocabulary has {vocab}")]
    VocabMismatch { backend: usize, vocab: usize },
    #[error("invalid decode policy: {0}")]
    InvalidPolicy(String),
    #[error("backend failed at step {step}: {source}")]
    Backend {
        step: usize,
        partial: String,
        #[source]
        source: BackendError,
    },
    #[error("every token is forbidden at step {step} (template position {position})")]
    AllForbidden {
        step: usize,
        position: usize,
        partial: String,
    },
}

impl DecodeError {
    /// Text generated before the failure, if any.
    pub fn partial_text(&self) -> Option<&str> {
        match self {
            Self::Backend { partial, .. } | Self::AllForbidden { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodePolicy {
    pub strategy: Strategy,
    pub temperature: f64,
    pub top_p: f64,
    pub max_steps: usize,
    pub template_enforce: bool,
    pub seed: u64,
}

impl Default for DecodePolicy {
    fn default() -> Self {
        Self {
            strategy: Strategy::TopP,
            temperature: 0.8,
            top_p: 0.9,
            max_steps: 512,
            template_enforce: false,
            seed: 0,
        }
    }
}

impl DecodePolicy {
    pub fn strict() -> Self {
        Self {
            template_enforce: true,
            ..Self::default()
        }
    }

    pub fn greedy() -> Self {
        Self {
            strategy: Strategy::Greedy,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self, form: &PoemForm) -> Result<(), DecodeError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DecodeError::InvalidPolicy(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(DecodeError::InvalidPolicy(format!(
                "top_p {} must lie in (0, 1]",
                self.top_p
            )));
        }
        let needed = form.total_chars + form.literal_count() + 1;
        if self.max_steps < needed {
            return Err(DecodeError::InvalidPolicy(format!(
                "max_steps {} is below the {needed} steps form {} needs",
                self.max_steps, form.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eop,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub position: usize,
    pub token: TokenId,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoemResult {
    pub text: String,
    pub steps: Vec<Step>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub user_prompt: &'a str,
    pub form: &'a PoemForm,
}

/// Shared decoding state: the pruned vocabulary, the mask penalty and
/// lazily built template indices. Cheap to clone; safe to share.
#[derive(Debug, Clone)]
pub struct Decoder {
    vocab: Arc<PrunedVocabulary>,
    penalty: Penalty,
    lang: InstructionLang,
    eop: TokenId,
    index: Arc<OnceLock<SlotIndex>>,
}

impl Decoder {
    /// Fails unless the vocabulary registers `[SOP]`, `[EOP]` and `[M]` as
    /// special tokens; otherwise the prompt scaffold would be split into
    /// ordinary pieces.
    pub fn new(vocab: Arc<PrunedVocabulary>) -> Result<Self, DecodeError> {
        for marker in [SOP, MASK] {
            vocab.special_id(marker).ok_or(DecodeError::MissingSpecial(marker))?;
        }
        let eop = vocab.special_id(EOP).ok_or(DecodeError::MissingSpecial(EOP))?;
        Ok(Self {
            vocab,
            penalty: Penalty::default(),
            lang: InstructionLang::En,
            eop,
            index: Arc::new(OnceLock::new()),
        })
    }

    pub fn with_penalty(mut self, penalty: Penalty) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_instruction_lang(mut self, lang: InstructionLang) -> Self {
        self.lang = lang;
        self
    }

    pub fn vocab(&self) -> &Arc<PrunedVocabulary> {
        &self.vocab
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    fn index(&self) -> &SlotIndex {
        self.index.get_or_init(|| SlotIndex::new(&self.vocab))
    }

    pub fn generate(
        &self,
        request: &GenerationRequest<'_>,
        backend: &dyn Backend,
        policy: &DecodePolicy,
    ) -> Result<PoemResult, DecodeError> {
        policy.validate(request.form)?;
        if backend.vocab_size() != self.vocab.len() {
            return Err(DecodeError::VocabMismatch {
                backend: backend.vocab_size(),
                vocab: self.vocab.len(),
            });
        }
        let prompt = build_generation_prompt_with(request.user_prompt, request.form, self.lang)?;
        let prompt_ids = self.vocab.tokenize(prompt.as_str())?;

        let constraint = policy
            .template_enforce
            .then(|| TemplateConstraint::new(&request.form.masked_template()));
        let mut cursor = TemplateCursor::new();
        let long = self.vocab.long_set();
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
        let mut generated: Vec<TokenId> = Vec::new();
        let mut steps = Vec::new();
        let mut stop_reason = StopReason::MaxSteps;

        for step in 0..policy.max_steps {
            let partial = || self.render(&generated);
            let mut scores = backend
                .logits(Context {
                    prompt: &prompt_ids,
                    generated: &generated,
                })
                .map_err(|source| DecodeError::Backend {
                    step,
                    partial: partial(),
                    source,
                })?;
            if scores.len() != self.vocab.len() {
                return Err(DecodeError::Backend {
                    step,
                    partial: partial(),
                    source: BackendError::BadLength {
                        expected: self.vocab.len(),
                        got: scores.len(),
                    },
                });
            }
            if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
                return Err(DecodeError::Backend {
                    step,
                    partial: partial(),
                    source: BackendError::Protocol(format!("logit {index} is not finite")),
                });
            }
            apply_long_token_mask_in_place(&mut scores, long, self.penalty);

            let mut candidate = vec![true; scores.len()];
            for id in long.iter() {
                candidate[id as usize] = false;
            }
            if let Some(c) = &constraint {
                let allowed = self.index().allowed(c, &cursor, &self.vocab);
                let mut ok = vec![false; scores.len()];
                for id in allowed {
                    ok[id as usize] = true;
                }
                for (i, s) in scores.iter_mut().enumerate() {
                    if !ok[i] {
                        *s += self.penalty.value();
                        candidate[i] = false;
                    }
                }
            }
            if !candidate.iter().any(|&c| c) {
                return Err(DecodeError::AllForbidden {
                    step,
                    position: cursor.position,
                    partial: partial(),
                });
            }

            let mut probs = tempered(&scores, policy.temperature);
            for (p, &ok) in probs.iter_mut().zip(&candidate) {
                if !ok {
                    *p = 0.0;
                }
            }
            if probs.iter().all(|&p| p == 0.0) {
                // Every candidate underflowed; fall back to uniform over them.
                for (p, &ok) in probs.iter_mut().zip(&candidate) {
                    *p = if ok { 1.0 } else { 0.0 };
                }
            }
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);

            let chosen = match policy.strategy {
                Strategy::Greedy => crate::logitmask::argmax(&probs),
                Strategy::Temperature => sample_index(&probs, &mut rng),
                Strategy::TopP => {
                    nucleus(&mut probs, policy.top_p);
                    sample_index(&probs, &mut rng)
                }
            };
            steps.push(Step {
                position: step,
                token: chosen as TokenId,
                prob: probs[chosen],
            });
            if chosen as TokenId == self.eop {
                stop_reason = StopReason::Eop;
                break;
            }
            if let Some(c) = &constraint {
                let bytes = self
                    .vocab
                    .vocabulary()
                    .token_bytes(chosen as TokenId)
                    .unwrap_or_default();
                cursor.advance(c, bytes);
            }
            generated.push(chosen as TokenId);
        }

        Ok(PoemResult {
            text: self.render(&generated),
            steps,
            stop_reason,
        })
    }

    fn render(&self, ids: &[TokenId]) -> String {
        let bytes = self.vocab.detokenize_bytes(ids).unwrap_or_default();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// One-shot convenience over [`Decoder::generate`].
pub fn generate_poem(
    request: &GenerationRequest<'_>,
    backend: &dyn Backend,
    policy: &DecodePolicy,
    vocab: Arc<PrunedVocabulary>,
) -> Result<PoemResult, DecodeError> {
    Decoder::new(vocab)?.generate(request, backend, policy)
}
