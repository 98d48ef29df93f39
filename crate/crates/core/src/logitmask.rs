//! Output pruning: zero the probability of every long token.
//!
//! Two routes compute the same distribution. [`masked_softmax`] evaluates the
//! indicator-weighted softmax directly; [`apply_long_token_mask`] adds a large
//! negative penalty to long-token logits so that an ordinary [`softmax`]
//! underflows them to zero. The decoder uses the additive route.

use thiserror::Error;

use crate::par::{self, Execution};
use crate::vocab::LongTokenSet;

/// Default additive penalty for long-token logits.
pub const DEFAULT_PENALTY: f64 = -1e9;
/// Penalties above this are too weak to guarantee underflow.
pub const MAX_PENALTY: f64 = -1e4;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("every index is masked; the distribution is undefined")]
    AllMasked,
    #[error("logit {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("penalty {0} must be at most -1e4 (or -inf)")]
    WeakPenalty(f64),
}

/// Additive penalty applied to masked logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty(f64);

impl Penalty {
    pub fn new(value: f64) -> Result<Self, MaskError> {
        if value.is_nan() || value > MAX_PENALTY {
            return Err(MaskError::WeakPenalty(value));
        }
        Ok(Self(value))
    }

    pub fn neg_infinity() -> Self {
        Self(f64::NEG_INFINITY)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Penalty {
    fn default() -> Self {
        Self(DEFAULT_PENALTY)
    }
}

/// A probability vector over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDistribution {
    pub probs: Vec<f64>,
}

impl MaskedDistribution {
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_finite(logits: &[f64]) -> Result<(), MaskError> {
    match logits.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(MaskError::NonFinite {
            index,
            value: logits[index],
        }),
        None => Ok(()),
    }
}

/// Indicator-masked softmax, stabilized by the maximum over allowed indices.
///
/// Masked entries are exactly `0.0`.
pub fn masked_softmax(logits: &[f64], long_set: &LongTokenSet) -> Result<MaskedDistribution, MaskError> {
    check_finite(logits)?;
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !long_set.contains(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(MaskError::AllMasked);
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if long_set.contains(i) { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(MaskedDistribution { probs })
}

/// Adds `penalty` to the logits of long tokens and leaves the rest unchanged.
pub fn apply_long_token_mask(logits: &[f64], long_set: &LongTokenSet, penalty: Penalty) -> Vec<f64> {
    let mut out = logits.to_vec();
    apply_long_token_mask_in_place(&mut out, long_set, penalty);
    out
}

pub fn apply_long_token_mask_in_place(logits: &mut [f64], long_set: &LongTokenSet, penalty: Penalty) {
    for id in long_set.iter() {
        if let Some(v) = logits.get_mut(id as usize) {
            *v += penalty.value();
        }
    }
}

/// [`masked_softmax`] over many rows sharing one long set.
pub fn masked_softmax_batch(
    rows: &[Vec<f64>],
    long_set: &LongTokenSet,
    exec: Execution,
) -> Vec<Result<MaskedDistribution, MaskError>> {
    par::map(rows, exec, |row| masked_softmax(row, long_set))
}

/// Additive penalty followed by softmax, over many rows.
pub fn penalized_softmax_batch(
    rows: &[Vec<f64>],
    long_set: &LongTokenSet,
    penalty: Penalty,
    exec: Execution,
) -> Vec<Vec<f64>> {
    par::map(rows, exec, |row| {
        softmax(&apply_long_token_mask(row, long_set, penalty))
    })
}

/// Plain max-stabilized softmax. `-inf` entries get probability zero.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}
