use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::logitmask::{argmax, softmax};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Temperature,
    #[default]
    TopP,
}

/// Probabilities after temperature scaling. Entries at `-inf` (or far below
/// the max) come out as exactly zero.
pub fn tempered(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    softmax(&scaled)
}

/// Zeroes everything outside the smallest set of most likely entries whose
/// mass reaches `top_p`, then renormalizes.
pub fn nucleus(probs: &mut [f64], top_p: f64) {
    if top_p >= 1.0 {
        return;
    }
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut keep = 0;
    for &i in &order {
        mass += probs[i];
        keep += 1;
        if mass >= top_p {
            break;
        }
    }
    for &i in &order[keep..] {
        probs[i] = 0.0;
    }
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        probs.iter_mut().for_each(|p| *p /= total);
    }
}

/// Inverse-CDF draw over the positive entries of `probs`.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = argmax(probs);
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nucleus_keeps_head() {
        let mut p = vec![0.5, 0.3, 0.15, 0.05];
        nucleus(&mut p, 0.7);
        assert_eq!(p[2], 0.0);
        assert_eq!(p[3], 0.0);
        assert!((p[0] - 0.625).abs() < 1e-12 && (p[1] - 0.375).abs() < 1e-12);

        let mut q = vec![0.95, 0.05];
        nucleus(&mut q, 0.9);
        assert_eq!(q, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_entries_never_drawn() {
        let probs = [0.0, 0.5, 0.0, 0.5, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let i = sample_index(&probs, &mut rng);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn empirical_frequencies_within_three_sigma() {
        let logits = [1.0, 0.0, -0.5, 2.0, f64::NEG_INFINITY, 0.3];
        let probs = tempered(&logits, 0.8);
        assert_eq!(probs[4], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sample_index(&probs, &mut rng)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = probs[i];
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let diff = (c as f64 - n as f64 * p).abs();
            assert!(diff <= 3.0 * sigma.max(1e-9), "token {i}: {c} vs {}", n as f64 * p);
        }
    }
}
