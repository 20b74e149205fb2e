//! Factorized categorical action distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zsim_core::dynamics::Action;

use crate::scalar::Scalar;

/// Row-wise log-softmax of `[n * k]` logits.
pub fn log_softmax<R: Scalar>(logits: &[R], k: usize) -> Vec<R> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let max = row.iter().copied().fold(R::neg_infinity(), R::max);
        let lse = max + row.iter().map(|&l| (l - max).exp()).sum::<R>().ln();
        out.extend(row.iter().map(|&l| l - lse));
    }
    out
}

fn argmax<R: Scalar>(row: &[R]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from one row of log-probabilities.
fn draw<R: Scalar>(logp: &[R], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &l) in logp.iter().enumerate() {
        acc += l.as_f64().exp();
        if u < acc {
            return i;
        }
    }
    // rounding left the cumulative sum just below u; take the last bin with mass
    logp.iter()
        .rposition(|l| l.as_f64() > f64::NEG_INFINITY)
        .unwrap_or(logp.len() - 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sampled<R> {
    pub actions: Vec<Action>,
    /// Sum of the two per-head log-probabilities.
    pub log_probs: Vec<R>,
}

/// One independent categorical draw per head and row, each row from its own
/// stream. `greedy` takes the mode instead and consumes no randomness.
pub fn sample_actions<R: Scalar>(
    logits_accel: &[R],
    logits_steer: &[R],
    bins: [usize; 2],
    rngs: &mut [ChaCha8Rng],
    greedy: bool,
) -> Sampled<R> {
    let la = log_softmax(logits_accel, bins[0]);
    let ls = log_softmax(logits_steer, bins[1]);
    let n = la.len() / bins[0];
    let mut actions = Vec::with_capacity(n);
    let mut log_probs = Vec::with_capacity(n);
    for b in 0..n {
        let ra = &la[b * bins[0]..(b + 1) * bins[0]];
        let rs = &ls[b * bins[1]..(b + 1) * bins[1]];
        let a = if greedy {
            [argmax(ra), argmax(rs)]
        } else {
            let rng = &mut rngs[b];
            [draw(ra, rng), draw(rs, rng)]
        };
        log_probs.push(ra[a[0]] + rs[a[1]]);
        actions.push(a);
    }
    Sampled { actions, log_probs }
}

/// Joint log-probability of given actions.
pub fn log_prob<R: Scalar>(
    logits_accel: &[R],
    logits_steer: &[R],
    bins: [usize; 2],
    actions: &[Action],
) -> Vec<R> {
    let la = log_softmax(logits_accel, bins[0]);
    let ls = log_softmax(logits_steer, bins[1]);
    actions
        .iter()
        .enumerate()
        .map(|(b, a)| la[b * bins[0] + a[0]] + ls[b * bins[1] + a[1]])
        .collect()
}

/// Entropy of one head per row.
pub fn entropy<R: Scalar>(logits: &[R], k: usize) -> Vec<R> {
    log_softmax(logits, k)
        .chunks_exact(k)
        .map(|row| {
            -row.iter()
                .map(|&l| l.exp() * l)
                .fold(R::zero(), |a, b| a + b)
        })
        .collect()
}
