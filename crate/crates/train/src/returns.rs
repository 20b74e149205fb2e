//! Discounted returns and the V-trace off-policy correction.

use zsim_core::Real;

/// `G_t = sum_{k >= t} gamma^(k-t) r_k` over the masked steps of one row.
/// Unmasked steps get 0 and break the sum.
pub fn discounted_return<R: Real>(rewards: &[R], mask: &[u8], gamma: R) -> Vec<R> {
    let mut out = vec![R::zero(); rewards.len()];
    let mut acc = R::zero();
    for t in (0..rewards.len()).rev() {
        if mask[t] == 0 {
            acc = R::zero();
            continue;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VtraceParams<R> {
    pub gamma: R,
    pub rho_bar: R,
    pub c_bar: R,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VtraceOut<R> {
    /// Value targets.
    pub vs: Vec<R>,
    /// Importance-weighted policy-gradient advantages.
    pub advantages: Vec<R>,
}

/// V-trace targets for one sequence. Steps with `mask == 0` form a padded
/// tail: they get `vs = v`, advantage 0, and the last masked step
/// bootstraps from `bootstrap`. A done step cuts the trace.
pub fn vtrace<R: Real>(
    values: &[R],
    bootstrap: R,
    rewards: &[R],
    dones: &[bool],
    mask: &[u8],
    log_rhos: &[R],
    p: &VtraceParams<R>,
) -> VtraceOut<R> {
    let n = values.len();
    let len = mask.iter().take_while(|&&m| m != 0).count();
    let mut vs = values.to_vec();
    let mut advantages = vec![R::zero(); n];
    let next_value = |t: usize| {
        if t + 1 < len {
            values[t + 1]
        } else {
            bootstrap
        }
    };
    // vs_{t+1} - v_{t+1}, zero past the end
    let mut carry = R::zero();
    let mut vs_next = bootstrap;
    for t in (0..len).rev() {
        let ratio = log_rhos[t].exp();
        let rho = ratio.min(p.rho_bar);
        let c = ratio.min(p.c_bar);
        let cont = if dones[t] { R::zero() } else { R::one() };
        let delta = rho * (rewards[t] + p.gamma * next_value(t) * cont - values[t]);
        let diff = delta + p.gamma * c * cont * carry;
        vs[t] = values[t] + diff;
        advantages[t] = rho * (rewards[t] + p.gamma * vs_next * cont - values[t]);
        carry = diff;
        vs_next = vs[t];
    }
    VtraceOut { vs, advantages }
}
