#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsim_core::simcore::{ACTIVE_DIM, AGENT_DIM, ROAD_DIM, ROUTE_DIM, VALUE_DIM};
use zsim_nn::{log_softmax, Model, ModelConfig};
use zsim_train::{stack_rows, BcSample, ObsRow, TransitionSequence, SEQ_LEN};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn feats(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-15.0..15.0)).collect()
}

/// Random packed observation with the given token counts.
pub fn obs_row(rng: &mut ChaCha8Rng, agents: usize, road: usize, route: usize) -> ObsRow<f64> {
    ObsRow {
        active: feats(rng, ACTIVE_DIM),
        agents: feats(rng, agents * AGENT_DIM),
        road: feats(rng, road * ROAD_DIM),
        route: feats(rng, route * ROUTE_DIM),
        value: (0..VALUE_DIM).map(|_| rng.gen_range(0.0..80.0)).collect(),
    }
}

/// The small model used for gradient checks: latent width 16.
pub fn toy_model() -> Model {
    Model::new(ModelConfig::toy()).unwrap()
}

pub fn perturbed_params(model: &Model, seed: u64) -> Vec<f64> {
    let mut r = rng(seed ^ 0xabc);
    model
        .init_params::<f64>(seed)
        .into_iter()
        .map(|v| v + r.gen_range(-0.05..0.05))
        .collect()
}

/// A sequence of `len` live steps, each observing 3 agents and 8 road points.
pub fn toy_sequence(
    rng: &mut ChaCha8Rng,
    len: usize,
    terminated: bool,
    version: u64,
) -> TransitionSequence<f64> {
    let mut mask = vec![1u8; len];
    mask.resize(SEQ_LEN, 0);
    let mut dones = vec![false; SEQ_LEN];
    if terminated {
        dones[len - 1] = true;
    }
    let pad = |mut v: Vec<f64>| {
        v.resize(SEQ_LEN, 0.0);
        v
    };
    let mut actions: Vec<[usize; 2]> = (0..len)
        .map(|_| [rng.gen_range(0..6), rng.gen_range(0..5)])
        .collect();
    actions.resize(SEQ_LEN, [0, 0]);
    TransitionSequence {
        scenario: 0,
        start: 0,
        len,
        observations: (0..len).map(|_| obs_row(rng, 3, 8, 2)).collect(),
        actions,
        log_mu: pad((0..len).map(|_| -rng.gen_range(1.0..4.0)).collect()),
        rewards: pad((0..len).map(|_| rng.gen_range(-1.0..2.0)).collect()),
        dones,
        mask,
        bootstrap_value: 0.0,
        bootstrap_obs: (!terminated).then(|| obs_row(rng, 3, 8, 2)),
        policy_version: version,
    }
}

/// Direct-sum V-trace: `vs_t = v_t + sum_k gamma^(k-t) (prod_{i<k} c_i (1-d_i)) delta_k`.
pub fn vtrace_oracle(
    v: &[f64],
    boot: f64,
    r: &[f64],
    d: &[bool],
    log_rho: &[f64],
    gamma: f64,
    rho_bar: f64,
    c_bar: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let vn = |t: usize| if t < n { v[t] } else { boot };
    let cont = |t: usize| if d[t] { 0.0 } else { 1.0 };
    let rho = |t: usize| log_rho[t].exp().min(rho_bar);
    let c = |t: usize| log_rho[t].exp().min(c_bar);
    let delta = |k: usize| rho(k) * (r[k] + gamma * vn(k + 1) * cont(k) - v[k]);
    let mut vs = vec![0.0; n];
    for t in 0..n {
        let mut acc = 0.0;
        for k in t..n {
            let mut w = gamma.powi((k - t) as i32);
            for i in t..k {
                w *= c(i) * cont(i);
            }
            acc += w * delta(k);
        }
        vs[t] = v[t] + acc;
    }
    let vs_next = |t: usize| if t + 1 < n { vs[t + 1] } else { boot };
    let adv = (0..n)
        .map(|t| rho(t) * (r[t] + gamma * vs_next(t) * cont(t) - v[t]))
        .collect();
    (vs, adv)
}

/// n-step bootstrapped return `sum_{k>=t} gamma^(k-t) r_k + gamma^(n-t) boot`.
pub fn n_step_returns(r: &[f64], boot: f64, gamma: f64, terminated: bool) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let tail = if terminated {
                0.0
            } else {
                gamma.powi((n - t) as i32) * boot
            };
            (t..n)
                .map(|k| gamma.powi((k - t) as i32) * r[k])
                .sum::<f64>()
                + tail
        })
        .collect()
}

/// Log-probability of the taken actions under `params`, one per live step.
pub fn log_pi(model: &Model, params: &[f64], seq: &TransitionSequence<f64>) -> Vec<f64> {
    let rows: Vec<_> = seq.observations.iter().collect();
    let (out, _) = model.forward(params, &stack_rows(&rows)).unwrap();
    let la = log_softmax(&out.logits_accel, 6);
    let ls = log_softmax(&out.logits_steer, 5);
    (0..seq.len)
        .map(|t| la[t * 6 + seq.actions[t][0]] + ls[t * 5 + seq.actions[t][1]])
        .collect()
}

/// Behavior log-probs near the current policy, with a few far-off steps so
/// both surrogate branches are exercised away from the clip boundary.
pub fn near_policy_sequences(
    model: &Model,
    params: &[f64],
    seed: u64,
) -> Vec<TransitionSequence<f64>> {
    let mut r = rng(seed);
    let mut seqs = vec![
        toy_sequence(&mut r, 7, false, 0),
        toy_sequence(&mut r, 5, true, 0),
    ];
    for s in &mut seqs {
        let lp = log_pi(model, params, s);
        for t in 0..s.len {
            let shift = if t % 3 == 0 {
                [0.7, -0.7][t % 2]
            } else {
                r.gen_range(-0.1..0.1)
            };
            s.log_mu[t] = lp[t] - shift;
        }
    }
    seqs
}

/// Largest relative gap between `grad` and central differences of `f`
/// (step 1e-5, denominators floored at 1e-3), with its index.
pub fn worst_fd<F: Fn(&[f64]) -> f64>(f: F, p: &[f64], grad: &[f64]) -> (f64, usize) {
    let h = 1e-5;
    let mut worst = (0.0, 0);
    let mut q = p.to_vec();
    for i in 0..p.len() {
        q[i] = p[i] + h;
        let up = f(&q);
        q[i] = p[i] - h;
        let down = f(&q);
        q[i] = p[i];
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    worst
}

pub fn bc_batch(seed: u64, n: usize) -> Vec<BcSample<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| BcSample {
            obs: obs_row(&mut r, 3, 8, 2),
            action: [r.gen_range(0..6), r.gen_range(0..5)],
            value_target: r.gen_range(-5.0..20.0),
        })
        .collect()
}
