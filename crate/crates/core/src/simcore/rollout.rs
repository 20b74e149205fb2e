//! Fixed-length rollouts and the step-time benchmark.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::dynamics::Action;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::scenario::{Scenario, ScenarioBatch};

use super::{extract_observations, DoneReason, Env, ObservationBatch, SimConfig, SimStateBatch};

/// What a policy sees at one step.
pub struct PolicyInput<'a, R> {
    pub env: &'a Env<R>,
    pub state: &'a SimStateBatch<R>,
    pub obs: &'a ObservationBatch<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput<R> {
    pub actions: Vec<Action>,
    /// Joint log-probability of each sampled action.
    pub log_probs: Vec<R>,
    pub values: Vec<R>,
}

impl<R: Real> PolicyOutput<R> {
    pub fn deterministic(actions: Vec<Action>) -> Self {
        let n = actions.len();
        Self {
            actions,
            log_probs: vec![R::zero(); n],
            values: vec![R::zero(); n],
        }
    }
}

/// Maps observations to actions. Implementations are immutable for the
/// duration of a rollout, so one parameter snapshot serves a whole episode.
pub trait Policy<R: Real> {
    fn act(&self, input: &PolicyInput<'_, R>, rngs: &mut [ChaCha8Rng]) -> Result<PolicyOutput<R>>;

    /// Identifier of the parameter snapshot behind this policy.
    fn version(&self) -> u64 {
        0
    }
}

/// Emits the same action for every row.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy(pub Action);

impl<R: Real> Policy<R> for ConstantPolicy {
    fn act(&self, input: &PolicyInput<'_, R>, _rngs: &mut [ChaCha8Rng]) -> Result<PolicyOutput<R>> {
        Ok(PolicyOutput::deterministic(vec![self.0; input.env.len()]))
    }
}

/// Replays the actions recovered from each row's logged ego trajectory.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogReplayPolicy;

impl<R: Real> Policy<R> for LogReplayPolicy {
    fn act(&self, input: &PolicyInput<'_, R>, _rngs: &mut [ChaCha8Rng]) -> Result<PolicyOutput<R>> {
        let zero = input.env.config.actions.zero_action();
        let actions = (0..input.env.len())
            .map(|b| {
                let t = input.state.t[b];
                input.env.rows[b]
                    .expert
                    .actions
                    .get(t)
                    .copied()
                    .unwrap_or(zero)
            })
            .collect();
        Ok(PolicyOutput::deterministic(actions))
    }
}

/// A full fixed-length episode over a batch. Per-step arrays are batch-major,
/// `[b * steps + t]`; `s` has one more column holding the final position.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch<R> {
    pub batch: usize,
    pub steps: usize,
    /// `observations[t]` for `t in 0..=steps` when recorded, else empty.
    pub observations: Vec<ObservationBatch<R>>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<R>,
    pub values: Vec<R>,
    pub rewards: Vec<R>,
    /// Set at the step that terminated the row.
    pub dones: Vec<bool>,
    /// 1 while the row was live: up to and including its terminal step.
    pub mask: Vec<u8>,
    /// Highest-priority condition detected at each step, terminal or not.
    pub events: Vec<DoneReason>,
    pub lateral_accel: Vec<R>,
    pub longitudinal_accel: Vec<R>,
    /// `[b * (steps + 1) + t]`
    pub s: Vec<R>,
    /// Value estimate of the observation after the last step (0 for done rows).
    pub bootstrap_values: Vec<R>,
    pub final_state: SimStateBatch<R>,
    pub policy_version: u64,
}

impl<R: Real> EpisodeBatch<R> {
    #[inline]
    pub fn idx(&self, b: usize, t: usize) -> usize {
        b * self.steps + t
    }

    /// Number of live steps of row `b`.
    pub fn live_steps(&self, b: usize) -> usize {
        self.mask[b * self.steps..(b + 1) * self.steps]
            .iter()
            .filter(|&&m| m != 0)
            .count()
    }

    /// Sum of masked rewards of row `b`.
    pub fn episode_return(&self, b: usize) -> R {
        (0..self.steps)
            .filter(|&t| self.mask[self.idx(b, t)] != 0)
            .map(|t| self.rewards[self.idx(b, t)])
            .sum()
    }

    /// Value of the state reached after step `t` of row `b`, for bootstrapping.
    pub fn next_value(&self, b: usize, t: usize) -> R {
        if t + 1 < self.steps {
            self.values[self.idx(b, t + 1)]
        } else {
            self.bootstrap_values[b]
        }
    }

    /// Flags of every condition seen by row `b`.
    pub fn latched_events(&self, b: usize) -> u8 {
        self.final_state.events[b]
    }
}

/// Runs exactly `horizon - 1` steps over `env`, regardless of dones.
pub fn rollout<R: Real, P: Policy<R> + ?Sized>(
    env: &Env<R>,
    policy: &P,
    seed: u64,
    record_obs: bool,
) -> Result<EpisodeBatch<R>> {
    let n = env.len();
    let steps = env.batch.horizon - 1;
    let version = policy.version();
    let mut state = env.reset(seed);
    let mut ep = EpisodeBatch {
        batch: n,
        steps,
        observations: Vec::with_capacity(if record_obs { steps + 1 } else { 0 }),
        actions: vec![[0, 0]; n * steps],
        log_probs: vec![R::zero(); n * steps],
        values: vec![R::zero(); n * steps],
        rewards: vec![R::zero(); n * steps],
        dones: vec![false; n * steps],
        mask: vec![0; n * steps],
        events: vec![DoneReason::None; n * steps],
        lateral_accel: vec![R::zero(); n * steps],
        longitudinal_accel: vec![R::zero(); n * steps],
        s: vec![R::zero(); n * (steps + 1)],
        bootstrap_values: vec![R::zero(); n],
        final_state: state.clone(),
        policy_version: version,
    };
    for b in 0..n {
        ep.s[b * (steps + 1)] = state.s[b];
    }

    let act =
        |state: &mut SimStateBatch<R>, obs: &ObservationBatch<R>| -> Result<PolicyOutput<R>> {
            let mut rngs = std::mem::take(&mut state.rng);
            let out = policy.act(&PolicyInput { env, state, obs }, &mut rngs);
            state.rng = rngs;
            let out = out?;
            if out.actions.len() != n || out.log_probs.len() != n || out.values.len() != n {
                return Err(Error::Policy(format!(
                    "policy returned wrong batch size for {n} rows"
                )));
            }
            Ok(out)
        };

    for t in 0..steps {
        let obs = extract_observations(env, &state);
        let out = act(&mut state, &obs)?;
        if policy.version() != version {
            return Err(Error::Policy(
                "policy parameters changed during an episode".into(),
            ));
        }
        let step = env.step(&state, &out.actions)?;
        for b in 0..n {
            let i = b * steps + t;
            ep.values[i] = out.values[b];
            if step.live[b] {
                ep.actions[i] = out.actions[b];
                ep.log_probs[i] = out.log_probs[b];
                ep.mask[i] = 1;
                ep.rewards[i] = step.rewards[b];
                ep.dones[i] = step.state.done[b];
                ep.events[i] = step.done_events[b];
                ep.lateral_accel[i] = step.lateral_accel[b];
                ep.longitudinal_accel[i] = step.longitudinal_accel[b];
            }
            ep.s[b * (steps + 1) + t + 1] = step.state.s[b];
        }
        if record_obs {
            ep.observations.push(obs);
        }
        state = step.state;
    }
    let obs = extract_observations(env, &state);
    let out = act(&mut state, &obs)?;
    for b in 0..n {
        if !state.done[b] {
            ep.bootstrap_values[b] = out.values[b];
        }
    }
    if record_obs {
        ep.observations.push(obs);
    }
    ep.final_state = state;
    Ok(ep)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub batch_size: usize,
    pub mean_step_ms: f64,
    pub amortized_us_per_scenario: f64,
}

/// Times `env.step` for each batch size. Every size covers the same
/// scenarios: the set is split into `max(1, len / size)` batches (rows wrap
/// around when `size` exceeds the set), each timed over `steps` measured
/// steps after `warmup` unmeasured ones. Rows replay their logged actions
/// and a batch is reset whenever every row has finished.
pub fn bench_step<R: Real>(
    scenarios: &[Scenario],
    config: &SimConfig,
    batch_sizes: &[usize],
    steps: usize,
    warmup: usize,
) -> Result<Vec<BenchRow>> {
    if scenarios.is_empty() {
        return Err(Error::Config(
            "benchmark needs at least one scenario".into(),
        ));
    }
    if steps == 0 {
        return Err(Error::Config(
            "benchmark needs at least one measured step".into(),
        ));
    }
    let mut rows = Vec::with_capacity(batch_sizes.len());
    for &size in batch_sizes {
        if size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let batches = (scenarios.len() / size).max(1);
        let mut total = 0.0f64;
        for k in 0..batches {
            let picked: Vec<Scenario> = (0..size)
                .map(|i| scenarios[(k * size + i) % scenarios.len()].clone())
                .collect();
            total += time_steps::<R>(picked, config, steps, warmup)?;
        }
        let mean = total / (batches * steps) as f64;
        rows.push(BenchRow {
            batch_size: size,
            mean_step_ms: mean * 1e3,
            amortized_us_per_scenario: mean * 1e6 / size as f64,
        });
    }
    Ok(rows)
}

/// Seconds spent in `steps` measured steps of one batch.
fn time_steps<R: Real>(
    picked: Vec<Scenario>,
    config: &SimConfig,
    steps: usize,
    warmup: usize,
) -> Result<f64> {
    let size = picked.len();
    let horizon = picked.iter().map(|s| s.num_steps).max().unwrap_or(2);
    let env = Env::<R>::new(
        config.clone(),
        Arc::new(ScenarioBatch::new(picked, horizon)?),
    )?;
    let zero = config.actions.zero_action();
    let mut state = env.reset(0);
    let mut actions = vec![zero; size];
    let mut total = 0.0f64;
    for i in 0..warmup + steps {
        if (0..size).all(|b| !env.is_live(&state, b)) {
            state = env.reset(0);
        }
        for (b, a) in actions.iter_mut().enumerate() {
            *a = env.rows[b]
                .expert
                .actions
                .get(state.t[b])
                .copied()
                .unwrap_or(zero);
        }
        let start = Instant::now();
        let out = env.step(&state, &actions)?;
        let elapsed = start.elapsed().as_secs_f64();
        if i >= warmup {
            total += elapsed;
        }
        state = out.state;
    }
    Ok(total)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "batch_size,mean_step_ms,amortized_us_per_scenario")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6}",
            r.batch_size, r.mean_step_ms, r.amortized_us_per_scenario
        )?;
    }
    Ok(())
}
