//! Run configuration, loadable from TOML.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use zsim_core::simcore::SimConfig;
use zsim_nn::ModelConfig;

use crate::error::{Result, TrainError};
use crate::losses::PpoConfig;
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub epochs: usize,
    /// Global minibatch, split evenly across workers.
    pub batch: usize,
    pub optimizer: AdamConfig,
    pub value_scale: f64,
    /// Discount for the value targets.
    pub gamma: f64,
    pub workers: usize,
    /// Scenarios per rollout when extracting expert samples.
    pub rollout_batch: usize,
    /// Save a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 256,
            optimizer: AdamConfig::with_lr(2e-3),
            value_scale: 1e-4,
            gamma: 0.99,
            workers: 1,
            rollout_batch: 32,
            checkpoint_every: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    /// Total agent steps over all learners.
    pub agent_steps: u64,
    /// Sequences per learner step, split evenly across learners.
    pub batch_sequences: usize,
    pub optimizer: AdamConfig,
    pub ppo: PpoConfig,
    pub learners: usize,
    pub replay_capacity: usize,
    /// Scenarios simulated per actor rollout, split evenly across learners.
    pub actor_batch: usize,
    /// Actor rollouts per learner per iteration.
    pub rollouts_per_iter: usize,
    /// Learner updates per iteration.
    pub updates_per_iter: usize,
    /// Evaluate every this many agent steps (0: only at the end).
    pub eval_every: u64,
    pub eval_batch: usize,
    /// Save a checkpoint every this many evaluations (0: final only).
    pub checkpoint_every: usize,
    pub timeout_secs: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            agent_steps: 200_000,
            batch_sequences: 32,
            optimizer: AdamConfig::with_lr(5.6e-5),
            ppo: PpoConfig::default(),
            learners: 1,
            replay_capacity: 4096,
            actor_batch: 16,
            rollouts_per_iter: 1,
            updates_per_iter: 2,
            eval_every: 20_000,
            eval_batch: 25,
            checkpoint_every: 1,
            timeout_secs: 600,
        }
    }
}

impl RlConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub sim: SimConfig,
    pub bc: BcConfig,
    pub rl: RlConfig,
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(TrainError::Config(m.into()));
        self.model.validate()?;
        self.bc.optimizer.validate()?;
        self.rl.optimizer.validate()?;
        self.rl.ppo.validate()?;
        let (bc, rl) = (&self.bc, &self.rl);
        if bc.workers == 0 || bc.batch == 0 || bc.batch % bc.workers != 0 {
            return err("BC batch must be a positive multiple of the worker count");
        }
        if bc.rollout_batch == 0 || !(bc.gamma > 0.0 && bc.gamma <= 1.0) || bc.value_scale < 0.0 {
            return err("BC rollout batch, gamma or value scale out of range");
        }
        if rl.learners == 0 || rl.batch_sequences == 0 || rl.batch_sequences % rl.learners != 0 {
            return err("RL batch must be a positive multiple of the learner count");
        }
        if rl.actor_batch % rl.learners != 0 {
            return err("RL actor batch must be a multiple of the learner count");
        }
        if rl.replay_capacity == 0
            || rl.actor_batch == 0
            || rl.rollouts_per_iter == 0
            || rl.eval_batch == 0
        {
            return err(
                "RL replay capacity, actor batch, rollouts and eval batch must be positive",
            );
        }
        if rl.timeout_secs == 0 {
            return err("RL worker timeout must be positive");
        }
        let [a, s] = self.sim.actions.sizes();
        if a != self.model.accel_bins || s != self.model.steer_bins {
            return err("model head sizes must match the action table");
        }
        Ok(())
    }
}
