//! PPO fine-tuning with V-trace targets over replayed sequences.
//!
//! Each learner worker owns a shard of the training scenarios, the actor
//! that simulates them, a replay table and a copy of the parameters. One
//! iteration runs the actor with the current snapshot, then takes learner
//! steps whose gradients are averaged across workers. Rank 0 doubles as the
//! evaluation actor.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use zsim_core::metrics::{evaluate, Evaluation, MetricOptions};
use zsim_core::scenario::{Scenario, ScenarioBatch};
use zsim_core::simcore::{rollout, DoneMode, Env, SimConfig};
use zsim_nn::{Checkpoint, Model};

use crate::checkpointing::{save_checkpoint, snapshot};
use crate::comm::{ChannelMember, Collective, Solo};
use crate::config::TrainConfig;
use crate::curves::{write_curves_csv, CurvePoint};
use crate::error::{Result, TrainError};
use crate::losses::{ppo_step, LossStats};
use crate::optim::Adam;
use crate::policy::ModelPolicy;
use crate::seq::{cut_episode, ReplayTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlOutcome {
    #[serde(skip)]
    pub checkpoint: Option<Checkpoint>,
    pub curve: Vec<CurvePoint>,
    pub agent_steps: u64,
    pub updates: u64,
    pub wall_secs: f64,
    /// Mean learner statistics over the run (rank 0's batches).
    pub mean_loss: LossStats,
}

/// Greedy evaluation of `params` in the no-dones mode.
pub fn evaluate_params(
    model: &Model,
    params: &[f32],
    scenarios: &[Scenario],
    sim: &SimConfig,
    batch: usize,
    seed: u64,
) -> Result<Evaluation> {
    let policy = ModelPolicy {
        model,
        params,
        version: 0,
        greedy: true,
    };
    let sim = SimConfig {
        mode: DoneMode::EvalNoDones,
        ..sim.clone()
    };
    Ok(evaluate::<f32, _>(
        &policy,
        scenarios,
        &sim,
        batch,
        seed,
        &MetricOptions::default(),
    )?)
}

/// Runs `cfg.rl.learners` workers in-process.
pub fn run_rl(
    cfg: &TrainConfig,
    train: &[Scenario],
    eval: &[Scenario],
    init: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<RlOutcome> {
    cfg.validate()?;
    let learners = cfg.rl.learners;
    if learners == 1 {
        return rl_worker(cfg, train, eval, init, out_dir, &mut Solo)
            .map(|o| o.expect("rank 0 reports"));
    }
    let members = ChannelMember::group(learners, cfg.rl.timeout());
    let results: Vec<Result<Option<RlOutcome>>> = std::thread::scope(|s| {
        let handles: Vec<_> = members
            .into_iter()
            .map(|mut m| s.spawn(move || rl_worker(cfg, train, eval, init, out_dir, &mut m)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut root = None;
    for r in results {
        if let Some(o) = r? {
            root = Some(o);
        }
    }
    root.ok_or_else(|| TrainError::Transport("rank 0 produced no result".into()))
}

struct Worker<'a> {
    cfg: &'a TrainConfig,
    model: Model,
    params: Vec<f32>,
    opt: Adam,
    rng: ChaCha8Rng,
    shard: Vec<usize>,
    table: ReplayTable<f32>,
    updates: u64,
}

impl Worker<'_> {
    /// One actor rollout with the current snapshot over this learner's share
    /// of the global actor batch; returns live agent steps.
    fn act(&mut self, train: &[Scenario], size: usize) -> Result<u64> {
        let k = (self.cfg.rl.actor_batch / size).min(self.shard.len());
        let picked: Vec<usize> = sample(&mut self.rng, self.shard.len(), k)
            .into_iter()
            .map(|i| self.shard[i])
            .collect();
        let scenarios: Vec<Scenario> = picked.iter().map(|&i| train[i].clone()).collect();
        let horizon = scenarios.iter().map(|s| s.num_steps).max().unwrap_or(2);
        let sim = SimConfig {
            mode: DoneMode::Training,
            ..self.cfg.sim.clone()
        };
        let env = Env::<f32>::new(sim, Arc::new(ScenarioBatch::new(scenarios, horizon)?))?;
        let policy = ModelPolicy {
            model: &self.model,
            params: &self.params,
            version: self.updates,
            greedy: false,
        };
        let ep = rollout(&env, &policy, self.rng.gen(), true)?;
        let steps: u64 = (0..ep.batch).map(|b| ep.live_steps(b) as u64).sum();
        self.table.push(cut_episode(&ep, &picked)?);
        Ok(steps)
    }

    fn learn<C: Collective>(&mut self, comm: &mut C, per_learner: usize) -> Result<LossStats> {
        let seqs = self.table.sample(per_learner, &mut self.rng);
        let refs: Vec<_> = seqs.iter().map(|s| s.as_ref()).collect();
        let mut grad = vec![0f32; self.params.len()];
        let stats = if refs.is_empty() {
            LossStats::default()
        } else {
            ppo_step(
                &self.model,
                &self.params,
                &refs,
                &self.cfg.rl.ppo,
                Some(&mut grad),
            )?
        };
        comm.allreduce_mean(&mut grad)?;
        self.opt.step(&mut self.params, &grad)?;
        self.updates += 1;
        Ok(stats)
    }
}

pub fn rl_worker<C: Collective>(
    cfg: &TrainConfig,
    train: &[Scenario],
    eval: &[Scenario],
    init: Option<&Checkpoint>,
    out_dir: Option<&Path>,
    comm: &mut C,
) -> Result<Option<RlOutcome>> {
    let rl = &cfg.rl;
    let (rank, size) = (comm.rank(), comm.size());
    if train.is_empty() || eval.is_empty() {
        return Err(TrainError::EmptyDataset(
            "RL needs training and evaluation scenarios".into(),
        ));
    }
    if let (0, Some(dir)) = (rank, out_dir) {
        std::fs::create_dir_all(dir)?;
    }
    let model = Model::new(cfg.model.clone())?;
    let mut params = match init {
        Some(ck) if ck.config != cfg.model => {
            return Err(TrainError::Config(
                "initial checkpoint model differs from the configured model".into(),
            ))
        }
        Some(ck) => ck.params.clone(),
        None => model.init_params::<f32>(cfg.seed),
    };
    comm.broadcast(&mut params)?;
    let shard: Vec<usize> = (rank..train.len()).step_by(size).collect();
    if shard.is_empty() {
        return Err(TrainError::EmptyDataset(format!(
            "learner {rank} has no scenarios"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rank as u64 + 1);
    let n = model.num_params();
    let mut w = Worker {
        cfg,
        model,
        params,
        opt: Adam::new(rl.optimizer, n),
        rng,
        shard,
        table: ReplayTable::new(rl.replay_capacity)?,
        updates: 0,
    };

    let started = Instant::now();
    let mut curve = Vec::new();
    let mut agent_steps = 0u64;
    let mut next_eval = 0u64;
    let mut evals = 0usize;
    let mut loss_sum = LossStats::default();
    let mut loss_count = 0usize;
    let per_learner = rl.batch_sequences / size;

    let mut record = |w: &Worker,
                      steps: u64,
                      last: bool,
                      curve: &mut Vec<CurvePoint>|
     -> Result<()> {
        if rank != 0 {
            return Ok(());
        }
        let ev = evaluate_params(&w.model, &w.params, eval, &cfg.sim, rl.eval_batch, cfg.seed)?;
        curve.push(CurvePoint::new(steps, &ev.aggregate));
        evals += 1;
        if let Some(dir) = out_dir {
            write_curves_csv(curve, std::fs::File::create(dir.join("curves.csv"))?)?;
            if last || (rl.checkpoint_every > 0 && evals % rl.checkpoint_every == 0) {
                let meta = serde_json::json!({"stage": "rl", "agent_steps": steps, "updates": w.updates, "seed": cfg.seed});
                let ck = snapshot(cfg, &w.params, &w.opt, meta);
                save_checkpoint(
                    &ck,
                    &dir.join("checkpoints").join(format!("rl_{steps:09}.ckpt")),
                )?;
            }
        }
        Ok(())
    };

    let mut body = |w: &mut Worker, curve: &mut Vec<CurvePoint>| -> Result<()> {
        while agent_steps < rl.agent_steps {
            if rl.eval_every > 0 && agent_steps >= next_eval {
                record(w, agent_steps, false, curve)?;
                while next_eval <= agent_steps {
                    next_eval += rl.eval_every;
                }
            }
            let mut local = 0;
            for _ in 0..rl.rollouts_per_iter {
                local += w.act(train, size)?;
            }
            agent_steps += comm.allgather(local)?.iter().sum::<u64>();
            for _ in 0..rl.updates_per_iter {
                let s = w.learn(comm, per_learner)?;
                if s.samples > 0 {
                    loss_sum.loss += s.loss;
                    loss_sum.policy += s.policy;
                    loss_sum.value_mse += s.value_mse;
                    loss_sum.entropy += s.entropy;
                    loss_sum.clip_fraction += s.clip_fraction;
                    loss_sum.samples += s.samples;
                    loss_count += 1;
                }
            }
        }
        record(w, agent_steps, true, curve)
    };

    if let Err(e) = body(&mut w, &mut curve) {
        if rank == 0 {
            if let Some(dir) = out_dir {
                let meta = serde_json::json!({"stage": "rl", "partial": true, "agent_steps": agent_steps, "updates": w.updates});
                // best effort: the original error is what the caller needs
                let _ = save_checkpoint(
                    &snapshot(cfg, &w.params, &w.opt, meta),
                    &dir.join("rl_partial.ckpt"),
                );
            }
        }
        return Err(e);
    }
    if rank != 0 {
        return Ok(None);
    }
    let wall_secs = started.elapsed().as_secs_f64();
    let meta = serde_json::json!({"stage": "rl", "agent_steps": agent_steps, "updates": w.updates, "seed": cfg.seed});
    let checkpoint = snapshot(cfg, &w.params, &w.opt, meta);
    if let Some(dir) = out_dir {
        save_checkpoint(&checkpoint, &dir.join("rl_final.ckpt"))?;
    }
    let k = loss_count.max(1) as f64;
    let mean_loss = LossStats {
        loss: loss_sum.loss / k,
        policy: loss_sum.policy / k,
        value_mse: loss_sum.value_mse / k,
        entropy: loss_sum.entropy / k,
        clip_fraction: loss_sum.clip_fraction / k,
        samples: loss_sum.samples,
        ..Default::default()
    };
    Ok(Some(RlOutcome {
        checkpoint: Some(checkpoint),
        curve,
        agent_steps,
        updates: w.updates,
        wall_secs,
        mean_loss,
    }))
}
