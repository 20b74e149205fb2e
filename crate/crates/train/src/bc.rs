//! Behavior-cloning pre-training on logged expert trajectories.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use zsim_core::scenario::{Scenario, ScenarioBatch};
use zsim_core::simcore::{rollout, DoneMode, Env, LogReplayPolicy, SimConfig};
use zsim_nn::{Checkpoint, Model};

use crate::checkpointing::{optimizer_from, save_checkpoint, snapshot};
use crate::comm::{ChannelMember, Collective, Solo};
use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::losses::{bc_loss, BcSample};
use crate::optim::Adam;
use crate::returns::discounted_return;
use crate::seq::ObsRow;

/// Expert samples from replaying every scenario's recovered actions.
/// Value targets are discounted returns of the simulator reward along the log.
pub fn expert_samples(
    scenarios: &[Scenario],
    sim: &SimConfig,
    gamma: f64,
    rollout_batch: usize,
) -> Result<Vec<BcSample<f32>>> {
    if scenarios.is_empty() {
        return Err(TrainError::EmptyDataset("no scenarios to clone".into()));
    }
    let sim = SimConfig {
        mode: DoneMode::Training,
        ..sim.clone()
    };
    let mut out = Vec::new();
    for chunk in scenarios.chunks(rollout_batch.max(1)) {
        let horizon = chunk.iter().map(|s| s.num_steps).max().unwrap_or(2);
        let env = Env::<f32>::new(
            sim.clone(),
            Arc::new(ScenarioBatch::new(chunk.to_vec(), horizon)?),
        )?;
        let ep = rollout(&env, &LogReplayPolicy, 0, true)?;
        for b in 0..ep.batch {
            let row = ep.idx(b, 0)..ep.idx(b, 0) + ep.steps;
            let returns = discounted_return(
                &ep.rewards[row.clone()],
                &ep.mask[row.clone()],
                gamma as f32,
            );
            for t in 0..ep.steps {
                if ep.mask[row.start + t] != 0 {
                    out.push(BcSample {
                        obs: ObsRow::pack(&ep.observations[t], b),
                        action: ep.actions[row.start + t],
                        value_target: returns[t],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Mean training losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcEpoch {
    pub epoch: usize,
    pub updates: u64,
    pub loss: f64,
    pub cross_entropy: f64,
    pub value_mse: f64,
}

pub const BC_CSV_HEADER: &str = "epoch,updates,loss,cross_entropy,value_mse";

pub fn write_bc_csv<W: std::io::Write>(rows: &[BcEpoch], mut out: W) -> Result<()> {
    writeln!(out, "{BC_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.updates, r.loss, r.cross_entropy, r.value_mse
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<BcEpoch>,
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Trains for the configured epochs, resuming from `resume` when given.
/// With several workers each takes an equal shard of every minibatch and
/// gradients are averaged before each update.
pub fn run_bc(
    cfg: &TrainConfig,
    samples: &[BcSample<f32>],
    resume: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<BcOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset("no expert samples".into()));
    }
    let workers = cfg.bc.workers;
    if workers == 1 {
        return bc_worker(cfg, samples, resume, out_dir, &mut Solo)
            .map(|o| o.expect("rank 0 reports"));
    }
    let members = ChannelMember::group(workers, cfg.rl.timeout());
    let results: Vec<Result<Option<BcOutcome>>> = std::thread::scope(|s| {
        let handles: Vec<_> = members
            .into_iter()
            .map(|mut m| s.spawn(move || bc_worker(cfg, samples, resume, out_dir, &mut m)))
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

pub fn bc_worker<C: Collective>(
    cfg: &TrainConfig,
    samples: &[BcSample<f32>],
    resume: Option<&Checkpoint>,
    out_dir: Option<&Path>,
    comm: &mut C,
) -> Result<Option<BcOutcome>> {
    let bc = &cfg.bc;
    if let (0, Some(dir)) = (comm.rank(), out_dir) {
        std::fs::create_dir_all(dir)?;
    }
    let model = Model::new(cfg.model.clone())?;
    let (mut params, mut opt, start_epoch) = match resume {
        Some(ck) => {
            if ck.config != cfg.model {
                return Err(TrainError::Config(
                    "checkpoint model differs from the configured model".into(),
                ));
            }
            let epoch = ck.meta.get("epoch").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
            (ck.params.clone(), optimizer_from(ck, bc.optimizer)?, epoch)
        }
        None => (
            model.init_params::<f32>(cfg.seed),
            Adam::new(bc.optimizer, model.num_params()),
            0,
        ),
    };
    comm.broadcast(&mut params)?;
    let size = comm.size();
    let rank = comm.rank();
    let batch = bc.batch.min(samples.len() / size * size);
    if batch == 0 {
        return Err(TrainError::EmptyDataset(format!(
            "{} samples cannot feed {size} workers",
            samples.len()
        )));
    }
    let shard = batch / size;
    let mut epochs = Vec::new();
    let mut grad = vec![0f32; params.len()];
    for epoch in start_epoch..bc.epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut sums = [0.0f64; 3];
        let mut count = 0usize;
        for chunk in order.chunks_exact(batch) {
            let mine: Vec<&BcSample<f32>> = chunk[rank * shard..(rank + 1) * shard]
                .iter()
                .map(|&i| &samples[i])
                .collect();
            grad.fill(0.0);
            let stats = bc_loss(&model, &params, &mine, bc.value_scale, Some(&mut grad))?;
            comm.allreduce_mean(&mut grad)?;
            let mut reported = vec![
                stats.loss as f32,
                stats.cross_entropy as f32,
                stats.value_mse as f32,
            ];
            comm.allreduce_mean(&mut reported)?;
            opt.step(&mut params, &grad)?;
            for (s, r) in sums.iter_mut().zip(&reported) {
                *s += *r as f64;
            }
            count += 1;
        }
        let row = BcEpoch {
            epoch: epoch + 1,
            updates: opt.steps,
            loss: sums[0] / count as f64,
            cross_entropy: sums[1] / count as f64,
            value_mse: sums[2] / count as f64,
        };
        epochs.push(row);
        if rank == 0 {
            if let Some(dir) = out_dir {
                let meta = serde_json::json!({"stage": "bc", "epoch": epoch + 1, "seed": cfg.seed});
                let ck = snapshot(cfg, &params, &opt, meta);
                let last = epoch + 1 == bc.epochs;
                if last || (bc.checkpoint_every > 0 && (epoch + 1) % bc.checkpoint_every == 0) {
                    save_checkpoint(
                        &ck,
                        &dir.join("checkpoints")
                            .join(format!("bc_epoch{:03}.ckpt", epoch + 1)),
                    )?;
                }
                write_bc_csv(&epochs, std::fs::File::create(dir.join("bc_loss.csv"))?)?;
            }
        }
    }
    if rank != 0 {
        return Ok(None);
    }
    let epoch = start_epoch.max(bc.epochs);
    let meta = serde_json::json!({"stage": "bc", "epoch": epoch, "seed": cfg.seed});
    let checkpoint = snapshot(cfg, &params, &opt, meta);
    if let Some(dir) = out_dir {
        save_checkpoint(&checkpoint, &dir.join("bc_final.ckpt"))?;
    }
    Ok(Some(BcOutcome { checkpoint, epochs }))
}
