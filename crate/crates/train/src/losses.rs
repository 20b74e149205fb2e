//! Behavior-cloning and PPO losses with their output-layer gradients.

use serde::{Deserialize, Serialize};
use zsim_core::dynamics::Action;
use zsim_nn::{log_softmax, ForwardOut, HeadGrads, Model, Scalar};

use crate::error::{Result, TrainError};
use crate::returns::{vtrace, VtraceParams};
use crate::seq::{stack_rows, ObsRow, TransitionSequence};

/// Scalar summaries of one loss evaluation, in double precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub cross_entropy: f64,
    pub policy: f64,
    pub value_mse: f64,
    pub entropy: f64,
    /// Share of steps whose surrogate took the clipped branch.
    pub clip_fraction: f64,
    pub samples: usize,
}

fn softmax_rows<R: Scalar>(logits: &[R], k: usize) -> (Vec<R>, Vec<R>) {
    let logp = log_softmax(logits, k);
    let p = logp.iter().map(|&l| l.exp()).collect();
    (logp, p)
}

/// One expert step for behavior cloning.
#[derive(Clone, Debug, PartialEq)]
pub struct BcSample<R> {
    pub obs: ObsRow<R>,
    pub action: Action,
    /// Discounted return from this step to the end of the log.
    pub value_target: R,
}

/// `CE(accel) + CE(steer) + value_scale * (v - G)^2`, averaged over rows.
pub fn bc_head_loss<R: Scalar>(
    out: &ForwardOut<R>,
    actions: &[Action],
    value_targets: &[R],
    bins: [usize; 2],
    value_scale: f64,
) -> (LossStats, HeadGrads<R>) {
    let n = actions.len();
    let inv = 1.0 / n.max(1) as f64;
    let (la, pa) = softmax_rows(&out.logits_accel, bins[0]);
    let (ls, ps) = softmax_rows(&out.logits_steer, bins[1]);
    let mut grads = HeadGrads {
        logits_accel: pa.iter().map(|&p| p * R::lit(inv)).collect(),
        logits_steer: ps.iter().map(|&p| p * R::lit(inv)).collect(),
        value: vec![R::zero(); n],
    };
    let mut ce = 0.0;
    let mut mse = 0.0;
    for (b, a) in actions.iter().enumerate() {
        ce -= la[b * bins[0] + a[0]].as_f64() + ls[b * bins[1] + a[1]].as_f64();
        grads.logits_accel[b * bins[0] + a[0]] -= R::lit(inv);
        grads.logits_steer[b * bins[1] + a[1]] -= R::lit(inv);
        let err = out.value[b] - value_targets[b];
        mse += err.as_f64().powi(2);
        grads.value[b] = err * R::lit(2.0 * value_scale * inv);
    }
    let stats = LossStats {
        loss: (ce + value_scale * mse) * inv,
        cross_entropy: ce * inv,
        value_mse: mse * inv,
        samples: n,
        ..Default::default()
    };
    (stats, grads)
}

/// Behavior-cloning loss over `samples`; accumulates its parameter gradient
/// into `grad` when given.
pub fn bc_loss<R: Scalar>(
    model: &Model,
    params: &[R],
    samples: &[&BcSample<R>],
    value_scale: f64,
    grad: Option<&mut [R]>,
) -> Result<LossStats> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset("behavior-cloning batch".into()));
    }
    let rows: Vec<&ObsRow<R>> = samples.iter().map(|s| &s.obs).collect();
    let obs = stack_rows(&rows);
    let (out, cache) = model.forward(params, &obs)?;
    let actions: Vec<Action> = samples.iter().map(|s| s.action).collect();
    let targets: Vec<R> = samples.iter().map(|s| s.value_target).collect();
    let bins = [model.config.accel_bins, model.config.steer_bins];
    let (stats, head) = bc_head_loss(&out, &actions, &targets, bins, value_scale);
    if let Some(g) = grad {
        model.backward(params, &cache, &head, g)?;
    }
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub value_scale: f64,
    pub entropy_scale: f64,
    pub gamma: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.3,
            value_scale: 1e-2,
            entropy_scale: 3e-2,
            gamma: 0.99,
            rho_bar: 1.0,
            c_bar: 1.0,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.clip > 0.0
            && self.clip <= 1.0
            && self.value_scale >= 0.0
            && self.entropy_scale >= 0.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && self.rho_bar >= 0.0
            && self.c_bar >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("bad PPO settings: {self:?}")))
        }
    }
}

/// V-trace value targets and surrogate advantages for the live steps of a
/// sequence batch, flattened in sequence order.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoTargets<R> {
    pub vs: Vec<R>,
    pub advantages: Vec<R>,
}

/// Clipped surrogate, value regression and entropy bonus on the first
/// `actions.len()` rows of `out`; later rows receive zero gradient.
pub fn ppo_head_loss<R: Scalar>(
    out: &ForwardOut<R>,
    actions: &[Action],
    log_mu: &[R],
    targets: &PpoTargets<R>,
    bins: [usize; 2],
    cfg: &PpoConfig,
) -> (LossStats, HeadGrads<R>) {
    let n = actions.len();
    let rows = out.value.len();
    let inv = 1.0 / n.max(1) as f64;
    let (la, pa) = softmax_rows(&out.logits_accel, bins[0]);
    let (ls, ps) = softmax_rows(&out.logits_steer, bins[1]);
    let mut g = HeadGrads {
        logits_accel: vec![R::zero(); rows * bins[0]],
        logits_steer: vec![R::zero(); rows * bins[1]],
        value: vec![R::zero(); rows],
    };
    let (lo, hi) = (1.0 - cfg.clip, 1.0 + cfg.clip);
    let mut stats = LossStats {
        samples: n,
        ..Default::default()
    };
    for b in 0..n {
        let [ai, si] = actions[b];
        let ra = b * bins[0]..(b + 1) * bins[0];
        let rs = b * bins[1]..(b + 1) * bins[1];
        let log_pi = la[ra.start + ai] + ls[rs.start + si];
        let ratio = (log_pi - log_mu[b]).as_f64().exp();
        let adv = targets.advantages[b].as_f64();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        stats.policy -= unclipped.min(clipped);
        // d(-min)/d log_pi
        let d_logpi = if unclipped <= clipped {
            -unclipped * inv
        } else {
            stats.clip_fraction += 1.0;
            0.0
        };

        let ent = cfg.entropy_scale * inv;
        let ha = head_grad(
            &mut g.logits_accel[ra.clone()],
            &la[ra.clone()],
            &pa[ra],
            ai,
            d_logpi,
            ent,
        );
        let hs = head_grad(
            &mut g.logits_steer[rs.clone()],
            &ls[rs.clone()],
            &ps[rs],
            si,
            d_logpi,
            ent,
        );
        stats.entropy += ha + hs;

        let err = out.value[b] - targets.vs[b];
        stats.value_mse += err.as_f64().powi(2);
        g.value[b] = err * R::lit(2.0 * cfg.value_scale * inv);
    }
    stats.policy *= inv;
    stats.value_mse *= inv;
    stats.entropy *= inv;
    stats.clip_fraction *= inv;
    stats.loss =
        stats.policy + cfg.value_scale * stats.value_mse - cfg.entropy_scale * stats.entropy;
    (stats, g)
}

/// Writes the logit gradient of one head: the policy term through
/// log-softmax and the entropy bonus through softmax. Returns the entropy.
fn head_grad<R: Scalar>(
    dst: &mut [R],
    logp: &[R],
    p: &[R],
    taken: usize,
    d_logpi: f64,
    ent: f64,
) -> f64 {
    let h = -logp
        .iter()
        .zip(p)
        .map(|(&l, &q)| q * l)
        .fold(R::zero(), |x, y| x + y);
    for i in 0..dst.len() {
        dst[i] = R::lit(-d_logpi) * p[i] + R::lit(ent) * p[i] * (logp[i] + h);
    }
    dst[taken] += R::lit(d_logpi);
    h.as_f64()
}

struct PpoBatch<R> {
    out: ForwardOut<R>,
    cache: zsim_nn::Cache<R>,
    actions: Vec<Action>,
    log_mu: Vec<R>,
}

/// Forwards the live steps of every sequence, then every bootstrap
/// observation, in one batch.
fn ppo_forward<R: Scalar>(
    model: &Model,
    params: &[R],
    seqs: &[&TransitionSequence<R>],
) -> Result<PpoBatch<R>> {
    if seqs.is_empty() {
        return Err(TrainError::EmptyDataset("sequence batch".into()));
    }
    let mut rows: Vec<&ObsRow<R>> = Vec::new();
    let mut actions = Vec::new();
    let mut log_mu = Vec::new();
    for s in seqs {
        rows.extend(&s.observations[..s.len]);
        actions.extend_from_slice(&s.actions[..s.len]);
        log_mu.extend_from_slice(&s.log_mu[..s.len]);
    }
    rows.extend(seqs.iter().filter_map(|s| s.bootstrap_obs.as_ref()));
    let (out, cache) = model.forward(params, &stack_rows(&rows))?;
    Ok(PpoBatch {
        out,
        cache,
        actions,
        log_mu,
    })
}

fn targets_from<R: Scalar>(
    seqs: &[&TransitionSequence<R>],
    batch: &PpoBatch<R>,
    bins: [usize; 2],
    cfg: &PpoConfig,
) -> PpoTargets<R> {
    let steps = batch.actions.len();
    let la = log_softmax(&batch.out.logits_accel[..steps * bins[0]], bins[0]);
    let ls = log_softmax(&batch.out.logits_steer[..steps * bins[1]], bins[1]);
    let p = VtraceParams {
        gamma: R::lit(cfg.gamma),
        rho_bar: R::lit(cfg.rho_bar),
        c_bar: R::lit(cfg.c_bar),
    };
    let mut vs = Vec::with_capacity(steps);
    let mut advantages = Vec::with_capacity(steps);
    let (mut row, mut boot) = (0, steps);
    for s in seqs {
        let len = s.len;
        let log_rhos: Vec<R> = (0..len)
            .map(|t| {
                let [a, b] = s.actions[t];
                la[(row + t) * bins[0] + a] + ls[(row + t) * bins[1] + b] - s.log_mu[t]
            })
            .collect();
        let bootstrap = if s.bootstrap_obs.is_some() {
            boot += 1;
            batch.out.value[boot - 1]
        } else {
            R::zero()
        };
        let out = vtrace(
            &batch.out.value[row..row + len],
            bootstrap,
            &s.rewards[..len],
            &s.dones[..len],
            &s.mask[..len],
            &log_rhos,
            &p,
        );
        vs.extend(out.vs);
        advantages.extend(out.advantages);
        row += len;
    }
    if cfg.normalize_advantages && steps > 1 {
        let n = R::of_usize(steps);
        let mean = advantages.iter().copied().sum::<R>() / n;
        let var = advantages
            .iter()
            .map(|&a| (a - mean) * (a - mean))
            .sum::<R>()
            / n;
        let scale = R::one() / (var.sqrt() + R::lit(1e-8));
        for a in &mut advantages {
            *a = (*a - mean) * scale;
        }
    }
    PpoTargets { vs, advantages }
}

/// Targets computed with `params`, held fixed by [`ppo_loss`].
pub fn ppo_targets<R: Scalar>(
    model: &Model,
    params: &[R],
    seqs: &[&TransitionSequence<R>],
    cfg: &PpoConfig,
) -> Result<PpoTargets<R>> {
    let batch = ppo_forward(model, params, seqs)?;
    Ok(targets_from(seqs, &batch, bins(model), cfg))
}

fn bins(model: &Model) -> [usize; 2] {
    [model.config.accel_bins, model.config.steer_bins]
}

/// PPO loss with given targets; accumulates its gradient into `grad`.
pub fn ppo_loss<R: Scalar>(
    model: &Model,
    params: &[R],
    seqs: &[&TransitionSequence<R>],
    targets: &PpoTargets<R>,
    cfg: &PpoConfig,
    grad: Option<&mut [R]>,
) -> Result<LossStats> {
    let batch = ppo_forward(model, params, seqs)?;
    finish(model, params, batch, targets, cfg, grad)
}

/// Targets and loss from a single forward pass, as a learner step uses them.
pub fn ppo_step<R: Scalar>(
    model: &Model,
    params: &[R],
    seqs: &[&TransitionSequence<R>],
    cfg: &PpoConfig,
    grad: Option<&mut [R]>,
) -> Result<LossStats> {
    let batch = ppo_forward(model, params, seqs)?;
    let targets = targets_from(seqs, &batch, bins(model), cfg);
    finish(model, params, batch, &targets, cfg, grad)
}

fn finish<R: Scalar>(
    model: &Model,
    params: &[R],
    batch: PpoBatch<R>,
    targets: &PpoTargets<R>,
    cfg: &PpoConfig,
    grad: Option<&mut [R]>,
) -> Result<LossStats> {
    if targets.vs.len() != batch.actions.len() || targets.advantages.len() != batch.actions.len() {
        return Err(TrainError::Shape(
            "targets do not match the sequence batch".into(),
        ));
    }
    let (stats, head) = ppo_head_loss(
        &batch.out,
        &batch.actions,
        &batch.log_mu,
        targets,
        bins(model),
        cfg,
    );
    if let Some(g) = grad {
        model.backward(params, &batch.cache, &head, g)?;
    }
    Ok(stats)
}
