//! Compact observation rows, fixed-length transition sequences and the
//! per-learner replay table.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use zsim_core::dynamics::Action;
use zsim_core::simcore::{
    EpisodeBatch, ObservationBatch, PolicyObservations, ValueObservations, ACTIVE_DIM, AGENT_DIM,
    ROAD_DIM, ROUTE_DIM, VALUE_DIM,
};
use zsim_core::Real;

use crate::error::{Result, TrainError};

/// Steps per transition sequence.
pub const SEQ_LEN: usize = 32;

/// One observation row with only its valid tokens kept, in slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsRow<R> {
    pub active: Vec<R>,
    pub agents: Vec<R>,
    pub road: Vec<R>,
    pub route: Vec<R>,
    pub value: Vec<R>,
}

impl<R: Real> ObsRow<R> {
    pub fn pack(obs: &ObservationBatch<R>, b: usize) -> Self {
        let p = &obs.policy;
        let keep = |feats: &[R], valid: &[u8], slots: usize, dim: usize| -> Vec<R> {
            (0..slots)
                .filter(|&s| valid[b * slots + s] != 0)
                .flat_map(|s| {
                    feats[(b * slots + s) * dim..(b * slots + s + 1) * dim]
                        .iter()
                        .copied()
                })
                .collect()
        };
        Self {
            active: p.active[b * ACTIVE_DIM..(b + 1) * ACTIVE_DIM].to_vec(),
            agents: keep(&p.agents, &p.agent_valid, p.max_agents, AGENT_DIM),
            road: keep(&p.road, &p.road_valid, p.max_road, ROAD_DIM),
            route: keep(&p.route, &p.route_valid, p.max_route, ROUTE_DIM),
            value: obs.value_only.features[b * VALUE_DIM..(b + 1) * VALUE_DIM].to_vec(),
        }
    }

    fn counts(&self) -> [usize; 3] {
        [
            self.agents.len() / AGENT_DIM,
            self.road.len() / ROAD_DIM,
            self.route.len() / ROUTE_DIM,
        ]
    }
}

/// Rebuilds a batch whose slot counts are the per-modality maxima over `rows`.
/// Valid tokens keep their relative order, so the model sees the same token
/// sequence as for the original batch.
pub fn stack_rows<R: Real>(rows: &[&ObsRow<R>]) -> ObservationBatch<R> {
    let n = rows.len();
    let max = rows.iter().fold([0; 3], |m, r| {
        let c = r.counts();
        [m[0].max(c[0]), m[1].max(c[1]), m[2].max(c[2])]
    });
    let mut obs = ObservationBatch::zeros(n, max[0], max[1], max[2]);
    let p: &mut PolicyObservations<R> = &mut obs.policy;
    for (b, r) in rows.iter().enumerate() {
        let c = r.counts();
        p.active[b * ACTIVE_DIM..(b + 1) * ACTIVE_DIM].copy_from_slice(&r.active);
        p.agents[b * max[0] * AGENT_DIM..][..r.agents.len()].copy_from_slice(&r.agents);
        p.agent_valid[b * max[0]..][..c[0]].fill(1);
        p.road[b * max[1] * ROAD_DIM..][..r.road.len()].copy_from_slice(&r.road);
        p.road_valid[b * max[1]..][..c[1]].fill(1);
        p.route[b * max[2] * ROUTE_DIM..][..r.route.len()].copy_from_slice(&r.route);
        p.route_valid[b * max[2]..][..c[2]].fill(1);
        p.row_valid[b] = 1;
    }
    let v: &mut ValueObservations<R> = &mut obs.value_only;
    for (b, r) in rows.iter().enumerate() {
        v.features[b * VALUE_DIM..(b + 1) * VALUE_DIM].copy_from_slice(&r.value);
    }
    obs
}

/// Up to [`SEQ_LEN`] consecutive live steps of one scenario. Arrays have
/// length `SEQ_LEN`; entries past `len` are padding with mask 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSequence<R> {
    pub scenario: usize,
    pub start: usize,
    pub len: usize,
    /// One row per live step.
    pub observations: Vec<ObsRow<R>>,
    pub actions: Vec<Action>,
    /// Behavior log-probabilities.
    pub log_mu: Vec<R>,
    pub rewards: Vec<R>,
    pub dones: Vec<bool>,
    pub mask: Vec<u8>,
    /// Behavior value of the state after the last step, 0 if it terminated.
    pub bootstrap_value: R,
    /// Observation after the last step, absent if it terminated.
    pub bootstrap_obs: Option<ObsRow<R>>,
    pub policy_version: u64,
}

impl<R: Real> TransitionSequence<R> {
    pub fn terminated(&self) -> bool {
        self.len > 0 && self.dones[self.len - 1]
    }
}

/// Cuts every row of a recorded episode into sequences. `scenario_ids`
/// maps batch rows to dataset indices.
pub fn cut_episode<R: Real>(
    ep: &EpisodeBatch<R>,
    scenario_ids: &[usize],
) -> Result<Vec<TransitionSequence<R>>> {
    if ep.observations.len() != ep.steps + 1 {
        return Err(TrainError::Shape(
            "episode was rolled out without observations".into(),
        ));
    }
    let mut out = Vec::new();
    for b in 0..ep.batch {
        let live = ep.live_steps(b);
        for start in (0..live).step_by(SEQ_LEN) {
            let len = SEQ_LEN.min(live - start);
            let last = start + len - 1;
            let mut rewards: Vec<R> = (start..=last).map(|t| ep.rewards[ep.idx(b, t)]).collect();
            rewards.resize(SEQ_LEN, R::zero());
            let mut actions: Vec<Action> =
                (start..=last).map(|t| ep.actions[ep.idx(b, t)]).collect();
            actions.resize(SEQ_LEN, [0, 0]);
            let mut log_mu: Vec<R> = (start..=last).map(|t| ep.log_probs[ep.idx(b, t)]).collect();
            log_mu.resize(SEQ_LEN, R::zero());
            let mut dones: Vec<bool> = (start..=last).map(|t| ep.dones[ep.idx(b, t)]).collect();
            dones.resize(SEQ_LEN, false);
            let mut mask = vec![1u8; len];
            mask.resize(SEQ_LEN, 0);
            let terminated = dones[len - 1];
            out.push(TransitionSequence {
                scenario: scenario_ids[b],
                start,
                len,
                observations: (start..=last)
                    .map(|t| ObsRow::pack(&ep.observations[t], b))
                    .collect(),
                actions,
                log_mu,
                rewards,
                dones,
                mask,
                bootstrap_value: if terminated {
                    R::zero()
                } else {
                    ep.next_value(b, last)
                },
                bootstrap_obs: (!terminated).then(|| ObsRow::pack(&ep.observations[last + 1], b)),
                policy_version: ep.policy_version,
            });
        }
    }
    Ok(out)
}

/// Bounded FIFO of sequences, shared between the actors feeding one
/// learner and that learner.
#[derive(Debug)]
pub struct ReplayTable<R> {
    capacity: usize,
    items: Mutex<VecDeque<Arc<TransitionSequence<R>>>>,
}

impl<R> ReplayTable<R> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(TrainError::Config(
                "replay capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            items: Mutex::new(VecDeque::with_capacity(capacity)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends, evicting the oldest entries beyond capacity.
    pub fn push(&self, seqs: impl IntoIterator<Item = TransitionSequence<R>>) {
        let mut items = self.items.lock().unwrap();
        for s in seqs {
            if items.len() == self.capacity {
                items.pop_front();
            }
            items.push_back(Arc::new(s));
        }
    }

    /// Up to `n` distinct sequences chosen uniformly.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Arc<TransitionSequence<R>>> {
        let items = self.items.lock().unwrap();
        let k = n.min(items.len());
        sample(rng, items.len(), k)
            .into_iter()
            .map(|i| items[i].clone())
            .collect()
    }
}
