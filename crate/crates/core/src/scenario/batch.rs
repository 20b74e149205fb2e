use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::*;
use crate::error::{Error, Result};

/// `B` scenarios padded to a common horizon `T`, with per-step arrays laid out
/// batch-major (`[b * T + t]`, agents and signals innermost).
///
/// Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioBatch {
    pub scenarios: Vec<Arc<Scenario>>,
    pub horizon: usize,
    pub dt: f64,
    /// 1 for `t < num_steps`, else 0.
    pub mask: Vec<u8>,
    pub ego_log: Vec<LoggedPose>,
    pub max_agents: usize,
    /// `[(b * T + t) * max_agents + a]`
    pub agent_pose: Vec<LoggedPose>,
    pub agent_valid: Vec<u8>,
    /// `[b * max_agents + a]` as (length, width); zero for padding slots.
    pub agent_dims: Vec<(f32, f32)>,
    pub max_signals: usize,
    /// `[(b * T + t) * max_signals + k]`; padding is `Unknown`.
    pub light_state: Vec<LightState>,
}

impl ScenarioBatch {
    pub fn new(scenarios: Vec<Scenario>, horizon: usize) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::Shape("empty scenario batch".into()));
        }
        let dt = scenarios[0].dt;
        for (index, s) in scenarios.iter().enumerate() {
            s.validate()
                .map_err(|what| Error::Invariant { index, what })?;
            if s.num_steps > horizon {
                return Err(Error::TooLong {
                    index,
                    steps: s.num_steps,
                    horizon,
                });
            }
            if s.dt != dt {
                return Err(Error::Invariant {
                    index,
                    what: format!("dt matches batch dt {dt}"),
                });
            }
        }
        let b = scenarios.len();
        let t_max = horizon;
        let max_agents = scenarios.iter().map(|s| s.agents.len()).max().unwrap_or(0);
        let max_signals = scenarios
            .iter()
            .map(|s| s.traffic_lights.len())
            .max()
            .unwrap_or(0);

        let mut mask = vec![0u8; b * t_max];
        let mut ego_log = vec![LoggedPose::default(); b * t_max];
        let mut agent_pose = vec![LoggedPose::default(); b * t_max * max_agents];
        let mut agent_valid = vec![0u8; b * t_max * max_agents];
        let mut agent_dims = vec![(0.0, 0.0); b * max_agents];
        let mut light_state = vec![LightState::Unknown; b * t_max * max_signals];

        for (bi, s) in scenarios.iter().enumerate() {
            for t in 0..s.num_steps {
                let row = bi * t_max + t;
                mask[row] = 1;
                ego_log[row] = s.ego_log[t];
                for (ai, a) in s.agents.iter().enumerate() {
                    agent_pose[row * max_agents + ai] = a.poses[t];
                    agent_valid[row * max_agents + ai] = a.valid[t] as u8;
                }
                for (k, sig) in s.traffic_lights.iter().enumerate() {
                    light_state[row * max_signals + k] = sig.states[t];
                }
            }
            for (ai, a) in s.agents.iter().enumerate() {
                agent_dims[bi * max_agents + ai] = (a.length, a.width);
            }
        }

        Ok(Self {
            scenarios: scenarios.into_iter().map(Arc::new).collect(),
            horizon,
            dt,
            mask,
            ego_log,
            max_agents,
            agent_pose,
            agent_valid,
            agent_dims,
            max_signals,
            light_state,
        })
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    #[inline]
    pub fn mask_at(&self, b: usize, t: usize) -> bool {
        self.mask[b * self.horizon + t] != 0
    }

    #[inline]
    pub fn ego_at(&self, b: usize, t: usize) -> LoggedPose {
        self.ego_log[b * self.horizon + t]
    }

    #[inline]
    pub fn agent_at(&self, b: usize, t: usize, a: usize) -> Option<(LoggedPose, f32, f32)> {
        let i = (b * self.horizon + t) * self.max_agents + a;
        if self.agent_valid[i] == 0 {
            return None;
        }
        let (l, w) = self.agent_dims[b * self.max_agents + a];
        Some((self.agent_pose[i], l, w))
    }

    #[inline]
    pub fn light_at(&self, b: usize, t: usize, k: usize) -> LightState {
        self.light_state[(b * self.horizon + t) * self.max_signals + k]
    }

    /// Row `b` as a standalone single-scenario batch.
    pub fn row(&self, b: usize) -> ScenarioBatch {
        ScenarioBatch::new(vec![(*self.scenarios[b]).clone()], self.horizon)
            .expect("row of a valid batch is valid")
    }
}

/// Yields consecutive batches of a scenario file, optionally double buffered.
///
/// With prefetch on, a staging thread decodes batch `k + 1` while the consumer
/// holds batch `k`; the channel is a rendezvous so at most one batch is staged
/// ahead. The final batch is short when the dataset size is not a multiple of
/// the batch size.
pub struct BatchIter {
    inner: IterInner,
}

enum IterInner {
    Sync {
        file: ScenarioFile,
        batch_size: usize,
        horizon: usize,
        next: usize,
        failed: bool,
    },
    Prefetch {
        rx: Receiver<Result<ScenarioBatch>>,
        worker: Option<JoinHandle<()>>,
    },
}

fn decode_range(
    file: &ScenarioFile,
    start: usize,
    end: usize,
    horizon: usize,
) -> Result<ScenarioBatch> {
    let scenarios = (start..end)
        .map(|i| file.read(i))
        .collect::<Result<Vec<_>>>()?;
    ScenarioBatch::new(scenarios, horizon).map_err(|e| match e {
        Error::Invariant { index, what } => Error::Invariant {
            index: start + index,
            what,
        },
        Error::TooLong {
            index,
            steps,
            horizon,
        } => Error::TooLong {
            index: start + index,
            steps,
            horizon,
        },
        e => e,
    })
}

impl BatchIter {
    pub fn open(
        path: impl AsRef<Path>,
        batch_size: usize,
        horizon: usize,
        prefetch: bool,
    ) -> Result<Self> {
        Self::from_file(ScenarioFile::open(path)?, batch_size, horizon, prefetch)
    }

    pub fn from_file(
        file: ScenarioFile,
        batch_size: usize,
        horizon: usize,
        prefetch: bool,
    ) -> Result<Self> {
        if file.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !prefetch {
            return Ok(Self {
                inner: IterInner::Sync {
                    file,
                    batch_size,
                    horizon,
                    next: 0,
                    failed: false,
                },
            });
        }
        let (tx, rx) = sync_channel(0);
        let worker = std::thread::Builder::new()
            .name("batch-stager".into())
            .spawn(move || {
                let n = file.len();
                let mut start = 0;
                while start < n {
                    let end = (start + batch_size).min(n);
                    let item = decode_range(&file, start, end, horizon);
                    let failed = item.is_err();
                    if tx.send(item).is_err() || failed {
                        return;
                    }
                    start = end;
                }
            })?;
        Ok(Self {
            inner: IterInner::Prefetch {
                rx,
                worker: Some(worker),
            },
        })
    }
}

impl Iterator for BatchIter {
    type Item = Result<ScenarioBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            IterInner::Sync {
                file,
                batch_size,
                horizon,
                next,
                failed,
            } => {
                if *failed || *next >= file.len() {
                    return None;
                }
                let end = (*next + *batch_size).min(file.len());
                let item = decode_range(file, *next, end, *horizon);
                *failed = item.is_err();
                *next = end;
                Some(item)
            }
            IterInner::Prefetch { rx, .. } => rx.recv().ok(),
        }
    }
}

impl Drop for BatchIter {
    fn drop(&mut self) {
        if let IterInner::Prefetch { rx, worker } = &mut self.inner {
            // Unblock a stager parked on send before joining.
            let (_tx, dead) = sync_channel(0);
            drop(std::mem::replace(rx, dead));
            if let Some(h) = worker.take() {
                let _ = h.join();
            }
        }
    }
}
