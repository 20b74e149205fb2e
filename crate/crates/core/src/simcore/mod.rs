//! The batched log-replay environment.
//!
//! Every scenario of a [`ScenarioBatch`] is stepped in lockstep. Other agents
//! replay their logged poses; the ego follows the bicycle model. A row stops
//! being live when it hits a done signal (training mode) or runs out of logged
//! steps; non-live rows pass through unchanged with zero reward.

mod obs;
mod rollout;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    bicycle_step, recover_actions, Action, ActionTable, EgoState, RecoveredActions, VehicleParams,
};
use crate::error::{Error, Result};
use crate::geometry::{Obb, Vec2};
use crate::num::Real;
use crate::roads::{stop_targets, RouteFrame, RouteProjection, StopTarget};
use crate::scenario::{LightState, ScenarioBatch};

pub use obs::{
    extract_observations, ObservationBatch, PolicyObservations, ValueObservations, ACTIVE_DIM,
    AGENT_DIM, ROAD_DIM, ROUTE_DIM, VALUE_DIM,
};
pub use rollout::{
    bench_step, rollout, write_bench_csv, BenchRow, ConstantPolicy, EpisodeBatch, LogReplayPolicy,
    Policy, PolicyInput, PolicyOutput,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub progress: f64,
    pub over_speed: f64,
    pub lateral_accel: f64,
    pub longitudinal_accel: f64,
    pub terminal_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            progress: 1.0,
            over_speed: 0.1,
            lateral_accel: 0.02,
            longitudinal_accel: 0.02,
            terminal_penalty: -10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoneConfig {
    /// Along-route distance to the goal that counts as arrival.
    pub goal_radius: f64,
    /// Speed below which the ego counts as stopped for a stop line.
    pub stop_speed: f64,
    /// Length of the zone before a stop line where the stop must happen.
    pub stop_window: f64,
    /// Crossing a stop line faster than this without a stop is a violation.
    pub crossing_speed: f64,
    /// Per-side growth of the ego box for the off-route check.
    pub footprint_margin: f64,
}

impl Default for DoneConfig {
    fn default() -> Self {
        Self {
            goal_radius: 2.0,
            stop_speed: 0.1,
            stop_window: 2.0,
            crossing_speed: 0.5,
            footprint_margin: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsConfig {
    pub max_agents: usize,
    pub max_road_points: usize,
    pub max_route_points: usize,
    pub agent_radius: f64,
    pub road_radius: f64,
    pub route_radius: f64,
    /// Nearest-point queries are centered this far ahead of the ego.
    pub anchor_ahead: f64,
    /// Reported distance when no stop line or signal lies ahead.
    pub stop_range: f64,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self {
            max_agents: 16,
            max_road_points: 128,
            max_route_points: 64,
            agent_radius: 50.0,
            road_radius: 40.0,
            route_radius: 40.0,
            anchor_ahead: 10.0,
            stop_range: 60.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneMode {
    /// Done signals terminate the episode.
    #[default]
    Training,
    /// Episodes run to the end; violations are latched as flags only.
    EvalNoDones,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub vehicle: VehicleParams,
    pub actions: ActionTable,
    pub reward: RewardConfig,
    pub done: DoneConfig,
    pub obs: ObsConfig,
    pub mode: DoneMode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    #[default]
    None,
    Collision,
    OffRoute,
    RedLight,
    StopLine,
    GoalReached,
}

impl DoneReason {
    /// Priority order, highest first.
    pub const PRIORITY: [DoneReason; 5] = [
        DoneReason::Collision,
        DoneReason::OffRoute,
        DoneReason::RedLight,
        DoneReason::StopLine,
        DoneReason::GoalReached,
    ];

    pub fn flag(self) -> u8 {
        match self {
            DoneReason::None => 0,
            DoneReason::Collision => 1,
            DoneReason::OffRoute => 2,
            DoneReason::RedLight => 4,
            DoneReason::StopLine => 8,
            DoneReason::GoalReached => 16,
        }
    }

    pub fn is_failure(self) -> bool {
        matches!(
            self,
            DoneReason::Collision
                | DoneReason::OffRoute
                | DoneReason::RedLight
                | DoneReason::StopLine
        )
    }

    /// Highest-priority reason present in a flag set.
    pub fn first_in(flags: u8) -> DoneReason {
        Self::PRIORITY
            .into_iter()
            .find(|r| flags & r.flag() != 0)
            .unwrap_or(DoneReason::None)
    }
}

/// Per-scenario simulation state, structure-of-arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct SimStateBatch<R> {
    pub x: Vec<R>,
    pub y: Vec<R>,
    pub heading: Vec<R>,
    pub v: Vec<R>,
    pub steer: Vec<R>,
    pub t: Vec<usize>,
    pub done: Vec<bool>,
    pub done_reason: Vec<DoneReason>,
    /// Every condition observed so far, latched (used by evaluation without dones).
    pub events: Vec<u8>,
    /// Route arc length of the rear-axle reference point.
    pub s: Vec<R>,
    /// Bit `j` set once the ego has stopped in front of stop line `j`.
    pub stopped_for: Vec<u64>,
    pub rng: Vec<ChaCha8Rng>,
}

impl<R: Real> SimStateBatch<R> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn ego(&self, b: usize) -> EgoState<R> {
        EgoState {
            x: self.x[b],
            y: self.y[b],
            heading: self.heading[b],
            v: self.v[b],
            steer: self.steer[b],
        }
    }

    fn set_ego(&mut self, b: usize, e: &EgoState<R>) {
        self.x[b] = e.x;
        self.y[b] = e.y;
        self.heading[b] = e.heading;
        self.v[b] = e.v;
        self.steer[b] = e.steer;
    }

    /// Row `b` as a single-row state.
    pub fn row(&self, b: usize) -> Self {
        Self {
            x: vec![self.x[b]],
            y: vec![self.y[b]],
            heading: vec![self.heading[b]],
            v: vec![self.v[b]],
            steer: vec![self.steer[b]],
            t: vec![self.t[b]],
            done: vec![self.done[b]],
            done_reason: vec![self.done_reason[b]],
            events: vec![self.events[b]],
            s: vec![self.s[b]],
            stopped_for: vec![self.stopped_for[b]],
            rng: vec![self.rng[b].clone()],
        }
    }
}

/// Static per-scenario data derived once per batch.
#[derive(Clone, Debug)]
pub struct RowStatic<R> {
    pub frame: RouteFrame<R>,
    pub stop_line_s: Vec<R>,
    pub lights: Vec<StopTarget<R>>,
    pub goal_s: R,
    pub logged_start_s: R,
    pub logged_end_s: R,
    pub expert: RecoveredActions,
    pub speed_limit: R,
}

/// A scenario batch prepared for simulation.
#[derive(Clone, Debug)]
pub struct Env<R> {
    pub config: SimConfig,
    pub batch: Arc<ScenarioBatch>,
    pub rows: Vec<RowStatic<R>>,
}

/// What happened to each row in one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput<R> {
    pub state: SimStateBatch<R>,
    pub rewards: Vec<R>,
    /// Whether the row was live (an action was applied) this step.
    pub live: Vec<bool>,
    /// Highest-priority condition detected this step (terminal in training mode).
    pub done_events: Vec<DoneReason>,
    pub lateral_accel: Vec<R>,
    pub longitudinal_accel: Vec<R>,
}

/// Inputs of the per-step reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition<R> {
    pub progress: R,
    pub speed: R,
    pub speed_limit: R,
    pub lateral_accel: R,
    pub longitudinal_accel: R,
    pub dt: R,
    /// Done reason that terminates at this step, if any.
    pub terminal: DoneReason,
}

/// Dense reward plus the terminal penalty for failure dones. Reaching the
/// goal ends the episode without a terminal reward.
pub fn compute_reward<R: Real>(tr: &Transition<R>, cfg: &RewardConfig) -> R {
    let over = (tr.speed - tr.speed_limit).max(R::zero());
    let mut r = R::lit(cfg.progress) * tr.progress
        - R::lit(cfg.over_speed) * over * tr.dt
        - R::lit(cfg.lateral_accel) * tr.lateral_accel * tr.lateral_accel * tr.dt
        - R::lit(cfg.longitudinal_accel) * tr.longitudinal_accel * tr.longitudinal_accel * tr.dt;
    if tr.terminal.is_failure() {
        r += R::lit(cfg.terminal_penalty);
    }
    r
}

/// Ego bounding box for a rear-axle state.
pub fn ego_box<R: Real>(ego: &EgoState<R>, vehicle: &VehicleParams) -> Obb<R> {
    let f = Vec2::from_angle(ego.heading);
    let center = Vec2::new(ego.x, ego.y) + f * R::lit(vehicle.center_offset());
    Obb::new(
        center,
        ego.heading,
        R::lit(vehicle.length),
        R::lit(vehicle.width),
    )
}

/// Collision if `ego` overlaps any of `agents`.
pub fn collision_check<R: Real>(ego: &Obb<R>, agents: &[Obb<R>]) -> bool {
    agents.iter().any(|a| ego.overlaps(a))
}

/// Stop-line memory carried between steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StopMemory {
    pub stopped_for: u64,
}

/// Everything [`detect_done`] needs about one row at the post-step time `t`.
pub struct DoneContext<'a, R> {
    pub env: &'a Env<R>,
    pub row: usize,
    pub t: usize,
    pub prev: RouteProjection<R>,
    pub cur: RouteProjection<R>,
}

/// All conditions met at this step as a flag set, after updating the stop-line
/// memory. Use [`DoneReason::first_in`] for the terminal reason.
pub fn detect_done<R: Real>(
    ego: &EgoState<R>,
    ctx: &DoneContext<'_, R>,
    memory: &mut StopMemory,
) -> u8 {
    let env = ctx.env;
    let cfg = &env.config;
    let batch = &env.batch;
    let row = &env.rows[ctx.row];
    let b = ctx.row;
    let mut flags = 0u8;

    let ebox = ego_box(ego, &cfg.vehicle);
    for a in 0..batch.max_agents {
        if let Some((pose, l, w)) = batch.agent_at(b, ctx.t, a) {
            let abox = Obb::new(
                Vec2::new(R::of_f32(pose.x), R::of_f32(pose.y)),
                R::of_f32(pose.heading),
                R::of_f32(l),
                R::of_f32(w),
            );
            if ebox.overlaps(&abox) {
                flags |= DoneReason::Collision.flag();
                break;
            }
        }
    }

    if !row
        .frame
        .footprint_on_route(&ebox.inflated(R::lit(cfg.done.footprint_margin)))
    {
        flags |= DoneReason::OffRoute.flag();
    }

    let front = R::lit(cfg.vehicle.front_offset());
    let f_prev = ctx.prev.s + front;
    let f_cur = ctx.cur.s + front;
    for l in &row.lights {
        if f_prev < l.s && l.s <= f_cur {
            let state = l
                .signal
                .map_or(LightState::Unknown, |k| batch.light_at(b, ctx.t, k));
            if state == LightState::Red {
                flags |= DoneReason::RedLight.flag();
            }
        }
    }

    let window = R::lit(cfg.done.stop_window);
    for (j, &ls) in row.stop_line_s.iter().enumerate().take(64) {
        if f_cur >= ls - window && f_cur <= ls && ego.v < R::lit(cfg.done.stop_speed) {
            memory.stopped_for |= 1 << j;
        }
        let crossed = f_prev < ls && ls <= f_cur;
        if crossed && ego.v > R::lit(cfg.done.crossing_speed) && memory.stopped_for & (1 << j) == 0
        {
            flags |= DoneReason::StopLine.flag();
        }
    }

    if ctx.cur.s >= row.goal_s - R::lit(cfg.done.goal_radius) {
        flags |= DoneReason::GoalReached.flag();
    }
    flags
}

impl<R: Real> Env<R> {
    pub fn new(config: SimConfig, batch: Arc<ScenarioBatch>) -> Result<Self> {
        config.actions.validate()?;
        let mut rows = Vec::with_capacity(batch.len());
        for (b, sc) in batch.scenarios.iter().enumerate() {
            let frame = RouteFrame::<R>::from_route(&sc.route).map_err(|e| Error::Invariant {
                index: b,
                what: e.to_string(),
            })?;
            let (stop_line_s, lights) = stop_targets(&frame, &sc.stop_lines, &sc.traffic_lights);
            let goal_s = frame.project(sc.goal.cast()).s;
            let logged_start_s = frame.project(sc.ego_log[0].position().cast()).s;
            let logged_end_s = frame.project(sc.final_pose().position().cast()).s;
            let expert = recover_actions(&sc.ego_log, sc.dt, &config.actions, &config.vehicle);
            rows.push(RowStatic {
                frame,
                stop_line_s,
                lights,
                goal_s,
                logged_start_s,
                logged_end_s,
                expert,
                speed_limit: R::of_f32(sc.speed_limit),
            });
        }
        Ok(Self {
            config,
            batch,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dt(&self) -> R {
        R::lit(self.batch.dt)
    }

    /// Last step index at which an action can be applied, plus one.
    pub fn transitions(&self, b: usize) -> usize {
        self.batch.scenarios[b].num_steps - 1
    }

    /// Initial state: logged pose at `t = 0` with the recovered steering angle.
    /// Row `b` samples from a stream seeded by `(seed, b)`.
    pub fn reset(&self, seed: u64) -> SimStateBatch<R> {
        let n = self.len();
        let mut st = SimStateBatch {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            heading: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            steer: Vec::with_capacity(n),
            t: vec![0; n],
            done: vec![false; n],
            done_reason: vec![DoneReason::None; n],
            events: vec![0; n],
            s: Vec::with_capacity(n),
            stopped_for: vec![0; n],
            rng: (0..n)
                .map(|b| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    r.set_stream(b as u64);
                    r
                })
                .collect(),
        };
        for b in 0..n {
            let p = self.batch.ego_at(b, 0);
            let row = &self.rows[b];
            st.x.push(R::of_f32(p.x));
            st.y.push(R::of_f32(p.y));
            st.heading.push(R::of_f32(p.heading));
            st.v.push(R::of_f32(p.v));
            st.steer.push(R::lit(row.expert.initial_steer));
            st.s.push(row.frame.project(Vec2::new(st.x[b], st.y[b])).s);
            let front = st.s[b] + R::lit(self.config.vehicle.front_offset());
            let window = R::lit(self.config.done.stop_window);
            for (j, &ls) in row.stop_line_s.iter().enumerate().take(64) {
                if front >= ls - window
                    && front <= ls
                    && st.v[b] < R::lit(self.config.done.stop_speed)
                {
                    st.stopped_for[b] |= 1 << j;
                }
            }
        }
        st
    }

    /// Whether row `b` takes an action this step.
    pub fn is_live(&self, state: &SimStateBatch<R>, b: usize) -> bool {
        !state.done[b] && state.t[b] < self.transitions(b)
    }

    /// Advances every live row by one step. Pure: the input state is untouched.
    pub fn step(&self, state: &SimStateBatch<R>, actions: &[Action]) -> Result<StepOutput<R>> {
        let n = self.len();
        if state.len() != n || actions.len() != n {
            return Err(Error::Shape(format!(
                "batch has {n} rows, state {} and actions {}",
                state.len(),
                actions.len()
            )));
        }
        let mut next = state.clone();
        let mut out = StepOutput {
            state: SimStateBatch::empty(),
            rewards: vec![R::zero(); n],
            live: vec![false; n],
            done_events: vec![DoneReason::None; n],
            lateral_accel: vec![R::zero(); n],
            longitudinal_accel: vec![R::zero(); n],
        };
        let dt = self.dt();
        let wheelbase = R::lit(self.config.vehicle.wheelbase);
        for b in 0..n {
            if !self.is_live(state, b) {
                continue;
            }
            let (accel, rate) = self.config.actions.decode::<R>(actions[b])?;
            let ego = state.ego(b);
            let new = bicycle_step(&ego, accel, rate, dt, &self.config.vehicle);
            let t1 = state.t[b] + 1;
            let row = &self.rows[b];
            let prev = RouteProjection {
                s: state.s[b],
                d: R::zero(),
                lane_id: 0,
                lane_index: 0,
                in_corridor: true,
            };
            let cur = row.frame.project(Vec2::new(new.x, new.y));
            let mut memory = StopMemory {
                stopped_for: state.stopped_for[b],
            };
            let ctx = DoneContext {
                env: self,
                row: b,
                t: t1,
                prev,
                cur,
            };
            let flags = detect_done(&new, &ctx, &mut memory);
            let reason = DoneReason::first_in(flags);
            let terminal = match self.config.mode {
                DoneMode::Training => reason,
                DoneMode::EvalNoDones => DoneReason::None,
            };
            let a_lat = new.v * new.v * new.steer.tan() / wheelbase;
            let reward = compute_reward(
                &Transition {
                    progress: cur.s - state.s[b],
                    speed: new.v,
                    speed_limit: row.speed_limit,
                    lateral_accel: a_lat,
                    longitudinal_accel: accel,
                    dt,
                    terminal,
                },
                &self.config.reward,
            );
            next.set_ego(b, &new);
            next.t[b] = t1;
            next.s[b] = cur.s;
            next.stopped_for[b] = memory.stopped_for;
            next.events[b] |= flags;
            if terminal != DoneReason::None {
                next.done[b] = true;
                next.done_reason[b] = terminal;
            }
            out.rewards[b] = reward;
            out.live[b] = true;
            out.done_events[b] = reason;
            out.lateral_accel[b] = a_lat;
            out.longitudinal_accel[b] = accel;
        }
        out.state = next;
        Ok(out)
    }

    /// Single-row environment for row `b`.
    pub fn row_env(&self, b: usize) -> Env<R> {
        Env {
            config: self.config.clone(),
            batch: Arc::new(self.batch.row(b)),
            rows: vec![self.rows[b].clone()],
        }
    }
}

impl<R: Real> SimStateBatch<R> {
    fn empty() -> Self {
        Self {
            x: vec![],
            y: vec![],
            heading: vec![],
            v: vec![],
            steer: vec![],
            t: vec![],
            done: vec![],
            done_reason: vec![],
            events: vec![],
            s: vec![],
            stopped_for: vec![],
            rng: vec![],
        }
    }
}

/// Convenience wrapper matching the functional signature.
pub fn env_step<R: Real>(
    env: &Env<R>,
    state: &SimStateBatch<R>,
    actions: &[Action],
) -> Result<StepOutput<R>> {
    env.step(state, actions)
}

#[cfg(test)]
mod tests;
