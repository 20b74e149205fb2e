//! Kinematic bicycle model (rear-axle reference, explicit Euler) and the
//! discrete action table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{clamp, wrap_angle, Real};
use crate::scenario::LoggedPose;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EgoState<R> {
    pub x: R,
    pub y: R,
    pub heading: R,
    pub v: R,
    /// Front-wheel steering angle.
    pub steer: R,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub steer_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub length: f64,
    pub width: f64,
    /// Distance from the rear bumper to the rear axle.
    pub rear_overhang: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 3.0,
            steer_max: 0.55,
            v_min: 0.0,
            v_max: 40.0,
            length: 4.8,
            width: 2.0,
            rear_overhang: 0.9,
        }
    }
}

impl VehicleParams {
    /// Offset from the rear axle to the box center along the heading.
    pub fn center_offset(&self) -> f64 {
        0.5 * self.length - self.rear_overhang
    }

    /// Offset from the rear axle to the front bumper.
    pub fn front_offset(&self) -> f64 {
        self.length - self.rear_overhang
    }
}

/// One explicit-Euler step. All right-hand sides read the old state; speed
/// and steering are clamped after integration.
pub fn bicycle_step<R: Real>(
    state: &EgoState<R>,
    accel: R,
    steer_rate: R,
    dt: R,
    params: &VehicleParams,
) -> EgoState<R> {
    let (s, c) = state.heading.sin_cos();
    let wheelbase = R::lit(params.wheelbase);
    let steer_max = R::lit(params.steer_max);
    EgoState {
        x: state.x + state.v * c * dt,
        y: state.y + state.v * s * dt,
        heading: wrap_angle(state.heading + state.v / wheelbase * state.steer.tan() * dt),
        v: clamp(
            state.v + accel * dt,
            R::lit(params.v_min),
            R::lit(params.v_max),
        ),
        steer: clamp(state.steer + steer_rate * dt, -steer_max, steer_max),
    }
}

/// Discrete acceleration and steering-rate bins; the policy picks one index per head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    pub accel: Vec<f64>,
    pub steer_rate: Vec<f64>,
}

impl Default for ActionTable {
    fn default() -> Self {
        Self {
            accel: vec![-4.0, -2.0, -0.5, 0.0, 0.5, 2.0],
            steer_rate: vec![-0.4, -0.1, 0.0, 0.1, 0.4],
        }
    }
}

/// Index pair `[accel, steer_rate]`.
pub type Action = [usize; 2];

impl ActionTable {
    pub fn validate(&self) -> Result<()> {
        for (name, bins) in [("accel", &self.accel), ("steer_rate", &self.steer_rate)] {
            if bins.is_empty() {
                return Err(Error::Config(format!("{name} bins are empty")));
            }
            if !bins.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config(format!("{name} bins strictly increasing")));
            }
            if !bins.contains(&0.0) {
                return Err(Error::Config(format!("{name} bins contain 0")));
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> [usize; 2] {
        [self.accel.len(), self.steer_rate.len()]
    }

    /// Index of the zero bin in each head.
    pub fn zero_action(&self) -> Action {
        [
            self.accel.iter().position(|&a| a == 0.0).unwrap_or(0),
            self.steer_rate.iter().position(|&a| a == 0.0).unwrap_or(0),
        ]
    }

    pub fn decode<R: Real>(&self, action: Action) -> Result<(R, R)> {
        let a = self
            .accel
            .get(action[0])
            .ok_or_else(|| Error::Shape(format!("accel index {} out of range", action[0])))?;
        let r = self
            .steer_rate
            .get(action[1])
            .ok_or_else(|| Error::Shape(format!("steer-rate index {} out of range", action[1])))?;
        Ok((R::lit(*a), R::lit(*r)))
    }
}

pub fn decode_action<R: Real>(action: Action, table: &ActionTable) -> Result<(R, R)> {
    table.decode(action)
}

/// Actions recovered from a logged trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredActions {
    pub initial_steer: f64,
    /// One action per transition (`len = poses.len() - 1`).
    pub actions: Vec<Action>,
}

/// Minimum travel per step below which the steering angle is unobservable.
const MIN_OBSERVABLE_TRAVEL: f64 = 0.02;

fn implied_steer(p0: &LoggedPose, p1: &LoggedPose, dt: f64, params: &VehicleParams) -> Option<f64> {
    let travel = p0.v as f64 * dt;
    if travel < MIN_OBSERVABLE_TRAVEL {
        return None;
    }
    let dtheta = wrap_angle(p1.heading as f64 - p0.heading as f64);
    Some((dtheta * params.wheelbase / travel).atan())
}

fn nearest_bin(bins: &[f64], current: f64, target: f64, dt: f64, lo: f64, hi: f64) -> usize {
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for (i, &b) in bins.iter().enumerate() {
        let err = (clamp(current + b * dt, lo, hi) - target).abs();
        if err < best_err {
            best = i;
            best_err = err;
        }
    }
    best
}

/// Inverse dynamics: finite-difference the log to (accel, steering rate) and
/// snap each to the bin that best reproduces the next logged value, tracking
/// the replayed speed and steering so rounding never accumulates.
pub fn recover_actions(
    poses: &[LoggedPose],
    dt: f64,
    table: &ActionTable,
    params: &VehicleParams,
) -> RecoveredActions {
    let n = poses.len();
    let steer_targets: Vec<Option<f64>> = (0..n.saturating_sub(1))
        .map(|t| implied_steer(&poses[t], &poses[t + 1], dt, params))
        .collect();
    let initial_steer = clamp(
        steer_targets
            .iter()
            .flatten()
            .next()
            .copied()
            .unwrap_or(0.0),
        -params.steer_max,
        params.steer_max,
    );
    let mut v = poses.first().map_or(0.0, |p| p.v as f64);
    let mut steer = initial_steer;
    let mut actions = Vec::with_capacity(n.saturating_sub(1));
    for t in 0..n.saturating_sub(1) {
        let ai = nearest_bin(
            &table.accel,
            v,
            poses[t + 1].v as f64,
            dt,
            params.v_min,
            params.v_max,
        );
        let target = steer_targets.get(t + 1).copied().flatten().unwrap_or(steer);
        let si = nearest_bin(
            &table.steer_rate,
            steer,
            target,
            dt,
            -params.steer_max,
            params.steer_max,
        );
        v = clamp(v + table.accel[ai] * dt, params.v_min, params.v_max);
        steer = clamp(
            steer + table.steer_rate[si] * dt,
            -params.steer_max,
            params.steer_max,
        );
        actions.push([ai, si]);
    }
    RecoveredActions {
        initial_steer,
        actions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn rest_state_is_fixed_point() {
        let s = EgoState {
            x: 3.0,
            y: -2.0,
            heading: 0.4,
            v: 0.0,
            steer: 0.2,
        };
        let n = bicycle_step(&s, 0.0, 0.0, 0.1, &params());
        assert_eq!((n.x, n.y, n.heading), (s.x, s.y, s.heading));
    }

    #[test]
    fn straight_line_step() {
        let s = EgoState {
            v: 10.0,
            ..Default::default()
        };
        let n = bicycle_step(&s, 0.0, 0.0, 0.1f64, &params());
        assert!((n.x - 1.0).abs() < 1e-15);
        assert_eq!(n.y, 0.0);
    }

    #[test]
    fn update_reads_old_state() {
        let s = EgoState {
            v: 2.0,
            steer: 0.0,
            ..Default::default()
        };
        // accel and steering rate affect only the next step's motion
        let n = bicycle_step(&s, 2.0, 0.4, 0.5f64, &params());
        assert_eq!(n.x, 1.0);
        assert_eq!(n.heading, 0.0);
        assert_eq!(n.v, 3.0);
        assert_eq!(n.steer, 0.2);
    }

    #[test]
    fn clamps_apply() {
        let s = EgoState {
            v: 0.1,
            steer: 0.54,
            ..Default::default()
        };
        let n = bicycle_step(&s, -4.0, 0.4, 0.1f64, &params());
        assert_eq!(n.v, 0.0);
        assert_eq!(n.steer, 0.55);
    }

    #[test]
    fn decode_table() {
        let t = ActionTable::default();
        t.validate().unwrap();
        let z = t.zero_action();
        assert_eq!(t.decode::<f64>(z).unwrap(), (0.0, 0.0));
        assert_eq!(t.decode::<f64>([0, 0]).unwrap(), (-4.0, -0.4));
        assert!(t.decode::<f64>([6, 0]).is_err());
        let mut seen = std::collections::HashSet::new();
        for i in 0..6 {
            for j in 0..5 {
                let (a, r) = t.decode::<f64>([i, j]).unwrap();
                assert!(seen.insert((a.to_bits(), r.to_bits())));
            }
        }
        assert_eq!(seen.len(), 30);
    }

    #[test]
    fn table_validation() {
        let mut t = ActionTable::default();
        t.accel = vec![-1.0, 1.0];
        assert!(t.validate().is_err());
        t.accel = vec![0.0, -1.0];
        assert!(t.validate().is_err());
    }

    #[test]
    fn recovery_reproduces_binned_trajectory() {
        let p = params();
        let table = ActionTable::default();
        let dt = 0.1;
        let script: Vec<Action> = (0..60).map(|t| [(t * 7) % 6, (t / 3) % 5]).collect();
        let mut s = EgoState {
            v: 8.0,
            steer: 0.05,
            ..Default::default()
        };
        let mut log = vec![];
        for a in &script {
            log.push(LoggedPose {
                x: s.x as f32,
                y: s.y as f32,
                heading: s.heading as f32,
                v: s.v as f32,
            });
            let (acc, rate) = table.decode::<f64>(*a).unwrap();
            s = bicycle_step(&s, acc, rate, dt, &p);
        }
        log.push(LoggedPose {
            x: s.x as f32,
            y: s.y as f32,
            heading: s.heading as f32,
            v: s.v as f32,
        });
        let rec = recover_actions(&log, dt, &table, &p);
        assert!((rec.initial_steer - 0.05).abs() < 1e-4);
        // replaying the recovered actions tracks the log
        let mut r = EgoState {
            x: log[0].x as f64,
            y: log[0].y as f64,
            heading: log[0].heading as f64,
            v: log[0].v as f64,
            steer: rec.initial_steer,
        };
        for (t, a) in rec.actions.iter().enumerate() {
            let (acc, rate) = table.decode::<f64>(*a).unwrap();
            r = bicycle_step(&r, acc, rate, dt, &p);
            assert!((r.x - log[t + 1].x as f64).abs() < 1e-2, "step {t}");
            assert!((r.y - log[t + 1].y as f64).abs() < 1e-2, "step {t}");
        }
    }
}
