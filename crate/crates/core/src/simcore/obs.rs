//! Fixed-shape observation extraction in the ego frame.

use crate::geometry::{Obb, Vec2};
use crate::num::{wrap_angle, Real};
use crate::roads::{nearest_features, nearest_route_points, stop_info};
use crate::scenario::{Directionality, FeatureKind, LightState};

use super::{ego_box, Env, SimStateBatch};

/// `v, steer, stop-line distance, light one-hot (red, yellow, green, unknown), light distance, speed limit`
pub const ACTIVE_DIM: usize = 9;
/// `x, y, cos(rel heading), sin(rel heading), speed, min box distance`
pub const AGENT_DIM: usize = 6;
/// `x, y, kind one-hot (5), directionality one-hot (4)`
pub const ROAD_DIM: usize = 11;
/// `x, y, is-left-border, lane-valid`
pub const ROUTE_DIM: usize = 4;
/// `distance to goal along the route, remaining steps`
pub const VALUE_DIM: usize = 2;

/// Inputs available to the policy. Value-only inputs live in a separate type.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyObservations<R> {
    pub batch: usize,
    pub max_agents: usize,
    pub max_road: usize,
    pub max_route: usize,
    /// `[b * ACTIVE_DIM + f]`
    pub active: Vec<R>,
    /// `[(b * max_agents + i) * AGENT_DIM + f]`
    pub agents: Vec<R>,
    pub agent_valid: Vec<u8>,
    pub road: Vec<R>,
    pub road_valid: Vec<u8>,
    pub route: Vec<R>,
    pub route_valid: Vec<u8>,
    /// 0 for rows that are done or past their last logged step.
    pub row_valid: Vec<u8>,
}

/// Inputs reserved for the value head.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueObservations<R> {
    /// `[b * VALUE_DIM + f]`
    pub features: Vec<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBatch<R> {
    pub policy: PolicyObservations<R>,
    pub value_only: ValueObservations<R>,
}

impl<R: Real> ObservationBatch<R> {
    pub fn zeros(batch: usize, max_agents: usize, max_road: usize, max_route: usize) -> Self {
        Self {
            policy: PolicyObservations {
                batch,
                max_agents,
                max_road,
                max_route,
                active: vec![R::zero(); batch * ACTIVE_DIM],
                agents: vec![R::zero(); batch * max_agents * AGENT_DIM],
                agent_valid: vec![0; batch * max_agents],
                road: vec![R::zero(); batch * max_road * ROAD_DIM],
                road_valid: vec![0; batch * max_road],
                route: vec![R::zero(); batch * max_route * ROUTE_DIM],
                route_valid: vec![0; batch * max_route],
                row_valid: vec![0; batch],
            },
            value_only: ValueObservations {
                features: vec![R::zero(); batch * VALUE_DIM],
            },
        }
    }

    pub fn batch(&self) -> usize {
        self.policy.batch
    }

    /// Copies row `src_row` of `src` into row `dst_row` of `self`. Shapes must agree.
    pub fn copy_row_from(&mut self, dst_row: usize, src: &Self, src_row: usize) {
        fn cp<T: Copy>(dst: &mut [T], src: &[T], width: usize, d: usize, s: usize) {
            dst[d * width..(d + 1) * width].copy_from_slice(&src[s * width..(s + 1) * width]);
        }
        let (p, q) = (&mut self.policy, &src.policy);
        cp(&mut p.active, &q.active, ACTIVE_DIM, dst_row, src_row);
        cp(
            &mut p.agents,
            &q.agents,
            p.max_agents * AGENT_DIM,
            dst_row,
            src_row,
        );
        cp(
            &mut p.agent_valid,
            &q.agent_valid,
            p.max_agents,
            dst_row,
            src_row,
        );
        cp(
            &mut p.road,
            &q.road,
            p.max_road * ROAD_DIM,
            dst_row,
            src_row,
        );
        cp(
            &mut p.road_valid,
            &q.road_valid,
            p.max_road,
            dst_row,
            src_row,
        );
        cp(
            &mut p.route,
            &q.route,
            p.max_route * ROUTE_DIM,
            dst_row,
            src_row,
        );
        cp(
            &mut p.route_valid,
            &q.route_valid,
            p.max_route,
            dst_row,
            src_row,
        );
        cp(&mut p.row_valid, &q.row_valid, 1, dst_row, src_row);
        cp(
            &mut self.value_only.features,
            &src.value_only.features,
            VALUE_DIM,
            dst_row,
            src_row,
        );
    }

    /// Row `b` as a single-row batch.
    pub fn row(&self, b: usize) -> Self {
        let p = &self.policy;
        let mut out = Self::zeros(1, p.max_agents, p.max_road, p.max_route);
        out.copy_row_from(0, self, b);
        out
    }
}

struct EgoFrame<R> {
    origin: Vec2<R>,
    cos: R,
    sin: R,
}

impl<R: Real> EgoFrame<R> {
    fn to_local(&self, p: Vec2<R>) -> Vec2<R> {
        (p - self.origin).rotate_cs(self.cos, -self.sin)
    }
}

fn one_hot<R: Real>(out: &mut [R], idx: usize) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i == idx { R::one() } else { R::zero() };
    }
}

/// Observations for every row. Done rows and rows past their log are zero
/// with validity 0; a row at its last logged step is still observed so its
/// value can bootstrap the truncated return.
pub fn extract_observations<R: Real>(
    env: &Env<R>,
    state: &SimStateBatch<R>,
) -> ObservationBatch<R> {
    let cfg = &env.config.obs;
    let n = env.len();
    let mut obs =
        ObservationBatch::zeros(n, cfg.max_agents, cfg.max_road_points, cfg.max_route_points);
    for b in 0..n {
        if state.done[b] || state.t[b] > env.transitions(b) {
            continue;
        }
        fill_row(env, state, b, &mut obs);
    }
    obs
}

fn fill_row<R: Real>(
    env: &Env<R>,
    state: &SimStateBatch<R>,
    b: usize,
    obs: &mut ObservationBatch<R>,
) {
    let cfg = &env.config;
    let oc = &cfg.obs;
    let batch = &env.batch;
    let row = &env.rows[b];
    let scenario = &batch.scenarios[b];
    let t = state.t[b];
    let ego = state.ego(b);
    let heading = ego.heading;
    let (sin, cos) = heading.sin_cos();
    let frame = EgoFrame {
        origin: Vec2::new(ego.x, ego.y),
        cos,
        sin,
    };
    let p = &mut obs.policy;
    p.row_valid[b] = 1;

    // active agent
    let lights: Vec<LightState> = (0..batch.max_signals)
        .map(|k| batch.light_at(b, t, k))
        .collect();
    let s_front = state.s[b] + R::lit(cfg.vehicle.front_offset());
    let info = stop_info(s_front, &row.stop_line_s, &row.lights, &lights);
    let range = R::lit(oc.stop_range);
    let a = &mut p.active[b * ACTIVE_DIM..(b + 1) * ACTIVE_DIM];
    a[0] = ego.v;
    a[1] = ego.steer;
    a[2] = info.stop_line_distance.map_or(range, |d| d.min(range));
    one_hot(&mut a[3..7], info.light.index());
    a[7] = info.light_distance.map_or(range, |d| d.min(range));
    a[8] = row.speed_limit;

    // other agents, nearest by box distance
    let ebox = ego_box(&ego, &cfg.vehicle);
    let radius = R::lit(oc.agent_radius);
    let mut near: Vec<(R, usize, Obb<R>, R)> = Vec::new();
    for ai in 0..batch.max_agents {
        if let Some((pose, l, w)) = batch.agent_at(b, t, ai) {
            let abox = Obb::new(
                Vec2::new(R::of_f32(pose.x), R::of_f32(pose.y)),
                R::of_f32(pose.heading),
                R::of_f32(l),
                R::of_f32(w),
            );
            let d = ebox.distance(&abox);
            if d <= radius {
                near.push((d, ai, abox, R::of_f32(pose.v)));
            }
        }
    }
    near.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    for (slot, (d, _, abox, speed)) in near.into_iter().take(oc.max_agents).enumerate() {
        let rel = frame.to_local(abox.center);
        let dh = wrap_angle(abox.heading - heading);
        let f = &mut p.agents[(b * oc.max_agents + slot) * AGENT_DIM..][..AGENT_DIM];
        f[0] = rel.x;
        f[1] = rel.y;
        f[2] = dh.cos();
        f[3] = dh.sin();
        f[4] = speed;
        f[5] = d;
        p.agent_valid[b * oc.max_agents + slot] = 1;
    }

    let anchor = frame.origin + Vec2::new(cos, sin) * R::lit(oc.anchor_ahead);

    // road network
    let feats = nearest_features(
        anchor,
        &scenario.road_features,
        oc.max_road_points,
        R::lit(oc.road_radius),
    );
    for (slot, fp) in feats.iter().enumerate() {
        if !fp.valid {
            break;
        }
        let rel = frame.to_local(fp.point);
        let f = &mut p.road[(b * oc.max_road_points + slot) * ROAD_DIM..][..ROAD_DIM];
        f[0] = rel.x;
        f[1] = rel.y;
        one_hot(&mut f[2..2 + FeatureKind::ALL.len()], fp.kind.index());
        one_hot(
            &mut f[7..7 + Directionality::ALL.len()],
            fp.directionality.index(),
        );
        p.road_valid[b * oc.max_road_points + slot] = 1;
    }

    // route borders
    let pts = nearest_route_points(
        &row.frame,
        anchor,
        state.s[b],
        oc.max_route_points,
        R::lit(oc.route_radius),
    );
    for (slot, rp) in pts.iter().enumerate() {
        if !rp.valid {
            break;
        }
        let rel = frame.to_local(rp.point);
        let f = &mut p.route[(b * oc.max_route_points + slot) * ROUTE_DIM..][..ROUTE_DIM];
        f[0] = rel.x;
        f[1] = rel.y;
        f[2] = if rp.is_left { R::one() } else { R::zero() };
        f[3] = if rp.lane_valid { R::one() } else { R::zero() };
        p.route_valid[b * oc.max_route_points + slot] = 1;
    }

    // value-only
    let v = &mut obs.value_only.features[b * VALUE_DIM..(b + 1) * VALUE_DIM];
    v[0] = row.goal_s - state.s[b];
    v[1] = R::of_usize(env.transitions(b) - t);
}
