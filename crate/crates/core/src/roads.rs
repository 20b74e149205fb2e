//! Route-frame geometry.
//!
//! Each route lane carries its own centerline (pointwise midpoint of the two
//! borders) parameterized by route arc length starting at the lane's
//! `valid_interval.0`. Projection picks the closest valid centerline segment
//! over all lanes; ties go to the smaller `|d|`, then the lower lane id.

use crate::error::{Error, Result};
use crate::geometry::{closest_on_segment, point_in_convex, Obb, Vec2};
use crate::num::Real;
use crate::scenario::{Directionality, FeatureKind, LightState, RoadFeature, Route};

#[derive(Clone, Debug)]
pub struct LaneFrame<R> {
    pub lane_id: u32,
    pub left: Vec<Vec2<R>>,
    pub right: Vec<Vec2<R>>,
    pub center: Vec<Vec2<R>>,
    /// Route arc length at each centerline vertex.
    pub s: Vec<R>,
    pub valid: (R, R),
}

impl<R: Real> LaneFrame<R> {
    fn segment_valid(&self, i: usize) -> bool {
        self.s[i] < self.valid.1 && self.s[i + 1] > self.valid.0
    }

    pub fn is_valid_at(&self, s: R) -> bool {
        s >= self.valid.0 && s <= self.valid.1
    }

    fn quad(&self, i: usize) -> [Vec2<R>; 4] {
        [
            self.left[i],
            self.left[i + 1],
            self.right[i + 1],
            self.right[i],
        ]
    }

    /// Centerline point at route arc length `s` (clamped to the lane).
    pub fn point_at(&self, s: R) -> Vec2<R> {
        let n = self.s.len();
        if s <= self.s[0] {
            return self.center[0];
        }
        for i in 0..n - 1 {
            if s <= self.s[i + 1] {
                let t = (s - self.s[i]) / (self.s[i + 1] - self.s[i]);
                return self.center[i].lerp(self.center[i + 1], t);
            }
        }
        self.center[n - 1]
    }
}

#[derive(Clone, Debug)]
pub struct RouteFrame<R> {
    pub lanes: Vec<LaneFrame<R>>,
    pub length: R,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteProjection<R> {
    pub s: R,
    /// Signed lateral offset from the closest lane center, left positive.
    pub d: R,
    pub lane_id: u32,
    /// Index into [`RouteFrame::lanes`].
    pub lane_index: usize,
    /// Whether the projected point lies inside the union of valid lane corridors.
    pub in_corridor: bool,
}

impl<R: Real> RouteFrame<R> {
    pub fn from_route(route: &Route) -> Result<Self> {
        if route.lanes.is_empty() {
            return Err(Error::Config("route frame needs at least one lane".into()));
        }
        let mut lanes = Vec::with_capacity(route.lanes.len());
        for lane in &route.lanes {
            let n = lane.left_border.len();
            if n < 2 || n != lane.right_border.len() {
                return Err(Error::Config(format!(
                    "lane {} borders must have equal lengths >= 2",
                    lane.lane_id
                )));
            }
            let left: Vec<Vec2<R>> = lane.left_border.iter().map(|p| p.cast()).collect();
            let right: Vec<Vec2<R>> = lane.right_border.iter().map(|p| p.cast()).collect();
            let center: Vec<Vec2<R>> = left
                .iter()
                .zip(&right)
                .map(|(l, r)| l.lerp(*r, R::lit(0.5)))
                .collect();
            let mut s = Vec::with_capacity(n);
            s.push(R::of_f32(lane.valid_interval.0));
            for i in 1..n {
                let ds = (center[i] - center[i - 1]).norm();
                if !(ds > R::zero()) {
                    return Err(Error::Config(format!(
                        "lane {} centerline arc length must strictly increase (vertex {i})",
                        lane.lane_id
                    )));
                }
                s.push(s[i - 1] + ds);
            }
            lanes.push(LaneFrame {
                lane_id: lane.lane_id,
                left,
                right,
                center,
                s,
                valid: (
                    R::of_f32(lane.valid_interval.0),
                    R::of_f32(lane.valid_interval.1),
                ),
            });
        }
        let length = lanes.iter().map(|l| l.valid.1).fold(R::zero(), R::max);
        Ok(Self { lanes, length })
    }

    /// Projects a Cartesian point into the route frame. Total: positions
    /// beyond the route clamp `s` and report `in_corridor = false`.
    pub fn project(&self, p: Vec2<R>) -> RouteProjection<R> {
        let mut best: Option<(R, R, u32, usize, R)> = None; // (dist_sq, |d|, id, lane, s) + d below
        let mut best_d = R::zero();
        for (li, lane) in self.lanes.iter().enumerate() {
            for i in 0..lane.center.len() - 1 {
                if !lane.segment_valid(i) {
                    continue;
                }
                let a = lane.center[i];
                let b = lane.center[i + 1];
                let hit = closest_on_segment(p, a, b);
                let dist = hit.dist_sq.sqrt();
                let side = (b - a).cross(p - hit.point);
                let d = if side < R::zero() { -dist } else { dist };
                let s = lane.s[i] + (lane.s[i + 1] - lane.s[i]) * hit.t;
                let s = s.max(lane.valid.0).min(lane.valid.1);
                let cand = (hit.dist_sq, dist, lane.lane_id, li, s);
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        cand.0 < cur.0
                            || (cand.0 == cur.0
                                && (cand.1 < cur.1 || (cand.1 == cur.1 && cand.2 < cur.2)))
                    }
                };
                if better {
                    best = Some(cand);
                    best_d = d;
                }
            }
        }
        let (_, _, lane_id, lane_index, s) = best.expect("route frame has a valid segment");
        RouteProjection {
            s: s.max(R::zero()).min(self.length),
            d: best_d,
            lane_id,
            lane_index,
            in_corridor: self.corridor_contains(p),
        }
    }

    /// Point containment in the union of valid lane corridors.
    pub fn corridor_contains(&self, p: Vec2<R>) -> bool {
        self.lanes.iter().any(|lane| {
            (0..lane.center.len() - 1)
                .any(|i| lane.segment_valid(i) && point_in_convex(&lane.quad(i), p))
        })
    }

    /// True iff every corner of `footprint` lies inside a valid lane corridor.
    pub fn footprint_on_route(&self, footprint: &Obb<R>) -> bool {
        footprint
            .corners()
            .iter()
            .all(|&c| self.corridor_contains(c))
    }

    /// Whether any lane is valid at route position `s`.
    pub fn lanes_valid_at(&self, s: R) -> impl Iterator<Item = &LaneFrame<R>> + '_ {
        self.lanes.iter().filter(move |l| l.is_valid_at(s))
    }
}

/// Signed progress between two projections from the same frame.
pub fn progress_delta<R: Real>(prev: &RouteProjection<R>, cur: &RouteProjection<R>) -> R {
    cur.s - prev.s
}

/// Ego footprint used for the off-route check: `dims` grown by `margin` per side.
pub fn footprint_on_route<R: Real>(frame: &RouteFrame<R>, ego_box: &Obb<R>, margin: R) -> bool {
    frame.footprint_on_route(&ego_box.inflated(margin))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeaturePoint<R> {
    pub point: Vec2<R>,
    pub kind: FeatureKind,
    pub directionality: Directionality,
    pub dist: R,
    pub valid: bool,
}

impl<R: Real> FeaturePoint<R> {
    pub fn invalid() -> Self {
        Self {
            point: Vec2::zero(),
            kind: FeatureKind::LaneMarking,
            directionality: Directionality::None,
            dist: R::zero(),
            valid: false,
        }
    }
}

/// The `k` nearest feature points within `radius`, sorted by distance (ties by
/// feature then point index), padded to length `k` with invalid entries.
pub fn nearest_features<R: Real>(
    pos: Vec2<R>,
    features: &[RoadFeature],
    k: usize,
    radius: R,
) -> Vec<FeaturePoint<R>> {
    let r2 = radius * radius;
    let mut cands: Vec<(R, usize, usize)> = Vec::new();
    for (fi, f) in features.iter().enumerate() {
        for (pi, p) in f.points.iter().enumerate() {
            let d2 = (p.cast::<R>() - pos).norm_sq();
            if d2 <= r2 {
                cands.push((d2, fi, pi));
            }
        }
    }
    let cmp = |a: &(R, usize, usize), b: &(R, usize, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    };
    if cands.len() > k && k > 0 {
        cands.select_nth_unstable_by(k - 1, cmp);
        cands.truncate(k);
    }
    cands.sort_unstable_by(cmp);
    let mut out: Vec<FeaturePoint<R>> = cands
        .into_iter()
        .take(k)
        .map(|(d2, fi, pi)| {
            let f = &features[fi];
            FeaturePoint {
                point: f.points[pi].cast(),
                kind: f.kind,
                directionality: f.directionality,
                dist: d2.sqrt(),
                valid: true,
            }
        })
        .collect();
    out.resize(k, FeaturePoint::invalid());
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoutePoint<R> {
    pub point: Vec2<R>,
    pub is_left: bool,
    /// The owning lane is valid at the query's route position.
    pub lane_valid: bool,
    pub valid: bool,
}

/// The `k` nearest route border points within `radius` of `pos`, padded.
pub fn nearest_route_points<R: Real>(
    frame: &RouteFrame<R>,
    pos: Vec2<R>,
    s_now: R,
    k: usize,
    radius: R,
) -> Vec<RoutePoint<R>> {
    let r2 = radius * radius;
    let mut cands: Vec<(R, usize, usize, bool)> = Vec::new();
    for (li, lane) in frame.lanes.iter().enumerate() {
        for (side, pts) in [(true, &lane.left), (false, &lane.right)] {
            for (pi, p) in pts.iter().enumerate() {
                let d2 = (*p - pos).norm_sq();
                if d2 <= r2 {
                    cands.push((d2, li, pi, side));
                }
            }
        }
    }
    let cmp = |a: &(R, usize, usize, bool), b: &(R, usize, usize, bool)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(b.3.cmp(&a.3))
            .then(a.2.cmp(&b.2))
    };
    if cands.len() > k && k > 0 {
        cands.select_nth_unstable_by(k - 1, cmp);
        cands.truncate(k);
    }
    cands.sort_unstable_by(cmp);
    let invalid = RoutePoint {
        point: Vec2::zero(),
        is_left: false,
        lane_valid: false,
        valid: false,
    };
    let mut out: Vec<RoutePoint<R>> = cands
        .into_iter()
        .take(k)
        .map(|(_, li, pi, left)| {
            let lane = &frame.lanes[li];
            RoutePoint {
                point: if left { lane.left[pi] } else { lane.right[pi] },
                is_left: left,
                lane_valid: lane.is_valid_at(s_now),
                valid: true,
            }
        })
        .collect();
    out.resize(k, invalid);
    out
}

/// A stop line or signal stop point located on the route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopTarget<R> {
    pub s: R,
    /// Signal index into the scenario's traffic lights; `None` for stop lines.
    pub signal: Option<usize>,
}

/// Projects the scenario's stop lines and signal stop points onto the route,
/// keeping only those that fall inside the route corridor.
pub fn stop_targets<R: Real>(
    frame: &RouteFrame<R>,
    stop_lines: &[crate::scenario::StopLine],
    signals: &[crate::scenario::TrafficSignal],
) -> (Vec<R>, Vec<StopTarget<R>>) {
    let mut lines: Vec<R> = stop_lines
        .iter()
        .map(|l| frame.project(l.position.cast()))
        .filter(|p| p.in_corridor)
        .map(|p| p.s)
        .collect();
    lines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lights = signals
        .iter()
        .enumerate()
        .filter_map(|(k, sig)| {
            let p = frame.project(sig.stop_point.cast());
            p.in_corridor.then_some(StopTarget {
                s: p.s,
                signal: Some(k),
            })
        })
        .collect();
    (lines, lights)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopInfo<R> {
    pub stop_line_distance: Option<R>,
    pub light: LightState,
    pub light_distance: Option<R>,
}

/// Nearest stop line and signal strictly ahead of route position `s`.
/// `light_states[k]` is the state of signal `k` at the query step.
pub fn stop_info<R: Real>(
    s: R,
    stop_line_s: &[R],
    lights: &[StopTarget<R>],
    light_states: &[LightState],
) -> StopInfo<R> {
    let stop_line_distance = stop_line_s
        .iter()
        .filter(|&&ls| ls > s)
        .map(|&ls| ls - s)
        .fold(None, |acc: Option<R>, d| Some(acc.map_or(d, |a| a.min(d))));
    let mut best: Option<(R, LightState)> = None;
    for l in lights {
        if l.s > s {
            let d = l.s - s;
            if best.map_or(true, |(bd, _)| d < bd) {
                let st = l
                    .signal
                    .and_then(|k| light_states.get(k).copied())
                    .unwrap_or(LightState::Unknown);
                best = Some((d, st));
            }
        }
    }
    StopInfo {
        stop_line_distance,
        light: best.map_or(LightState::Unknown, |b| b.1),
        light_distance: best.map(|b| b.0),
    }
}
