//! Scenario data model, container file format and padded batches.
//!
//! A [`Scenario`] is one recorded traffic log: the ego vehicle's logged poses,
//! the other agents' poses (with a per-step validity flag), the planned route
//! as left/right lane borders, road-network annotations, traffic signals and
//! stop lines. Everything is stored in `f32`, which is also the on-disk
//! precision, so a write/read round trip is value-identical.

mod batch;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

use crate::geometry::{closest_on_segment, segments_intersect, Vec2};

pub use batch::{BatchIter, ScenarioBatch};
pub use io::{
    load_batch, read_scenario_file, read_scenarios_json, write_scenario_file, write_scenarios_json,
    ScenarioFile, FORMAT_VERSION, MAGIC,
};
pub use synth::{generate_one, generate_synthetic, replay_check, GeneratorConfig};

pub type Point = Vec2<f32>;

/// Default simulation step in seconds.
pub const DEFAULT_DT: f64 = 0.1;
/// Default padded horizon in steps (40 s at the default step).
pub const DEFAULT_HORIZON: usize = 400;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoggedPose {
    pub x: f32,
    pub y: f32,
    pub heading: f32,
    pub v: f32,
}

impl LoggedPose {
    pub fn position(&self) -> Point {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedAgent {
    pub id: u32,
    pub length: f32,
    pub width: f32,
    pub poses: Vec<LoggedPose>,
    /// Absence is a flag, never a missing entry.
    pub valid: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteLane {
    pub lane_id: u32,
    pub left_border: Vec<Point>,
    pub right_border: Vec<Point>,
    /// Route arc-length interval `(start, end)` in meters. The lane's own
    /// centerline arc length is offset by `start`.
    pub valid_interval: (f32, f32),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub lanes: Vec<RouteLane>,
}

impl Route {
    pub fn length(&self) -> f32 {
        self.lanes
            .iter()
            .map(|l| l.valid_interval.1)
            .fold(0.0, f32::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    LaneMarking,
    Crosswalk,
    StopLine,
    BikeLaneBoundary,
    RoadEdge,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::LaneMarking,
        FeatureKind::Crosswalk,
        FeatureKind::StopLine,
        FeatureKind::BikeLaneBoundary,
        FeatureKind::RoadEdge,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directionality {
    None,
    Forward,
    Backward,
    Both,
}

impl Directionality {
    pub const ALL: [Directionality; 4] = [
        Directionality::None,
        Directionality::Forward,
        Directionality::Backward,
        Directionality::Both,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadFeature {
    pub points: Vec<Point>,
    pub kind: FeatureKind,
    pub directionality: Directionality,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightState {
    Red,
    Yellow,
    Green,
    #[default]
    Unknown,
}

impl LightState {
    pub const ALL: [LightState; 4] = [
        LightState::Red,
        LightState::Yellow,
        LightState::Green,
        LightState::Unknown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSignal {
    pub id: u32,
    pub stop_point: Point,
    /// One state per step.
    pub states: Vec<LightState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    pub points: Vec<Point>,
    pub position: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub num_steps: usize,
    pub dt: f64,
    pub ego_log: Vec<LoggedPose>,
    pub agents: Vec<LoggedAgent>,
    pub route: Route,
    pub road_features: Vec<RoadFeature>,
    pub traffic_lights: Vec<TrafficSignal>,
    pub stop_lines: Vec<StopLine>,
    pub speed_limit: f32,
    pub goal: Point,
}

impl Scenario {
    /// Checks the structural invariants, naming the first one violated.
    pub fn validate(&self) -> Result<(), String> {
        if self.num_steps < 2 {
            return Err(format!("num_steps >= 2 (got {})", self.num_steps));
        }
        if !(self.dt > 0.0) {
            return Err(format!("dt > 0 (got {})", self.dt));
        }
        if self.ego_log.len() != self.num_steps {
            return Err(format!(
                "ego_log has num_steps entries (got {} for {})",
                self.ego_log.len(),
                self.num_steps
            ));
        }
        if self.ego_log.iter().any(|p| !finite_pose(p)) {
            return Err("ego_log entries finite".into());
        }
        for a in &self.agents {
            if !(a.length > 0.0 && a.width > 0.0) {
                return Err(format!("agent {} dims > 0", a.id));
            }
            if a.poses.len() != self.num_steps || a.valid.len() != self.num_steps {
                return Err(format!("agent {} pose array has num_steps entries", a.id));
            }
            if a.poses.iter().any(|p| !finite_pose(p)) {
                return Err(format!("agent {} poses finite", a.id));
            }
        }
        for s in &self.traffic_lights {
            if s.states.len() != self.num_steps {
                return Err(format!("signal {} has num_steps states", s.id));
            }
        }
        for (i, f) in self.road_features.iter().enumerate() {
            if f.points.len() < 2 {
                return Err(format!("road feature {i} has >= 2 points"));
            }
        }
        for (i, l) in self.stop_lines.iter().enumerate() {
            if l.points.len() < 2 {
                return Err(format!("stop line {i} has >= 2 points"));
            }
        }
        if !(self.speed_limit > 0.0) {
            return Err("speed_limit > 0".into());
        }
        validate_route(&self.route)?;
        let (dist, width) = route_envelope_distance(&self.route, self.goal);
        if dist > width {
            return Err(format!(
                "goal within one route width of the route (distance {dist:.2} m, width {width:.2} m)"
            ));
        }
        Ok(())
    }

    /// Logged final position.
    pub fn final_pose(&self) -> LoggedPose {
        self.ego_log[self.num_steps - 1]
    }
}

fn finite_pose(p: &LoggedPose) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.heading.is_finite() && p.v.is_finite()
}

fn validate_route(route: &Route) -> Result<(), String> {
    if route.lanes.is_empty() {
        return Err("route has at least one lane".into());
    }
    for lane in &route.lanes {
        let id = lane.lane_id;
        if lane.left_border.len() < 2 || lane.right_border.len() < 2 {
            return Err(format!("lane {id} borders have >= 2 points"));
        }
        if lane.left_border.len() != lane.right_border.len() {
            return Err(format!("lane {id} borders have equal point counts"));
        }
        let (a, b) = lane.valid_interval;
        if !(a >= 0.0 && b > a) {
            return Err(format!(
                "lane {id} valid interval is nonempty and nonnegative"
            ));
        }
        let l = &lane.left_border;
        let r = &lane.right_border;
        for i in 0..l.len() - 1 {
            for j in 0..r.len() - 1 {
                if segments_intersect(l[i], l[i + 1], r[j], r[j + 1]) {
                    return Err(format!("lane {id} left and right borders do not intersect"));
                }
            }
        }
    }
    let mut intervals: Vec<(f32, f32)> = route.lanes.iter().map(|l| l.valid_interval).collect();
    intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut covered = 0.0f32;
    for (a, b) in intervals {
        if a > covered {
            return Err(format!(
                "some lane is valid at every route position (gap at s={covered})"
            ));
        }
        covered = covered.max(b);
    }
    Ok(())
}

/// Distance from `p` to the nearest lane centerline and that lane's width there.
fn route_envelope_distance(route: &Route, p: Point) -> (f32, f32) {
    let mut best = (f32::INFINITY, 0.0f32);
    for lane in &route.lanes {
        let n = lane.left_border.len().min(lane.right_border.len());
        let center: Vec<Point> = (0..n)
            .map(|i| lane.left_border[i].lerp(lane.right_border[i], 0.5))
            .collect();
        for i in 0..n.saturating_sub(1) {
            let h = closest_on_segment(p, center[i], center[i + 1]);
            let d = h.dist_sq.sqrt();
            if d < best.0 {
                let wl = (lane.left_border[i] - lane.right_border[i]).norm();
                let wr = (lane.left_border[i + 1] - lane.right_border[i + 1]).norm();
                best = (d, wl.max(wr));
            }
        }
    }
    best
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// A straight lane along +x of the given length and width.
    pub fn straight_lane(id: u32, y_center: f32, length: f32, width: f32, step: f32) -> RouteLane {
        let n = (length / step).round() as usize + 1;
        let xs: Vec<f32> = (0..n).map(|i| i as f32 * length / (n - 1) as f32).collect();
        RouteLane {
            lane_id: id,
            left_border: xs
                .iter()
                .map(|&x| Vec2::new(x, y_center + width / 2.0))
                .collect(),
            right_border: xs
                .iter()
                .map(|&x| Vec2::new(x, y_center - width / 2.0))
                .collect(),
            valid_interval: (0.0, length),
        }
    }

    pub fn straight_scenario(num_steps: usize, v: f32) -> Scenario {
        let dt = DEFAULT_DT;
        let ego_log = (0..num_steps)
            .map(|t| LoggedPose {
                x: 5.0 + v * t as f32 * dt as f32,
                y: 0.0,
                heading: 0.0,
                v,
            })
            .collect();
        Scenario {
            id: "straight".into(),
            num_steps,
            dt,
            ego_log,
            agents: vec![],
            route: Route {
                lanes: vec![straight_lane(0, 0.0, 200.0, 3.5, 5.0)],
            },
            road_features: vec![],
            traffic_lights: vec![],
            stop_lines: vec![],
            speed_limit: 13.0,
            goal: Vec2::new(190.0, 0.0),
        }
    }
}
