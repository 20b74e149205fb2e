//! Synthetic scenario generator.
//!
//! Three road layouts: a straight two-lane road, a single-lane curve, and a
//! signalized four-way junction where the ego turns right. The logged ego is
//! produced by a feedback driver that picks discrete actions from the action
//! table and integrates the same bicycle model the simulator uses, with short
//! random perturbation bursts so the log contains recoveries. Every scenario
//! is replayed through the simulator before it is accepted.

use std::path::Path as FsPath;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::dynamics::{bicycle_step, Action, EgoState};
use crate::error::{Error, Result};
use crate::num::wrap_angle;
use crate::simcore::{rollout, DoneMode, Env, LogReplayPolicy, SimConfig};

type V = Vec2<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub count: usize,
    pub num_steps: usize,
    pub dt: f64,
    pub straight_weight: f64,
    pub curve_weight: f64,
    pub junction_weight: f64,
    /// Other vehicles per 100 m of lane that carries traffic. Zero disables
    /// every other agent, including lead and crossing vehicles.
    pub density: f64,
    /// Probability of a slower lead vehicle in the ego lane (straight and curve).
    pub lead_probability: f64,
    /// Probability of a stop sign on straight roads.
    pub stop_sign_probability: f64,
    pub lane_width: f64,
    pub speed_limit_min: f64,
    pub speed_limit_max: f64,
    /// Per-step probability that the logged driver starts a perturbation burst.
    pub driver_noise: f64,
    /// Attempts per scenario before generation fails.
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            count: 200,
            num_steps: 100,
            dt: DEFAULT_DT,
            straight_weight: 1.0,
            curve_weight: 1.0,
            junction_weight: 1.0,
            density: 1.0,
            lead_probability: 0.5,
            stop_sign_probability: 0.3,
            lane_width: 4.0,
            speed_limit_min: 10.0,
            speed_limit_max: 15.0,
            driver_noise: 0.03,
            max_attempts: 50,
        }
    }
}

/// Spacing between vehicle starting slots on a traffic lane.
const SLOT_SPACING: f64 = 10.0;
/// Agents farther than this from the logged ego are flagged invalid.
const SENSOR_RANGE: f64 = 80.0;
const MAX_LATERAL_ACCEL: f64 = 2.5;
const COMFORT_DECEL: f64 = 1.5;

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.count == 0 {
            return bad("count must be positive");
        }
        if self.num_steps < 2 {
            return bad("num_steps must be at least 2");
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return bad("dt must be in (0, 1]");
        }
        let w = [
            self.straight_weight,
            self.curve_weight,
            self.junction_weight,
        ];
        if w.iter().any(|&x| !(x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return bad("topology weights must be non-negative with a positive sum");
        }
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return bad("density must be non-negative");
        }
        for (name, p) in [
            ("lead_probability", self.lead_probability),
            ("stop_sign_probability", self.stop_sign_probability),
            ("driver_noise", self.driver_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if !(3.0..=6.0).contains(&self.lane_width) {
            return bad("lane_width must be in [3, 6] m");
        }
        if !(self.speed_limit_min >= 5.0
            && self.speed_limit_max >= self.speed_limit_min
            && self.speed_limit_max <= 30.0)
        {
            return bad("speed limits must satisfy 5 <= min <= max <= 30");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        let cap = 100.0 / SLOT_SPACING;
        if self.density > cap {
            return Err(Error::Config(format!(
                "density {} exceeds {cap} vehicles per 100 m: agents cannot be placed without initial overlap",
                self.density
            )));
        }
        Ok(())
    }

    fn duration(&self) -> f64 {
        (self.num_steps - 1) as f64 * self.dt
    }
}

/// Generates `config.count` validated scenarios, deterministic in `seed`.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<Vec<Scenario>> {
    config.validate()?;
    let sim = SimConfig::default();
    (0..config.count)
        .map(|i| generate_one(config, &sim, seed, i))
        .collect()
}

/// Scenario `index` of the stream identified by `seed`.
pub fn generate_one(
    config: &GeneratorConfig,
    sim: &SimConfig,
    seed: u64,
    index: usize,
) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut last = String::new();
    for attempt in 0..config.max_attempts {
        let sc = build(config, sim, &mut rng, format!("syn-{seed}-{index:05}"))?;
        match replay_check(&sc, sim) {
            Ok(()) => return Ok(sc),
            Err(why) => last = format!("attempt {attempt}: {why}"),
        }
    }
    Err(Error::Domain(format!(
        "scenario {index}: no valid scenario after {} attempts ({last})",
        config.max_attempts
    )))
}

/// Replays the logged ego through the simulator with done signals disabled and
/// requires no events and a relative progress of one.
pub fn replay_check(sc: &Scenario, sim: &SimConfig) -> std::result::Result<(), String> {
    sc.validate()?;
    let cfg = SimConfig {
        mode: DoneMode::EvalNoDones,
        ..sim.clone()
    };
    let batch = ScenarioBatch::new(vec![sc.clone()], sc.num_steps).map_err(|e| e.to_string())?;
    let env = Env::<f64>::new(cfg, Arc::new(batch)).map_err(|e| e.to_string())?;
    let ep = rollout(&env, &LogReplayPolicy, 0, false).map_err(|e| e.to_string())?;
    let events = ep.latched_events(0);
    if events != 0 {
        return Err(format!("replay raised event flags {events:#07b}"));
    }
    let row = &env.rows[0];
    let logged = row.logged_end_s - row.logged_start_s;
    if logged <= 0.1 {
        return Err("logged ego barely moves".into());
    }
    let got = ep.s[ep.steps] - ep.s[0];
    let ratio = got / logged;
    if (ratio - 1.0).abs() > 1e-6 {
        return Err(format!("replay progress ratio {ratio}"));
    }
    Ok(())
}

// ---------------------------------------------------------------- paths

#[derive(Clone, Copy, Debug)]
enum Piece {
    Straight(f64),
    /// Positive angle turns left.
    Arc {
        radius: f64,
        angle: f64,
    },
}

/// Arc-length parameterized polyline sampled at a uniform step.
#[derive(Clone, Debug)]
struct Path {
    step: f64,
    pts: Vec<V>,
    heading: Vec<f64>,
    curvature: Vec<f64>,
}

const PATH_STEP: f64 = 0.25;

impl Path {
    fn from_pieces(start: V, heading: f64, pieces: &[Piece]) -> Self {
        let mut pts = vec![start];
        let mut hs = vec![heading];
        let mut ks = vec![0.0];
        let (mut p, mut h) = (start, heading);
        for piece in pieces {
            let (len, k) = match *piece {
                Piece::Straight(l) => (l, 0.0),
                Piece::Arc { radius, angle } => (radius * angle.abs(), angle.signum() / radius),
            };
            let n = (len / PATH_STEP).round().max(1.0) as usize;
            let du = len / n as f64;
            let (p0, h0) = (p, h);
            for i in 1..=n {
                let u = du * i as f64;
                let hi = h0 + k * u;
                p = if k == 0.0 {
                    p0 + V::from_angle(h0) * u
                } else {
                    p0 + V::new(hi.sin() - h0.sin(), h0.cos() - hi.cos()) * (1.0 / k)
                };
                h = hi;
                pts.push(p);
                hs.push(h);
                ks.push(k);
            }
        }
        Self::resample(&pts, Some((&hs, &ks)))
    }

    /// Resamples a polyline to the uniform step. Headings and curvatures are
    /// derived from the points unless given per input point.
    fn resample(pts: &[V], given: Option<(&[f64], &[f64])>) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
        }
        let total = *cum.last().unwrap();
        let n = (total / PATH_STEP).floor() as usize + 1;
        let mut out = Vec::with_capacity(n);
        let mut j = 0;
        let mut given_h = Vec::new();
        let mut given_k = Vec::new();
        for i in 0..n {
            let s = i as f64 * PATH_STEP;
            while j + 2 < cum.len() && cum[j + 1] < s {
                j += 1;
            }
            let seg = (cum[j + 1] - cum[j]).max(1e-12);
            let t = ((s - cum[j]) / seg).clamp(0.0, 1.0);
            out.push(pts[j].lerp(pts[j + 1], t));
            if let Some((h, k)) = given {
                given_h.push(h[j] + (h[j + 1] - h[j]) * t);
                given_k.push(if t < 0.5 { k[j] } else { k[j + 1] });
            }
        }
        let (heading, curvature) = if given.is_some() {
            (given_h, given_k)
        } else {
            let mut hs: Vec<f64> = (0..n)
                .map(|i| {
                    let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
                    let d = out[b] - out[a];
                    d.y.atan2(d.x)
                })
                .collect();
            for i in 1..n {
                hs[i] = hs[i - 1] + wrap_angle(hs[i] - hs[i - 1]);
            }
            let ks = (0..n)
                .map(|i| {
                    let (a, b) = if i + 1 < n {
                        (i, i + 1)
                    } else {
                        (i.saturating_sub(1), i)
                    };
                    if a == b {
                        0.0
                    } else {
                        (hs[b] - hs[a]) / PATH_STEP
                    }
                })
                .collect();
            (hs, ks)
        };
        Self {
            step: PATH_STEP,
            pts: out,
            heading,
            curvature,
        }
    }

    fn length(&self) -> f64 {
        (self.pts.len() - 1) as f64 * self.step
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let x = (s / self.step).clamp(0.0, (self.pts.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.pts.len() - 2);
        (i, x - i as f64)
    }

    fn heading(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        self.heading[i] + (self.heading[i + 1] - self.heading[i]) * t
    }

    fn curvature(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        self.curvature[if t < 0.5 { i } else { i + 1 }]
    }

    /// Point at arc length `s`, extrapolated along the end tangents outside the path.
    fn point(&self, s: f64) -> V {
        if s < 0.0 {
            return self.pts[0] + V::from_angle(self.heading[0]) * s;
        }
        let len = self.length();
        if s > len {
            return *self.pts.last().unwrap()
                + V::from_angle(*self.heading.last().unwrap()) * (s - len);
        }
        let (i, t) = self.locate(s);
        self.pts[i].lerp(self.pts[i + 1], t)
    }

    /// Point offset to the left of the path by `offset`.
    fn offset_point(&self, s: f64, offset: f64) -> V {
        self.point(s) + V::from_angle(self.heading(s)).perp() * offset
    }

    fn offset_polyline(&self, s0: f64, s1: f64, offset: f64, spacing: f64) -> Vec<V> {
        let n = ((s1 - s0) / spacing).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| self.offset_point(s0 + (s1 - s0) * i as f64 / n as f64, offset))
            .collect()
    }

    /// The offset polyline traversed backwards, as a new path.
    fn reversed_offset(&self, offset: f64) -> Path {
        let mut pts = self.offset_polyline(0.0, self.length(), offset, 1.0);
        pts.reverse();
        Path::resample(&pts, None)
    }

    /// Arc length and signed lateral offset (left positive) of `p`, searching
    /// the window `[hint - back, hint + fwd]`.
    fn project(&self, p: V, hint: f64, back: f64, fwd: f64) -> (f64, f64) {
        let last = self.pts.len() - 2;
        let lo = (((hint - back) / self.step).floor().max(0.0) as usize).min(last);
        let hi = (((hint + fwd) / self.step).ceil().max(0.0) as usize).min(last);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in lo..=hi {
            let h = crate::geometry::closest_on_segment(p, self.pts[i], self.pts[i + 1]);
            if h.dist_sq < best.0 {
                let side = (self.pts[i + 1] - self.pts[i]).cross(p - h.point).signum();
                best = (
                    h.dist_sq,
                    (i as f64 + h.t) * self.step,
                    side * h.dist_sq.sqrt(),
                );
            }
        }
        (best.1, best.2)
    }
}

fn to_f32(p: V) -> Point {
    Vec2::new(p.x as f32, p.y as f32)
}

fn feature(pts: Vec<V>, kind: FeatureKind, directionality: Directionality) -> RoadFeature {
    RoadFeature {
        points: pts.into_iter().map(to_f32).collect(),
        kind,
        directionality,
    }
}

// ---------------------------------------------------------------- scene

#[derive(Clone, Copy, Debug, PartialEq)]
enum Topology {
    Straight,
    Curve,
    Junction,
}

/// Vehicle moving along a path with its arc length given per step.
struct Track {
    path: usize,
    s: Vec<f64>,
    length: f64,
    width: f64,
}

struct RouteSpec {
    lane_id: u32,
    offset: f64,
    width: f64,
    s0: f64,
    s1: f64,
}

struct Scene {
    /// `paths[0]` is the ego reference path.
    paths: Vec<Path>,
    route: Vec<RouteSpec>,
    features: Vec<RoadFeature>,
    /// Paths carrying density traffic, with the usable start range.
    traffic_lanes: Vec<(usize, f64, f64)>,
    stop_sign: Option<f64>,
    /// Ego signal stop point (arc length on the ego path) and its state per step.
    signal: Option<(f64, Vec<LightState>)>,
    extra_signals: Vec<TrafficSignal>,
    tracks: Vec<Track>,
    lead: Option<Track>,
}

struct Common {
    limit: f64,
    cruise: f64,
    s0: f64,
    v0: f64,
    route_len: f64,
    front: f64,
}

fn pick_topology(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Topology {
    let w = [cfg.straight_weight, cfg.curve_weight, cfg.junction_weight];
    let mut x = rng.gen::<f64>() * w.iter().sum::<f64>();
    for (i, t) in [Topology::Straight, Topology::Curve, Topology::Junction]
        .into_iter()
        .enumerate()
    {
        if x < w[i] {
            return t;
        }
        x -= w[i];
    }
    Topology::Junction
}

fn build(
    cfg: &GeneratorConfig,
    sim: &SimConfig,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Scenario> {
    let topo = pick_topology(cfg, rng);
    let limit = rng.gen_range(cfg.speed_limit_min..=cfg.speed_limit_max);
    let cruise = limit - rng.gen_range(0.5..2.0);
    let dur = cfg.duration();
    let v0 = match topo {
        Topology::Junction => rng.gen_range(5.0..9.0f64).min(cruise),
        _ => cruise * rng.gen_range(0.5..1.0),
    };
    // Long enough that a vehicle accelerating flat out stays on the route.
    let route_len = 10.0 + v0 * dur + dur * dur + 30.0;
    let common = Common {
        limit,
        cruise,
        s0: 10.0,
        v0: v0 as f32 as f64,
        route_len,
        front: sim.vehicle.front_offset(),
    };
    let mut scene = match topo {
        Topology::Straight => straight_scene(cfg, &common, rng),
        Topology::Curve => curve_scene(cfg, &common, rng),
        Topology::Junction => junction_scene(cfg, &common, rng),
    };
    place_density_traffic(cfg, &mut scene, common.limit, rng)?;

    let (ego_log, _actions) = drive(cfg, sim, &common, &scene, rng);
    let steps = cfg.num_steps;

    let mut agents = Vec::new();
    let ego_at = |t: usize| V::new(ego_log[t].x as f64, ego_log[t].y as f64);
    for (k, tr) in scene.tracks.iter().chain(scene.lead.iter()).enumerate() {
        let path = &scene.paths[tr.path];
        let mut poses = Vec::with_capacity(steps);
        let mut valid = Vec::with_capacity(steps);
        for t in 0..steps {
            let s = tr.s[t];
            let p = path.point(s);
            let v = if t + 1 < steps {
                (tr.s[t + 1] - s) / cfg.dt
            } else {
                (s - tr.s[t - 1]) / cfg.dt
            };
            poses.push(LoggedPose {
                x: p.x as f32,
                y: p.y as f32,
                heading: wrap_angle(path.heading(s)) as f32,
                v: v as f32,
            });
            valid.push(s >= 0.0 && s <= path.length() && (p - ego_at(t)).norm() <= SENSOR_RANGE);
        }
        agents.push(LoggedAgent {
            id: k as u32 + 1,
            length: tr.length as f32,
            width: tr.width as f32,
            poses,
            valid,
        });
    }

    let ego_path = &scene.paths[0];
    let end_s = ego_path
        .project(ego_at(steps - 1), common.s0 + common.v0 * dur, 1e9, 1e9)
        .0;
    let goal_s = (end_s + 10.0).min(common.route_len - 5.0);

    let route = Route {
        lanes: scene
            .route
            .iter()
            .map(|r| RouteLane {
                lane_id: r.lane_id,
                left_border: ego_path
                    .offset_polyline(r.s0, r.s1, r.offset + r.width / 2.0, 2.0)
                    .into_iter()
                    .map(to_f32)
                    .collect(),
                right_border: ego_path
                    .offset_polyline(r.s0, r.s1, r.offset - r.width / 2.0, 2.0)
                    .into_iter()
                    .map(to_f32)
                    .collect(),
                valid_interval: (r.s0 as f32, r.s1 as f32),
            })
            .collect(),
    };

    let mut traffic_lights = Vec::new();
    if let Some((stop_s, states)) = &scene.signal {
        traffic_lights.push(TrafficSignal {
            id: 1,
            stop_point: to_f32(ego_path.point(*stop_s)),
            states: states.clone(),
        });
    }
    traffic_lights.extend(scene.extra_signals.drain(..));

    let stop_lines = scene
        .stop_sign
        .map(|ls| {
            let w = cfg.lane_width;
            vec![StopLine {
                points: vec![
                    to_f32(ego_path.offset_point(ls, -w / 2.0)),
                    to_f32(ego_path.offset_point(ls, w / 2.0)),
                ],
                position: to_f32(ego_path.point(ls)),
            }]
        })
        .unwrap_or_default();

    let sc = Scenario {
        id,
        num_steps: steps,
        dt: cfg.dt,
        ego_log,
        agents,
        route,
        road_features: scene.features,
        traffic_lights,
        stop_lines,
        speed_limit: common.limit as f32,
        goal: to_f32(ego_path.point(goal_s)),
    };
    Ok(sc)
}

fn straight_scene(cfg: &GeneratorConfig, c: &Common, rng: &mut ChaCha8Rng) -> Scene {
    let w = cfg.lane_width;
    let len = c.route_len + 100.0;
    let ego = Path::from_pieces(V::zero(), 0.0, &[Piece::Straight(len)]);
    let oncoming = ego.reversed_offset(2.0 * w);
    let left = Path::from_pieces(V::new(0.0, w), 0.0, &[Piece::Straight(len)]);
    let rl = c.route_len;
    let mut features = vec![
        feature(
            ego.offset_polyline(0.0, rl, -w / 2.0, 5.0),
            FeatureKind::RoadEdge,
            Directionality::None,
        ),
        feature(
            ego.offset_polyline(0.0, rl, w / 2.0, 5.0),
            FeatureKind::LaneMarking,
            Directionality::Forward,
        ),
        feature(
            ego.offset_polyline(0.0, rl, 1.5 * w, 5.0),
            FeatureKind::LaneMarking,
            Directionality::Both,
        ),
        feature(
            ego.offset_polyline(0.0, rl, 2.5 * w, 5.0),
            FeatureKind::RoadEdge,
            Directionality::None,
        ),
    ];
    if rng.gen_bool(0.5) {
        features.push(feature(
            ego.offset_polyline(0.0, rl, -w / 2.0 - 1.5, 5.0),
            FeatureKind::BikeLaneBoundary,
            Directionality::Forward,
        ));
    }
    let stop_sign = rng.gen_bool(cfg.stop_sign_probability).then(|| {
        let ls = c.s0 + c.front + rng.gen_range(30.0..70.0);
        features.push(feature(
            vec![
                ego.offset_point(ls, -w / 2.0),
                ego.offset_point(ls, 1.5 * w),
            ],
            FeatureKind::StopLine,
            Directionality::Forward,
        ));
        features.push(feature(
            vec![
                ego.offset_point(ls + 3.0, -w / 2.0),
                ego.offset_point(ls + 3.0, 2.5 * w),
            ],
            FeatureKind::Crosswalk,
            Directionality::None,
        ));
        ls
    });
    let lead = (stop_sign.is_none() && cfg.density > 0.0 && rng.gen_bool(cfg.lead_probability))
        .then(|| lead_track(cfg, c, rng));
    Scene {
        paths: vec![ego, left, oncoming],
        route: vec![
            RouteSpec {
                lane_id: 1,
                offset: 0.0,
                width: w,
                s0: 0.0,
                s1: rl,
            },
            RouteSpec {
                lane_id: 2,
                offset: w,
                width: w,
                s0: 0.0,
                s1: rl,
            },
        ],
        features,
        traffic_lanes: vec![(1, 0.0, rl), (2, 0.0, rl)],
        stop_sign,
        signal: None,
        extra_signals: vec![],
        tracks: vec![],
        lead,
    }
}

fn curve_scene(cfg: &GeneratorConfig, c: &Common, rng: &mut ChaCha8Rng) -> Scene {
    let w = cfg.lane_width;
    let lead_in = rng.gen_range(30.0..60.0);
    let radius = rng.gen_range(30.0..70.0);
    let angle = rng.gen_range(0.5..1.6) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let arc = radius * f64::abs(angle);
    let tail = (c.route_len - lead_in - arc).max(30.0) + 100.0;
    let ego = Path::from_pieces(
        V::zero(),
        0.0,
        &[
            Piece::Straight(lead_in),
            Piece::Arc { radius, angle },
            Piece::Straight(tail),
        ],
    );
    let rl = c.route_len;
    let oncoming = ego.reversed_offset(w);
    let features = vec![
        feature(
            ego.offset_polyline(0.0, rl, -w / 2.0, 5.0),
            FeatureKind::RoadEdge,
            Directionality::None,
        ),
        feature(
            ego.offset_polyline(0.0, rl, w / 2.0, 5.0),
            FeatureKind::LaneMarking,
            Directionality::Both,
        ),
        feature(
            ego.offset_polyline(0.0, rl, 1.5 * w, 5.0),
            FeatureKind::RoadEdge,
            Directionality::None,
        ),
    ];
    let lead =
        (cfg.density > 0.0 && rng.gen_bool(cfg.lead_probability)).then(|| lead_track(cfg, c, rng));
    Scene {
        paths: vec![ego, oncoming],
        route: vec![RouteSpec {
            lane_id: 1,
            offset: 0.0,
            width: w,
            s0: 0.0,
            s1: rl,
        }],
        features,
        traffic_lanes: vec![(1, 0.0, rl)],
        stop_sign: None,
        signal: None,
        extra_signals: vec![],
        tracks: vec![],
        lead,
    }
}

fn junction_scene(cfg: &GeneratorConfig, c: &Common, rng: &mut ChaCha8Rng) -> Scene {
    let w = cfg.lane_width;
    let steps = cfg.num_steps;
    let radius = rng.gen_range(10.0..14.0);
    let approach = rng.gen_range(25.0..55.0);
    let stop_s = c.s0 + c.front + approach;
    let arc_start = stop_s + 1.0;
    let arc_len = radius * std::f64::consts::FRAC_PI_2;
    let exit = (c.route_len - arc_start - arc_len).max(40.0);
    let route_len = arc_start + arc_len + exit;
    let ego = Path::from_pieces(
        V::zero(),
        0.0,
        &[
            Piece::Straight(arc_start),
            Piece::Arc {
                radius,
                angle: -std::f64::consts::FRAC_PI_2,
            },
            Piece::Straight(exit + 100.0),
        ],
    );
    // Crossing road center x; the ego exits into its southbound lane.
    let xj = arc_start + radius + w / 2.0;
    let far = 150.0;
    let southbound = Path::from_pieces(
        V::new(xj - w / 2.0, 1.5 * w + far),
        -std::f64::consts::FRAC_PI_2,
        &[Piece::Straight(2.0 * far + route_len)],
    );
    let northbound = Path::from_pieces(
        V::new(xj + w / 2.0, -route_len),
        std::f64::consts::FRAC_PI_2,
        &[Piece::Straight(route_len + far)],
    );
    let westbound = Path::from_pieces(
        V::new(xj + far, w),
        std::f64::consts::PI,
        &[Piece::Straight(far + xj + 50.0)],
    );

    let box_w = xj - w;
    let box_e = xj + w;
    let box_s = -w / 2.0;
    let box_n = 1.5 * w;
    let l = |a: V, b: V, kind, dir| feature(vec![a, b], kind, dir);
    let seg = |x0: f64, y0: f64, x1: f64, y1: f64, kind, dir| {
        let n = ((V::new(x1 - x0, y1 - y0).norm()) / 5.0).ceil().max(1.0) as usize;
        feature(
            (0..=n)
                .map(|i| {
                    let t = i as f64 / n as f64;
                    V::new(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t)
                })
                .collect(),
            kind,
            dir,
        )
    };
    use Directionality as D;
    use FeatureKind as K;
    let mut features = vec![
        // the ego-side curb follows the turn
        feature(
            ego.offset_polyline(0.0, route_len, -w / 2.0, 5.0),
            K::RoadEdge,
            D::None,
        ),
        seg(-20.0, box_n, box_w, box_n, K::RoadEdge, D::None),
        seg(-20.0, w / 2.0, box_w, w / 2.0, K::LaneMarking, D::Both),
        seg(box_e, box_s, xj + far, box_s, K::RoadEdge, D::None),
        seg(box_e, box_n, xj + far, box_n, K::RoadEdge, D::None),
        seg(box_e, w / 2.0, xj + far, w / 2.0, K::LaneMarking, D::Both),
        seg(box_w, box_n, box_w, box_n + far, K::RoadEdge, D::None),
        seg(box_e, box_n, box_e, box_n + far, K::RoadEdge, D::None),
        seg(xj, box_n, xj, box_n + far, K::LaneMarking, D::Both),
        seg(box_e, box_s, box_e, -route_len, K::RoadEdge, D::None),
        seg(xj, box_s, xj, -route_len, K::LaneMarking, D::Both),
        l(
            V::new(box_w, box_n + 2.0),
            V::new(box_e, box_n + 2.0),
            K::Crosswalk,
            D::None,
        ),
        l(
            V::new(box_e + 2.0, box_s),
            V::new(box_e + 2.0, box_n),
            K::Crosswalk,
            D::None,
        ),
        l(
            ego.offset_point(stop_s, -w / 2.0),
            ego.offset_point(stop_s, w / 2.0),
            K::StopLine,
            D::Forward,
        ),
    ];
    features.push(l(
        V::new(xj, box_n + 1.0),
        V::new(box_e, box_n + 1.0),
        K::StopLine,
        D::Backward,
    ));

    let dur_steps = steps - 1;
    let t_green = if rng.gen_bool(0.3) {
        0
    } else {
        rng.gen_range((1.5 / cfg.dt) as usize..=((0.55 * dur_steps as f64) as usize).max(16))
    };
    let ego_states: Vec<LightState> = (0..steps)
        .map(|t| {
            if t < t_green {
                LightState::Red
            } else {
                LightState::Green
            }
        })
        .collect();
    let cross_states: Vec<LightState> = (0..steps)
        .map(|t| {
            if t + (2.0 / cfg.dt) as usize >= t_green && t < t_green {
                LightState::Yellow
            } else if t < t_green {
                LightState::Green
            } else {
                LightState::Red
            }
        })
        .collect();

    let mut tracks = Vec::new();
    if cfg.density > 0.0 {
        let len = 4.6;
        // Crossing traffic clears the junction one second before the ego's green.
        let clear_t = t_green as f64 * cfg.dt - 1.0;
        if clear_t > 0.5 {
            let v = c.limit + 1.0;
            let exit_s = far + box_n - box_s + 1.0 + len / 2.0;
            let n = (cfg.density.ceil() as usize).clamp(1, 3);
            let latest = exit_s - v * clear_t - rng.gen_range(0.0..10.0);
            for k in 0..n {
                let s0 = latest - k as f64 * 2.5 * v;
                tracks.push(Track {
                    path: 1,
                    s: (0..steps).map(|t| s0 + v * t as f64 * cfg.dt).collect(),
                    length: len,
                    width: 1.9,
                });
            }
        }
        // Vehicles waiting at the northbound stop line beside the ego's exit.
        let nq = (cfg.density.round() as usize).min(3);
        for k in 0..nq {
            let y = box_s - 2.0 - len / 2.0 - k as f64 * (len + 2.5);
            let s = y + route_len;
            tracks.push(Track {
                path: 2,
                s: vec![s; steps],
                length: len,
                width: 1.9,
            });
        }
    }

    Scene {
        paths: vec![ego, southbound, northbound, westbound],
        route: vec![
            RouteSpec {
                lane_id: 1,
                offset: 0.0,
                width: w,
                s0: 0.0,
                s1: arc_start,
            },
            RouteSpec {
                lane_id: 2,
                offset: 0.0,
                width: w + 1.0,
                s0: arc_start,
                s1: arc_start + arc_len,
            },
            RouteSpec {
                lane_id: 3,
                offset: 0.0,
                width: w,
                s0: arc_start + arc_len,
                s1: route_len,
            },
        ],
        features,
        traffic_lanes: vec![(3, 0.0, far + xj)],
        stop_sign: None,
        signal: Some((stop_s, ego_states)),
        extra_signals: vec![TrafficSignal {
            id: 2,
            stop_point: to_f32(V::new(xj - w / 2.0, box_n + 1.0)),
            states: cross_states,
        }],
        tracks,
        lead: None,
    }
}

fn lead_track(cfg: &GeneratorConfig, c: &Common, rng: &mut ChaCha8Rng) -> Track {
    let length = rng.gen_range(4.2..5.0);
    let gap = rng.gen_range(1.2..2.0) * (5.0 + 1.2 * c.v0);
    let mut s = c.s0 + c.front + gap + length / 2.0;
    let mut v = c.cruise * rng.gen_range(0.6..1.0);
    let mut out = Vec::with_capacity(cfg.num_steps);
    let mut a = 0.0;
    let mut until = 0usize;
    for t in 0..cfg.num_steps {
        out.push(s);
        if t >= until {
            a = [-1.0, 0.0, 0.0, 0.5][rng.gen_range(0..4)];
            until = t + rng.gen_range((2.0 / cfg.dt) as usize..=(4.0 / cfg.dt) as usize);
        }
        s += v * cfg.dt;
        v = (v + a * cfg.dt).clamp(3.0, c.cruise);
    }
    Track {
        path: 0,
        s: out,
        length,
        width: rng.gen_range(1.8..2.0),
    }
}

fn place_density_traffic(
    cfg: &GeneratorConfig,
    scene: &mut Scene,
    limit: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if cfg.density == 0.0 {
        return Ok(());
    }
    for &(path, lo, hi) in &scene.traffic_lanes.clone() {
        let len = hi - lo;
        let want = (cfg.density * len / 100.0).round() as usize;
        let slots = (len / SLOT_SPACING).floor() as usize;
        if want > slots {
            return Err(Error::Config(format!(
                "density {} needs {want} vehicles on a {len:.0} m lane but only {slots} fit without initial overlap",
                cfg.density
            )));
        }
        let lane_speed = rng.gen_range(0.7..1.05) * limit;
        for slot in sample(rng, slots, want).into_vec() {
            let s0 = lo + (slot as f64 + 0.5) * SLOT_SPACING;
            let length = rng.gen_range(4.2..5.0);
            scene.tracks.push(Track {
                path,
                s: (0..cfg.num_steps)
                    .map(|t| s0 + lane_speed * t as f64 * cfg.dt)
                    .collect(),
                length,
                width: rng.gen_range(1.8..2.0),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- driver

fn nearest_bin(bins: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &b) in bins.iter().enumerate() {
        if (b - x).abs() < (bins[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// Simulates the logged ego with a discrete-action feedback driver.
fn drive(
    cfg: &GeneratorConfig,
    sim: &SimConfig,
    c: &Common,
    scene: &Scene,
    rng: &mut ChaCha8Rng,
) -> (Vec<LoggedPose>, Vec<Action>) {
    let table = &sim.actions;
    let veh = &sim.vehicle;
    let path = &scene.paths[0];
    let dt = cfg.dt;
    let wheelbase = veh.wheelbase;
    let zero = table.zero_action();
    let p0 = path.point(c.s0);
    let mut ego = EgoState {
        x: p0.x as f32 as f64,
        y: p0.y as f32 as f64,
        heading: wrap_angle(path.heading(c.s0)) as f32 as f64,
        v: c.v0,
        steer: 0.0,
    };
    let mut s_hint = c.s0;
    let mut poses = Vec::with_capacity(cfg.num_steps);
    let mut actions = Vec::with_capacity(cfg.num_steps - 1);
    let mut stop_done = false;
    let mut held = 0usize;
    let mut burst: Option<(usize, Action)> = None;

    for t in 0..cfg.num_steps {
        poses.push(LoggedPose {
            x: ego.x as f32,
            y: ego.y as f32,
            heading: ego.heading as f32,
            v: ego.v as f32,
        });
        if t + 1 == cfg.num_steps {
            break;
        }
        let (s, e) = path.project(V::new(ego.x, ego.y), s_hint, 5.0, 10.0);
        s_hint = s;
        let v = ego.v;
        let front = s + c.front;

        // speed target from curvature preview
        let mut v_target = c.cruise;
        for k in 0..=20 {
            let d = 2.0 * k as f64;
            let kappa = path.curvature(s + d).abs();
            if kappa > 1e-6 {
                let vc = (MAX_LATERAL_ACCEL / kappa).sqrt();
                v_target = v_target.min((vc * vc + 2.0 * COMFORT_DECEL * d).sqrt());
            }
        }
        let mut a_des = (0.8 * (v_target - v)).clamp(-3.0, 2.0);
        if let Some(lead) = &scene.lead {
            let gap = lead.s[t] - lead.length / 2.0 - front;
            let v_lead = (lead.s[t + 1] - lead.s[t]) / dt;
            let desired = 5.0 + 1.2 * v;
            a_des = a_des.min(0.4 * (gap - desired) + 0.8 * (v_lead - v));
        }

        // stop constraints
        let mut target: Option<f64> = None;
        if let Some(ls) = scene.stop_sign {
            if !stop_done {
                if v < 0.05 && front >= ls - 2.0 && front <= ls {
                    held += 1;
                    if held >= 10 {
                        stop_done = true;
                    }
                }
                if !stop_done {
                    target = Some(ls - 1.0);
                }
            }
        }
        if let Some((stop_s, states)) = &scene.signal {
            let look = (t + 3).min(cfg.num_steps - 1);
            let red_soon = (t + 1..=look).any(|k| states[k] == LightState::Red);
            if red_soon && front < *stop_s {
                let tg = stop_s - 1.5;
                target = Some(target.map_or(tg, |x: f64| x.min(tg)));
            }
        }
        let mut hard = false;
        if let Some(tg) = target {
            let dist = tg - front;
            let cap = (2.0 * COMFORT_DECEL * (dist - 0.3).max(0.0)).sqrt();
            a_des = a_des.min((cap - v) / 0.5);
            if dist - 2.0 * v * dt <= v * v / 8.0 + 0.2 {
                hard = true;
            }
        }
        let mut ai = if hard {
            0
        } else {
            nearest_bin(&table.accel, a_des)
        };

        // lateral: curvature feedforward plus heading and offset feedback
        let kappa_ff = path.curvature(s + 0.4 * v);
        let heading_err = wrap_angle(ego.heading - path.heading(s));
        let steer_des =
            (wheelbase * kappa_ff).atan() - 1.0 * heading_err - (0.5 * e / (v + 1.0)).atan();
        let steer_des = steer_des.clamp(-veh.steer_max, veh.steer_max);
        let mut si = nearest_bin(&table.steer_rate, (steer_des - ego.steer) / 0.2);

        // perturbation bursts
        if let Some((left, a)) = burst {
            if target.is_none() && scene.lead.is_none() {
                ai = a[0];
            }
            si = a[1];
            burst = (left > 1).then_some((left - 1, a));
        } else if rng.gen_bool(cfg.driver_noise) && v > 2.0 {
            let gentle: Vec<usize> = (0..table.steer_rate.len())
                .filter(|&i| table.steer_rate[i] != 0.0 && table.steer_rate[i].abs() <= 0.15)
                .collect();
            let steer = if gentle.is_empty() {
                rng.gen_range(0..table.steer_rate.len())
            } else {
                gentle[rng.gen_range(0..gentle.len())]
            };
            let len = rng.gen_range(1..=3);
            let a = [
                nearest_bin(&table.accel, a_des + rng.gen_range(-0.6..0.6)),
                steer,
            ];
            burst = Some((len, a));
        }

        // keep steering fixed while it is unobservable from the log
        let v_next = (v + table.accel[ai] * dt).clamp(veh.v_min, veh.v_max);
        if v_next < 0.3 {
            si = zero[1];
        }
        let action = [ai, si];
        actions.push(action);
        ego = bicycle_step(&ego, table.accel[ai], table.steer_rate[si], dt, veh);
    }
    (poses, actions)
}
