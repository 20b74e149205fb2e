//! Per-scenario driving metrics, the combined scenario score and dataset
//! evaluation.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::scenario::{Scenario, ScenarioBatch};
use crate::simcore::{rollout, DoneMode, DoneReason, Env, EpisodeBatch, Policy, SimConfig};

/// Lower end of the interval each raw metric is mapped onto before the product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBounds {
    pub progress: f64,
    pub collision: f64,
    pub off_route: f64,
    pub stop_line: f64,
    pub traffic_light: f64,
    pub comfort: f64,
}

impl Default for ScoreBounds {
    fn default() -> Self {
        Self {
            progress: 0.8,
            collision: 0.05,
            off_route: 0.5,
            stop_line: 0.5,
            traffic_light: 0.5,
            comfort: 0.8,
        }
    }
}

impl ScoreBounds {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.progress,
            self.collision,
            self.off_route,
            self.stop_line,
            self.traffic_light,
            self.comfort,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|l| (0.0..1.0).contains(l)) {
            Ok(())
        } else {
            Err(Error::Domain("score bounds must lie in [0, 1)".into()))
        }
    }
}

/// Weights of the comfort exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComfortWeights {
    pub accel: f64,
    pub jerk: f64,
}

impl Default for ComfortWeights {
    fn default() -> Self {
        Self {
            accel: 0.1,
            jerk: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario_id: String,
    /// Unclamped progress ratio; may exceed one.
    pub relative_progress_raw: f64,
    pub relative_progress: f64,
    pub collision_free: f64,
    pub off_route_free: f64,
    pub stop_line_free: f64,
    pub traffic_light_free: f64,
    pub mixed_comfort: f64,
    pub scenario_score: f64,
}

impl MetricReport {
    /// The six scored metrics in bound order.
    pub fn scored(&self) -> [f64; 6] {
        [
            self.relative_progress,
            self.collision_free,
            self.off_route_free,
            self.stop_line_free,
            self.traffic_light_free,
            self.mixed_comfort,
        ]
    }
}

/// `s` mapped linearly from `[0, 1]` onto `[l, 1]`.
pub fn map_score(s: f64, l: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) || !(0.0..1.0).contains(&l) {
        return Err(Error::Domain(format!(
            "map_score needs s in [0, 1] and l in [0, 1), got s={s}, l={l}"
        )));
    }
    Ok(s * (1.0 - l) + l)
}

/// Product of the mapped metrics `[progress, collision, off-route, stop line, light, comfort]`.
pub fn score_product(metrics: [f64; 6], bounds: &ScoreBounds) -> Result<f64> {
    let mut p = 1.0;
    for (s, l) in metrics.into_iter().zip(bounds.as_array()) {
        p *= map_score(s, l)?;
    }
    Ok(p)
}

pub fn scenario_score(report: &MetricReport, bounds: &ScoreBounds) -> Result<f64> {
    score_product(report.scored(), bounds)
}

/// Degenerate when the logged ego covers at most this distance.
pub const MIN_LOGGED_PROGRESS: f64 = 0.1;

/// `(raw, clamped)` ratio of agent to logged progress, `None` if degenerate.
pub fn relative_progress(agent: f64, logged: f64) -> Option<(f64, f64)> {
    if logged <= MIN_LOGGED_PROGRESS {
        return None;
    }
    let raw = agent / logged;
    Some((raw, raw.clamp(0.0, 1.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DoneMetrics {
    pub collision_free: bool,
    pub off_route_free: bool,
    pub stop_line_free: bool,
    pub traffic_light_free: bool,
}

/// Binary metrics from a flag set (see [`DoneReason::flag`]).
pub fn done_metrics(flags: u8) -> DoneMetrics {
    let free = |r: DoneReason| flags & r.flag() == 0;
    DoneMetrics {
        collision_free: free(DoneReason::Collision),
        off_route_free: free(DoneReason::OffRoute),
        stop_line_free: free(DoneReason::StopLine),
        traffic_light_free: free(DoneReason::RedLight),
    }
}

/// `exp(-mean(w_a (a_lat² + a_lon²) + w_j (j_lat² + j_lon²)))` over live steps,
/// jerk by backward differences (zero at the first step).
pub fn mixed_comfort(a_lat: &[f64], a_lon: &[f64], dt: f64, w: &ComfortWeights) -> f64 {
    let n = a_lat.len().min(a_lon.len());
    if n == 0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for t in 0..n {
        let (jl, jo) = if t == 0 {
            (0.0, 0.0)
        } else {
            (
                (a_lat[t] - a_lat[t - 1]) / dt,
                (a_lon[t] - a_lon[t - 1]) / dt,
            )
        };
        sum += w.accel * (a_lat[t] * a_lat[t] + a_lon[t] * a_lon[t]) + w.jerk * (jl * jl + jo * jo);
    }
    (-sum / n as f64).exp()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricOptions {
    pub bounds: ScoreBounds,
    pub comfort: ComfortWeights,
}

/// Reports for every row of an episode; `None` for degenerate rows.
pub fn episode_reports<R: Real>(
    env: &Env<R>,
    ep: &EpisodeBatch<R>,
    opts: &MetricOptions,
) -> Result<Vec<Option<MetricReport>>> {
    let mut out = Vec::with_capacity(ep.batch);
    for b in 0..ep.batch {
        let row = &env.rows[b];
        let logged = (row.logged_end_s - row.logged_start_s).as_f64();
        let s0 = ep.s[b * (ep.steps + 1)].as_f64();
        let s1 = ep.s[b * (ep.steps + 1) + ep.steps].as_f64();
        let Some((raw, clamped)) = relative_progress(s1 - s0, logged) else {
            out.push(None);
            continue;
        };
        let flags = match env.config.mode {
            DoneMode::Training => ep.final_state.done_reason[b].flag(),
            DoneMode::EvalNoDones => ep.latched_events(b),
        };
        let d = done_metrics(flags);
        let live: Vec<usize> = (0..ep.steps)
            .filter(|&t| ep.mask[ep.idx(b, t)] != 0)
            .collect();
        let a_lat: Vec<f64> = live
            .iter()
            .map(|&t| ep.lateral_accel[ep.idx(b, t)].as_f64())
            .collect();
        let a_lon: Vec<f64> = live
            .iter()
            .map(|&t| ep.longitudinal_accel[ep.idx(b, t)].as_f64())
            .collect();
        let mut report = MetricReport {
            scenario_id: env.batch.scenarios[b].id.clone(),
            relative_progress_raw: raw,
            relative_progress: clamped,
            collision_free: d.collision_free as u8 as f64,
            off_route_free: d.off_route_free as u8 as f64,
            stop_line_free: d.stop_line_free as u8 as f64,
            traffic_light_free: d.traffic_light_free as u8 as f64,
            mixed_comfort: mixed_comfort(&a_lat, &a_lon, env.batch.dt, &opts.comfort),
            scenario_score: 0.0,
        };
        report.scenario_score = scenario_score(&report, &opts.bounds)?;
        out.push(Some(report));
    }
    Ok(out)
}

/// Dataset-level means over non-degenerate scenarios.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenarios: usize,
    pub degenerate: usize,
    pub degenerate_ids: Vec<String>,
    pub mean_relative_progress: f64,
    /// Mean of the unclamped progress ratio.
    pub progress_ratio: f64,
    pub mean_collision_free: f64,
    pub mean_off_route_free: f64,
    pub mean_stop_line_free: f64,
    pub mean_traffic_light_free: f64,
    pub mean_mixed_comfort: f64,
    pub mean_scenario_score: f64,
    /// Share of scenarios with a collision or an off-route event.
    pub failure_rate: f64,
}

pub fn aggregate(reports: &[MetricReport], degenerate_ids: Vec<String>) -> Aggregate {
    let n = reports.len();
    let mean = |f: fn(&MetricReport) -> f64| {
        if n == 0 {
            0.0
        } else {
            reports.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Aggregate {
        scenarios: n,
        degenerate: degenerate_ids.len(),
        degenerate_ids,
        mean_relative_progress: mean(|r| r.relative_progress),
        progress_ratio: mean(|r| r.relative_progress_raw),
        mean_collision_free: mean(|r| r.collision_free),
        mean_off_route_free: mean(|r| r.off_route_free),
        mean_stop_line_free: mean(|r| r.stop_line_free),
        mean_traffic_light_free: mean(|r| r.traffic_light_free),
        mean_mixed_comfort: mean(|r| r.mixed_comfort),
        mean_scenario_score: mean(|r| r.scenario_score),
        failure_rate: 1.0 - mean(|r| (r.collision_free * r.off_route_free > 0.0) as u8 as f64),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Sorted by scenario id.
    pub reports: Vec<MetricReport>,
    pub aggregate: Aggregate,
}

/// Rolls `policy` out over `dataset` in batches and scores every scenario.
pub fn evaluate<R: Real, P: Policy<R> + ?Sized>(
    policy: &P,
    dataset: &[Scenario],
    sim: &SimConfig,
    batch_size: usize,
    seed: u64,
    opts: &MetricOptions,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    opts.bounds.validate()?;
    let mut reports = Vec::with_capacity(dataset.len());
    let mut degenerate = Vec::new();
    for (k, chunk) in dataset.chunks(batch_size).enumerate() {
        let horizon = chunk.iter().map(|s| s.num_steps).max().unwrap_or(2);
        let env = Env::<R>::new(
            sim.clone(),
            Arc::new(ScenarioBatch::new(chunk.to_vec(), horizon)?),
        )?;
        let ep = rollout(&env, policy, seed.wrapping_add(k as u64), false)?;
        for (b, r) in episode_reports(&env, &ep, opts)?.into_iter().enumerate() {
            match r {
                Some(r) => reports.push(r),
                None => degenerate.push(chunk[b].id.clone()),
            }
        }
    }
    reports.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    degenerate.sort();
    let aggregate = aggregate(&reports, degenerate);
    Ok(Evaluation { reports, aggregate })
}

pub const METRICS_CSV_HEADER: &str = "scenario_id,relative_progress_raw,relative_progress,collision_free,off_route_free,stop_line_free,traffic_light_free,mixed_comfort,scenario_score";

pub fn write_metrics_csv<W: Write>(reports: &[MetricReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario_id,
            r.relative_progress_raw,
            r.relative_progress,
            r.collision_free,
            r.off_route_free,
            r.stop_line_free,
            r.traffic_light_free,
            r.mixed_comfort,
            r.scenario_score
        )?;
    }
    Ok(())
}

/// Parses a file written by [`write_metrics_csv`].
pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_CSV_HEADER) {
        return Err(Error::Format("metrics CSV header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Format(format!(
                    "metrics CSV row has {} fields",
                    f.len()
                )));
            }
            let num = |i: usize| {
                f[i].parse::<f64>()
                    .map_err(|e| Error::Format(format!("field {i}: {e}")))
            };
            Ok(MetricReport {
                scenario_id: f[0].to_string(),
                relative_progress_raw: num(1)?,
                relative_progress: num(2)?,
                collision_free: num(3)?,
                off_route_free: num(4)?,
                stop_line_free: num(5)?,
                traffic_light_free: num(6)?,
                mixed_comfort: num(7)?,
                scenario_score: num(8)?,
            })
        })
        .collect()
}
