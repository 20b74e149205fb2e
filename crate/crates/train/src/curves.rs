//! Evaluation curves keyed by agent steps.

use std::io::Write;

use serde::{Deserialize, Serialize};
use zsim_core::metrics::Aggregate;

use crate::error::{Result, TrainError};

pub const CURVES_CSV_HEADER: &str = "agent_steps,mean_scenario_score,mean_relative_progress,mean_collision_free,mean_off_route_free,mean_stop_line_free,mean_traffic_light_free";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub agent_steps: u64,
    pub mean_scenario_score: f64,
    pub mean_relative_progress: f64,
    pub mean_collision_free: f64,
    pub mean_off_route_free: f64,
    pub mean_stop_line_free: f64,
    pub mean_traffic_light_free: f64,
}

impl CurvePoint {
    pub fn new(agent_steps: u64, a: &Aggregate) -> Self {
        Self {
            agent_steps,
            mean_scenario_score: a.mean_scenario_score,
            mean_relative_progress: a.mean_relative_progress,
            mean_collision_free: a.mean_collision_free,
            mean_off_route_free: a.mean_off_route_free,
            mean_stop_line_free: a.mean_stop_line_free,
            mean_traffic_light_free: a.mean_traffic_light_free,
        }
    }
}

pub fn write_curves_csv<W: Write>(points: &[CurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "{CURVES_CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.agent_steps,
            p.mean_scenario_score,
            p.mean_relative_progress,
            p.mean_collision_free,
            p.mean_off_route_free,
            p.mean_stop_line_free,
            p.mean_traffic_light_free
        )?;
    }
    Ok(())
}

pub fn read_curves_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVES_CSV_HEADER) {
        return Err(TrainError::Shape("unexpected curves header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(TrainError::Shape(format!("bad curves row: {l}")));
            }
            let num = |i: usize| {
                f[i].parse::<f64>()
                    .map_err(|e| TrainError::Shape(e.to_string()))
            };
            Ok(CurvePoint {
                agent_steps: f[0]
                    .parse()
                    .map_err(|_| TrainError::Shape(format!("bad step count: {}", f[0])))?,
                mean_scenario_score: num(1)?,
                mean_relative_progress: num(2)?,
                mean_collision_free: num(3)?,
                mean_off_route_free: num(4)?,
                mean_stop_line_free: num(5)?,
                mean_traffic_light_free: num(6)?,
            })
        })
        .collect()
}

/// Trailing moving average with the given window.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
