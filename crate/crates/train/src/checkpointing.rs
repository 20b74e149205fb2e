//! Checkpoints carrying optimizer state alongside the parameters.

use std::path::Path;

use zsim_nn::Checkpoint;

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::optim::{Adam, AdamConfig};

const MOMENT1: &str = "adam.m";
const MOMENT2: &str = "adam.v";

pub fn snapshot(
    cfg: &TrainConfig,
    params: &[f32],
    opt: &Adam,
    mut meta: serde_json::Value,
) -> Checkpoint {
    if let Some(m) = meta.as_object_mut() {
        m.insert("optimizer_steps".into(), opt.steps.into());
    }
    Checkpoint {
        config: cfg.model.clone(),
        actions: cfg.sim.actions.clone(),
        meta,
        params: params.to_vec(),
        sections: vec![
            (MOMENT1.into(), opt.m.clone()),
            (MOMENT2.into(), opt.v.clone()),
        ],
    }
}

/// Restores the optimizer saved in `ck`, or a fresh one if it has none.
pub fn optimizer_from(ck: &Checkpoint, config: AdamConfig) -> Result<Adam> {
    let n = ck.params.len();
    match (ck.section(MOMENT1), ck.section(MOMENT2)) {
        (Some(m), Some(v)) if m.len() == n && v.len() == n => Ok(Adam {
            config,
            steps: ck
                .meta
                .get("optimizer_steps")
                .and_then(|s| s.as_u64())
                .unwrap_or(0),
            m: m.to_vec(),
            v: v.to_vec(),
        }),
        (None, None) => Ok(Adam::new(config, n)),
        _ => Err(TrainError::Shape(
            "optimizer state does not match the parameters".into(),
        )),
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    ck.save(path)?;
    Ok(())
}
