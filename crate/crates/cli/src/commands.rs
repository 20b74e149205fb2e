use std::fs::File;
use std::io::BufWriter;
use std::net::TcpListener;
use std::path::Path;

use zsim_core::metrics::{evaluate, write_metrics_csv, MetricOptions};
use zsim_core::scenario::{
    generate_synthetic, read_scenario_file, write_scenario_file, GeneratorConfig, Scenario,
};
use zsim_core::simcore::{bench_step, write_bench_csv, DoneMode, SimConfig};
use zsim_nn::{Checkpoint, Model};
use zsim_train::rl::rl_worker;
use zsim_train::{expert_samples, run_bc, run_rl, ModelPolicy, TcpMember, TrainConfig};

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::{Common, EvalMode, TrainArgs};

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    require(path, "scenario file")?;
    Ok(read_scenario_file(path)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

fn train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            require(p, "config")?;
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Runs `body`, then writes the manifest with the outcome.
fn with_manifest(
    dir: &Path,
    mut manifest: RunManifest,
    body: impl FnOnce() -> Result<()>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let res = body();
    let status = if res.is_ok() { "ok" } else { "failed" };
    manifest.finish(dir, status)?;
    res
}

pub fn generate(
    common: &Common,
    config: Option<&Path>,
    out: Option<&Path>,
    count: Option<usize>,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            require(p, "config")?;
            GeneratorConfig::load(p)?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(n) = count {
        cfg.count = n;
    }
    cfg.validate()?;
    let seed = common.seed.unwrap_or(0);
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| common.out_dir.join("scenarios.zsim"));
    let manifest = RunManifest::new(
        "generate",
        serde_json::to_value(&cfg)?,
        vec![seed],
        vec![display(&out)],
    );
    with_manifest(&common.out_dir, manifest, || {
        let scenarios = generate_synthetic(&cfg, seed)?;
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        write_scenario_file(&scenarios, &out)?;
        println!("wrote {} scenarios to {}", scenarios.len(), out.display());
        Ok(())
    })
}

pub fn bc(common: &Common, args: &TrainArgs) -> Result<()> {
    let mut cfg = train_config(args.config.as_deref(), common.seed)?;
    if let Some(w) = args.workers {
        cfg.bc.workers = w;
    }
    cfg.validate()?;
    let scenarios = load_scenarios(&args.data)?;
    let resume = args
        .init_checkpoint
        .as_deref()
        .map(load_checkpoint)
        .transpose()?;
    let manifest = RunManifest::new(
        "bc",
        serde_json::to_value(&cfg)?,
        vec![cfg.seed],
        vec![display(&args.data)],
    );
    with_manifest(&common.out_dir, manifest, || {
        let samples = expert_samples(&scenarios, &cfg.sim, cfg.bc.gamma, cfg.bc.rollout_batch)?;
        let out = run_bc(&cfg, &samples, resume.as_ref(), Some(&common.out_dir))?;
        for e in &out.epochs {
            println!(
                "epoch {:3}  loss {:.5}  ce {:.5}  value_mse {:.4}",
                e.epoch, e.loss, e.cross_entropy, e.value_mse
            );
        }
        Ok(())
    })
}

pub fn rl(
    common: &Common,
    args: &TrainArgs,
    eval_data: Option<&Path>,
    listen: Option<&str>,
    connect: Option<&str>,
    rank: Option<usize>,
) -> Result<()> {
    let mut cfg = train_config(args.config.as_deref(), common.seed)?;
    if let Some(w) = args.workers {
        cfg.rl.learners = w;
    }
    cfg.validate()?;
    let train = load_scenarios(&args.data)?;
    let eval_path = eval_data.unwrap_or(&args.data);
    let eval = load_scenarios(eval_path)?;
    let init = args
        .init_checkpoint
        .as_deref()
        .map(load_checkpoint)
        .transpose()?;
    let datasets = vec![display(&args.data), display(eval_path)];
    let manifest = RunManifest::new("rl", serde_json::to_value(&cfg)?, vec![cfg.seed], datasets);
    let dir = common.out_dir.as_path();
    with_manifest(dir, manifest, || {
        let size = cfg.rl.learners;
        let timeout = cfg.rl.timeout();
        let outcome = match (listen, connect) {
            (Some(addr), _) => {
                let listener = TcpListener::bind(addr)?;
                let mut comm = TcpMember::root(listener, size, timeout)?;
                rl_worker(&cfg, &train, &eval, init.as_ref(), Some(dir), &mut comm)?
            }
            (None, Some(addr)) => {
                let rank = rank.ok_or_else(|| CliError::Config("--connect needs --rank".into()))?;
                let mut comm = TcpMember::connect(addr, rank, size, timeout)?;
                rl_worker(&cfg, &train, &eval, init.as_ref(), None, &mut comm)?
            }
            (None, None) => Some(run_rl(&cfg, &train, &eval, init.as_ref(), Some(dir))?),
        };
        if let Some(o) = outcome {
            if let Some(last) = o.curve.last() {
                println!(
                    "{} agent steps, {} updates in {:.1} s: score {:.4}, collision-free {:.4}, progress {:.4}",
                    o.agent_steps,
                    o.updates,
                    o.wall_secs,
                    last.mean_scenario_score,
                    last.mean_collision_free,
                    last.mean_relative_progress
                );
            }
        }
        Ok(())
    })
}

pub fn eval(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    mode: EvalMode,
    config: Option<&Path>,
    batch: usize,
) -> Result<()> {
    if batch == 0 {
        return Err(CliError::Config("--batch must be positive".into()));
    }
    let cfg = train_config(config, common.seed)?;
    let ck = load_checkpoint(checkpoint)?;
    let scenarios = load_scenarios(data)?;
    let sim = SimConfig {
        actions: ck.actions.clone(),
        mode: match mode {
            EvalMode::Dones => DoneMode::Training,
            EvalMode::NoDones => DoneMode::EvalNoDones,
        },
        ..cfg.sim.clone()
    };
    let run_config = serde_json::json!({
        "checkpoint": display(checkpoint),
        "model_hash": ck.config_hash(),
        "mode": format!("{mode:?}"),
        "batch": batch,
        "sim": sim,
    });
    let manifest = RunManifest::new("eval", run_config, vec![cfg.seed], vec![display(data)]);
    with_manifest(&common.out_dir, manifest, || {
        let model = Model::new(ck.config.clone())?;
        let policy = ModelPolicy {
            model: &model,
            params: &ck.params,
            version: 0,
            greedy: true,
        };
        let ev = evaluate::<f32, _>(
            &policy,
            &scenarios,
            &sim,
            batch,
            cfg.seed,
            &MetricOptions::default(),
        )?;
        write_metrics_csv(
            &ev.reports,
            BufWriter::new(File::create(common.out_dir.join("metrics.csv"))?),
        )?;
        let text = serde_json::to_string_pretty(&ev.aggregate)?;
        std::fs::write(common.out_dir.join("aggregate.json"), text + "\n")?;
        let a = &ev.aggregate;
        println!(
            "{} scenarios: score {:.4}, failure rate {:.4}, progress ratio {:.4}",
            a.scenarios, a.mean_scenario_score, a.failure_rate, a.progress_ratio
        );
        Ok(())
    })
}

pub fn bench(
    common: &Common,
    batch_sizes: &[usize],
    data: Option<&Path>,
    steps: usize,
    warmup: usize,
) -> Result<()> {
    if batch_sizes.is_empty() || batch_sizes.contains(&0) || steps == 0 {
        return Err(CliError::Config(
            "batch sizes and step count must be positive".into(),
        ));
    }
    let seed = common.seed.unwrap_or(0);
    let scenarios = match data {
        Some(p) => load_scenarios(p)?,
        None => {
            let count = batch_sizes.iter().copied().max().unwrap_or(1);
            generate_synthetic(
                &GeneratorConfig {
                    count,
                    ..Default::default()
                },
                seed,
            )?
        }
    };
    let run_config =
        serde_json::json!({"batch_sizes": batch_sizes, "steps": steps, "warmup": warmup});
    let datasets = data.map(display).into_iter().collect();
    let manifest = RunManifest::new("bench", run_config, vec![seed], datasets);
    with_manifest(&common.out_dir, manifest, || {
        let rows = bench_step::<f32>(
            &scenarios,
            &SimConfig::default(),
            batch_sizes,
            steps,
            warmup,
        )?;
        write_bench_csv(
            &rows,
            BufWriter::new(File::create(common.out_dir.join("bench.csv"))?),
        )?;
        for r in &rows {
            println!(
                "batch {:3}: {:.4} ms/step, {:.2} us/scenario",
                r.batch_size, r.mean_step_ms, r.amortized_us_per_scenario
            );
        }
        Ok(())
    })
}
