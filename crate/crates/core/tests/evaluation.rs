use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use zsim_core::dynamics::Action;
use zsim_core::geometry::Vec2;
use zsim_core::metrics::{
    episode_reports, evaluate, read_metrics_csv, write_metrics_csv, MetricOptions,
};
use zsim_core::scenario::{
    generate_synthetic, GeneratorConfig, LoggedAgent, LoggedPose, Route, RouteLane, Scenario,
    ScenarioBatch,
};
use zsim_core::simcore::{
    rollout, ConstantPolicy, DoneMode, DoneReason, Env, LogReplayPolicy, Policy, PolicyInput,
    PolicyOutput, SimConfig,
};
use zsim_core::Result;

struct UniformPolicy;

impl Policy<f64> for UniformPolicy {
    fn act(
        &self,
        input: &PolicyInput<'_, f64>,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<PolicyOutput<f64>> {
        let [na, ns] = input.env.config.actions.sizes();
        Ok(PolicyOutput::deterministic(
            rngs.iter_mut()
                .map(|r| [r.gen_range(0..na), r.gen_range(0..ns)])
                .collect(),
        ))
    }
}

/// Zero action until `from`, then `action`.
struct SwitchPolicy {
    from: usize,
    action: Action,
}

impl Policy<f64> for SwitchPolicy {
    fn act(&self, input: &PolicyInput<'_, f64>, _: &mut [ChaCha8Rng]) -> Result<PolicyOutput<f64>> {
        let zero = input.env.config.actions.zero_action();
        Ok(PolicyOutput::deterministic(
            input
                .state
                .t
                .iter()
                .map(|&t| if t >= self.from { self.action } else { zero })
                .collect(),
        ))
    }
}

fn sim(mode: DoneMode) -> SimConfig {
    SimConfig {
        mode,
        ..Default::default()
    }
}

fn env_of(scenarios: Vec<Scenario>, config: SimConfig) -> Env<f64> {
    let horizon = scenarios.iter().map(|s| s.num_steps).max().unwrap();
    Env::new(
        config,
        Arc::new(ScenarioBatch::new(scenarios, horizon).unwrap()),
    )
    .unwrap()
}

fn straight(id: &str, num_steps: usize, v: f32) -> Scenario {
    let xs: Vec<f32> = (0..=100).map(|i| i as f32 * 2.0).collect();
    Scenario {
        id: id.into(),
        num_steps,
        dt: 0.1,
        ego_log: (0..num_steps)
            .map(|t| LoggedPose {
                x: 5.0 + v * t as f32 * 0.1,
                y: 0.0,
                heading: 0.0,
                v,
            })
            .collect(),
        agents: vec![],
        route: Route {
            lanes: vec![RouteLane {
                lane_id: 0,
                left_border: xs.iter().map(|&x| Vec2::new(x, 2.0)).collect(),
                right_border: xs.iter().map(|&x| Vec2::new(x, -2.0)).collect(),
                valid_interval: (0.0, 200.0),
            }],
        },
        road_features: vec![],
        traffic_lights: vec![],
        stop_lines: vec![],
        speed_limit: 13.0,
        goal: Vec2::new(190.0, 0.0),
    }
}

fn generated(count: usize, seed: u64) -> Vec<Scenario> {
    generate_synthetic(
        &GeneratorConfig {
            count,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

#[test]
fn logged_replay_is_sound_in_both_modes() {
    let data = generated(40, 21);
    for mode in [DoneMode::Training, DoneMode::EvalNoDones] {
        let ev = evaluate::<f64, _>(
            &LogReplayPolicy,
            &data,
            &sim(mode),
            16,
            0,
            &MetricOptions::default(),
        )
        .unwrap();
        let agg = &ev.aggregate;
        assert_eq!(agg.scenarios + agg.degenerate, 40);
        assert_eq!(agg.failure_rate, 0.0, "{mode:?}");
        assert!(
            (agg.progress_ratio - 1.0).abs() <= 1e-3,
            "{mode:?}: {}",
            agg.progress_ratio
        );
        for r in &ev.reports {
            assert!(
                (r.relative_progress_raw - 1.0).abs() <= 1e-6,
                "{}",
                r.scenario_id
            );
            assert_eq!(r.stop_line_free * r.traffic_light_free, 1.0);
        }
    }
}

#[test]
fn braking_agent_makes_little_progress_and_never_fails() {
    let data: Vec<Scenario> = (0..6)
        .map(|i| straight(&format!("s{i}"), 100, 4.0 + i as f32))
        .collect();
    let brake = ConstantPolicy([0, 2]);
    let ev = evaluate::<f64, _>(
        &brake,
        &data,
        &sim(DoneMode::EvalNoDones),
        4,
        0,
        &MetricOptions::default(),
    )
    .unwrap();
    assert_eq!(ev.aggregate.failure_rate, 0.0);
    assert!(
        ev.aggregate.progress_ratio < 0.1,
        "{}",
        ev.aggregate.progress_ratio
    );
}

#[test]
fn stationary_log_is_degenerate() {
    let data = vec![straight("moving", 50, 5.0), straight("parked", 50, 0.0)];
    let ev = evaluate::<f64, _>(
        &LogReplayPolicy,
        &data,
        &sim(DoneMode::Training),
        8,
        0,
        &MetricOptions::default(),
    )
    .unwrap();
    assert_eq!(ev.aggregate.degenerate, 1);
    assert_eq!(ev.aggregate.degenerate_ids, vec!["parked".to_string()]);
    assert_eq!(ev.reports.len(), 1);
    assert_eq!(ev.reports[0].scenario_id, "moving");
}

#[test]
fn eval_mode_latches_every_event() {
    let mut sc = straight("multi", 60, 5.0);
    // an agent that exists only at step 10, right on top of the ego
    let mut agent = LoggedAgent {
        id: 1,
        length: 4.0,
        width: 2.0,
        poses: vec![LoggedPose::default(); 60],
        valid: vec![false; 60],
    };
    agent.poses[10] = LoggedPose {
        x: 5.0 + 5.0 + 1.5,
        y: 0.0,
        heading: 0.0,
        v: 5.0,
    };
    agent.valid[10] = true;
    sc.agents.push(agent);
    let steer_left = SwitchPolicy {
        from: 15,
        action: [3, 4],
    };

    let eval = env_of(vec![sc.clone()], sim(DoneMode::EvalNoDones));
    let ep = rollout(&eval, &steer_left, 0, false).unwrap();
    assert_eq!(ep.live_steps(0), 59);
    let collision_at = (0..ep.steps).find(|&t| ep.events[ep.idx(0, t)] == DoneReason::Collision);
    let off_at = (0..ep.steps).find(|&t| ep.events[ep.idx(0, t)] == DoneReason::OffRoute);
    assert_eq!(collision_at, Some(9));
    assert!(off_at.unwrap() > 15);
    let r = episode_reports(&eval, &ep, &MetricOptions::default()).unwrap()[0]
        .clone()
        .unwrap();
    assert_eq!((r.collision_free, r.off_route_free), (0.0, 0.0));
    assert_eq!((r.stop_line_free, r.traffic_light_free), (1.0, 1.0));

    let train = env_of(vec![sc], sim(DoneMode::Training));
    let ep = rollout(&train, &steer_left, 0, false).unwrap();
    assert_eq!(ep.live_steps(0), 10);
    let r = episode_reports(&train, &ep, &MetricOptions::default()).unwrap()[0]
        .clone()
        .unwrap();
    assert_eq!((r.collision_free, r.off_route_free), (0.0, 1.0));
}

#[test]
fn eval_flags_contain_the_training_done_reason() {
    let data = generated(24, 22);
    for seed in 0..3 {
        let train = env_of(data.clone(), sim(DoneMode::Training));
        let eval = env_of(data.clone(), sim(DoneMode::EvalNoDones));
        let a = rollout(&train, &UniformPolicy, seed, false).unwrap();
        let b = rollout(&eval, &UniformPolicy, seed, false).unwrap();
        let mut terminated = 0;
        for row in 0..data.len() {
            let reason = a.final_state.done_reason[row];
            assert!(
                b.latched_events(row) & reason.flag() == reason.flag(),
                "row {row}"
            );
            terminated += (reason != DoneReason::None) as usize;
        }
        assert!(terminated > 0);
    }
}

#[test]
fn post_done_entries_do_not_matter() {
    let data = generated(16, 23);
    let env = env_of(data, sim(DoneMode::Training));
    let ep = rollout(&env, &UniformPolicy, 4, false).unwrap();
    let opts = MetricOptions::default();
    let before = episode_reports(&env, &ep, &opts).unwrap();
    let returns: Vec<f64> = (0..ep.batch).map(|b| ep.episode_return(b)).collect();
    let mut noisy = ep.clone();
    for i in 0..noisy.mask.len() {
        if noisy.mask[i] == 0 {
            noisy.rewards[i] = 1e6;
            noisy.lateral_accel[i] = 50.0;
            noisy.longitudinal_accel[i] = -50.0;
            noisy.actions[i] = [5, 4];
        }
    }
    assert!(noisy.mask.iter().any(|&m| m == 0));
    assert_eq!(episode_reports(&env, &noisy, &opts).unwrap(), before);
    assert_eq!(
        (0..ep.batch)
            .map(|b| noisy.episode_return(b))
            .collect::<Vec<_>>(),
        returns
    );
}

#[test]
fn aggregate_is_recomputable_from_csv() {
    let data = generated(30, 24);
    let ev = evaluate::<f64, _>(
        &UniformPolicy,
        &data,
        &sim(DoneMode::EvalNoDones),
        7,
        3,
        &MetricOptions::default(),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&ev.reports, &mut buf).unwrap();
    let rows = read_metrics_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert!(rows.windows(2).all(|w| w[0].scenario_id < w[1].scenario_id));
    let n = rows.len() as f64;
    let mean =
        |f: fn(&zsim_core::metrics::MetricReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let agg = &ev.aggregate;
    assert!((mean(|r| r.scenario_score) - agg.mean_scenario_score).abs() < 1e-12);
    assert!((mean(|r| r.relative_progress_raw) - agg.progress_ratio).abs() < 1e-12);
    assert!((mean(|r| r.collision_free) - agg.mean_collision_free).abs() < 1e-12);
    let fail = 1.0 - mean(|r| r.collision_free * r.off_route_free);
    assert!((fail - agg.failure_rate).abs() < 1e-12);
    for r in &rows {
        for m in r.scored() {
            assert!((0.0..=1.0).contains(&m));
        }
        let s = zsim_core::metrics::scenario_score(r, &MetricOptions::default().bounds).unwrap();
        assert!((s - r.scenario_score).abs() < 1e-12);
    }
}
