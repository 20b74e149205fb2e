use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scenario::testutil::straight_scenario;
use crate::scenario::{
    generate_synthetic, GeneratorConfig, LoggedAgent, LoggedPose, Scenario, TrafficSignal,
};

fn env_of(scenarios: Vec<Scenario>, config: SimConfig) -> Env<f64> {
    let horizon = scenarios.iter().map(|s| s.num_steps).max().unwrap();
    Env::new(
        config,
        Arc::new(ScenarioBatch::new(scenarios, horizon).unwrap()),
    )
    .unwrap()
}

fn still_agent(
    id: u32,
    num_steps: usize,
    x: f32,
    y: f32,
    heading: f32,
    length: f32,
    width: f32,
) -> LoggedAgent {
    LoggedAgent {
        id,
        length,
        width,
        poses: vec![
            LoggedPose {
                x,
                y,
                heading,
                v: 0.0
            };
            num_steps
        ],
        valid: vec![true; num_steps],
    }
}

/// Samples every action uniformly from the row's own stream.
struct UniformPolicy;

impl Policy<f64> for UniformPolicy {
    fn act(
        &self,
        input: &PolicyInput<'_, f64>,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<PolicyOutput<f64>> {
        let [na, ns] = input.env.config.actions.sizes();
        let actions = rngs
            .iter_mut()
            .map(|r| [r.gen_range(0..na), r.gen_range(0..ns)])
            .collect();
        Ok(PolicyOutput::deterministic(actions))
    }
}

#[test]
fn done_rows_are_absorbing() {
    let env = env_of(
        vec![straight_scenario(20, 5.0), straight_scenario(20, 3.0)],
        SimConfig::default(),
    );
    let mut state = env.reset(1);
    state.done = vec![true, true];
    state.done_reason = vec![DoneReason::Collision, DoneReason::OffRoute];
    let out = env.step(&state, &[[5, 4], [0, 0]]).unwrap();
    assert_eq!(out.state, state);
    assert_eq!(out.rewards, vec![0.0, 0.0]);
    assert_eq!(out.live, vec![false, false]);
}

#[test]
fn straight_zero_action_earns_progress_only() {
    let env = env_of(vec![straight_scenario(20, 5.0)], SimConfig::default());
    let state = env.reset(0);
    let zero = env.config.actions.zero_action();
    let out = env.step(&state, &[zero]).unwrap();
    let progress = out.state.s[0] - state.s[0];
    assert!((progress - 0.5).abs() < 1e-12);
    assert_eq!(out.rewards[0], progress);
    assert_eq!(out.done_events[0], DoneReason::None);
}

#[test]
fn null_step_reward_is_zero() {
    let tr = Transition {
        progress: 0.0,
        speed: 0.0,
        speed_limit: 10.0,
        lateral_accel: 0.0,
        longitudinal_accel: 0.0,
        dt: 0.1,
        terminal: DoneReason::None,
    };
    assert_eq!(compute_reward(&tr, &RewardConfig::default()), 0.0);
}

#[test]
fn over_speed_penalty_example() {
    let tr = Transition {
        progress: 0.0,
        speed: 11.0,
        speed_limit: 10.0,
        lateral_accel: 0.0,
        longitudinal_accel: 0.0,
        dt: 0.1,
        terminal: DoneReason::None,
    };
    assert!((compute_reward::<f64>(&tr, &RewardConfig::default()) + 0.01).abs() < 1e-15);
}

#[test]
fn terminal_penalty_only_for_failures() {
    let mut tr = Transition {
        progress: 1.0,
        speed: 5.0,
        speed_limit: 10.0,
        lateral_accel: 0.0,
        longitudinal_accel: 0.0,
        dt: 0.1,
        terminal: DoneReason::GoalReached,
    };
    let cfg = RewardConfig::default();
    assert_eq!(compute_reward(&tr, &cfg), 1.0);
    for r in [
        DoneReason::Collision,
        DoneReason::OffRoute,
        DoneReason::RedLight,
        DoneReason::StopLine,
    ] {
        tr.terminal = r;
        assert_eq!(compute_reward(&tr, &cfg), -9.0);
    }
}

#[test]
fn empty_road_has_no_done() {
    let env = env_of(vec![straight_scenario(30, 5.0)], SimConfig::default());
    let ep = rollout(&env, &LogReplayPolicy, 0, false).unwrap();
    assert!(ep.dones.iter().all(|d| !d));
    assert_eq!(ep.latched_events(0), 0);
}

#[test]
fn corner_overlap_is_a_collision() {
    let vehicle = VehicleParams::default();
    let ego = EgoState::<f64> {
        x: 5.0,
        ..Default::default()
    };
    let ebox = ego_box(&ego, &vehicle);
    let front_left = ebox.corners()[0];
    // agent 4 x 2, its rear-right corner 1 mm inside the ego's front-left corner
    let inside = Vec2::new(front_left.x + 2.0 - 1e-3, front_left.y + 1.0 - 1e-3);
    let outside = Vec2::new(front_left.x + 2.0 + 1e-2, front_left.y + 1.0 + 1e-2);
    let agent = |c: Vec2<f64>| Obb::new(c, 0.0, 4.0, 2.0);
    assert!(collision_check(&ebox, &[agent(inside)]));
    assert!(!collision_check(&ebox, &[agent(outside)]));

    let mut sc = straight_scenario(10, 0.0);
    let c = inside.cast::<f32>();
    sc.agents.push(still_agent(7, 10, c.x, c.y, 0.0, 4.0, 2.0));
    let env = env_of(vec![sc], SimConfig::default());
    let out = env
        .step(&env.reset(0), &[env.config.actions.zero_action()])
        .unwrap();
    assert_eq!(out.done_events[0], DoneReason::Collision);
    assert_eq!(out.state.done_reason[0], DoneReason::Collision);
}

#[test]
fn separated_and_identical_boxes() {
    let a = Obb::new(Vec2::new(0.0, 0.0), 0.3, 4.0, 2.0);
    let b = Obb::new(Vec2::new(10.0, 0.0), 0.3, 4.0, 2.0);
    assert!(!collision_check(&a, &[b]));
    assert!(collision_check(&a, &[a]));
}

/// Light at x = 30 turning green at `green_at`; the ego drives at 10 m/s.
fn red_light_scenario(green_at: usize) -> Scenario {
    let n = 40;
    let mut sc = straight_scenario(n, 10.0);
    sc.traffic_lights.push(TrafficSignal {
        id: 1,
        stop_point: Vec2::new(30.0, 0.0),
        states: (0..n)
            .map(|t| {
                if t < green_at {
                    LightState::Red
                } else {
                    LightState::Green
                }
            })
            .collect(),
    });
    sc
}

/// First post-step time at which the front bumper passes `line_x`, from the
/// raw x trace of a straight +x road.
fn crossing_time(xs: &[f64], front: f64, line_x: f64) -> Option<usize> {
    (1..xs.len()).find(|&t| xs[t - 1] + front < line_x && line_x <= xs[t] + front)
}

#[test]
fn red_light_is_sampled_at_the_crossing_step() {
    let front = VehicleParams::default().front_offset();
    let env0 = env_of(vec![red_light_scenario(usize::MAX)], SimConfig::default());
    let zero = env0.config.actions.zero_action();

    // per-step trace oracle
    let mut state = env0.reset(0);
    let mut xs = vec![state.x[0]];
    let mut cfg = env0.config.clone();
    cfg.mode = DoneMode::EvalNoDones;
    let trace_env = Env {
        config: cfg,
        ..env0.clone()
    };
    for _ in 0..env0.transitions(0) {
        state = trace_env.step(&state, &[zero]).unwrap().state;
        xs.push(state.x[0]);
    }
    let cross = crossing_time(&xs, front, 30.0).expect("ego passes the light");

    // red at the crossing step, green one step later
    let env = env_of(vec![red_light_scenario(cross + 1)], SimConfig::default());
    let ep = rollout(&env, &ConstantPolicy(zero), 0, false).unwrap();
    let terminal = (0..ep.steps).find(|&t| ep.dones[ep.idx(0, t)]).unwrap();
    assert_eq!(terminal + 1, cross);
    assert_eq!(ep.events[ep.idx(0, terminal)], DoneReason::RedLight);

    // already green at the crossing step
    let env = env_of(vec![red_light_scenario(cross)], SimConfig::default());
    let ep = rollout(&env, &ConstantPolicy(zero), 0, false).unwrap();
    assert!(ep.dones.iter().all(|d| !d));
}

#[test]
fn goal_reaching_step_has_no_terminal_reward() {
    let mut sc = straight_scenario(30, 10.0);
    sc.goal = Vec2::new(20.0, 0.0);
    let env = env_of(vec![sc], SimConfig::default());
    let ep = rollout(
        &env,
        &ConstantPolicy(env.config.actions.zero_action()),
        0,
        false,
    )
    .unwrap();
    let t = (0..ep.steps).find(|&t| ep.dones[ep.idx(0, t)]).unwrap();
    let i = ep.idx(0, t);
    assert_eq!(ep.events[i], DoneReason::GoalReached);
    let progress = ep.s[t + 1] - ep.s[t];
    assert_eq!(ep.rewards[i], progress);
    assert!(ep.s[t + 1] >= 18.0);
    assert_eq!(ep.live_steps(0), t + 1);
}

#[test]
fn agent_ahead_maps_to_ego_x_axis() {
    let mut sc = straight_scenario(10, 0.0);
    for p in &mut sc.ego_log {
        p.heading = FRAC_PI_2 as f32;
    }
    let (ex, ey) = (sc.ego_log[0].x, sc.ego_log[0].y);
    sc.agents
        .push(still_agent(3, 10, ex, ey + 5.0, FRAC_PI_2 as f32, 4.0, 2.0));
    let env = env_of(vec![sc], SimConfig::default());
    let obs = extract_observations(&env, &env.reset(0));
    let p = &obs.policy;
    assert_eq!(p.agent_valid[0], 1);
    assert!((p.agents[0] - 5.0).abs() < 1e-6, "x = {}", p.agents[0]);
    assert!(p.agents[1].abs() < 1e-6, "y = {}", p.agents[1]);
    assert!((p.agents[2] - 1.0).abs() < 1e-6);
    assert!(p.agents[3].abs() < 1e-6);
    assert!(p.agent_valid[1..].iter().all(|&v| v == 0));
}

#[test]
fn no_agents_means_no_valid_slots() {
    let env = env_of(vec![straight_scenario(10, 3.0)], SimConfig::default());
    let obs = extract_observations(&env, &env.reset(0));
    assert!(obs.policy.agent_valid.iter().all(|&v| v == 0));
    assert_eq!(obs.policy.row_valid, vec![1]);
    assert!(obs.policy.route_valid.iter().any(|&v| v == 1));
}

#[test]
fn parallel_boxes_three_meters_apart() {
    let a = Obb::<f64>::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 2.0);
    let b = Obb::new(Vec2::new(0.0, 3.0), 0.0, 4.0, 2.0);
    assert!((a.distance(&b) - 1.0).abs() < 1e-12);
}

#[test]
fn zero_action_from_rest_stays_put() {
    let sc = straight_scenario(25, 0.0);
    let env = env_of(vec![sc], SimConfig::default());
    let ep = rollout(
        &env,
        &ConstantPolicy(env.config.actions.zero_action()),
        0,
        true,
    )
    .unwrap();
    assert_eq!(ep.steps, 24);
    assert!(ep.mask.iter().all(|&m| m == 1));
    assert!(ep.s.iter().all(|&s| s == ep.s[0]));
    assert!(ep.rewards.iter().all(|&r| r == 0.0));
    assert_eq!(ep.final_state.x[0], env.reset(0).x[0]);
    assert_eq!(ep.observations.len(), 25);
}

#[test]
fn mask_is_ones_then_zeros() {
    let mut short = straight_scenario(12, 5.0);
    short.id = "short".into();
    let mut crash = straight_scenario(30, 10.0);
    crash
        .agents
        .push(still_agent(1, 30, 25.0, 0.0, 0.0, 4.0, 2.0));
    let env = env_of(
        vec![short, crash, straight_scenario(30, 5.0)],
        SimConfig::default(),
    );
    let ep = rollout(&env, &LogReplayPolicy, 0, false).unwrap();
    assert_eq!(ep.live_steps(0), 11);
    for b in 0..3 {
        let row = &ep.mask[b * ep.steps..(b + 1) * ep.steps];
        let k = row.iter().take_while(|&&m| m == 1).count();
        assert!(row[k..].iter().all(|&m| m == 0));
        if let Some(t) = (0..ep.steps).find(|&t| ep.dones[ep.idx(b, t)]) {
            assert_eq!(k, t + 1);
        }
    }
    assert_eq!(ep.final_state.done_reason[1], DoneReason::Collision);
    // the row at its last logged step still provides a bootstrap observation
    assert_eq!(ep.bootstrap_values.len(), 3);
}

fn generated(count: usize, seed: u64) -> Vec<Scenario> {
    let cfg = GeneratorConfig {
        count,
        num_steps: 60,
        ..Default::default()
    };
    generate_synthetic(&cfg, seed).unwrap()
}

#[test]
fn batch_step_equals_single_row_steps() {
    let env = env_of(generated(32, 5), SimConfig::default());
    let mut state = env.reset(9);
    for _ in 0..15 {
        let obs = extract_observations(&env, &state);
        let mut rngs = std::mem::take(&mut state.rng);
        let out = UniformPolicy
            .act(
                &PolicyInput {
                    env: &env,
                    state: &state,
                    obs: &obs,
                },
                &mut rngs,
            )
            .unwrap();
        state.rng = rngs;
        let batched = env.step(&state, &out.actions).unwrap();
        for b in 0..env.len() {
            let single_env = env.row_env(b);
            let single = single_env.step(&state.row(b), &[out.actions[b]]).unwrap();
            assert_eq!(single.state, batched.state.row(b), "row {b}");
            assert_eq!(single.rewards[0].to_bits(), batched.rewards[b].to_bits());
            assert_eq!(single.done_events[0], batched.done_events[b]);
            let so = extract_observations(&single_env, &single.state);
            assert_eq!(so, extract_observations(&env, &batched.state).row(b));
        }
        state = batched.state;
    }
}

#[test]
fn step_is_pure() {
    let env = env_of(generated(8, 2), SimConfig::default());
    let state = env.reset(3);
    let actions = vec![[4, 1]; 8];
    let a = env.step(&state, &actions).unwrap();
    let b = env.step(&state, &actions).unwrap();
    assert_eq!(a, b);
    assert_eq!(state, env.reset(3));
}

#[test]
fn same_seed_same_episode() {
    let env = env_of(generated(8, 4), SimConfig::default());
    let a = rollout(&env, &UniformPolicy, 17, true).unwrap();
    let b = rollout(&env, &UniformPolicy, 17, true).unwrap();
    assert_eq!(a, b);
    let c = rollout(&env, &UniformPolicy, 18, false).unwrap();
    assert_ne!(a.actions, c.actions);
}

#[test]
fn one_reason_per_terminal_step() {
    let env = env_of(generated(16, 6), SimConfig::default());
    let ep = rollout(&env, &UniformPolicy, 1, false).unwrap();
    for b in 0..ep.batch {
        let terminals: Vec<usize> = (0..ep.steps).filter(|&t| ep.dones[ep.idx(b, t)]).collect();
        assert!(terminals.len() <= 1);
        if let Some(&t) = terminals.first() {
            let reason = ep.events[ep.idx(b, t)];
            assert_ne!(reason, DoneReason::None);
            assert_eq!(ep.final_state.done_reason[b], reason);
        }
    }
}

#[test]
fn replayed_rewards_match_offline_recomputation() {
    let env = env_of(generated(6, 8), SimConfig::default());
    let ep = rollout(&env, &UniformPolicy, 2, false).unwrap();
    let cfg = &env.config;
    let dt = env.batch.dt;
    let start = env.reset(2);
    for b in 0..ep.batch {
        let limit = env.rows[b].speed_limit;
        let mut v = start.v[b];
        for t in (0..ep.steps).filter(|&t| ep.mask[ep.idx(b, t)] == 1) {
            let i = ep.idx(b, t);
            let (accel, _) = cfg.actions.decode::<f64>(ep.actions[i]).unwrap();
            v = (v + accel * dt).clamp(cfg.vehicle.v_min, cfg.vehicle.v_max);
            let progress = ep.s[b * (ep.steps + 1) + t + 1] - ep.s[b * (ep.steps + 1) + t];
            let a_lat = ep.lateral_accel[i];
            let mut expected = progress
                - 0.1 * (v - limit).max(0.0) * dt
                - 0.02 * a_lat * a_lat * dt
                - 0.02 * accel * accel * dt;
            if ep.dones[i] && ep.events[i].is_failure() {
                expected -= 10.0;
            }
            assert!((ep.rewards[i] - expected).abs() < 1e-9, "row {b} step {t}");
        }
    }
}
