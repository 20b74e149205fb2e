mod common;

use std::net::TcpListener;
use std::time::Duration;

use rand::Rng;
use zsim_core::scenario::{generate_synthetic, GeneratorConfig, Scenario};
use zsim_nn::{Checkpoint, Model, ModelConfig};
use zsim_train::rl::rl_worker;
use zsim_train::{
    allreduce_mean, bc_loss, expert_samples, run_bc, run_rl, BcSample, ChannelMember, Collective,
    Solo, TcpMember, TrainConfig, TrainError,
};

use common::rng;

fn scenarios(count: usize, seed: u64) -> Vec<Scenario> {
    generate_synthetic(
        &GeneratorConfig {
            count,
            num_steps: 30,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

fn toy_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model = ModelConfig::toy();
    cfg.bc.batch = 16;
    cfg.bc.epochs = 1;
    cfg.rl.agent_steps = 300;
    cfg.rl.actor_batch = 2;
    cfg.rl.batch_sequences = 4;
    cfg.rl.eval_every = 150;
    cfg.rl.eval_batch = 2;
    cfg.rl.timeout_secs = 20;
    cfg
}

fn random_grads(n: usize, len: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..len).map(|_| r.gen_range(-1.0f32..1.0)).collect())
        .collect()
}

fn serial_mean(grads: &[Vec<f32>]) -> Vec<f32> {
    (0..grads[0].len())
        .map(|i| {
            let mut s = 0.0f32;
            for g in grads {
                s += g[i];
            }
            s / grads.len() as f32
        })
        .collect()
}

#[test]
fn allreduce_contract() {
    let g = random_grads(1, 50, 1);
    assert_eq!(allreduce_mean(&[g[0].as_slice()]).unwrap(), g[0]);
    let neg: Vec<f32> = g[0].iter().map(|x| -x).collect();
    assert!(allreduce_mean(&[g[0].as_slice(), &neg])
        .unwrap()
        .iter()
        .all(|&x| x == 0.0));
    let four = random_grads(4, 1000, 2);
    let refs: Vec<&[f32]> = four.iter().map(|v| v.as_slice()).collect();
    assert_eq!(allreduce_mean(&refs).unwrap(), serial_mean(&four));
    assert!(matches!(
        allreduce_mean(&[&g[0][..3], &g[0][..4]]),
        Err(TrainError::Shape(_))
    ));
}

fn exercise<C: Collective>(mut m: C, mine: Vec<f32>) -> (Vec<f32>, Vec<u64>, Vec<f32>) {
    let mut g = mine;
    m.allreduce_mean(&mut g).unwrap();
    let counts = m.allgather(10 + m.rank() as u64).unwrap();
    let mut p = vec![m.rank() as f32; 5];
    m.broadcast(&mut p).unwrap();
    (g, counts, p)
}

#[test]
fn channel_group_delivers_the_serial_mean_to_everyone() {
    let grads = random_grads(4, 777, 3);
    let expect = serial_mean(&grads);
    let members = ChannelMember::group(4, Duration::from_secs(5));
    let results: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = members
            .into_iter()
            .zip(grads.clone())
            .map(|(m, g)| s.spawn(move || exercise(m, g)))
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (g, counts, p) in results {
        assert_eq!(g, expect);
        assert_eq!(counts, vec![10, 11, 12, 13]);
        assert_eq!(p, vec![0.0; 5]);
    }
}

#[test]
fn socket_group_delivers_the_serial_mean_to_everyone() {
    let grads = random_grads(4, 777, 4);
    let expect = serial_mean(&grads);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let timeout = Duration::from_secs(5);
    let results: Vec<_> = std::thread::scope(|s| {
        let g0 = grads[0].clone();
        let mut hs =
            vec![s.spawn(move || exercise(TcpMember::root(listener, 4, timeout).unwrap(), g0))];
        for rank in 1..4 {
            let g = grads[rank].clone();
            hs.push(
                s.spawn(move || exercise(TcpMember::connect(addr, rank, 4, timeout).unwrap(), g)),
            );
        }
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (g, counts, p) in results {
        assert_eq!(g, expect);
        assert_eq!(counts, vec![10, 11, 12, 13]);
        assert_eq!(p, vec![0.0; 5]);
    }
}

#[test]
fn straggler_times_out() {
    let mut members = ChannelMember::group(2, Duration::from_millis(50));
    let _idle = members.pop();
    let mut root = members.pop().unwrap();
    let mut g = vec![1.0f32; 4];
    assert!(root.allreduce_mean(&mut g).is_err());
}

fn full_ce(model: &Model, params: &[f32], samples: &[BcSample<f32>]) -> f64 {
    let refs: Vec<_> = samples.iter().collect();
    bc_loss(model, params, &refs, 0.0, None)
        .unwrap()
        .cross_entropy
}

#[test]
fn one_epoch_lowers_cross_entropy() {
    let cfg = toy_config();
    let samples = expert_samples(&scenarios(4, 10), &cfg.sim, 0.99, 4).unwrap();
    let model = Model::new(cfg.model.clone()).unwrap();
    let before = full_ce(&model, &model.init_params::<f32>(cfg.seed), &samples);
    let out = run_bc(&cfg, &samples, None, None).unwrap();
    let after = full_ce(&model, &out.checkpoint.params, &samples);
    assert!(after < before, "{after} vs {before}");
}

#[test]
fn two_workers_follow_the_single_worker_trajectory() {
    let mut cfg = toy_config();
    cfg.bc.epochs = 2;
    let samples = expert_samples(&scenarios(4, 11), &cfg.sim, 0.99, 4).unwrap();
    let one = run_bc(&cfg, &samples, None, None).unwrap();
    cfg.bc.workers = 2;
    let two = run_bc(&cfg, &samples, None, None).unwrap();
    assert_eq!(one.epochs.len(), two.epochs.len());
    for (a, b) in one.epochs.iter().zip(&two.epochs) {
        assert!((a.loss - b.loss).abs() < 1e-3, "{a:?} vs {b:?}");
    }
}

#[test]
fn resumed_training_continues_identically() {
    let mut cfg = toy_config();
    cfg.bc.epochs = 2;
    cfg.bc.checkpoint_every = 1;
    let samples = expert_samples(&scenarios(4, 12), &cfg.sim, 0.99, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let full = run_bc(&cfg, &samples, None, Some(dir.path())).unwrap();
    let mid = Checkpoint::load(&dir.path().join("checkpoints/bc_epoch001.ckpt")).unwrap();
    let resumed = run_bc(&cfg, &samples, Some(&mid), None).unwrap();
    assert_eq!(resumed.epochs, full.epochs[1..]);
    assert_eq!(resumed.checkpoint.params, full.checkpoint.params);
    assert!(dir.path().join("bc_loss.csv").exists());
    assert!(dir.path().join("bc_final.ckpt").exists());
}

#[test]
fn single_worker_rl_is_bit_reproducible() {
    let cfg = toy_config();
    let train = scenarios(4, 13);
    let eval = scenarios(2, 14);
    let dir = tempfile::tempdir().unwrap();
    let a = run_rl(&cfg, &train, &eval, None, Some(dir.path())).unwrap();
    let b = run_rl(&cfg, &train, &eval, None, None).unwrap();
    assert!(a.updates > 0);
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.agent_steps, b.agent_steps);
    assert_eq!(
        a.checkpoint.as_ref().unwrap().params,
        b.checkpoint.as_ref().unwrap().params
    );
    assert!(a.curve.len() >= 3);
    let text = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(zsim_train::read_curves_csv(&text).unwrap(), a.curve);
    assert!(dir.path().join("rl_final.ckpt").exists());
}

#[test]
fn lost_worker_halts_with_a_partial_checkpoint() {
    let mut cfg = toy_config();
    cfg.rl.timeout_secs = 5;
    let train = scenarios(4, 15);
    let eval = scenarios(2, 16);
    let dir = tempfile::tempdir().unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let res = std::thread::scope(|s| {
        s.spawn(move || {
            let mut m = TcpMember::connect(addr, 1, 2, Duration::from_secs(5)).unwrap();
            let mut p = Vec::new();
            m.broadcast(&mut p).unwrap();
            // leaves after receiving the initial parameters
        });
        let mut root = TcpMember::root(listener, 2, cfg.rl.timeout()).unwrap();
        rl_worker(&cfg, &train, &eval, None, Some(dir.path()), &mut root)
    });
    assert!(matches!(res, Err(TrainError::Transport(_))), "{res:?}");
    let ck = Checkpoint::load(&dir.path().join("rl_partial.ckpt")).unwrap();
    assert_eq!(ck.meta["partial"], true);
}

#[test]
fn solo_collectives_are_identities() {
    let mut s = Solo;
    let mut g = vec![1.5f32, -2.0];
    s.allreduce_mean(&mut g).unwrap();
    assert_eq!(g, vec![1.5, -2.0]);
    assert_eq!(s.allgather(7).unwrap(), vec![7]);
}
