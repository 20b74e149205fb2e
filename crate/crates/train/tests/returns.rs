mod common;

use proptest::prelude::*;
use rand::Rng;
use zsim_train::{discounted_return, vtrace, VtraceParams};

use common::{n_step_returns, rng, vtrace_oracle};

proptest! {
    #[test]
    fn discounted_return_matches_double_loop(
        rewards in prop::collection::vec(-5.0f64..5.0, 1..60),
        gamma in 0.0f64..=1.0,
        cut in 0usize..60,
    ) {
        let n = rewards.len();
        let live = cut.min(n);
        let mask: Vec<u8> = (0..n).map(|t| (t < live) as u8).collect();
        let g = discounted_return(&rewards, &mask, gamma);
        for t in 0..n {
            let expect: f64 = if t < live {
                (t..live).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum()
            } else {
                0.0
            };
            prop_assert!((g[t] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }
}

#[test]
fn on_policy_vtrace_is_the_n_step_return() {
    let mut r = rng(1);
    for _ in 0..200 {
        let n = r.gen_range(1..=32);
        let v: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let rew: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let terminated = r.gen_bool(0.3);
        let mut d = vec![false; n];
        d[n - 1] = terminated;
        let boot = if terminated {
            0.0
        } else {
            r.gen_range(-3.0..3.0)
        };
        let p = VtraceParams {
            gamma: 0.99,
            rho_bar: 1.0,
            c_bar: 1.0,
        };
        let out = vtrace(&v, boot, &rew, &d, &vec![1; n], &vec![0.0; n], &p);
        let expect = n_step_returns(&rew, boot, 0.99, terminated);
        for t in 0..n {
            assert!(
                (out.vs[t] - expect[t]).abs() < 1e-10,
                "t={t}: {} vs {}",
                out.vs[t],
                expect[t]
            );
        }
    }
}

#[test]
fn off_policy_vtrace_matches_the_direct_sum() {
    let mut r = rng(2);
    for _ in 0..1000 {
        let n = r.gen_range(1..=32);
        let v: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let rew: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| r.gen_bool(0.05)).collect();
        let lr: Vec<f64> = (0..n).map(|_| r.gen_range(-1.5..1.5)).collect();
        let boot = r.gen_range(-3.0..3.0);
        let (rho_bar, c_bar) = (r.gen_range(0.5..2.0), r.gen_range(0.5..2.0));
        let p = VtraceParams {
            gamma: 0.97,
            rho_bar,
            c_bar,
        };
        let out = vtrace(&v, boot, &rew, &d, &vec![1; n], &lr, &p);
        let (vs, adv) = vtrace_oracle(&v, boot, &rew, &d, &lr, 0.97, rho_bar, c_bar);
        for t in 0..n {
            assert!((out.vs[t] - vs[t]).abs() < 1e-10);
            assert!((out.advantages[t] - adv[t]).abs() < 1e-10);
        }
    }
}

#[test]
fn padded_tail_is_inert() {
    let mut r = rng(3);
    let n = 20;
    let live = 12;
    let v: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
    let rew: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let lr: Vec<f64> = (0..n).map(|_| r.gen_range(-0.5..0.5)).collect();
    let mask: Vec<u8> = (0..n).map(|t| (t < live) as u8).collect();
    let p = VtraceParams {
        gamma: 0.99,
        rho_bar: 1.0,
        c_bar: 1.0,
    };
    let base = vtrace(&v, 0.7, &rew, &vec![false; n], &mask, &lr, &p);
    let (vs, adv) = vtrace_oracle(
        &v[..live],
        0.7,
        &rew[..live],
        &vec![false; live],
        &lr[..live],
        0.99,
        1.0,
        1.0,
    );
    for t in 0..live {
        assert!((base.vs[t] - vs[t]).abs() < 1e-12);
        assert!((base.advantages[t] - adv[t]).abs() < 1e-12);
    }
    let mut rew2 = rew.clone();
    let mut lr2 = lr.clone();
    for t in live..n {
        rew2[t] = 1e6;
        lr2[t] = 5.0;
    }
    let tail_dones: Vec<bool> = (0..n).map(|t| t >= live).collect();
    let noisy = vtrace(&v, 0.7, &rew2, &tail_dones, &mask, &lr2, &p);
    assert_eq!(noisy.vs[..live], base.vs[..live]);
    assert_eq!(noisy.advantages, base.advantages);
    assert_eq!(&noisy.vs[live..], &v[live..]);
}
