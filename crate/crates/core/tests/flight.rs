use std::f64::consts::{FRAC_PI_2, PI, TAU};

use frisim_core::config::ScenarioConfig;
use frisim_core::env::{reward, Env, EnvAction, EnvError};
use frisim_core::noma::{rate_bob, rate_carol, NomaParams};
use frisim_core::uav::{check_separation, enforce_separation, step_kinematics, Command, KinematicLimits, UavState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wild_command(rng: &mut ChaCha8Rng, lim: &KinematicLimits) -> Command {
    Command {
        accel: rng.random_range(-3.0 * lim.ac_max..3.0 * lim.ac_max),
        heading: rng.random_range(-10.0..10.0),
        pitch: rng.random_range(-1.0..4.0),
    }
}

#[test]
fn kinematic_envelope_holds_under_any_command() {
    let lim = KinematicLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let mut s = UavState::at([0.0, 0.0, rng.random_range(lim.z_min..=lim.z_max)]);
        for _ in 0..100 {
            let (next, _) = step_kinematics(&s, &wild_command(&mut rng, &lim), &lim);
            assert!(lim.admits(&next), "{next:?}");
            let moved = (0..3).map(|k| (next.position[k] - s.position[k]).powi(2)).sum::<f64>().sqrt();
            assert!(moved <= lim.v_max * lim.dt + 1e-9);
            s = next;
        }
    }
}

#[test]
fn level_flight_is_collinear() {
    let lim = KinematicLimits::default();
    let heading = 0.6;
    let mut s = UavState::at([10.0, -5.0, 45.0]);
    let start = s.position;
    for k in 0..30 {
        let accel = if k % 3 == 0 { 1.5 } else { -0.4 };
        let (next, flags) = step_kinematics(&s, &Command { accel, heading, pitch: FRAC_PI_2 }, &lim);
        assert!(!flags.altitude_clamped && !flags.heading_wrapped);
        let (dx, dy) = (next.position[0] - start[0], next.position[1] - start[1]);
        assert!((dx * heading.sin() - dy * heading.cos()).abs() < 1e-9);
        assert_eq!(next.position[2], 45.0);
        s = next;
    }
}

#[test]
fn half_slots_compose() {
    let lim = KinematicLimits { z_min: 1.0, z_max: 1e4, ..KinematicLimits::default() };
    let half = KinematicLimits { dt: lim.dt / 2.0, ..lim };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let s = UavState { speed: rng.random_range(0.0..=lim.v_max), ..UavState::at([0.0, 0.0, 500.0]) };
        let cmd = Command {
            accel: rng.random_range(-lim.ac_max..=lim.ac_max),
            heading: rng.random_range(0.0..TAU),
            pitch: rng.random_range(0.2..PI - 0.2),
        };
        let (full, _) = step_kinematics(&s, &cmd, &lim);
        let (mid, _) = step_kinematics(&s, &cmd, &half);
        let (two, _) = step_kinematics(&mid, &cmd, &half);
        for k in 0..3 {
            assert!((full.position[k] - two.position[k]).abs() < 1e-9);
        }
        assert!((full.speed - two.speed).abs() < 1e-12);
    }
}

#[test]
fn separation_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let a = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(35.0..60.0)];
        let mut b = UavState::at([
            a[0] + rng.random_range(-80.0..80.0),
            a[1] + rng.random_range(-80.0..80.0),
            rng.random_range(35.0..60.0),
        ]);
        let before = b.position;
        let moved = enforce_separation(a, &mut b, 60.0);
        let sep = check_separation(a, b.position, 60.0);
        assert!(sep.ok);
        assert_eq!(b.position[2], before[2]);
        if moved {
            assert!(sep.distance - 60.0 < 1e-9);
        } else {
            assert_eq!(b.position, before);
        }
    }
    assert!(check_separation([0.0; 3], [60.0, 0.0, 0.0], 60.0).ok);
}

fn small_config(m: usize, slots: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.ris.elements = m;
    cfg.episode.slots = slots;
    cfg
}

fn random_action(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> EnvAction {
    let m = cfg.elements();
    let lim = &cfg.kinematics;
    let b = cfg.ris.max_bend_deg;
    let two = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi)];
    let accel = two(rng, -2.0 * lim.ac_max, 2.0 * lim.ac_max);
    let heading = two(rng, -7.0, 14.0);
    let pitch = two(rng, -0.5, 3.5);
    let beta = rng.random_range(-0.2..1.2);
    let mut many = |lo: f64, hi: f64| (0..m).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
    EnvAction { accel, heading, pitch, beta, phases: many(-7.0, 14.0), bend_h: many(-2.0 * b, 2.0 * b), bend_v: many(-2.0 * b, 2.0 * b) }
}

#[test]
fn emitted_states_respect_constraints() {
    let cfg = small_config(4, 60);
    let mut env = Env::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lim = cfg.kinematics;
    for ep in 0..200 {
        env.reset(ep);
        while !env.is_done() {
            let tr = env.step(&random_action(&mut rng, &cfg)).unwrap();
            assert!(lim.admits(&tr.state.alice) && lim.admits(&tr.state.bob));
            assert!(check_separation(tr.state.alice.position, tr.state.bob.position, lim.d_min).ok);
            assert!((cfg.noma.beta_min..=cfg.noma.beta_max).contains(&tr.info.beta));
        }
    }
}

#[test]
fn episodes_are_reproducible() {
    let cfg = small_config(6, 20);
    let run = |seed: u64| {
        let mut env = Env::new(cfg.clone()).unwrap();
        env.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut out = Vec::new();
        while !env.is_done() {
            out.push(env.step(&random_action(&mut rng, &cfg)).unwrap());
        }
        out
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5)[0].state.channels, run(6)[0].state.channels);
}

#[test]
fn running_averages_and_rewards_recompute() {
    let cfg = small_config(5, 40);
    let mut env = Env::new(cfg.clone()).unwrap();
    let noise = env.channel_params().noise_power;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for ep in 0..20 {
        env.reset(ep);
        let (mut rb, mut rc) = (Vec::new(), Vec::new());
        while !env.is_done() {
            let tr = env.step(&random_action(&mut rng, &cfg)).unwrap();
            let np = NomaParams::new(tr.info.beta, cfg.noma.transmit_power_w, noise);
            // The emitted channels are the ones the rates were computed from.
            assert_eq!(rate_bob(&np, tr.state.channels.h_b.norm_sqr()), tr.info.rate_bob);
            assert_eq!(rate_carol(&np, tr.state.channels.h_c.norm_sqr()), tr.info.rate_carol);
            rb.push(tr.info.rate_bob);
            rc.push(tr.info.rate_carol);
            let n = rb.len() as f64;
            let (avg_b, avg_c) = (rb.iter().sum::<f64>() / n, rc.iter().sum::<f64>() / n);
            assert!((avg_b - tr.state.avg_rate_bob).abs() < 1e-9);
            assert!((avg_c - tr.state.avg_rate_carol).abs() < 1e-9);
            assert_eq!(tr.reward, reward(tr.state.avg_rate_bob, tr.state.avg_rate_carol, tr.info.covert.c1_ok, &cfg));
            if tr.info.covert.c1_ok && tr.info.public_ok {
                assert_eq!(tr.reward, tr.state.avg_rate_bob);
            }
            assert_eq!(tr.state.observation().len(), env.state_dim());
        }
        let s = env.summary();
        assert_eq!(s.slots, 40);
        assert!((s.avg_rate_bob - env.state().avg_rate_bob).abs() < 1e-9);
    }
}

#[test]
fn rejected_actions_leave_state_untouched() {
    let cfg = small_config(4, 3);
    let mut env = Env::new(cfg).unwrap();
    env.reset(1);
    let before = env.state().clone();
    let short = vec![0.0; env.action_dim() - 1];
    assert!(matches!(env.step_slice(&short), Err(EnvError::ActionDim { expected: 19, got: 18 })));
    let mut bad = EnvAction::neutral(4).to_vec();
    bad[8] = f64::NAN;
    assert!(matches!(env.step_slice(&bad), Err(EnvError::NonFiniteAction { index: 8 })));
    assert_eq!(env.state(), &before);
    assert!(env.trace().is_empty());
    for _ in 0..3 {
        env.step(&EnvAction::neutral(4)).unwrap();
    }
    let done = env.state().clone();
    assert!(matches!(env.step(&EnvAction::neutral(4)), Err(EnvError::EpisodeFinished)));
    assert_eq!(env.state(), &done);
}
