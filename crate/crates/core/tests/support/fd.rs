//! Central-difference checks of the actor, critic and PPO-loss gradients,
//! shared by the gradient tests and the acceptance suite.

use rand::Rng;
use swarmnav_core::rl::ppo::{minibatch_loss, Batch, Sample};
use swarmnav_core::rl::PPOConfig;
use swarmnav_core::policy::{
    Actor, Critic, ObservationBundle, PolicyConfig, NEIGHBOR_DIM, NEIGHBOR_SLOTS, OBSTACLE_DIM, SDF_DIM, SELF_DIM,
};
use swarmnav_core::seeded_rng;

const EPS: f64 = 1e-5;

pub fn random_obs<R: Rng>(rng: &mut R) -> ObservationBundle {
    let n_valid = rng.gen_range(0..=NEIGHBOR_SLOTS);
    let mut o = ObservationBundle {
        self_goal: [0.0; SELF_DIM],
        neighbors: [[0.0; NEIGHBOR_DIM]; NEIGHBOR_SLOTS],
        neighbor_mask: [0.0; NEIGHBOR_SLOTS],
        neighbor_staleness: [0.0; NEIGHBOR_SLOTS],
        obstacles: [0.0; OBSTACLE_DIM],
        sdf: [0.0; SDF_DIM],
    };
    for v in o.self_goal.iter_mut() {
        *v = rng.gen_range(-1.5..1.5);
    }
    for k in 0..n_valid {
        for v in o.neighbors[k].iter_mut() {
            *v = rng.gen_range(-1.5..1.5);
        }
        o.neighbor_mask[k] = 1.0;
    }
    for v in o.obstacles.iter_mut().chain(o.sdf.iter_mut()) {
        *v = rng.gen_range(0.0..2.0);
    }
    o
}

fn close(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        (analytic - numeric).abs() <= 1e-10
    } else {
        (analytic - numeric).abs() <= 1e-4 * scale
    }
}

fn perturb_params<R: Rng>(p: &mut [f64], rng: &mut R) {
    // move away from the near-zero mean head so every path carries signal
    for v in p.iter_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
}

/// Returns (parameters checked, worst relative error).
pub fn actor_check() -> (usize, f64) {
    let mut checked = 0usize;
    let mut rng = seeded_rng(101);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let mut actor = Actor::new(PolicyConfig::default(), &mut rng);
        perturb_params(&mut actor.params, &mut rng);
        let obs = random_obs(&mut rng);
        let cm: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let cs: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let loss = |a: &Actor| -> f64 {
            let d = a.forward(&obs).unwrap().dist;
            (0..4).map(|i| cm[i] * d.mean[i] + cs[i] * d.log_std[i]).sum()
        };
        let (_, tape) = actor.forward_with_tape(&obs).unwrap();
        let mut g = vec![0.0; actor.param_count()];
        actor.backward(&tape, &cm, &cs, &mut g).unwrap();
        // every parameter on a quarter of the draws, a random tenth otherwise
        let full = draw % 4 == 0;
        for i in 0..actor.param_count() {
            if !full && rng.gen::<f64>() > 0.1 {
                continue;
            }
            let v = actor.params[i];
            actor.params[i] = v + EPS;
            let up = loss(&actor);
            actor.params[i] = v - EPS;
            let dn = loss(&actor);
            actor.params[i] = v;
            let fd = (up - dn) / (2.0 * EPS);
            let scale = g[i].abs().max(fd.abs());
            if scale >= 1e-6 {
                worst = worst.max((g[i] - fd).abs() / scale);
            }
            assert!(close(g[i], fd), "draw {draw} param {i}: analytic {} numeric {fd}", g[i]);
            checked += 1;
        }
    }
    (checked, worst)
}

/// Returns the number of parameter checks; every index is covered.
pub fn critic_check() -> usize {
    let mut rng = seeded_rng(202);
    let mut covered = 0usize;
    for draw in 0..100 {
        let mut critic = Critic::new(PolicyConfig::default(), &mut rng);
        perturb_params(&mut critic.params, &mut rng);
        let o1 = random_obs(&mut rng);
        let o2 = random_obs(&mut rng);
        let h0: Vec<f64> = (0..critic.hidden_size()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let (c1, c2) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let loss = |c: &Critic| -> f64 {
            let (v1, h1) = c.forward(&o1, &h0).unwrap();
            let (v2, _) = c.forward(&o2, &h1).unwrap();
            c1 * v1 + c2 * v2
        };
        let t1 = critic.forward_step(&o1, &h0).unwrap();
        let t2 = critic.forward_step(&o2, &t1.h_new).unwrap();
        let mut g = vec![0.0; critic.param_count()];
        critic.backward_sequence(&[t1, t2], &[c1, c2], &mut g).unwrap();
        // each parameter index is checked on exactly one draw, plus a
        // random sample on every draw
        let n = critic.param_count();
        for i in 0..n {
            if i % 100 != draw && rng.gen::<f64>() > 0.005 {
                continue;
            }
            covered += 1;
            let v = critic.params[i];
            critic.params[i] = v + EPS;
            let up = loss(&critic);
            critic.params[i] = v - EPS;
            let dn = loss(&critic);
            critic.params[i] = v;
            let fd = (up - dn) / (2.0 * EPS);
            assert!(close(g[i], fd), "draw {draw} param {i}: analytic {} numeric {fd}", g[i]);
        }
    }
    assert!(covered >= Critic::zeros(PolicyConfig::default()).param_count());
    covered
}

fn ppo_batch<R: Rng>(actor: &Actor, critic: &Critic, rng: &mut R) -> Batch {
    let mut b = Batch::default();
    for _ in 0..2 {
        let start = b.samples.len();
        let mut h: Vec<f64> = (0..critic.hidden_size()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        for _ in 0..3 {
            let obs = random_obs(rng);
            let dist = actor.forward(&obs).unwrap().dist;
            let z = dist.sample(rng).z;
            // old log-prob offset so the ratio lands away from the clip kinks
            let delta = loop {
                let d: f64 = rng.gen_range(-0.4..0.4);
                let r = d.exp();
                if (r - 1.2).abs() > 0.02 && (r - 0.8).abs() > 0.02 {
                    break d;
                }
            };
            let (value, h_next) = critic.forward(&obs, &h).unwrap();
            b.samples.push(Sample {
                obs,
                z,
                log_prob: dist.log_prob(&z) - delta,
                value,
                advantage: rng.gen_range(-2.0..2.0),
                ret: value + rng.gen_range(-1.0..1.0),
                hidden: h.clone(),
            });
            h = h_next;
        }
        b.chunks.push(start..b.samples.len());
    }
    b
}

/// Returns the number of parameter checks.
pub fn ppo_check() -> usize {
    let mut rng = seeded_rng(404);
    let cfg = PPOConfig {
        entropy_coef: 0.01,
        ..PPOConfig::default()
    };
    let mut checked = 0usize;
    for draw in 0..100 {
        let mut actor = Actor::new(PolicyConfig::default(), &mut rng);
        let mut critic = Critic::new(PolicyConfig::default(), &mut rng);
        perturb_params(&mut actor.params, &mut rng);
        perturb_params(&mut critic.params, &mut rng);
        let batch = ppo_batch(&actor, &critic, &mut rng);
        let ids = [0, 1];
        let mut ga = vec![0.0; actor.param_count()];
        let mut gc = vec![0.0; critic.param_count()];
        minibatch_loss(&actor, &critic, &batch, &ids, &cfg, Some((&mut ga, &mut gc))).unwrap();
        let loss = |a: &Actor, c: &Critic| minibatch_loss(a, c, &batch, &ids, &cfg, None).unwrap().loss;
        for i in 0..actor.param_count() {
            if rng.gen::<f64>() > 0.03 {
                continue;
            }
            let v = actor.params[i];
            actor.params[i] = v + EPS;
            let up = loss(&actor, &critic);
            actor.params[i] = v - EPS;
            let dn = loss(&actor, &critic);
            actor.params[i] = v;
            let fd = (up - dn) / (2.0 * EPS);
            assert!(close(ga[i], fd), "draw {draw} actor param {i}: analytic {} numeric {fd}", ga[i]);
            checked += 1;
        }
        for i in 0..critic.param_count() {
            if rng.gen::<f64>() > 0.003 {
                continue;
            }
            let v = critic.params[i];
            critic.params[i] = v + EPS;
            let up = loss(&actor, &critic);
            critic.params[i] = v - EPS;
            let dn = loss(&actor, &critic);
            critic.params[i] = v;
            let fd = (up - dn) / (2.0 * EPS);
            assert!(close(gc[i], fd), "draw {draw} critic param {i}: analytic {} numeric {fd}", gc[i]);
            checked += 1;
        }
    }
    assert!(checked > 1000);
    checked
}
