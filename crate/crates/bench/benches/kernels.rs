use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use rand::Rng;
use swarmnav_bench::{neighbors, scene};
use swarmnav_core::dynamics::step;
use swarmnav_core::policy::{
    Actor, Critic, ObservationBundle, PolicyConfig, NEIGHBOR_DIM, NEIGHBOR_SLOTS, OBSTACLE_DIM, SDF_DIM, SELF_DIM,
};
use swarmnav_core::rl::ppo::{minibatch_loss, Batch, Sample};
use swarmnav_core::rl::PPOConfig;
use swarmnav_core::safety::{build_constraints, solve_safety_qp};
use swarmnav_core::sensing::raycast_tof;
use swarmnav_core::{seeded_rng, ControlInput, QuadrotorParams, SafetyParams};

fn observation<R: Rng>(rng: &mut R) -> ObservationBundle {
    let mut o = ObservationBundle {
        self_goal: [0.0; SELF_DIM],
        neighbors: [[0.0; NEIGHBOR_DIM]; NEIGHBOR_SLOTS],
        neighbor_mask: [1.0; NEIGHBOR_SLOTS],
        neighbor_staleness: [0.0; NEIGHBOR_SLOTS],
        obstacles: [0.0; OBSTACLE_DIM],
        sdf: [0.0; SDF_DIM],
    };
    for v in o.self_goal.iter_mut().chain(o.neighbors.iter_mut().flatten()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in o.obstacles.iter_mut().chain(o.sdf.iter_mut()) {
        *v = rng.gen_range(0.0..2.0);
    }
    o
}

fn dynamics(c: &mut Criterion) {
    let params = QuadrotorParams::default();
    let (state, _, _) = scene();
    let u = ControlInput::hover(&params);
    c.bench_function("rk4_step", |b| b.iter(|| step(black_box(&state), &u, &params, 0.005).unwrap()));
}

fn sensing(c: &mut Criterion) {
    let (state, obstacles, room) = scene();
    c.bench_function("tof_raycast_4x8x8", |b| b.iter(|| raycast_tof(black_box(&state), &obstacles, &room, 0.0)));
}

fn safety(c: &mut Criterion) {
    let params = SafetyParams::default();
    let (state, obstacles, room) = scene();
    let others = neighbors(&state);
    let nominal = Vector3::new(3.0, -1.0, 0.5);
    c.bench_function("safety_filter", |b| {
        b.iter(|| {
            let cs = build_constraints(black_box(&state), &others, &obstacles, &room, &params);
            solve_safety_qp(&nominal, &cs, params.accel_bound)
        })
    });
}

fn policy(c: &mut Criterion) {
    let mut rng = seeded_rng(7);
    let actor = Actor::new(PolicyConfig::default(), &mut rng);
    let critic = Critic::new(PolicyConfig::default(), &mut rng);
    let obs = observation(&mut rng);
    c.bench_function("actor_forward", |b| b.iter(|| actor.forward(black_box(&obs)).unwrap()));

    let mut batch = Batch::default();
    for _ in 0..8 {
        let start = batch.samples.len();
        let mut h = vec![0.0; critic.hidden_size()];
        for _ in 0..32 {
            let obs = observation(&mut rng);
            let dist = actor.forward(&obs).unwrap().dist;
            let z = dist.sample(&mut rng).z;
            let (value, next) = critic.forward(&obs, &h).unwrap();
            batch.samples.push(Sample {
                obs,
                z,
                log_prob: dist.log_prob(&z),
                value,
                advantage: rng.gen_range(-1.0..1.0),
                ret: value,
                hidden: h,
            });
            h = next;
        }
        batch.chunks.push(start..batch.samples.len());
    }
    let ids: Vec<usize> = (0..batch.chunks.len()).collect();
    let cfg = PPOConfig::default();
    let mut ga = vec![0.0; actor.param_count()];
    let mut gc = vec![0.0; critic.param_count()];
    c.bench_function("ppo_minibatch_256", |b| {
        b.iter(|| minibatch_loss(&actor, &critic, &batch, &ids, &cfg, Some((&mut ga, &mut gc))).unwrap())
    });
}

criterion_group!(benches, dynamics, sensing, safety, policy);
criterion_main!(benches);
