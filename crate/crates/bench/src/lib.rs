//! Fixed inputs shared by the benchmarks so timings are comparable across
//! runs.

use nalgebra::Vector3;
use swarmnav_core::{Cylinder, QuadrotorState, Room};

/// A hovering agent in a 6 m room with a handful of pillars around it.
pub fn scene() -> (QuadrotorState, Vec<Cylinder>, Room) {
    let mut state = QuadrotorState::at_rest(Vector3::new(0.2, -0.1, 1.0));
    state.velocity = Vector3::new(0.4, 0.1, 0.0);
    let obstacles = vec![
        Cylinder::new(0.9, 0.2, 0.3),
        Cylinder::new(-0.8, 0.7, 0.25),
        Cylinder::new(0.1, -1.2, 0.4),
        Cylinder::new(-1.5, -1.0, 0.2),
        Cylinder::new(1.8, 1.6, 0.35),
    ];
    (state, obstacles, Room::centered(6.0, 6.0, 3.0))
}

/// Two neighbors closing in, so the safety QP has active constraints.
pub fn neighbors(center: &QuadrotorState) -> Vec<QuadrotorState> {
    [Vector3::new(0.35, 0.05, 0.0), Vector3::new(-0.1, 0.4, 0.05)]
        .iter()
        .map(|offset| {
            let mut n = QuadrotorState::at_rest(center.position + offset);
            n.velocity = -offset.normalize() * 0.8;
            n
        })
        .collect()
}
