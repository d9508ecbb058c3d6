//! Simulated multi-zone time-of-flight ranging, the privileged distance grid
//! for the critic, and the rate-limited neighbor state exchange.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::QuadrotorState;
use crate::geometry::{Cylinder, Room};

pub const SENSOR_COUNT: usize = 4;
pub const ZONES: usize = 8;
pub const MAX_RANGE: f64 = 2.0;
pub const FIELD_OF_VIEW: f64 = std::f64::consts::FRAC_PI_4;
/// Row kept by [`condense`]; an 8-row grid has no true middle.
pub const MIDDLE_ROW: usize = 3;
pub const SDF_SIZE: usize = 3;
pub const SDF_SPACING: f64 = 0.1;
pub const SDF_CLIP: f64 = 2.0;

/// Ranging and radio settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    pub tof_period: f64,
    pub tof_noise_std: f64,
    /// Weight of the newest frame in the exponential range filter.
    pub filter_alpha: f64,
    /// Radio broadcast period. Scheduled on continuous time, not rounded.
    pub comm_period: f64,
    pub comm_drop_probability: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        SensingConfig {
            tof_period: 1.0 / 15.0,
            tof_noise_std: 0.0,
            filter_alpha: 0.5,
            comm_period: 1.0 / 50.0,
            comm_drop_probability: 0.0,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let err = |m: &str| Err(crate::Error::Config(format!("sensing.{m}")));
        if !(self.tof_period > 0.0) || !(self.comm_period > 0.0) {
            return err("tof_period and comm_period must be > 0");
        }
        if !(self.tof_noise_std >= 0.0) {
            return err("tof_noise_std must be ≥ 0");
        }
        if !(self.filter_alpha > 0.0 && self.filter_alpha <= 1.0) {
            return err("filter_alpha must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.comm_drop_probability) {
            return err("comm_drop_probability must lie in [0, 1]");
        }
        Ok(())
    }
}

pub type RawFrame = [[[f64; ZONES]; ZONES]; SENSOR_COUNT];
pub type CondensedFrame = [[f64; ZONES]; SENSOR_COUNT];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TofFrame {
    /// `raw[sensor][row][col]`, row 0 is the top of the frustum and col 0 its
    /// left edge as seen from the sensor.
    pub raw: RawFrame,
    pub condensed: CondensedFrame,
    pub timestamp: f64,
}

impl TofFrame {
    pub fn empty(timestamp: f64) -> Self {
        TofFrame {
            raw: [[[MAX_RANGE; ZONES]; ZONES]; SENSOR_COUNT],
            condensed: [[MAX_RANGE; ZONES]; SENSOR_COUNT],
            timestamp,
        }
    }
}

/// Body-frame (forward, left) axes of the four sensors: +x, +y, −x, −y.
pub fn sensor_axes(sensor: usize) -> (Vector3<f64>, Vector3<f64>) {
    match sensor {
        0 => (Vector3::x(), Vector3::y()),
        1 => (Vector3::y(), -Vector3::x()),
        2 => (-Vector3::x(), -Vector3::y()),
        3 => (-Vector3::y(), Vector3::x()),
        _ => panic!("sensor index {sensor} out of range"),
    }
}

/// Angle of zone `i` from the boresight, measured at the zone center.
pub fn zone_angle(i: usize) -> f64 {
    ((i as f64 + 0.5) / ZONES as f64 - 0.5) * FIELD_OF_VIEW
}

/// Unit ray direction of one zone in the body frame.
pub fn zone_direction(sensor: usize, row: usize, col: usize) -> Vector3<f64> {
    let (f, l) = sensor_axes(sensor);
    // column 0 on the left, row 0 on top
    let az = -zone_angle(col);
    let el = -zone_angle(row);
    (f + l * az.tan() + Vector3::z() * el.tan()).normalize()
}

/// Distance along a unit ray to the first hit on a vertical cylinder of
/// unbounded height, `None` if it misses. An origin inside returns 0.
pub fn ray_cylinder(origin: &Vector3<f64>, dir: &Vector3<f64>, c: &Cylinder) -> Option<f64> {
    let ox = origin.x - c.center[0];
    let oy = origin.y - c.center[1];
    let c0 = ox * ox + oy * oy - c.radius * c.radius;
    if c0 <= 0.0 {
        return Some(0.0);
    }
    let a = dir.x * dir.x + dir.y * dir.y;
    if a < 1e-18 {
        return None;
    }
    let b = ox * dir.x + oy * dir.y;
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - a * c0;
    if disc < 0.0 {
        return None;
    }
    // numerically stable smaller root
    Some(c0 / (-b + disc.sqrt()))
}

/// Distance along a unit ray to the room boundary from an interior origin.
pub fn ray_room(origin: &Vector3<f64>, dir: &Vector3<f64>, room: &Room) -> f64 {
    if !room.contains(origin) {
        return 0.0;
    }
    let mut t = f64::INFINITY;
    for k in 0..3 {
        if dir[k] > 0.0 {
            t = t.min((room.max[k] - origin[k]) / dir[k]);
        } else if dir[k] < 0.0 {
            t = t.min((room.min[k] - origin[k]) / dir[k]);
        }
    }
    t
}

/// Clipped range seen along one world-frame unit ray.
pub fn cast_ray(origin: &Vector3<f64>, dir: &Vector3<f64>, obstacles: &[Cylinder], room: &Room) -> f64 {
    let mut t = ray_room(origin, dir, room);
    for c in obstacles {
        if let Some(hit) = ray_cylinder(origin, dir, c) {
            t = t.min(hit);
        }
    }
    t.clamp(0.0, MAX_RANGE)
}

/// Full 4×8×8 frame from the vehicle's pose. Other vehicles are not traced.
pub fn raycast_tof(state: &QuadrotorState, obstacles: &[Cylinder], room: &Room, timestamp: f64) -> TofFrame {
    let origin = state.position;
    // obstacles entirely beyond the clip range never contribute
    let near: Vec<Cylinder> = obstacles
        .iter()
        .filter(|c| c.axis_distance(&origin) - c.radius < MAX_RANGE)
        .copied()
        .collect();
    let mut raw = [[[MAX_RANGE; ZONES]; ZONES]; SENSOR_COUNT];
    for (s, frame) in raw.iter_mut().enumerate() {
        for (r, row) in frame.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                let dir = state.rotation * zone_direction(s, r, c);
                *cell = cast_ray(&origin, &dir, &near, room);
            }
        }
    }
    TofFrame {
        condensed: condense(&raw),
        raw,
        timestamp,
    }
}

/// Zero-mean Gaussian ranging noise, re-clipped to the valid interval.
pub fn add_range_noise<R: Rng + ?Sized>(frame: &mut TofFrame, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    for v in frame.raw.iter_mut().flatten().flatten() {
        *v = (*v + normal.sample(rng)).clamp(0.0, MAX_RANGE);
    }
    frame.condensed = condense(&frame.raw);
}

pub fn condense(raw: &RawFrame) -> CondensedFrame {
    let mut out = [[0.0; ZONES]; SENSOR_COUNT];
    for s in 0..SENSOR_COUNT {
        out[s] = raw[s][MIDDLE_ROW];
    }
    out
}

pub fn exp_filter(prev: &CondensedFrame, new: &CondensedFrame, alpha: f64) -> CondensedFrame {
    let mut out = *prev;
    for (o, n) in out.iter_mut().flatten().zip(new.iter().flatten()) {
        *o = alpha * n + (1.0 - alpha) * *o;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfGrid {
    /// `cells[i][j]` sits at offset ((i − 1)·0.1, (j − 1)·0.1) from the agent.
    pub cells: [[f64; SDF_SIZE]; SDF_SIZE],
}

impl SdfGrid {
    pub fn flatten(&self) -> [f64; SDF_SIZE * SDF_SIZE] {
        let mut out = [0.0; SDF_SIZE * SDF_SIZE];
        for i in 0..SDF_SIZE {
            for j in 0..SDF_SIZE {
                out[i * SDF_SIZE + j] = self.cells[i][j];
            }
        }
        out
    }
}

/// Horizontal distance from a point to the nearest obstacle surface or
/// vertical wall, zero inside an obstacle, clipped at [`SDF_CLIP`].
pub fn point_clearance(p: &Vector2<f64>, obstacles: &[Cylinder], room: &Room) -> f64 {
    let mut d = room.horizontal_wall_distance(p).max(0.0);
    for c in obstacles {
        d = d.min(c.surface_distance_xy(p).max(0.0));
    }
    d.min(SDF_CLIP)
}

pub fn sdf_observation(position: &Vector3<f64>, obstacles: &[Cylinder], room: &Room) -> SdfGrid {
    let mut cells = [[0.0; SDF_SIZE]; SDF_SIZE];
    let half = (SDF_SIZE / 2) as f64;
    for (i, row) in cells.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let p = Vector2::new(
                position.x + (i as f64 - half) * SDF_SPACING,
                position.y + (j as f64 - half) * SDF_SPACING,
            );
            *cell = point_clearance(&p, obstacles, room);
        }
    }
    SdfGrid { cells }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborPacket {
    pub sender: usize,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub send_time: f64,
}

/// Neighbor observation for one receiver: the `K` nearest stored packets in
/// range, nearest first, zero-padded with a validity mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborView {
    pub packets: Vec<Option<NeighborPacket>>,
}

impl NeighborView {
    pub fn empty(k: usize) -> Self {
        NeighborView { packets: vec![None; k] }
    }

    pub fn mask(&self) -> Vec<f64> {
        self.packets.iter().map(|p| if p.is_some() { 1.0 } else { 0.0 }).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.packets.iter().filter(|p| p.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommChannel {
    pub broadcast_period: f64,
    pub drop_probability: f64,
    broadcasts: u64,
    /// `store[receiver][sender]`, latest packet received.
    store: Vec<Vec<Option<NeighborPacket>>>,
}

impl CommChannel {
    pub fn new(n_agents: usize, broadcast_period: f64, drop_probability: f64) -> Self {
        assert!(broadcast_period > 0.0, "broadcast period must be positive");
        CommChannel {
            broadcast_period,
            drop_probability,
            broadcasts: 0,
            store: vec![vec![None; n_agents]; n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.store.len()
    }

    /// Delivers a broadcast round if one is due at `now`. Rounds are due at
    /// integer multiples of the period; several overdue rounds collapse into
    /// one since only the latest packet per sender is kept. Returns whether a
    /// round was delivered.
    pub fn step<R: Rng + ?Sized>(&mut self, states: &[QuadrotorState], now: f64, rng: &mut R) -> bool {
        let due = self.broadcasts as f64 * self.broadcast_period;
        if now + 1e-9 < due {
            return false;
        }
        // next round strictly after now
        self.broadcasts = ((now + 1e-9) / self.broadcast_period).floor() as u64 + 1;
        for (sender, s) in states.iter().enumerate() {
            let packet = NeighborPacket {
                sender,
                position: s.position.into(),
                velocity: s.velocity.into(),
                send_time: now,
            };
            for receiver in 0..states.len() {
                if receiver == sender {
                    continue;
                }
                if self.drop_probability > 0.0 && rng.gen::<f64>() < self.drop_probability {
                    continue;
                }
                self.store[receiver][sender] = Some(packet);
            }
        }
        true
    }

    pub fn stored(&self, receiver: usize) -> &[Option<NeighborPacket>] {
        &self.store[receiver]
    }

    pub fn view(&self, receiver: usize, own_position: &Vector3<f64>, k: usize, range: f64) -> NeighborView {
        let mut cand: Vec<(f64, NeighborPacket)> = self.store[receiver]
            .iter()
            .flatten()
            .map(|p| ((Vector3::from(p.position) - own_position).norm(), *p))
            .filter(|(d, _)| *d <= range)
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.sender.cmp(&b.1.sender)));
        let mut packets: Vec<Option<NeighborPacket>> = cand.into_iter().take(k).map(|(_, p)| Some(p)).collect();
        packets.resize(k, None);
        NeighborView { packets }
    }
}

/// Broadcast periods for the exchange-rate sweep: 50, 45, 35, 25, 15, 5 Hz.
pub fn comm_sweep_periods() -> Vec<f64> {
    COMM_SWEEP_HZ.iter().map(|hz| 1.0 / hz).collect()
}

pub const COMM_SWEEP_HZ: [f64; 6] = [50.0, 45.0, 35.0, 25.0, 15.0, 5.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn hover_at(x: f64, y: f64, z: f64) -> QuadrotorState {
        QuadrotorState::at_rest(Vector3::new(x, y, z))
    }

    #[test]
    fn empty_room_center_reads_max() {
        let f = raycast_tof(&hover_at(0.0, 0.0, 1.5), &[], &Room::default(), 0.0);
        assert!(f.raw.iter().flatten().flatten().all(|&v| v == MAX_RANGE));
    }

    #[test]
    fn boresight_hits_cylinder_front() {
        let c = Cylinder::new(1.0, 0.0, 0.1);
        let r = cast_ray(&Vector3::new(0.0, 0.0, 1.5), &Vector3::x(), &[c], &Room::default());
        assert!((r - 0.9).abs() < 1e-12);
    }

    #[test]
    fn central_zones_see_cylinder() {
        let c = Cylinder::new(1.0, 0.0, 0.1);
        let f = raycast_tof(&hover_at(0.0, 0.0, 1.5), &[c], &Room::default(), 0.0);
        // central columns at ±2.8125° azimuth hit slightly off the front point
        for r in [3, 4] {
            for col in [3, 4] {
                let v = f.raw[0][r][col];
                assert!(v > 0.9 && v < 0.93, "row {r} col {col}: {v}");
            }
        }
        // the rear sensor is untouched
        assert!(f.raw[2].iter().flatten().all(|&v| v == MAX_RANGE));
    }

    #[test]
    fn obstacle_behind_leaves_front_unchanged() {
        let s = hover_at(0.0, 0.0, 1.5);
        let empty = raycast_tof(&s, &[], &Room::default(), 0.0);
        let f = raycast_tof(&s, &[Cylinder::new(-0.8, 0.0, 0.2)], &Room::default(), 0.0);
        assert_eq!(f.raw[0], empty.raw[0]);
        assert_ne!(f.raw[2], empty.raw[2]);
    }

    #[test]
    fn yaw_rotates_sensors() {
        let mut s = hover_at(0.0, 0.0, 1.5);
        s.rotation = crate::geometry::yaw_rotation(std::f64::consts::FRAC_PI_2);
        let f = raycast_tof(&s, &[Cylinder::new(0.0, 1.0, 0.1)], &Room::default(), 0.0);
        // body +x now faces world +y
        assert!(f.raw[0][3][3] < 1.0);
        assert!(f.raw[1].iter().flatten().all(|&v| v == MAX_RANGE));
    }

    #[test]
    fn inside_cylinder_reads_zero() {
        let c = Cylinder::new(0.0, 0.0, 0.3);
        assert_eq!(cast_ray(&Vector3::new(0.1, 0.0, 1.0), &Vector3::x(), &[c], &Room::default()), 0.0);
    }

    #[test]
    fn near_wall_and_floor() {
        let room = Room::default();
        let s = hover_at(3.5, 0.0, 1.5);
        assert!((cast_ray(&s.position, &Vector3::x(), &[], &room) - 0.5).abs() < 1e-12);
        let down = Vector3::new(1.0, 0.0, -1.0).normalize();
        let low = Vector3::new(0.0, 0.0, 0.3);
        assert!((cast_ray(&low, &down, &[], &room) - 0.3 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zone_angles_span_fov() {
        assert!((zone_angle(0) + zone_angle(7)).abs() < 1e-15);
        assert!((zone_angle(7) - zone_angle(0) - FIELD_OF_VIEW * 7.0 / 8.0).abs() < 1e-15);
        for s in 0..4 {
            let d = zone_direction(s, 0, 0);
            // top-left ray points up
            assert!(d.z > 0.0);
            assert!((d.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn condense_selects_row() {
        let mut raw = [[[2.0; ZONES]; ZONES]; SENSOR_COUNT];
        for s in raw.iter_mut() {
            s[MIDDLE_ROW] = [1.0; ZONES];
        }
        assert_eq!(condense(&raw), [[1.0; ZONES]; SENSOR_COUNT]);
        let uniform = [[[0.7; ZONES]; ZONES]; SENSOR_COUNT];
        assert_eq!(condense(&uniform), [[0.7; ZONES]; SENSOR_COUNT]);
    }

    #[test]
    fn random_condense_matches_indexing() {
        let mut rng = seeded_rng(5);
        let mut raw = [[[0.0; ZONES]; ZONES]; SENSOR_COUNT];
        for v in raw.iter_mut().flatten().flatten() {
            *v = rng.gen_range(0.0..2.0);
        }
        let out = condense(&raw);
        for s in 0..4 {
            for c in 0..8 {
                assert_eq!(out[s][c], raw[s][3][c]);
            }
        }
    }

    #[test]
    fn filter_fixed_point_and_identity() {
        let a = [[0.3; ZONES]; SENSOR_COUNT];
        let b = [[1.1; ZONES]; SENSOR_COUNT];
        assert_eq!(exp_filter(&a, &b, 1.0), b);
        assert_eq!(exp_filter(&a, &a, 0.37), a);
    }

    #[test]
    fn filter_converges_within_bound() {
        for (alpha, prev, c) in [(0.5f64, 2.0f64, 0.4f64), (0.1, 0.0, 2.0), (0.9, 1.5, 1.49)] {
            let bound = ((1e-6 / f64::abs(prev - c)).ln() / (1.0 - alpha).ln()).ceil() as usize;
            let mut x = [[prev; ZONES]; SENSOR_COUNT];
            let target = [[c; ZONES]; SENSOR_COUNT];
            for _ in 0..bound {
                x = exp_filter(&x, &target, alpha);
            }
            assert!((x[0][0] - c).abs() <= 1e-6, "alpha {alpha}");
        }
    }

    #[test]
    fn sdf_empty_and_on_surface() {
        let room = Room::default();
        let g = sdf_observation(&Vector3::new(0.0, 0.0, 1.0), &[], &room);
        assert!(g.cells.iter().flatten().all(|&v| v == SDF_CLIP));
        let c = Cylinder::new(0.5, 0.0, 0.2);
        let g = sdf_observation(&Vector3::new(0.3, 0.0, 1.0), &[c], &room);
        assert_eq!(g.cells[1][1], 0.0);
        assert!((g.cells[0][1] - 0.1).abs() < 1e-12);
        // the +x neighbour cell lies inside the obstacle
        assert_eq!(g.cells[2][1], 0.0);
    }

    #[test]
    fn sdf_sees_walls() {
        let g = sdf_observation(&Vector3::new(3.8, 0.0, 1.0), &[], &Room::default());
        assert!((g.cells[1][1] - 0.2).abs() < 1e-12);
        assert!((g.cells[2][1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn comm_schedule_holds_packets() {
        let mut rng = seeded_rng(0);
        let mut ch = CommChannel::new(2, 0.02, 0.0);
        let mut states = vec![hover_at(0.0, 0.0, 1.0), hover_at(1.0, 0.0, 1.0)];
        assert!(ch.step(&states, 0.0, &mut rng));
        states[1].position.x = 1.2;
        let mut t = 0.005;
        while t < 0.0195 {
            assert!(!ch.step(&states, t, &mut rng));
            t += 0.005;
        }
        let v = ch.view(0, &states[0].position, 2, 2.0);
        let p = v.packets[0].unwrap();
        assert_eq!(p.send_time, 0.0);
        assert_eq!(p.position[0], 1.0);
        let staleness = 0.019 - p.send_time;
        assert!((staleness - 0.019).abs() < 1e-15);
        assert!(ch.step(&states, 0.02, &mut rng));
        assert_eq!(ch.view(0, &states[0].position, 2, 2.0).packets[0].unwrap().position[0], 1.2);
    }

    #[test]
    fn comm_range_and_mask() {
        let mut rng = seeded_rng(0);
        let mut ch = CommChannel::new(3, 0.02, 0.0);
        let states = vec![hover_at(0.0, 0.0, 1.0), hover_at(1.0, 0.0, 1.0), hover_at(2.5, 0.0, 1.0)];
        ch.step(&states, 0.0, &mut rng);
        let v = ch.view(0, &states[0].position, 2, 2.0);
        assert_eq!(v.valid_count(), 1);
        assert_eq!(v.mask(), vec![1.0, 0.0]);
        for r in 0..3 {
            assert!(ch.view(r, &states[r].position, 2, 10.0).packets.iter().flatten().all(|p| p.sender != r));
        }
    }

    #[test]
    fn comm_sorted_nearest_first() {
        let mut rng = seeded_rng(0);
        let mut ch = CommChannel::new(4, 0.02, 0.0);
        let states = vec![
            hover_at(0.0, 0.0, 1.0),
            hover_at(1.5, 0.0, 1.0),
            hover_at(0.5, 0.0, 1.0),
            hover_at(0.0, 1.0, 1.0),
        ];
        ch.step(&states, 0.0, &mut rng);
        let v = ch.view(0, &states[0].position, 2, 2.0);
        let ids: Vec<usize> = v.packets.iter().flatten().map(|p| p.sender).collect();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn comm_drop_everything() {
        let mut rng = seeded_rng(0);
        let mut ch = CommChannel::new(2, 0.02, 1.0);
        let states = vec![hover_at(0.0, 0.0, 1.0), hover_at(1.0, 0.0, 1.0)];
        ch.step(&states, 0.0, &mut rng);
        assert_eq!(ch.view(0, &states[0].position, 2, 2.0).valid_count(), 0);
    }

    #[test]
    fn sweep_frequencies() {
        let p = comm_sweep_periods();
        let expected_ms = [20.0, 22.2, 28.6, 40.0, 66.7, 200.0];
        for (a, b) in p.iter().zip(expected_ms) {
            assert!((a * 1000.0 - b).abs() < 0.05);
        }
    }
}
