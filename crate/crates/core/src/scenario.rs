//! Procedural rooms, obstacle fields and start/goal assignments for training
//! and for the two evaluation families, plus the traversability metric.

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cylinder, Room};
use crate::trajectory::{plan_min_snap, PiecewisePolynomial, Waypoint};

pub const TRAINING_CELLS: usize = 24;
pub const CELL_MARGIN: f64 = 0.075;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    TrainingRandom,
    StraightLine,
    SwapGoal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalMode {
    Shared,
    Unique,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub room: Room,
    /// Occupied-cell fraction range; the obstacle count is round(ρ·24).
    pub density: [f64; 2],
    pub training_diameter: [f64; 2],
    /// `None` picks shared or unique goals with equal probability.
    pub goal_mode: Option<GoalMode>,
    pub start_altitude: [f64; 2],
    pub min_start_separation: f64,
    pub desired_velocity_mean: f64,
    pub desired_velocity_std: f64,
    pub min_desired_velocity: f64,
    /// Desired velocity used for evaluation scenarios.
    pub eval_velocity: f64,
    /// Occupied-cell fraction range for the evaluation families; the
    /// count is round(ρ·24) as in training.
    pub eval_density: [f64; 2],
    pub eval_radius: [f64; 2],
    pub eval_min_gap: f64,
    /// Half-width of the square region that holds evaluation obstacles.
    pub eval_region_half_width: f64,
    /// |x| of starts and goals in the evaluation families.
    pub eval_start_x: f64,
    /// Horizontal clearance kept between obstacle surfaces and any start or
    /// goal.
    pub endpoint_clearance: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            room: Room::default(),
            density: [0.1, 1.0],
            training_diameter: [0.2, 0.85],
            goal_mode: None,
            start_altitude: [0.5, 1.5],
            min_start_separation: 0.5,
            desired_velocity_mean: 0.5,
            desired_velocity_std: 0.1,
            min_desired_velocity: 0.2,
            eval_velocity: 0.5,
            eval_density: [0.1, 0.3],
            eval_radius: [0.35, 0.85],
            eval_min_gap: 0.25,
            eval_region_half_width: 2.5,
            eval_start_x: 3.5,
            endpoint_clearance: 0.3,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.density;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::Config(format!("scenario.density {:?} must satisfy 0 ≤ lo ≤ hi ≤ 1", self.density)));
        }
        let [elo, ehi] = self.eval_density;
        if !(0.0..=1.0).contains(&elo) || !(elo..=1.0).contains(&ehi) {
            return Err(Error::Config(format!(
                "scenario.eval_density {:?} must satisfy 0 ≤ lo ≤ hi ≤ 1",
                self.eval_density
            )));
        }
        let [dlo, dhi] = self.training_diameter;
        if !(dlo > 0.0 && dlo <= dhi && dhi + 2.0 * CELL_MARGIN <= 1.0) {
            return Err(Error::Config(format!(
                "scenario.training_diameter {:?} must fit a 1 m cell with margins",
                self.training_diameter
            )));
        }
        if !(self.eval_radius[0] > 0.0 && self.eval_radius[0] <= self.eval_radius[1]) {
            return Err(Error::Config("scenario.eval_radius must be an increasing positive pair".into()));
        }
        if !(self.eval_velocity > 0.0 && self.min_desired_velocity > 0.0) {
            return Err(Error::Config("scenario velocities must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to reset an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub kind: ScenarioKind,
    pub room: Room,
    pub obstacles: Vec<Cylinder>,
    pub starts: Vec<Waypoint>,
    pub goals: Vec<Waypoint>,
    pub goal_mode: GoalMode,
    pub desired_velocity: f64,
    /// Occupied-cell fraction the field was drawn with.
    pub density: f64,
}

impl EpisodeSpec {
    pub fn n_agents(&self) -> usize {
        self.starts.len()
    }

    pub fn trajectories(&self) -> Result<Vec<PiecewisePolynomial>> {
        self.starts
            .iter()
            .zip(&self.goals)
            .map(|(s, g)| plan_min_snap(&[*s, *g], self.desired_velocity))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn obstacle_count(density: f64) -> usize {
    ((density * TRAINING_CELLS as f64).round() as usize).min(TRAINING_CELLS)
}

fn heading(from: &Waypoint, to: &Waypoint) -> f64 {
    let d = to.position() - from.position();
    if d.xy().norm() < 1e-9 {
        0.0
    } else {
        d.y.atan2(d.x)
    }
}

fn with_headings(starts: &[Vector3<f64>], goals: &[Vector3<f64>]) -> (Vec<Waypoint>, Vec<Waypoint>) {
    let mut s_out = Vec::with_capacity(starts.len());
    let mut g_out = Vec::with_capacity(goals.len());
    for (s, g) in starts.iter().zip(goals) {
        let a = Waypoint::new(*s, 0.0);
        let b = Waypoint::new(*g, 0.0);
        let yaw = heading(&a, &b);
        s_out.push(Waypoint::new(*s, yaw));
        g_out.push(Waypoint::new(*g, yaw));
    }
    (s_out, g_out)
}

/// Points along a segment of the line `fixed_axis = fixed`, pairwise at
/// least `sep` apart in 3D, drawn by rejection.
fn sample_line_points<R: Rng + ?Sized>(
    n: usize,
    fixed_axis: usize,
    fixed: f64,
    span: f64,
    altitude: [f64; 2],
    sep: f64,
    rng: &mut R,
) -> Result<Vec<Vector3<f64>>> {
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while pts.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Scenario(format!("cannot place {n} points {sep} m apart on a {span} m side")));
        }
        let along = rng.gen_range(-span / 2.0..=span / 2.0);
        let z = rng.gen_range(altitude[0]..=altitude[1]);
        let p = if fixed_axis == 0 {
            Vector3::new(fixed, along, z)
        } else {
            Vector3::new(along, fixed, z)
        };
        if pts.iter().all(|q| (q - p).norm() >= sep) {
            pts.push(p);
        }
    }
    Ok(pts)
}

/// Random training room: a 6×4 or 4×6 obstacle region of 1 m cells, one
/// cylinder per occupied cell, starts just outside one 4 m side and goals
/// just outside the opposite one.
pub fn generate_training_scenario<R: Rng + ?Sized>(
    n_agents: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<EpisodeSpec> {
    let density = rng.gen_range(config.density[0]..=config.density[1]);
    generate_training_with_density(n_agents, density, config, rng)
}

pub fn generate_training_with_density<R: Rng + ?Sized>(
    n_agents: usize,
    density: f64,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<EpisodeSpec> {
    if n_agents == 0 {
        return Err(Error::Scenario("at least one agent is required".into()));
    }
    // long axis of the region: 0 = x (6×4), 1 = y (4×6)
    let long_axis = if rng.gen_bool(0.5) { 0 } else { 1 };
    let (nx, ny) = if long_axis == 0 { (6, 4) } else { (4, 6) };
    let x0 = -(nx as f64) / 2.0;
    let y0 = -(ny as f64) / 2.0;

    let count = obstacle_count(density);
    let cells = sample(rng, TRAINING_CELLS, count).into_vec();
    let mut obstacles = Vec::with_capacity(count);
    for cell in cells {
        let (cx, cy) = (cell % nx, cell / nx);
        let mut hi = config.training_diameter[1];
        let c = loop {
            let d = rng.gen_range(config.training_diameter[0]..=hi);
            let r = d / 2.0;
            let slack = 1.0 - 2.0 * (CELL_MARGIN + r);
            if slack >= 0.0 {
                let px = x0 + cx as f64 + CELL_MARGIN + r + rng.gen_range(0.0..=slack);
                let py = y0 + cy as f64 + CELL_MARGIN + r + rng.gen_range(0.0..=slack);
                break Cylinder::new(px, py, r);
            }
            // smaller diameters first before giving up
            hi = (hi + config.training_diameter[0]) / 2.0;
            if hi - config.training_diameter[0] < 1e-9 {
                return Err(Error::Scenario("no obstacle diameter fits a cell".into()));
            }
        };
        obstacles.push(c);
    }

    // starts beyond one 4 m side (the short sides lie across the long axis)
    let half_long = if long_axis == 0 { nx } else { ny } as f64 / 2.0;
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let start_line = -side * (half_long + 0.5);
    let goal_line = side * (half_long + 0.5);
    let span = if long_axis == 0 { ny } else { nx } as f64;
    let starts = sample_line_points(
        n_agents,
        long_axis,
        start_line,
        span,
        config.start_altitude,
        config.min_start_separation,
        rng,
    )?;
    let goal_mode = config
        .goal_mode
        .unwrap_or(if rng.gen_bool(0.5) { GoalMode::Shared } else { GoalMode::Unique });
    let goals = match goal_mode {
        GoalMode::Shared => {
            let g = sample_line_points(1, long_axis, goal_line, span, config.start_altitude, 0.0, rng)?[0];
            vec![g; n_agents]
        }
        GoalMode::Unique => sample_line_points(
            n_agents,
            long_axis,
            goal_line,
            span,
            config.start_altitude,
            config.min_start_separation,
            rng,
        )?,
    };
    let (starts, goals) = with_headings(&starts, &goals);
    let v = Normal::new(config.desired_velocity_mean, config.desired_velocity_std)
        .map_err(|e| Error::Config(e.to_string()))?
        .sample(rng)
        .max(config.min_desired_velocity);
    Ok(EpisodeSpec {
        kind: ScenarioKind::TrainingRandom,
        room: config.room,
        obstacles,
        starts,
        goals,
        goal_mode,
        desired_velocity: v,
        density,
    })
}

/// Start slots for the evaluation families: a 12 × 2 lattice across the
/// start line (0.6 m lateral pitch, two altitude rows), jittered slightly.
fn eval_start_slots<R: Rng + ?Sized>(n: usize, x: f64, config: &ScenarioConfig, rng: &mut R) -> Result<Vec<Vector3<f64>>> {
    const COLUMNS: usize = 12;
    const ROWS: usize = 2;
    if n > COLUMNS * ROWS {
        return Err(Error::Scenario(format!("evaluation supports at most {} agents", COLUMNS * ROWS)));
    }
    let [zlo, zhi] = config.start_altitude;
    let slots = sample(rng, COLUMNS * ROWS, n).into_vec();
    Ok(slots
        .into_iter()
        .map(|s| {
            let col = s % COLUMNS;
            let row = s / COLUMNS;
            let y = -3.3 + 0.6 * col as f64 + rng.gen_range(-0.05..=0.05);
            let z = zlo + (zhi - zlo) * (0.25 + 0.5 * row as f64) + rng.gen_range(-0.05..=0.05);
            Vector3::new(x, y, z)
        })
        .collect())
}

fn place_eval_obstacles<R: Rng + ?Sized>(
    count: usize,
    endpoints: &[Vector3<f64>],
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<Cylinder>> {
    let hw = config.eval_region_half_width;
    let mut out: Vec<Cylinder> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut hi = config.eval_radius[1];
        let mut placed = None;
        'shrink: for _ in 0..8 {
            for _ in 0..2000 {
                let r = rng.gen_range(config.eval_radius[0]..=hi);
                if r >= hw {
                    continue;
                }
                let c = Cylinder::new(rng.gen_range(-hw + r..=hw - r), rng.gen_range(-hw + r..=hw - r), r);
                let clear_of_obstacles = out.iter().all(|o| o.surface_gap(&c) >= config.eval_min_gap);
                let clear_of_endpoints = endpoints
                    .iter()
                    .all(|p| c.surface_distance_xy(&p.xy()) >= config.endpoint_clearance);
                if clear_of_obstacles && clear_of_endpoints {
                    placed = Some(c);
                    break 'shrink;
                }
            }
            hi = (hi + config.eval_radius[0]) / 2.0;
        }
        match placed {
            Some(c) => out.push(c),
            None => {
                return Err(Error::Scenario(format!(
                    "could not place obstacle {} of {count} with a {} m gap",
                    out.len() + 1,
                    config.eval_min_gap
                )))
            }
        }
    }
    Ok(out)
}

/// Evaluation scenario: obstacles with radius in `eval_radius` and surface
/// gaps of at least `eval_min_gap`; StraightLine flies −x → +x along
/// parallel lines, SwapGoal sends each agent to its start mirrored through
/// the origin (the agent directly opposite).
pub fn generate_eval_scenario<R: Rng + ?Sized>(
    kind: ScenarioKind,
    n_agents: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<EpisodeSpec> {
    if n_agents == 0 {
        return Err(Error::Scenario("at least one agent is required".into()));
    }
    let x = config.eval_start_x;
    let starts = eval_start_slots(n_agents, -x, config, rng)?;
    let goals: Vec<Vector3<f64>> = match kind {
        ScenarioKind::StraightLine => starts.iter().map(|s| Vector3::new(x, s.y, s.z)).collect(),
        ScenarioKind::SwapGoal => starts.iter().map(|s| Vector3::new(-s.x, -s.y, s.z)).collect(),
        ScenarioKind::TrainingRandom => {
            return Err(Error::Scenario("TrainingRandom is not an evaluation family".into()))
        }
    };
    let density = rng.gen_range(config.eval_density[0]..=config.eval_density[1]);
    let endpoints: Vec<Vector3<f64>> = starts.iter().chain(&goals).copied().collect();
    let obstacles = place_eval_obstacles(obstacle_count(density), &endpoints, config, rng)?;
    let (starts, goals) = with_headings(&starts, &goals);
    Ok(EpisodeSpec {
        kind,
        room: config.room,
        obstacles,
        starts,
        goals,
        goal_mode: GoalMode::Unique,
        desired_velocity: config.eval_velocity,
        density,
    })
}

/// Dispatches on `kind`.
pub fn generate_scenario<R: Rng + ?Sized>(
    kind: ScenarioKind,
    n_agents: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<EpisodeSpec> {
    match kind {
        ScenarioKind::TrainingRandom => generate_training_scenario(n_agents, config, rng),
        _ => generate_eval_scenario(kind, n_agents, config, rng),
    }
}

/// Free horizontal ray length from `p` along unit direction `d` against the
/// vertical walls and cylinders, clipped at `clip`.
pub fn free_ray_length(p: &Vector2<f64>, d: &Vector2<f64>, obstacles: &[Cylinder], room: &Room, clip: f64) -> f64 {
    let mut t = f64::INFINITY;
    for k in 0..2 {
        if d[k] > 0.0 {
            t = t.min((room.max[k] - p[k]) / d[k]);
        } else if d[k] < 0.0 {
            t = t.min((room.min[k] - p[k]) / d[k]);
        }
    }
    for c in obstacles {
        let o = p - c.center_xy();
        let c0 = o.norm_squared() - c.radius * c.radius;
        if c0 <= 0.0 {
            return 0.0;
        }
        let b = o.dot(d);
        if b >= 0.0 {
            continue;
        }
        let disc = b * b - c0;
        if disc >= 0.0 {
            t = t.min(c0 / (-b + disc.sqrt()));
        }
    }
    t.clamp(0.0, clip)
}

/// T = Σ sᵢ / (j · N · r).
pub fn traversability_from_samples(samples: &[f64], n_agents: usize, agent_radius: f64) -> f64 {
    samples.iter().sum::<f64>() / (n_agents as f64 * samples.len() as f64 * agent_radius)
}

/// Multi-agent traversability of a field: mean free ray length from random
/// free interior points in random horizontal directions, normalized by the
/// agent count and radius.
pub fn traversability<R: Rng + ?Sized>(
    obstacles: &[Cylinder],
    room: &Room,
    n_agents: usize,
    agent_radius: f64,
    n_rays: usize,
    rng: &mut R,
) -> f64 {
    let clip = room.diagonal();
    let mut samples = Vec::with_capacity(n_rays);
    while samples.len() < n_rays {
        let p = Vector2::new(
            rng.gen_range(room.min[0]..room.max[0]),
            rng.gen_range(room.min[1]..room.max[1]),
        );
        if obstacles.iter().any(|c| (p - c.center_xy()).norm() <= c.radius) {
            continue;
        }
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        samples.push(free_ray_length(&p, &Vector2::new(a.cos(), a.sin()), obstacles, room, clip));
    }
    traversability_from_samples(&samples, n_agents, agent_radius)
}
