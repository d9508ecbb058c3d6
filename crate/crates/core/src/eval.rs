//! Episode scoring, benchmark tables and attention reports.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Actor;
use crate::rl::TrainStage;
use crate::scenario::{generate_scenario, traversability, EpisodeSpec, ScenarioConfig, ScenarioKind};
use crate::sensing::COMM_SWEEP_HZ;
use crate::sim::{run_episode, write_episode_log, CollisionEvent, Decision, EpisodeLogHeader, StepRecord, World, WorldConfig, LOG_FORMAT_VERSION};
use crate::{derive_seed, seeded_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Arrival threshold δ, m.
    pub success_threshold: f64,
    /// Length of the closing window whose mean distance decides arrival, s.
    pub final_window: f64,
    pub trials: usize,
    pub agent_counts: Vec<usize>,
    pub scenario: ScenarioKind,
    /// Broadcast rates swept by the comm experiment, Hz.
    pub comm_sweep_hz: Vec<f64>,
    pub traversability_rays: usize,
    pub agent_radius: f64,
    /// Bin edges for the success-versus-traversability table.
    pub traversability_bins: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            success_threshold: 0.1,
            final_window: 0.5,
            trials: 50,
            agent_counts: vec![8],
            scenario: ScenarioKind::StraightLine,
            comm_sweep_hz: COMM_SWEEP_HZ.to_vec(),
            traversability_rays: 1000,
            agent_radius: 0.046,
            traversability_bins: vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 50.0],
            seed: 1000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.success_threshold > 0.0) || !(self.final_window > 0.0) {
            return Err(Error::Config("eval.success_threshold and eval.final_window must be > 0".into()));
        }
        if self.trials == 0 || self.agent_counts.is_empty() || self.agent_counts.contains(&0) {
            return Err(Error::Config("eval.trials and every eval.agent_counts entry must be ≥ 1".into()));
        }
        if self.comm_sweep_hz.iter().any(|h| !(*h > 0.0)) || self.comm_sweep_hz.is_empty() {
            return Err(Error::Config("eval.comm_sweep_hz must be a non-empty list of positive rates".into()));
        }
        if self.traversability_rays == 0 || !(self.agent_radius > 0.0) {
            return Err(Error::Config("eval.traversability_rays ≥ 1 and eval.agent_radius > 0 required".into()));
        }
        if self.traversability_bins.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("eval.traversability_bins must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub reached: bool,
    pub collided: bool,
    pub quad_collision: bool,
    pub obstacle_collision: bool,
    /// Mean distance to the goal over the closing window, m.
    pub final_distance: f64,
    pub path_length: f64,
    pub mean_speed: f64,
    pub mean_accel: f64,
    pub mean_jerk: f64,
}

impl AgentMetrics {
    pub fn succeeded(&self) -> bool {
        self.reached && !self.collided
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub agents: Vec<AgentMetrics>,
    /// Fraction of agents that arrived without any collision.
    pub quadrotor_success: f64,
    /// Every agent arrived and none collided.
    pub overall_success: bool,
    /// At least one agent never arrived.
    pub incomplete: bool,
    pub quad_collision_fraction: f64,
    pub obstacle_collision_fraction: f64,
}

/// Scores a complete episode log. The log must be contiguous and run at
/// least to the end of every reference trajectory.
pub fn score_episode(records: &[StepRecord], spec: &EpisodeSpec, config: &EvalConfig) -> Result<EpisodeMetrics> {
    let n = spec.n_agents();
    if records.len() < 3 {
        return Err(Error::Log(format!("episode log has {} records, need at least 3", records.len())));
    }
    for (k, r) in records.iter().enumerate() {
        if r.agents.len() != n {
            return Err(Error::Log(format!("record {k} has {} agents, expected {n}", r.agents.len())));
        }
        if k > 0 && (r.tick != records[k - 1].tick + 1 || !(r.time > records[k - 1].time)) {
            return Err(Error::Log(format!("record {k} breaks the tick sequence")));
        }
    }
    let end = records.last().map(|r| r.time).unwrap_or(0.0);
    let longest = spec
        .trajectories()?
        .iter()
        .map(|t| t.total_duration())
        .fold(0.0, f64::max);
    if end + 1e-9 < longest {
        return Err(Error::Log(format!("episode log ends at {end} s before the {longest} s reference ends")));
    }
    let dt = records[1].time - records[0].time;
    let window_start = end - config.final_window;

    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let goal = spec.goals[i].position();
        let mut m = AgentMetrics::default();
        let mut prev = spec.starts[i].position();
        let (mut dsum, mut dcount) = (0.0, 0usize);
        let mut vel: Vec<Vector3<f64>> = Vec::with_capacity(records.len());
        for r in records {
            let a = &r.agents[i];
            let p = Vector3::from(a.position);
            m.path_length += (p - prev).norm();
            prev = p;
            let v = Vector3::from(a.velocity);
            m.mean_speed += v.norm();
            vel.push(v);
            if r.time > window_start + 1e-12 {
                dsum += (p - goal).norm();
                dcount += 1;
            }
            for e in &r.events {
                if e.involves(i) {
                    m.collided = true;
                    match e {
                        CollisionEvent::QuadQuad { .. } => m.quad_collision = true,
                        CollisionEvent::QuadObstacle { .. } => m.obstacle_collision = true,
                        CollisionEvent::Ground { .. } => {}
                    }
                }
            }
        }
        m.mean_speed /= records.len() as f64;
        let accel: Vec<Vector3<f64>> = vel.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
        m.mean_accel = accel.iter().map(|a| a.norm()).sum::<f64>() / accel.len() as f64;
        let jerk: Vec<f64> = accel.windows(2).map(|w| ((w[1] - w[0]) / dt).norm()).collect();
        m.mean_jerk = jerk.iter().sum::<f64>() / jerk.len() as f64;
        m.final_distance = dsum / dcount.max(1) as f64;
        m.reached = dcount > 0 && m.final_distance <= config.success_threshold;
        agents.push(m);
    }
    Ok(aggregate_agents(agents))
}

/// Run-level fields from per-agent metrics.
pub fn aggregate_agents(agents: Vec<AgentMetrics>) -> EpisodeMetrics {
    let n = agents.len().max(1) as f64;
    let frac = |f: &dyn Fn(&AgentMetrics) -> bool| agents.iter().filter(|a| f(a)).count() as f64 / n;
    EpisodeMetrics {
        quadrotor_success: frac(&|a| a.succeeded()),
        overall_success: agents.iter().all(|a| a.succeeded()),
        incomplete: !agents.iter().all(|a| a.reached),
        quad_collision_fraction: frac(&|a| a.quad_collision),
        obstacle_collision_fraction: frac(&|a| a.obstacle_collision),
        agents,
    }
}

/// Deterministic rollout policy: the distribution mode of a frozen actor.
pub fn mode_policy(actor: &Actor) -> impl FnMut(&[crate::policy::ObservationBundle]) -> Result<Vec<Decision>> + '_ {
    move |obs| {
        obs.iter()
            .map(|o| {
                let out = actor.forward(o)?;
                Ok(Decision {
                    action: out.dist.mode().u,
                    attention: out.attention,
                })
            })
            .collect()
    }
}

/// Seed of trial `trial` for a scenario family and agent count. The comm
/// rate is deliberately not part of it so sweep cells share scenes.
pub fn trial_seed(base: u64, kind: ScenarioKind, n_agents: usize, trial: usize) -> u64 {
    let family = match kind {
        ScenarioKind::TrainingRandom => 0,
        ScenarioKind::StraightLine => 1,
        ScenarioKind::SwapGoal => 2,
    };
    derive_seed(derive_seed(derive_seed(base, family), n_agents as u64), trial as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario: ScenarioKind,
    pub agents: usize,
    pub comm_hz: f64,
    pub trial: usize,
    pub seed: u64,
    pub traversability: f64,
    pub metrics: EpisodeMetrics,
}

/// Everything needed to run evaluation trials.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub actor: &'a Actor,
    pub world: WorldConfig,
    pub scenario: &'a ScenarioConfig,
    pub eval: &'a EvalConfig,
    pub config_digest: &'a str,
}

/// One seeded evaluation episode; optionally writes its JSONL log.
pub fn run_trial(
    ctx: &EvalContext,
    kind: ScenarioKind,
    n_agents: usize,
    comm_hz: f64,
    trial: usize,
    log_dir: Option<&Path>,
) -> Result<TrialResult> {
    let seed = trial_seed(ctx.eval.seed, kind, n_agents, trial);
    let mut rng = seeded_rng(derive_seed(seed, 0));
    let spec = generate_scenario(kind, n_agents, ctx.scenario, &mut rng)?;
    let trav = traversability(
        &spec.obstacles,
        &spec.room,
        n_agents,
        ctx.eval.agent_radius,
        ctx.eval.traversability_rays,
        &mut seeded_rng(derive_seed(seed, 1)),
    );
    let mut world_cfg = ctx.world;
    world_cfg.sensing.comm_period = 1.0 / comm_hz;
    let mut world = World::new(spec.clone(), world_cfg, derive_seed(seed, 2))?;
    let run = run_episode(&mut world, TrainStage::NominalOnly, mode_policy(ctx.actor))?;
    let metrics = score_episode(&run.records, &spec, ctx.eval)?;
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir)?;
        let name = format!("{kind:?}_{n_agents}_{comm_hz}hz_{trial:03}");
        let header = EpisodeLogHeader {
            format_version: LOG_FORMAT_VERSION,
            config_digest: ctx.config_digest.to_string(),
            seed,
            dt: world_cfg.sim.dt,
            spec,
        };
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}.jsonl")))?);
        write_episode_log(f, &header, &run.records)?;
        std::fs::write(dir.join(format!("{name}.metrics.json")), serde_json::to_string_pretty(&metrics)?)?;
    }
    Ok(TrialResult {
        scenario: kind,
        agents: n_agents,
        comm_hz,
        trial,
        seed,
        traversability: trav,
        metrics,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(v: &[f64]) -> MeanStd {
    if v.is_empty() {
        return MeanStd::default();
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Aggregate over the trials of one (scenario, agents, comm rate) cell.
/// Overall and incomplete are per-run statistics; everything else is
/// pooled over agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scenario: ScenarioKind,
    pub agents: usize,
    pub comm_hz: f64,
    pub trials: usize,
    pub quadrotor_success: MeanStd,
    pub overall_success: MeanStd,
    pub incomplete: MeanStd,
    pub quad_collision: MeanStd,
    pub obstacle_collision: MeanStd,
    pub path_length: MeanStd,
    pub speed: MeanStd,
    pub accel: MeanStd,
    pub jerk: MeanStd,
    pub traversability: MeanStd,
}

pub fn aggregate_cell(trials: &[TrialResult]) -> Result<BenchmarkRow> {
    let first = trials.first().ok_or_else(|| Error::Config("empty benchmark cell".into()))?;
    let agents: Vec<&AgentMetrics> = trials.iter().flat_map(|t| t.metrics.agents.iter()).collect();
    let per_agent = |f: &dyn Fn(&AgentMetrics) -> f64| mean_std(&agents.iter().map(|a| f(a)).collect::<Vec<_>>());
    let per_run = |f: &dyn Fn(&TrialResult) -> f64| mean_std(&trials.iter().map(f).collect::<Vec<_>>());
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    Ok(BenchmarkRow {
        scenario: first.scenario,
        agents: first.agents,
        comm_hz: first.comm_hz,
        trials: trials.len(),
        quadrotor_success: per_agent(&|a| b(a.succeeded())),
        overall_success: per_run(&|t| b(t.metrics.overall_success)),
        incomplete: per_run(&|t| b(t.metrics.incomplete)),
        quad_collision: per_agent(&|a| b(a.quad_collision)),
        obstacle_collision: per_agent(&|a| b(a.obstacle_collision)),
        path_length: per_agent(&|a| a.path_length),
        speed: per_agent(&|a| a.mean_speed),
        accel: per_agent(&|a| a.mean_accel),
        jerk: per_agent(&|a| a.mean_jerk),
        traversability: per_run(&|t| t.traversability),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub config_digest: String,
    pub seed: u64,
    pub rows: Vec<BenchmarkRow>,
    pub trials: Vec<TrialResult>,
}

/// Published large-scale figures for the straight-line, 8-agent cell;
/// annotations only, never gates.
pub const REFERENCE_STRAIGHT_8: [(&str, f64); 4] = [
    ("quadrotor_success", 0.975),
    ("overall_success", 0.880),
    ("path_length", 12.447),
    ("speed", 0.495),
];

/// Runs every (agents × comm rate) cell of one scenario family, trials in
/// parallel, aggregated in a fixed order.
pub fn run_benchmark(
    ctx: &EvalContext,
    kind: ScenarioKind,
    agent_counts: &[usize],
    comm_hz: &[f64],
    log_dir: Option<&Path>,
) -> Result<BenchmarkTable> {
    let mut cells = Vec::new();
    for &n in agent_counts {
        for &hz in comm_hz {
            cells.push((n, hz));
        }
    }
    let jobs: Vec<(usize, f64, usize)> = cells
        .iter()
        .flat_map(|&(n, hz)| (0..ctx.eval.trials).map(move |t| (n, hz, t)))
        .collect();
    let results: Vec<Result<TrialResult>> = jobs
        .par_iter()
        .map(|&(n, hz, t)| run_trial(ctx, kind, n, hz, t, log_dir))
        .collect();
    let trials: Vec<TrialResult> = results.into_iter().collect::<Result<_>>()?;
    let rows = trials
        .chunks(ctx.eval.trials)
        .map(aggregate_cell)
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkTable {
        config_digest: ctx.config_digest.to_string(),
        seed: ctx.eval.seed,
        rows,
        trials,
    })
}

fn ms(m: &MeanStd) -> String {
    format!("{:.6},{:.6}", m.mean, m.std)
}

impl BenchmarkTable {
    /// Aggregate table with a provenance comment block.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_digest={}\n# seed={}\n", self.config_digest, self.seed);
        if self
            .rows
            .iter()
            .any(|r| r.scenario == ScenarioKind::StraightLine && r.agents == 8)
        {
            let refs: Vec<String> = REFERENCE_STRAIGHT_8.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!(
                "# reference (published large-scale training, annotation only) StraightLine 8 agents: {}\n",
                refs.join(" ")
            ));
        }
        let metrics = [
            "quadrotor_success",
            "overall_success",
            "incomplete",
            "quad_collision",
            "obstacle_collision",
            "path_length",
            "speed",
            "accel",
            "jerk",
            "traversability",
        ];
        let mut header = vec!["scenario".to_string(), "agents".into(), "comm_hz".into(), "trials".into()];
        for m in metrics {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:?},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.agents,
                r.comm_hz,
                r.trials,
                ms(&r.quadrotor_success),
                ms(&r.overall_success),
                ms(&r.incomplete),
                ms(&r.quad_collision),
                ms(&r.obstacle_collision),
                ms(&r.path_length),
                ms(&r.speed),
                ms(&r.accel),
                ms(&r.jerk),
                ms(&r.traversability),
            ));
        }
        out
    }

    /// Long-format per-trial table for success-versus-traversability and
    /// scaling plots.
    pub fn trials_csv(&self, bins: &[f64]) -> String {
        let mut out = format!("# config_digest={}\n# seed={}\n", self.config_digest, self.seed);
        out.push_str("scenario,agents,comm_hz,trial,seed,traversability,traversability_bin,quadrotor_success,overall_success,incomplete,quad_collision_fraction,obstacle_collision_fraction\n");
        for t in &self.trials {
            let bin = bins.iter().rposition(|e| t.traversability >= *e).map(|k| k as i64).unwrap_or(-1);
            let m = &t.metrics;
            out.push_str(&format!(
                "{:?},{},{},{},{},{:.6},{},{:.6},{},{},{:.6},{:.6}\n",
                t.scenario,
                t.agents,
                t.comm_hz,
                t.trial,
                t.seed,
                t.traversability,
                bin,
                m.quadrotor_success,
                u8::from(m.overall_success),
                u8::from(m.incomplete),
                m.quad_collision_fraction,
                m.obstacle_collision_fraction
            ));
        }
        out
    }
}

/// Attention weights of one agent at one policy tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub tick: u64,
    pub time: f64,
    pub agent: usize,
    /// (self, neighbor, obstacle) softmax weights.
    pub raw: [f64; 3],
    /// (neighbor, obstacle) weights renormalized to sum to one.
    pub renormalized: [f64; 2],
}

pub fn renormalize_attention(w: &[f64; 3]) -> [f64; 2] {
    let s = w[1] + w[2];
    if s > 0.0 {
        [w[1] / s, w[2] / s]
    } else {
        [0.5, 0.5]
    }
}

/// Per-agent, per-policy-tick attention table from an episode log.
pub fn attention_report(records: &[StepRecord]) -> Vec<AttentionRow> {
    let mut rows = Vec::new();
    for r in records {
        for (i, a) in r.agents.iter().enumerate() {
            if a.policy_tick {
                rows.push(AttentionRow {
                    tick: r.tick,
                    time: r.time,
                    agent: i,
                    raw: a.attention,
                    renormalized: renormalize_attention(&a.attention),
                });
            }
        }
    }
    rows
}

pub fn attention_csv(rows: &[AttentionRow]) -> String {
    let mut out = String::from("tick,time,agent,w_self,w_neighbor,w_obstacle,renorm_neighbor,renorm_obstacle\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.3},{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            r.tick, r.time, r.agent, r.raw[0], r.raw[1], r.raw[2], r.renormalized[0], r.renormalized[1]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Room;
    use crate::rl::RewardBreakdown;
    use crate::scenario::GoalMode;
    use crate::sim::AgentRecord;
    use crate::trajectory::Waypoint;

    fn agent_at(p: Vector3<f64>, v: Vector3<f64>) -> AgentRecord {
        AgentRecord {
            position: p.into(),
            velocity: v.into(),
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            angular_velocity: [0.0; 3],
            action: [0.5; 4],
            reward: RewardBreakdown::default(),
            sbc: None,
            attention: [0.2, 0.3, 0.5],
            policy_tick: true,
            ranges: None,
        }
    }

    fn spec_n(n: usize, goal: Vector3<f64>) -> EpisodeSpec {
        EpisodeSpec {
            kind: ScenarioKind::StraightLine,
            room: Room::default(),
            obstacles: vec![],
            starts: (0..n).map(|_| Waypoint::new(goal, 0.0)).collect(),
            goals: (0..n).map(|_| Waypoint::new(goal, 0.0)).collect(),
            goal_mode: GoalMode::Unique,
            desired_velocity: 0.5,
            density: 0.0,
        }
    }

    /// Agents parked on their goals for 2 s; `offset[i]` displaces agent i.
    fn parked(n: usize, offsets: &[f64], events: Vec<(usize, CollisionEvent)>) -> (Vec<StepRecord>, EpisodeSpec) {
        let goal = Vector3::new(0.0, 0.0, 1.0);
        let dt = 0.005;
        let records = (1..=400u64)
            .map(|k| StepRecord {
                tick: k,
                time: k as f64 * dt,
                agents: (0..n).map(|i| agent_at(goal + Vector3::x() * offsets[i], Vector3::zeros())).collect(),
                events: events.iter().filter(|(t, _)| *t as u64 == k).map(|(_, e)| *e).collect(),
            })
            .collect();
        (records, spec_n(n, goal))
    }

    #[test]
    fn all_reach_no_collisions() {
        let (r, s) = parked(3, &[0.0; 3], vec![]);
        let m = score_episode(&r, &s, &EvalConfig::default()).unwrap();
        assert_eq!(m.quadrotor_success, 1.0);
        assert!(m.overall_success);
        assert!(!m.incomplete);
    }

    #[test]
    fn seven_of_eight() {
        let (r, s) = parked(8, &[0.0; 8], vec![(100, CollisionEvent::QuadObstacle { agent: 5, obstacle: 0 })]);
        let m = score_episode(&r, &s, &EvalConfig::default()).unwrap();
        assert_eq!(m.quadrotor_success, 7.0 / 8.0);
        assert!(!m.overall_success);
        assert!(!m.incomplete);
        assert_eq!(m.obstacle_collision_fraction, 1.0 / 8.0);
        assert_eq!(m.quad_collision_fraction, 0.0);
    }

    #[test]
    fn one_short_of_goal_is_incomplete() {
        let (r, s) = parked(2, &[0.0, 0.15], vec![]);
        let m = score_episode(&r, &s, &EvalConfig::default()).unwrap();
        assert_eq!(m.quadrotor_success, 0.5);
        assert!(m.incomplete && !m.overall_success);
    }

    #[test]
    fn constant_velocity_trace() {
        let v = Vector3::new(0.3, -0.4, 0.0);
        let p0 = Vector3::new(-1.0, 0.0, 1.0);
        let dt = 0.005;
        let n = 1000u64;
        let records: Vec<StepRecord> = (1..=n)
            .map(|k| StepRecord {
                tick: k,
                time: k as f64 * dt,
                agents: vec![agent_at(p0 + v * (k as f64 * dt), v)],
                events: vec![],
            })
            .collect();
        let mut spec = spec_n(1, p0 + v * (n as f64 * dt));
        spec.starts[0] = Waypoint::new(p0, 0.0);
        let m = score_episode(&records, &spec, &EvalConfig::default()).unwrap();
        let a = &m.agents[0];
        assert!(a.mean_jerk.abs() <= 1e-9);
        assert!(a.mean_accel.abs() <= 1e-9);
        assert!((a.path_length - v.norm() * n as f64 * dt).abs() <= 1e-6);
        assert!((a.mean_speed - 0.5).abs() < 1e-12);
    }

    #[test]
    fn truncated_log_is_rejected() {
        let (r, s) = parked(1, &[0.0], vec![]);
        let mut gap = r.clone();
        gap.remove(10);
        assert!(score_episode(&gap, &s, &EvalConfig::default()).is_err());
        assert!(score_episode(&r[..2], &s, &EvalConfig::default()).is_err());
        let mut long = s.clone();
        long.goals[0] = Waypoint::new(Vector3::new(5.0, 0.0, 1.0), 0.0);
        // the reference for a 5 m hop outlasts the 2 s log
        assert!(score_episode(&r, &long, &EvalConfig::default()).is_err());
    }

    #[test]
    fn finite_difference_error_halves_with_dt() {
        // v(t) = sin t: the forward-difference accel error is O(dt)
        let err = |dt: f64| {
            let n = (2.0 / dt).round() as u64;
            let records: Vec<StepRecord> = (1..=n)
                .map(|k| {
                    let t = k as f64 * dt;
                    StepRecord {
                        tick: k,
                        time: t,
                        agents: vec![agent_at(Vector3::new(-t.cos(), 0.0, 1.0), Vector3::new(t.sin(), 0.0, 0.0))],
                        events: vec![],
                    }
                })
                .collect();
            let mut spec = spec_n(1, Vector3::new(0.0, 0.0, 1.0));
            spec.starts[0] = Waypoint::new(Vector3::new(-(dt.cos()), 0.0, 1.0), 0.0);
            let m = score_episode(&records, &spec, &EvalConfig::default()).unwrap();
            // exact mean |cos t| over the sampled interval
            let exact: f64 = (1..n).map(|k| (k as f64 * dt).cos().abs()).sum::<f64>() / (n - 1) as f64;
            (m.agents[0].mean_accel - exact).abs()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn metric_algebra() {
        let (r, s) = parked(4, &[0.0, 0.2, 0.0, 0.0], vec![(5, CollisionEvent::QuadQuad { a: 0, b: 2 })]);
        let m = score_episode(&r, &s, &EvalConfig::default()).unwrap();
        let overall = if m.overall_success { 1.0 } else { 0.0 };
        let incomplete = if m.incomplete { 1.0 } else { 0.0 };
        assert!(overall <= m.quadrotor_success);
        assert!(overall + incomplete <= 1.0);
        assert_eq!(m.quad_collision_fraction, 0.5);
    }

    #[test]
    fn attention_rows_normalize() {
        let (r, _) = parked(2, &[0.0; 2], vec![]);
        let rows = attention_report(&r);
        assert_eq!(rows.len(), 800);
        for row in rows {
            assert!((row.raw.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            assert!((row.renormalized.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn mean_std_basic() {
        let m = mean_std(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
    }

    #[test]
    fn sweep_axis_default() {
        assert_eq!(EvalConfig::default().comm_sweep_hz, vec![50.0, 45.0, 35.0, 25.0, 15.0, 5.0]);
    }
}
