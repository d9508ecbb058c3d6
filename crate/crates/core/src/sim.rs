//! The per-episode closed loop: fixed-order subsystem scheduling, collision
//! handling, reward evaluation and per-tick records.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    apply_quad_obstacle_collision, apply_quad_quad_collision, domain_randomize, step, CollisionModel,
    ControlInput, QuadrotorParams, QuadrotorState,
};
use crate::error::{Error, Result};
use crate::geometry::{yaw_rotation, Cylinder};
use crate::policy::{ObservationBundle, NEIGHBOR_SLOTS};
use crate::rl::reward::{total_reward, RewardBreakdown, RewardWeights, TrainStage};
use crate::safety::{build_constraints, filter_control, nearest_neighbors, SafetyParams};
use crate::scenario::EpisodeSpec;
use crate::sensing::{
    add_range_noise, exp_filter, raycast_tof, sdf_observation, CommChannel, CondensedFrame, SensingConfig, TofFrame,
};
use crate::trajectory::PiecewisePolynomial;
use crate::{seeded_rng, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub policy_period: f64,
    /// Time allowed past the end of the longest reference trajectory, s.
    pub time_margin: f64,
    pub collision_radius: f64,
    pub ground_height: f64,
    /// Relative spread of per-episode parameter randomization, 0 disables.
    pub randomization_spread: f64,
    /// Keep the filtered ranges in every record (large logs).
    pub record_ranges: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.005,
            policy_period: 0.01,
            time_margin: 3.0,
            collision_radius: 0.06,
            ground_height: 0.02,
            randomization_spread: 0.0,
            record_ranges: false,
        }
    }
}

/// Rounds a subsystem period to a whole number of physics ticks. The
/// rounding is reported once per process, not once per world.
pub fn period_ticks(period: f64, dt: f64, name: &str) -> u64 {
    static WARNED: std::sync::Once = std::sync::Once::new();
    let ratio = period / dt;
    let ticks = ratio.round().max(1.0) as u64;
    if (ratio - ticks as f64).abs() > 1e-9 {
        WARNED.call_once(|| log::warn!(
            "{name} period {period} s is not a multiple of dt {dt} s; using {ticks} ticks ({} s)",
            ticks as f64 * dt
        ));
    }
    ticks
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.sensing.validate()?;
        for (name, p) in [("tof_period", self.sensing.tof_period), ("comm_period", self.sensing.comm_period)] {
            if !(p >= self.sim.dt - 1e-12) {
                return Err(Error::Config(format!("sensing.{name} {p} is shorter than dt {}", self.sim.dt)));
            }
        }
        self.quad.validate()?;
        self.safety.validate()?;
        self.reward.validate()
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("sim.dt must be > 0, got {}", self.dt)));
        }
        if !(self.policy_period >= self.dt - 1e-12) {
            return Err(Error::Config(format!(
                "sim.policy_period {} is shorter than dt {}",
                self.policy_period, self.dt
            )));
        }
        if !(self.collision_radius > 0.0) || self.time_margin < 0.0 {
            return Err(Error::Config("sim: collision_radius must be > 0 and time_margin ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.randomization_spread) {
            return Err(Error::Config("sim.randomization_spread must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything a world needs besides the episode itself.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub sim: SimConfig,
    pub sensing: SensingConfig,
    pub quad: QuadrotorParams,
    pub safety: SafetyParams,
    pub collision: CollisionModel,
    pub reward: RewardWeights,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollisionEvent {
    QuadQuad { a: usize, b: usize },
    QuadObstacle { agent: usize, obstacle: usize },
    Ground { agent: usize },
}

impl CollisionEvent {
    pub fn involves(&self, agent: usize) -> bool {
        match *self {
            CollisionEvent::QuadQuad { a, b } => a == agent || b == agent,
            CollisionEvent::QuadObstacle { agent: x, .. } | CollisionEvent::Ground { agent: x } => x == agent,
        }
    }
}

/// Contact flags from the previous tick, used to report one event per
/// continuous overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactTracker {
    n_agents: usize,
    n_obstacles: usize,
    quad: Vec<bool>,
    obstacle: Vec<bool>,
    ground: Vec<bool>,
}

impl ContactTracker {
    pub fn new(n_agents: usize, n_obstacles: usize) -> Self {
        ContactTracker {
            n_agents,
            n_obstacles,
            quad: vec![false; n_agents * n_agents],
            obstacle: vec![false; n_agents * n_obstacles],
            ground: vec![false; n_agents],
        }
    }
}

/// Rising-edge collision detection against the tracker's previous contacts.
pub fn detect_collisions(
    states: &[QuadrotorState],
    obstacles: &[Cylinder],
    config: &SimConfig,
    tracker: &mut ContactTracker,
) -> Vec<CollisionEvent> {
    assert_eq!(states.len(), tracker.n_agents, "tracker sized for a different agent count");
    assert_eq!(obstacles.len(), tracker.n_obstacles, "tracker sized for a different obstacle count");
    let n = states.len();
    let r = config.collision_radius;
    let mut events = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let touching = (states[a].position - states[b].position).norm() < 2.0 * r;
            let flag = &mut tracker.quad[a * n + b];
            if touching && !*flag {
                events.push(CollisionEvent::QuadQuad { a, b });
            }
            *flag = touching;
        }
    }
    for (a, s) in states.iter().enumerate() {
        for (k, c) in obstacles.iter().enumerate() {
            let touching = c.axis_distance(&s.position) < r + c.radius;
            let flag = &mut tracker.obstacle[a * tracker.n_obstacles + k];
            if touching && !*flag {
                events.push(CollisionEvent::QuadObstacle { agent: a, obstacle: k });
            }
            *flag = touching;
        }
        let touching = s.position.z <= config.ground_height;
        if touching && !tracker.ground[a] {
            events.push(CollisionEvent::Ground { agent: a });
        }
        tracker.ground[a] = touching;
    }
    events
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbcSummary {
    pub filter_active: bool,
    pub feasible: bool,
    pub min_margin: f64,
    pub constraints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Row-major attitude.
    pub rotation: [f64; 9],
    pub angular_velocity: [f64; 3],
    pub action: [f64; 4],
    pub reward: RewardBreakdown,
    pub sbc: Option<SbcSummary>,
    pub attention: [f64; 3],
    /// Whether the action was recomputed on this tick.
    pub policy_tick: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<CondensedFrame>,
}

/// One physics tick. `time` is the clock after the step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: u64,
    pub time: f64,
    pub agents: Vec<AgentRecord>,
    pub events: Vec<CollisionEvent>,
}

/// Action and attention weights chosen for one agent at a policy tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: ControlInput,
    pub attention: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickOutcome {
    pub rewards: Vec<RewardBreakdown>,
    pub sbc: Vec<Option<SbcSummary>>,
    pub events: Vec<CollisionEvent>,
    pub policy_tick: bool,
}

/// How often each subsystem fired.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleCounters {
    pub physics: u64,
    pub policy: u64,
    pub tof: u64,
    pub comm: u64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub state: QuadrotorState,
    pub params: QuadrotorParams,
    pub trajectory: PiecewisePolynomial,
    pub frame: TofFrame,
    pub filtered: CondensedFrame,
    pub action: ControlInput,
    pub attention: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: EpisodeSpec,
    pub config: WorldConfig,
    pub agents: Vec<Agent>,
    pub comm: CommChannel,
    pub counters: ScheduleCounters,
    tick: u64,
    time_limit: f64,
    policy_ticks: u64,
    tof_ticks: u64,
    sensed_tick: Option<u64>,
    contacts: ContactTracker,
    rng: SimRng,
}

impl World {
    pub fn new(spec: EpisodeSpec, config: WorldConfig, seed: u64) -> Result<World> {
        config.validate()?;
        if spec.n_agents() == 0 || spec.goals.len() != spec.n_agents() {
            return Err(Error::Scenario("episode needs matching, non-empty starts and goals".into()));
        }
        let mut rng = seeded_rng(seed);
        let trajectories = spec.trajectories()?;
        let longest = trajectories.iter().map(|t| t.total_duration()).fold(0.0, f64::max);
        let mut agents = Vec::with_capacity(spec.n_agents());
        for (start, traj) in spec.starts.iter().zip(trajectories) {
            let params = domain_randomize(&config.quad, &mut rng, config.sim.randomization_spread)?;
            let mut state = QuadrotorState::at_rest(start.position());
            state.rotation = yaw_rotation(start.yaw);
            agents.push(Agent {
                state,
                params,
                trajectory: traj,
                frame: TofFrame::empty(0.0),
                filtered: TofFrame::empty(0.0).condensed,
                action: ControlInput::hover(&params),
                attention: [0.0; 3],
            });
        }
        let sim = config.sim;
        let sensing = config.sensing;
        Ok(World {
            comm: CommChannel::new(agents.len(), sensing.comm_period, sensing.comm_drop_probability),
            contacts: ContactTracker::new(agents.len(), spec.obstacles.len()),
            policy_ticks: period_ticks(sim.policy_period, sim.dt, "policy"),
            tof_ticks: period_ticks(sensing.tof_period, sim.dt, "tof"),
            time_limit: longest + sim.time_margin,
            spec,
            config,
            agents,
            counters: ScheduleCounters::default(),
            tick: 0,
            sensed_tick: None,
            rng,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Clock at the start of the current tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.sim.dt
    }

    pub fn time_limit(&self) -> f64 {
        self.time_limit
    }

    /// Number of physics ticks in a full episode.
    pub fn total_ticks(&self) -> u64 {
        (self.time_limit / self.config.sim.dt).ceil() as u64
    }

    pub fn done(&self) -> bool {
        self.tick >= self.total_ticks()
    }

    pub fn policy_due(&self) -> bool {
        self.tick % self.policy_ticks == 0
    }

    pub fn states(&self) -> Vec<QuadrotorState> {
        self.agents.iter().map(|a| a.state).collect()
    }

    /// Communication and ranging updates for the current tick. Idempotent
    /// within a tick.
    pub fn sense(&mut self) {
        if self.sensed_tick == Some(self.tick) {
            return;
        }
        self.sensed_tick = Some(self.tick);
        let now = self.time();
        let states = self.states();
        if self.comm.step(&states, now, &mut self.rng) {
            self.counters.comm += 1;
        }
        if self.tick % self.tof_ticks == 0 {
            self.counters.tof += 1;
            let first = self.tick == 0;
            for agent in &mut self.agents {
                let mut frame = raycast_tof(&agent.state, &self.spec.obstacles, &self.spec.room, now);
                add_range_noise(&mut frame, self.config.sensing.tof_noise_std, &mut self.rng);
                agent.filtered = if first {
                    frame.condensed
                } else {
                    exp_filter(&agent.filtered, &frame.condensed, self.config.sensing.filter_alpha)
                };
                agent.frame = frame;
            }
        }
    }

    pub fn observation(&self, i: usize) -> ObservationBundle {
        let a = &self.agents[i];
        let now = self.time();
        let goal = a.trajectory.evaluate(now);
        let view = self
            .comm
            .view(i, &a.state.position, NEIGHBOR_SLOTS, self.config.safety.neighbor_range);
        let sdf = sdf_observation(&a.state.position, &self.spec.obstacles, &self.spec.room);
        ObservationBundle::build(&a.state, &goal, &view, &a.filtered, &sdf, now)
    }

    /// Observations for all agents at the current tick (after sensing).
    pub fn observations(&mut self) -> Vec<ObservationBundle> {
        self.sense();
        (0..self.n_agents()).map(|i| self.observation(i)).collect()
    }

    pub fn set_decisions(&mut self, decisions: &[Decision]) -> Result<()> {
        if decisions.len() != self.agents.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} decisions for {} agents",
                decisions.len(),
                self.agents.len()
            )));
        }
        for (a, d) in self.agents.iter_mut().zip(decisions) {
            a.action = d.action;
            a.attention = d.attention;
        }
        Ok(())
    }

    /// Runs one full tick, asking `policy` for decisions when a policy tick
    /// is due and holding the previous actions otherwise.
    pub fn step_with<F>(&mut self, stage: TrainStage, mut policy: F) -> Result<TickOutcome>
    where
        F: FnMut(&[ObservationBundle]) -> Result<Vec<Decision>>,
    {
        self.sense();
        let due = self.policy_due();
        if due {
            let obs = self.observations();
            let decisions = policy(&obs)?;
            self.set_decisions(&decisions)?;
        }
        self.advance(stage)
    }

    /// Filter evaluation, physics, collisions and reward for the current
    /// tick using the held actions, then moves the clock forward.
    pub fn advance(&mut self, stage: TrainStage) -> Result<TickOutcome> {
        self.sense();
        let policy_tick = self.policy_due();
        if policy_tick {
            self.counters.policy += 1;
        }
        let states = self.states();
        let cfg = self.config;

        let sbc: Vec<_> = match stage {
            TrainStage::NominalOnly => vec![None; states.len()],
            TrainStage::SafetyGuided => (0..states.len())
                .map(|i| {
                    let others: Vec<QuadrotorState> = states
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, s)| *s)
                        .collect();
                    let picked: Vec<QuadrotorState> = nearest_neighbors(&states[i], &others, &cfg.safety)
                        .into_iter()
                        .map(|k| others[k])
                        .collect();
                    let set = build_constraints(&states[i], &picked, &self.spec.obstacles, &self.spec.room, &cfg.safety);
                    let n = set.len();
                    let r = filter_control(&states[i], &self.agents[i].action, &set, &self.agents[i].params, &cfg.safety);
                    Some((r, n))
                })
                .collect(),
        };

        let dt = cfg.sim.dt;
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let next = step(&agent.state, &agent.action, &agent.params, dt).map_err(|e| match e {
                Error::SimulationDiverged { state } => Error::SimulationDiverged { state },
                other => other,
            });
            let mut next = match next {
                Ok(s) => s,
                Err(e) => {
                    log::error!("agent {i} diverged at t = {:.3} s", self.tick as f64 * dt);
                    return Err(e);
                }
            };
            contain(&mut next, &self.spec.room);
            agent.state = next;
        }
        self.counters.physics += 1;

        let states = self.states();
        let events = detect_collisions(&states, &self.spec.obstacles, &cfg.sim, &mut self.contacts);
        for e in &events {
            match *e {
                CollisionEvent::QuadQuad { a, b } => {
                    let (sa, sb) = apply_quad_quad_collision(
                        &self.agents[a].state,
                        &self.agents[b].state,
                        &cfg.collision,
                        &mut self.rng,
                    );
                    self.agents[a].state = sa;
                    self.agents[b].state = sb;
                }
                CollisionEvent::QuadObstacle { agent, obstacle } => {
                    let c = self.spec.obstacles[obstacle];
                    let center = Vector3::new(c.center[0], c.center[1], self.agents[agent].state.position.z);
                    self.agents[agent].state =
                        apply_quad_obstacle_collision(&self.agents[agent].state, &center, &cfg.collision, &mut self.rng);
                }
                CollisionEvent::Ground { .. } => {}
            }
        }

        self.tick += 1;
        let now = self.time();
        let mut rewards = Vec::with_capacity(self.agents.len());
        for (i, a) in self.agents.iter().enumerate() {
            let goal = a.trajectory.evaluate(now);
            let grounded = a.state.position.z <= cfg.sim.ground_height;
            rewards.push(total_reward(
                &a.state,
                &goal,
                &a.action,
                sbc[i].as_ref().map(|(r, _)| r),
                grounded,
                stage,
                &cfg.reward,
                dt,
            ));
        }
        let sbc = sbc
            .into_iter()
            .map(|o| {
                o.map(|(r, n)| SbcSummary {
                    filter_active: r.filter_active,
                    feasible: r.feasible,
                    min_margin: r.min_margin(),
                    constraints: n,
                })
            })
            .collect();
        Ok(TickOutcome {
            rewards,
            sbc,
            events,
            policy_tick,
        })
    }

    /// Snapshot of the tick that `outcome` came from.
    pub fn record(&self, outcome: &TickOutcome) -> StepRecord {
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let r = a.state.rotation;
                AgentRecord {
                    position: a.state.position.into(),
                    velocity: a.state.velocity.into(),
                    rotation: std::array::from_fn(|k| r[(k / 3, k % 3)]),
                    angular_velocity: a.state.angular_velocity.into(),
                    action: a.action.normalized_thrusts,
                    reward: outcome.rewards[i],
                    sbc: outcome.sbc[i],
                    attention: a.attention,
                    policy_tick: outcome.policy_tick,
                    ranges: self.config.sim.record_ranges.then_some(a.filtered),
                }
            })
            .collect();
        StepRecord {
            tick: self.tick,
            time: self.time(),
            agents,
            events: outcome.events.clone(),
        }
    }
}

/// Keeps the vehicle inside the room: the floor stops descent and bleeds
/// off horizontal and angular motion, walls and ceiling stop outward motion.
fn contain(s: &mut QuadrotorState, room: &crate::geometry::Room) {
    if s.position.z < room.min[2] {
        s.position.z = room.min[2];
        s.velocity.z = s.velocity.z.max(0.0);
        s.velocity.x *= 0.5;
        s.velocity.y *= 0.5;
        s.angular_velocity *= 0.5;
    }
    for k in 0..2 {
        if s.position[k] < room.min[k] {
            s.position[k] = room.min[k];
            s.velocity[k] = s.velocity[k].max(0.0);
        } else if s.position[k] > room.max[k] {
            s.position[k] = room.max[k];
            s.velocity[k] = s.velocity[k].min(0.0);
        }
    }
    if s.position.z > room.max[2] {
        s.position.z = room.max[2];
        s.velocity.z = s.velocity.z.min(0.0);
    }
}

/// Summed per-agent returns and the full record stream of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRun {
    pub records: Vec<StepRecord>,
    pub returns: Vec<f64>,
    pub counters: ScheduleCounters,
}

/// Runs a world to its time limit.
pub fn run_episode<F>(world: &mut World, stage: TrainStage, mut policy: F) -> Result<EpisodeRun>
where
    F: FnMut(&[ObservationBundle]) -> Result<Vec<Decision>>,
{
    let mut records = Vec::with_capacity(world.total_ticks() as usize);
    let mut returns = vec![0.0; world.n_agents()];
    while !world.done() {
        let outcome = world.step_with(stage, &mut policy)?;
        for (r, b) in returns.iter_mut().zip(&outcome.rewards) {
            *r += b.total;
        }
        records.push(world.record(&outcome));
    }
    Ok(EpisodeRun {
        records,
        returns,
        counters: world.counters,
    })
}

pub const LOG_FORMAT_VERSION: u32 = 1;

/// First line of every episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeLogHeader {
    pub format_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub dt: f64,
    pub spec: EpisodeSpec,
}

const CHAIN_PREFIX: &str = "{\"record\":";
const CHAIN_KEY: &str = ",\"chain\":\"";

fn chain_next(prev: &[u8], payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(payload);
    h.finalize().into()
}

/// JSONL: a header line, then one `{"record":…,"chain":"…"}` line per tick.
/// `chain` is SHA-256 over the previous line's chain (the header bytes for
/// the first record) and this line's record JSON, so editing any value
/// breaks the chain at exactly that line.
pub fn write_episode_log<W: Write>(mut w: W, header: &EpisodeLogHeader, records: &[StepRecord]) -> Result<()> {
    let head = serde_json::to_vec(header)?;
    w.write_all(&head)?;
    w.write_all(b"\n")?;
    let mut chain = chain_next(&[], &head);
    for r in records {
        let body = serde_json::to_vec(r)?;
        chain = chain_next(&chain, &body);
        w.write_all(CHAIN_PREFIX.as_bytes())?;
        w.write_all(&body)?;
        w.write_all(CHAIN_KEY.as_bytes())?;
        w.write_all(hex::encode(chain).as_bytes())?;
        w.write_all(b"\"}\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses and audits a log. Malformed lines are [`Error::Log`], broken hash
/// chains [`Error::Audit`]; both name the first offending line (1-based).
pub fn read_episode_log<R: BufRead>(r: R) -> Result<(EpisodeLogHeader, Vec<StepRecord>)> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| Error::Log("empty episode log".into()))??;
    let header: EpisodeLogHeader =
        serde_json::from_str(&first).map_err(|e| Error::Log(format!("line 1: bad header: {e}")))?;
    if header.format_version != LOG_FORMAT_VERSION {
        return Err(Error::Log(format!(
            "line 1: log format version {} (expected {LOG_FORMAT_VERSION})",
            header.format_version
        )));
    }
    let mut chain = chain_next(&[], first.as_bytes());
    let mut records: Vec<StepRecord> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let n = k + 2;
        let tail = CHAIN_KEY.len() + 64 + 2;
        if !line.starts_with(CHAIN_PREFIX) || !line.ends_with("\"}") || line.len() < CHAIN_PREFIX.len() + tail {
            return Err(Error::Log(format!("line {n}: not a chained record line")));
        }
        let body = &line[CHAIN_PREFIX.len()..line.len() - tail];
        let stored = &line[line.len() - tail..];
        if !stored.starts_with(CHAIN_KEY) {
            return Err(Error::Log(format!("line {n}: not a chained record line")));
        }
        chain = chain_next(&chain, body.as_bytes());
        if stored[CHAIN_KEY.len()..CHAIN_KEY.len() + 64] != hex::encode(chain) {
            return Err(Error::Audit(format!("line {n}: integrity hash mismatch, log was modified")));
        }
        let rec: StepRecord = serde_json::from_str(body).map_err(|e| Error::Log(format!("line {n}: {e}")))?;
        if let Some(prev) = records.last() {
            if !(rec.time > prev.time) || rec.tick != prev.tick + 1 {
                return Err(Error::Log(format!("line {n}: tick {} does not follow {}", rec.tick, prev.tick)));
            }
        }
        if rec.agents.len() != header.spec.n_agents() {
            return Err(Error::Log(format!(
                "line {n}: {} agents, header has {}",
                rec.agents.len(),
                header.spec.n_agents()
            )));
        }
        records.push(rec);
    }
    Ok((header, records))
}
