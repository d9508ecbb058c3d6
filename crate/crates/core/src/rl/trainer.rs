//! Rollout collection over seeded environments and the iteration loop.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ppo::{ppo_update, stage_schedule, Adam, AgentTrajectory, Batch, PPOConfig, TrainScenario, Transition, UpdateStats};
use super::reward::{RewardBreakdown, TrainStage};
use crate::error::Result;
use crate::geometry::Room;
use crate::policy::{Actor, Critic, PolicyConfig};
use crate::scenario::{generate_scenario, EpisodeSpec, GoalMode, ScenarioConfig, ScenarioKind};
use crate::sim::{Decision, World, WorldConfig};
use crate::trajectory::Waypoint;
use crate::{derive_seed, seeded_rng, SimRng};

/// Seed streams; keeps the different consumers of a run seed independent.
const STREAM_INIT: u64 = 1;
const STREAM_EPISODE: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

/// Final-window length for the success proxy, s.
const SUCCESS_WINDOW: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub ppo: PPOConfig,
    pub policy: PolicyConfig,
    pub world: WorldConfig,
    pub scenario: ScenarioConfig,
    pub success_threshold: f64,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.policy.validate()?;
        self.world.validate()?;
        self.scenario.validate()
    }
}

/// Empty 4×4×3 room, one short hop to a held end point.
pub fn generate_hover_scenario<R: Rng + ?Sized>(n_agents: usize, config: &ScenarioConfig, rng: &mut R) -> Result<EpisodeSpec> {
    let room = Room::centered(4.0, 4.0, 3.0);
    let mut starts = Vec::with_capacity(n_agents);
    let mut goals = Vec::with_capacity(n_agents);
    for k in 0..n_agents {
        // agents hover in separate lanes
        let lane = -1.5 + 3.0 * (k as f64 + 0.5) / n_agents as f64;
        let goal = Vector3::new(rng.gen_range(-1.0..1.0), lane, rng.gen_range(0.8..1.5));
        let dir = crate::dynamics::random_unit_vector(rng);
        let start = goal + dir * rng.gen_range(0.0..0.5);
        let start = Vector3::new(start.x, start.y, start.z.max(0.5));
        starts.push(Waypoint::new(start, 0.0));
        goals.push(Waypoint::new(goal, 0.0));
    }
    Ok(EpisodeSpec {
        kind: ScenarioKind::TrainingRandom,
        room,
        obstacles: Vec::new(),
        starts,
        goals,
        goal_mode: GoalMode::Unique,
        desired_velocity: config.eval_velocity,
        density: 0.0,
    })
}

pub fn training_episode<R: Rng + ?Sized>(
    scenario: TrainScenario,
    n_agents: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<EpisodeSpec> {
    match scenario {
        TrainScenario::TrainingRandom => generate_scenario(ScenarioKind::TrainingRandom, n_agents, config, rng),
        TrainScenario::StraightLine => generate_scenario(ScenarioKind::StraightLine, n_agents, config, rng),
        TrainScenario::SwapGoal => generate_scenario(ScenarioKind::SwapGoal, n_agents, config, rng),
        TrainScenario::Hover => generate_hover_scenario(n_agents, config, rng),
    }
}

/// Per-agent outcome of one training episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentEpisodeStats {
    pub reward: RewardBreakdown,
    pub final_distance: f64,
    pub reached: bool,
    pub collided: bool,
}

#[derive(Clone, Debug)]
pub struct EnvRollout {
    pub trajectories: Vec<AgentTrajectory>,
    pub agents: Vec<AgentEpisodeStats>,
    pub decisions: u64,
}

/// One complete stochastic episode with the current networks.
pub fn rollout_episode(
    actor: &Actor,
    critic: &Critic,
    setup: &TrainSetup,
    scenario: TrainScenario,
    stage: TrainStage,
    episode_seed: u64,
) -> Result<EnvRollout> {
    let mut scen_rng = seeded_rng(derive_seed(episode_seed, 0));
    let [lo, hi] = setup.ppo.agents;
    let n_agents = scen_rng.gen_range(lo..=hi);
    let spec = training_episode(scenario, n_agents, &setup.scenario, &mut scen_rng)?;
    let goals: Vec<Vector3<f64>> = spec.goals.iter().map(|g| g.position()).collect();
    let mut world = World::new(spec, setup.world, derive_seed(episode_seed, 1))?;
    let mut act_rng: SimRng = seeded_rng(derive_seed(episode_seed, 2));

    let n = world.n_agents();
    let mut hidden: Vec<Vec<f64>> = vec![critic.initial_hidden(); n];
    let mut steps: Vec<Vec<Transition>> = vec![Vec::new(); n];
    let mut stats = vec![AgentEpisodeStats::default(); n];
    let mut window = vec![(0.0, 0usize); n];
    let window_start = world.total_ticks() as f64 * setup.world.sim.dt - SUCCESS_WINDOW;

    while !world.done() {
        if world.policy_due() {
            let obs = world.observations();
            let mut decisions = Vec::with_capacity(n);
            for (i, o) in obs.into_iter().enumerate() {
                let out = actor.forward(&o)?;
                let s = out.dist.sample(&mut act_rng);
                let (value, h_next) = critic.forward(&o, &hidden[i])?;
                let h_in = std::mem::replace(&mut hidden[i], h_next);
                steps[i].push(Transition {
                    obs: o,
                    z: s.z,
                    log_prob: s.log_prob,
                    value,
                    reward: 0.0,
                    hidden: h_in,
                });
                decisions.push(Decision {
                    action: s.u,
                    attention: out.attention,
                });
            }
            world.set_decisions(&decisions)?;
        }
        let outcome = world.advance(stage)?;
        for i in 0..n {
            let r = &outcome.rewards[i];
            if let Some(last) = steps[i].last_mut() {
                last.reward += r.total;
            }
            accumulate(&mut stats[i].reward, r);
        }
        // same convention as evaluation: ground strikes count
        for e in &outcome.events {
            for (i, s) in stats.iter_mut().enumerate() {
                s.collided |= e.involves(i);
            }
        }
        if world.time() > window_start {
            for i in 0..n {
                window[i].0 += (world.agents[i].state.position - goals[i]).norm();
                window[i].1 += 1;
            }
        }
    }

    let obs = world.observations();
    let mut trajectories = Vec::with_capacity(n);
    for (i, o) in obs.iter().enumerate() {
        let (bootstrap, _) = critic.forward(o, &hidden[i])?;
        trajectories.push(AgentTrajectory {
            steps: std::mem::take(&mut steps[i]),
            bootstrap_value: bootstrap,
        });
        let mean = window[i].0 / window[i].1.max(1) as f64;
        stats[i].final_distance = mean;
        stats[i].reached = mean <= setup.success_threshold;
    }
    let decisions = trajectories.iter().map(|t| t.steps.len() as u64).sum();
    Ok(EnvRollout {
        trajectories,
        agents: stats,
        decisions,
    })
}

fn accumulate(acc: &mut RewardBreakdown, r: &RewardBreakdown) {
    acc.position += r.position;
    acc.yaw += r.yaw;
    acc.spin += r.spin;
    acc.crash += r.crash;
    acc.low_altitude += r.low_altitude;
    acc.disagreement += r.disagreement;
    acc.boundary += r.boundary;
    acc.no_solution += r.no_solution;
    acc.efficiency += r.efficiency;
    acc.total += r.total;
}

/// One row of the training metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u64,
    pub global_step: u64,
    pub stage: TrainStage,
    pub episodes: usize,
    pub decisions: u64,
    /// Episode reward summed over agents, averaged over episodes.
    pub team_return: f64,
    /// Per-agent episode sums of each reward term, averaged.
    pub terms: RewardBreakdown,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub mean_final_distance: f64,
    pub update: UpdateStats,
}

impl IterationReport {
    pub fn csv_header() -> String {
        let mut cols = vec![
            "iteration",
            "global_step",
            "stage",
            "episodes",
            "decisions",
            "team_return",
        ];
        cols.extend(RewardBreakdown::TERM_NAMES);
        cols.extend([
            "success_rate",
            "collision_rate",
            "mean_final_distance",
            "policy_loss",
            "value_loss",
            "entropy",
            "approx_kl",
            "clip_fraction",
            "actor_grad_norm",
            "critic_grad_norm",
        ]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cells = vec![
            self.iteration.to_string(),
            self.global_step.to_string(),
            format!("{:?}", self.stage),
            self.episodes.to_string(),
            self.decisions.to_string(),
            format!("{:.6e}", self.team_return),
        ];
        cells.extend(self.terms.terms().iter().map(|v| format!("{v:.6e}")));
        let u = &self.update;
        cells.extend(
            [
                self.success_rate,
                self.collision_rate,
                self.mean_final_distance,
                u.policy_loss,
                u.value_loss,
                u.entropy,
                u.approx_kl,
                u.clip_fraction,
                u.actor_grad_norm,
                u.critic_grad_norm,
            ]
            .iter()
            .map(|v| format!("{v:.6e}")),
        );
        cells.join(",")
    }
}

/// Training state: networks, optimizers and counters. Everything the next
/// iteration depends on is in here, so a checkpoint of it resumes exactly.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub setup: TrainSetup,
    pub seed: u64,
    pub actor: Actor,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub global_step: u64,
    pub iteration: u64,
    pub episodes: u64,
}

impl Trainer {
    pub fn new(setup: TrainSetup, seed: u64) -> Result<Self> {
        setup.validate()?;
        let mut rng = seeded_rng(derive_seed(seed, STREAM_INIT));
        let actor = Actor::new(setup.policy, &mut rng);
        let critic = Critic::new(setup.policy, &mut rng);
        Ok(Trainer {
            actor_opt: Adam::new(actor.param_count(), setup.ppo.learning_rate),
            critic_opt: Adam::new(critic.param_count(), setup.ppo.learning_rate),
            setup,
            seed,
            actor,
            critic,
            global_step: 0,
            iteration: 0,
            episodes: 0,
        })
    }

    pub fn stage(&self) -> TrainStage {
        stage_schedule(self.global_step, &self.setup.ppo)
    }

    pub fn finished(&self) -> bool {
        self.global_step >= self.setup.ppo.total_steps
    }

    /// Collects whole episodes from every environment; each environment
    /// keeps starting episodes until it has `horizon` decisions.
    pub fn collect(&self, stage: TrainStage) -> Result<(Vec<EnvRollout>, u64)> {
        let ppo = &self.setup.ppo;
        let base = self.episodes;
        let scenario = ppo.scenario_at(self.global_step);
        let per_env: Vec<Result<Vec<EnvRollout>>> = (0..ppo.n_envs as u64)
            .into_par_iter()
            .map(|env| {
                let mut out = Vec::new();
                let mut decisions = 0;
                let mut k = 0u64;
                while decisions < ppo.horizon as u64 {
                    // episode ids interleave so they do not depend on timing
                    let id = base + env + k * ppo.n_envs as u64;
                    let r = rollout_episode(&self.actor, &self.critic, &self.setup, scenario, stage, derive_seed(self.seed ^ STREAM_EPISODE, id))?;
                    decisions += r.decisions;
                    out.push(r);
                    k += 1;
                }
                Ok(out)
            })
            .collect();
        let mut rollouts = Vec::new();
        let mut max_k = 0;
        for r in per_env {
            let r = r?;
            max_k = max_k.max(r.len() as u64);
            rollouts.extend(r);
        }
        Ok((rollouts, max_k * ppo.n_envs as u64))
    }

    /// Collect, update, advance the counters.
    pub fn iterate(&mut self) -> Result<IterationReport> {
        let stage = self.stage();
        let (rollouts, ids_used) = self.collect(stage)?;
        let trajectories: Vec<AgentTrajectory> = rollouts.iter().flat_map(|r| r.trajectories.iter().cloned()).collect();
        let batch = Batch::from_trajectories(&trajectories, &self.setup.ppo);
        let mut shuffle = seeded_rng(derive_seed(self.seed ^ STREAM_SHUFFLE, self.iteration));
        let update = ppo_update(
            &mut self.actor,
            &mut self.critic,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &batch,
            &self.setup.ppo,
            &mut shuffle,
        )?;

        let decisions: u64 = rollouts.iter().map(|r| r.decisions).sum();
        let agents: Vec<&AgentEpisodeStats> = rollouts.iter().flat_map(|r| r.agents.iter()).collect();
        let na = agents.len().max(1) as f64;
        let mut terms = RewardBreakdown::default();
        for a in &agents {
            accumulate(&mut terms, &a.reward);
        }
        let scale = |v: &mut f64| *v /= na;
        for v in [
            &mut terms.position,
            &mut terms.yaw,
            &mut terms.spin,
            &mut terms.crash,
            &mut terms.low_altitude,
            &mut terms.disagreement,
            &mut terms.boundary,
            &mut terms.no_solution,
            &mut terms.efficiency,
            &mut terms.total,
        ] {
            scale(v);
        }
        let team_return = agents.iter().map(|a| a.reward.total).sum::<f64>() / rollouts.len().max(1) as f64;
        let report = IterationReport {
            iteration: self.iteration,
            global_step: self.global_step + decisions,
            stage,
            episodes: rollouts.len(),
            decisions,
            team_return,
            terms,
            success_rate: agents.iter().filter(|a| a.reached && !a.collided).count() as f64 / na,
            collision_rate: agents.iter().filter(|a| a.collided).count() as f64 / na,
            mean_final_distance: agents.iter().map(|a| a.final_distance).sum::<f64>() / na,
            update,
        };
        self.global_step += decisions;
        self.iteration += 1;
        self.episodes += ids_used;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_setup() -> TrainSetup {
        let mut s = TrainSetup {
            ppo: PPOConfig {
                n_envs: 2,
                horizon: 16,
                minibatch_size: 64,
                epochs: 1,
                total_steps: 2000,
                scenario: TrainScenario::Hover,
                agents: [1, 2],
                ..PPOConfig::default()
            },
            policy: PolicyConfig::default(),
            world: WorldConfig::default(),
            scenario: ScenarioConfig::default(),
            success_threshold: 0.1,
        };
        s.world.sim.time_margin = 0.5;
        s
    }

    #[test]
    fn hover_scenario_is_inside_room() {
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let s = generate_hover_scenario(3, &ScenarioConfig::default(), &mut rng).unwrap();
            for w in s.starts.iter().chain(&s.goals) {
                assert!(s.room.contains(&w.position()));
            }
        }
    }

    #[test]
    fn iteration_is_deterministic_and_counts_steps() {
        let run = || {
            let mut t = Trainer::new(tiny_setup(), 5).unwrap();
            let r = t.iterate().unwrap();
            (r, t.actor.params.clone(), t.global_step)
        };
        let (a, pa, sa) = run();
        let (b, pb, sb) = run();
        assert_eq!(a.csv_row(), b.csv_row());
        assert_eq!(pa, pb);
        assert_eq!(sa, sb);
        assert_eq!(sa, a.decisions);
        assert!(a.decisions >= 32);
    }

    #[test]
    fn csv_columns_line_up() {
        let mut t = Trainer::new(tiny_setup(), 6).unwrap();
        let r = t.iterate().unwrap();
        assert_eq!(
            IterationReport::csv_header().split(',').count(),
            r.csv_row().split(',').count()
        );
    }
}
