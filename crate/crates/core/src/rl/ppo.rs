//! Clipped-surrogate PPO with GAE, sequence-chunked minibatches for the
//! recurrent critic, and Adam.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::reward::TrainStage;
use crate::error::{Error, Result};
use crate::policy::{Actor, Critic, ObservationBundle, ACTION_DIM};

/// What the trainer rolls out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainScenario {
    TrainingRandom,
    StraightLine,
    SwapGoal,
    /// Fly a short hop in an empty room and hold the end point.
    Hover,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PPOConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_ratio: f64,
    pub epochs: usize,
    /// Samples per minibatch, rounded to whole critic sequence chunks.
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Minimum policy decisions each environment contributes per iteration.
    /// Episodes are never split, so an environment runs whole episodes
    /// until it has at least this many.
    pub horizon: usize,
    pub n_envs: usize,
    /// Training budget in agent decisions.
    pub total_steps: u64,
    /// Fraction of `total_steps` after which the safety-guided stage starts.
    pub stage2_fraction: f64,
    /// Safety-guided reward from step 0.
    pub single_stage: bool,
    /// Never enter the safety-guided stage.
    pub no_sbc: bool,
    /// Truncated-BPTT window for the critic.
    pub seq_len: usize,
    pub scenario: TrainScenario,
    /// Episodes before this many steps use `warmup_scenario` instead.
    pub warmup_steps: u64,
    pub warmup_scenario: TrainScenario,
    /// Inclusive agent-count range per episode.
    pub agents: [usize; 2],
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip_ratio: 0.2,
            epochs: 4,
            minibatch_size: 2048,
            learning_rate: 3e-4,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            horizon: 256,
            n_envs: 8,
            total_steps: 5_000_000,
            stage2_fraction: 0.6,
            single_stage: false,
            no_sbc: false,
            seq_len: 16,
            scenario: TrainScenario::TrainingRandom,
            warmup_steps: 0,
            warmup_scenario: TrainScenario::Hover,
            agents: [1, 4],
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("ppo.gamma {} and ppo.lambda {} must lie in [0, 1]", self.gamma, self.lambda));
        }
        if !(self.clip_ratio > 0.0) {
            return bad(format!("ppo.clip_ratio must be > 0, got {}", self.clip_ratio));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.n_envs == 0 || self.seq_len == 0 || self.horizon == 0 {
            return bad("ppo: epochs, minibatch_size, n_envs, seq_len and horizon must be ≥ 1".into());
        }
        if !(self.learning_rate > 0.0) || self.entropy_coef < 0.0 || self.value_coef < 0.0 || !(self.max_grad_norm > 0.0) {
            return bad("ppo: learning_rate and max_grad_norm must be > 0, coefficients ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&self.stage2_fraction) {
            return bad("ppo.stage2_fraction must lie in [0, 1]".into());
        }
        if self.single_stage && self.no_sbc {
            return bad("ppo.single_stage and ppo.no_sbc are mutually exclusive".into());
        }
        if self.agents[0] == 0 || self.agents[0] > self.agents[1] {
            return bad(format!("ppo.agents {:?} must be an increasing range starting at ≥ 1", self.agents));
        }
        Ok(())
    }

    /// Training scenario in force at `global_step`.
    pub fn scenario_at(&self, global_step: u64) -> TrainScenario {
        if global_step < self.warmup_steps {
            self.warmup_scenario
        } else {
            self.scenario
        }
    }

    pub fn stage2_step(&self) -> u64 {
        (self.stage2_fraction * self.total_steps as f64).round() as u64
    }
}

/// Reward stage in force at `global_step`.
pub fn stage_schedule(global_step: u64, config: &PPOConfig) -> TrainStage {
    if config.single_stage {
        TrainStage::SafetyGuided
    } else if config.no_sbc || global_step < config.stage2_step() {
        TrainStage::NominalOnly
    } else {
        TrainStage::SafetyGuided
    }
}

/// One policy decision of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: ObservationBundle,
    pub z: [f64; ACTION_DIM],
    pub log_prob: f64,
    pub value: f64,
    /// Reward accumulated until the next decision.
    pub reward: f64,
    /// Critic hidden state fed into this step.
    pub hidden: Vec<f64>,
}

/// Decisions of one agent over one episode. Episodes end only on the time
/// limit, so the tail is bootstrapped with the critic's value.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrajectory {
    pub steps: Vec<Transition>,
    pub bootstrap_value: f64,
}

/// Generalized advantage estimates and λ-returns for one trajectory.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Rescales to zero mean and unit standard deviation in place.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n == 0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { *a - mean };
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub obs: ObservationBundle,
    pub z: [f64; ACTION_DIM],
    pub log_prob: f64,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
    pub hidden: Vec<f64>,
}

/// Flattened rollout with critic sequence chunks that never cross an
/// episode boundary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
    pub chunks: Vec<Range<usize>>,
}

impl Batch {
    pub fn from_trajectories(trajs: &[AgentTrajectory], config: &PPOConfig) -> Batch {
        let mut b = Batch::default();
        for tr in trajs {
            let rewards: Vec<f64> = tr.steps.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = tr.steps.iter().map(|s| s.value).collect();
            let (adv, ret) = gae(&rewards, &values, tr.bootstrap_value, config.gamma, config.lambda);
            let base = b.samples.len();
            for (k, s) in tr.steps.iter().enumerate() {
                b.samples.push(Sample {
                    obs: s.obs.clone(),
                    z: s.z,
                    log_prob: s.log_prob,
                    value: s.value,
                    advantage: adv[k],
                    ret: ret[k],
                    hidden: s.hidden.clone(),
                });
            }
            let mut start = 0;
            while start < tr.steps.len() {
                let end = (start + config.seq_len).min(tr.steps.len());
                b.chunks.push(base + start..base + end);
                start = end;
            }
        }
        let mut adv: Vec<f64> = b.samples.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        for (s, a) in b.samples.iter_mut().zip(adv) {
            s.advantage = a;
        }
        b
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Importance ratios of the current actor against the stored log-probs.
pub fn policy_ratios(actor: &Actor, batch: &Batch) -> Result<Vec<f64>> {
    batch
        .samples
        .iter()
        .map(|s| Ok((actor.forward(&s.obs)?.dist.log_prob(&s.z) - s.log_prob).exp()))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub samples: usize,
}

/// Minibatch loss over the given chunks, mean over samples:
/// −min(ρA, clip(ρ)A) + c_v·½(V − R)² − c_e·H. Gradients are accumulated
/// into the two buffers when given.
pub fn minibatch_loss(
    actor: &Actor,
    critic: &Critic,
    batch: &Batch,
    chunk_ids: &[usize],
    config: &PPOConfig,
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> Result<LossStats> {
    let n: usize = chunk_ids.iter().map(|&c| batch.chunks[c].len()).sum();
    if n == 0 {
        return Err(Error::ShapeMismatch("empty minibatch".into()));
    }
    let inv = 1.0 / n as f64;
    let eps = config.clip_ratio;
    let mut st = LossStats {
        samples: n,
        ..LossStats::default()
    };
    for &c in chunk_ids {
        let range = batch.chunks[c].clone();
        let first = &batch.samples[range.start];
        let mut h = first.hidden.clone();
        let mut tapes = Vec::with_capacity(range.len());
        let mut d_values = Vec::with_capacity(range.len());
        for s in &batch.samples[range] {
            let (out, tape) = actor.forward_with_tape(&s.obs)?;
            let dist = out.dist;
            let logp = dist.log_prob(&s.z);
            let ratio = (logp - s.log_prob).exp();
            let a = s.advantage;
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            let surrogate = (ratio * a).min(clipped * a);
            let entropy = dist.entropy();
            st.policy_loss -= surrogate * inv;
            st.entropy += entropy * inv;
            st.approx_kl += ((ratio - 1.0) - (logp - s.log_prob)) * inv;
            if (ratio - 1.0).abs() > eps {
                st.clip_fraction += inv;
            }

            let ct = critic.forward_step(&s.obs, &h)?;
            let err = ct.value - s.ret;
            st.value_loss += 0.5 * err * err * inv;
            d_values.push(config.value_coef * err * inv);
            h = ct.h_new.clone();
            tapes.push(ct);

            if let Some((ga, _)) = grads.as_mut() {
                // the unclipped branch is the active one unless clipping bites
                let active = ratio * a <= clipped * a;
                let d_logp = if active { -ratio * a * inv } else { 0.0 };
                let (dm, ds) = dist.log_prob_grad(&s.z);
                let d_mean: [f64; ACTION_DIM] = std::array::from_fn(|i| d_logp * dm[i]);
                let d_log_std: [f64; ACTION_DIM] =
                    std::array::from_fn(|i| d_logp * ds[i] - config.entropy_coef * inv);
                actor.backward(&tape, &d_mean, &d_log_std, ga)?;
            }
        }
        if let Some((_, gc)) = grads.as_mut() {
            critic.backward_sequence(&tapes, &d_values, gc)?;
        }
    }
    st.loss = st.policy_loss + config.value_coef * st.value_loss - config.entropy_coef * st.entropy;
    Ok(st)
}

/// Scales `g` down to `max_norm` if needed; returns the original norm.
pub fn clip_grad_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for v in g.iter_mut() {
            *v *= s;
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub minibatches: usize,
}

/// Epochs of shuffled minibatch updates. On a non-finite loss or gradient
/// both networks and optimizers are restored to their pre-update state
/// and the error carries a diagnostic snapshot.
pub fn ppo_update<R: Rng + ?Sized>(
    actor: &mut Actor,
    critic: &mut Critic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    batch: &Batch,
    config: &PPOConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if batch.chunks.is_empty() {
        return Err(Error::TrainingDiverged("empty rollout batch".into()));
    }
    let backup = (actor.params.clone(), critic.params.clone(), actor_opt.clone(), critic_opt.clone());
    let per_mb = (config.minibatch_size / config.seq_len).max(1);
    let mut order: Vec<usize> = (0..batch.chunks.len()).collect();
    let mut stats = UpdateStats::default();
    let mut ga = vec![0.0; actor.param_count()];
    let mut gc = vec![0.0; critic.param_count()];
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for (mb, ids) in order.chunks(per_mb).enumerate() {
            ga.fill(0.0);
            gc.fill(0.0);
            let st = minibatch_loss(actor, critic, batch, ids, config, Some((&mut ga, &mut gc)));
            let st = match st {
                Ok(s) if s.loss.is_finite() => s,
                other => {
                    let detail = match other {
                        Ok(s) => format!("loss {:?}", s),
                        Err(e) => e.to_string(),
                    };
                    let msg = format!(
                        "non-finite PPO loss at epoch {epoch} minibatch {mb}: {detail}; actor |θ| = {:.4e}, critic |θ| = {:.4e}",
                        norm(&actor.params),
                        norm(&critic.params)
                    );
                    restore(actor, critic, actor_opt, critic_opt, backup);
                    return Err(Error::TrainingDiverged(msg));
                }
            };
            let na = clip_grad_norm(&mut ga, config.max_grad_norm);
            let nc = clip_grad_norm(&mut gc, config.max_grad_norm);
            if !na.is_finite() || !nc.is_finite() {
                let msg = format!("non-finite gradient at epoch {epoch} minibatch {mb}: |g_actor| = {na}, |g_critic| = {nc}");
                restore(actor, critic, actor_opt, critic_opt, backup);
                return Err(Error::TrainingDiverged(msg));
            }
            actor_opt.step(&mut actor.params, &ga);
            critic_opt.step(&mut critic.params, &gc);
            stats.policy_loss += st.policy_loss;
            stats.value_loss += st.value_loss;
            stats.entropy += st.entropy;
            stats.approx_kl += st.approx_kl;
            stats.clip_fraction += st.clip_fraction;
            stats.actor_grad_norm += na;
            stats.critic_grad_norm += nc;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.approx_kl /= k;
    stats.clip_fraction /= k;
    stats.actor_grad_norm /= k;
    stats.critic_grad_norm /= k;
    Ok(stats)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn restore(actor: &mut Actor, critic: &mut Critic, ao: &mut Adam, co: &mut Adam, backup: (Vec<f64>, Vec<f64>, Adam, Adam)) {
    actor.params = backup.0;
    critic.params = backup.1;
    *ao = backup.2;
    *co = backup.3;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_scenario_switches_at_step() {
        let c = PPOConfig {
            warmup_steps: 100,
            scenario: TrainScenario::StraightLine,
            ..PPOConfig::default()
        };
        assert_eq!(c.scenario_at(99), TrainScenario::Hover);
        assert_eq!(c.scenario_at(100), TrainScenario::StraightLine);
        assert_eq!(PPOConfig::default().scenario_at(0), TrainScenario::TrainingRandom);
    }
    use crate::policy::PolicyConfig;
    use crate::seeded_rng;

    #[test]
    fn gae_single_step_gamma_zero() {
        let (a, r) = gae(&[1.5], &[0.4], 7.0, 0.0, 0.95);
        assert_eq!(a, vec![1.5 - 0.4]);
        assert_eq!(r, vec![1.5]);
    }

    #[test]
    fn gae_lambda_one_is_discounted_return() {
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.5, -0.2, 0.1];
        let g: f64 = 0.9;
        let (_, ret) = gae(&rewards, &values, 4.0, g, 1.0);
        let expect0 = 1.0 + g * 2.0 + g * g * 3.0 + g.powi(3) * 4.0;
        assert!((ret[0] - expect0).abs() < 1e-12);
    }

    #[test]
    fn normalization_moments() {
        let mut rng = seeded_rng(4);
        let mut a: Vec<f64> = (0..1000).map(|_| rng.gen_range(-3.0..10.0)).collect();
        normalize_advantages(&mut a);
        let m = a.iter().sum::<f64>() / 1000.0;
        let s = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 1000.0).sqrt();
        assert!(m.abs() <= 1e-6);
        assert!((s - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn schedule() {
        let c = PPOConfig {
            total_steps: 1000,
            ..PPOConfig::default()
        };
        assert_eq!(stage_schedule(0, &c), TrainStage::NominalOnly);
        assert_eq!(stage_schedule(599, &c), TrainStage::NominalOnly);
        assert_eq!(stage_schedule(600, &c), TrainStage::SafetyGuided);
        let single = PPOConfig { single_stage: true, ..c };
        assert_eq!(stage_schedule(0, &single), TrainStage::SafetyGuided);
        let none = PPOConfig { no_sbc: true, ..c };
        assert_eq!(stage_schedule(999, &none), TrainStage::NominalOnly);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::new(2, 0.1);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn grad_clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_advantage_has_no_policy_gradient_without_entropy() {
        let mut rng = seeded_rng(8);
        let cfg = PolicyConfig::default();
        let actor = Actor::new(cfg, &mut rng);
        let critic = Critic::new(cfg, &mut rng);
        let obs = crate::policy::ObservationBundle {
            self_goal: [0.1; 24],
            neighbors: [[0.0; 6]; 2],
            neighbor_mask: [0.0; 2],
            neighbor_staleness: [0.0; 2],
            obstacles: [2.0; 32],
            sdf: [2.0; 9],
        };
        let s = actor.forward(&obs).unwrap().dist.sample(&mut rng);
        let batch = Batch {
            samples: vec![Sample {
                obs,
                z: s.z,
                log_prob: s.log_prob,
                value: 0.0,
                advantage: 0.0,
                ret: 0.0,
                hidden: critic.initial_hidden(),
            }],
            chunks: vec![0..1],
        };
        let mut ga = vec![0.0; actor.param_count()];
        let mut gc = vec![0.0; critic.param_count()];
        let ppo = PPOConfig::default();
        let st = minibatch_loss(&actor, &critic, &batch, &[0], &ppo, Some((&mut ga, &mut gc))).unwrap();
        assert!(ga.iter().all(|g| *g == 0.0));
        assert_eq!(st.policy_loss, 0.0);
        assert!((policy_ratios(&actor, &batch).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(PPOConfig::default().validate().is_ok());
        assert!(PPOConfig { gamma: 1.1, ..PPOConfig::default() }.validate().is_err());
        assert!(PPOConfig { clip_ratio: 0.0, ..PPOConfig::default() }.validate().is_err());
    }
}
