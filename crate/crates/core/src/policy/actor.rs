//! Actor: three encoders produce a self, a pooled-neighbor and an obstacle
//! token; the self token queries all three through one attention head and
//! the result, added back onto the self token, feeds the action head.

use rand::Rng;

use super::dist::{ActionDistribution, LOG_STD_MAX, LOG_STD_MIN};
use super::nn::{check_finite, softmax, softmax_backward, tanh_backward, tanh_inplace, Dense, Layout, Mlp2, Mlp2Tape};
use super::{
    neighbor_input, scale_ranges, scale_self, ObservationBundle, PolicyConfig, ACTION_DIM, NEIGHBOR_DIM,
    NEIGHBOR_SLOTS, OBSTACLE_DIM, SELF_DIM,
};
use crate::error::{Error, Result};

pub const TOKENS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
struct ActorNet {
    self_enc: Mlp2,
    neighbor_enc: Mlp2,
    obstacle_enc: Mlp2,
    wq: Dense,
    wk: Dense,
    wv: Dense,
    wo: Dense,
    head: Dense,
    mean: Dense,
    log_std: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub config: PolicyConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
    net: ActorNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorOutput {
    pub dist: ActionDistribution,
    /// Softmax over the (self, neighbor, obstacle) tokens.
    pub attention: [f64; TOKENS],
}

/// Intermediate values of one forward pass, consumed by [`Actor::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ActorTape {
    self_t: Mlp2Tape,
    neighbor_t: Vec<Option<Mlp2Tape>>,
    mask: [f64; NEIGHBOR_SLOTS],
    obstacle_t: Mlp2Tape,
    tokens: [Vec<f64>; TOKENS],
    q: Vec<f64>,
    k: [Vec<f64>; TOKENS],
    v: [Vec<f64>; TOKENS],
    w: [f64; TOKENS],
    c: Vec<f64>,
    z: Vec<f64>,
    h: Vec<f64>,
    raw_log_std: [f64; ACTION_DIM],
}

impl Actor {
    fn build(config: PolicyConfig) -> (Layout, ActorNet) {
        let h = config.hidden;
        let mut l = Layout::default();
        let net = ActorNet {
            self_enc: Mlp2::new(&mut l, "actor.self", SELF_DIM, h, h),
            neighbor_enc: Mlp2::new(&mut l, "actor.neighbor", NEIGHBOR_DIM + 1, h, h),
            obstacle_enc: Mlp2::new(&mut l, "actor.obstacle", OBSTACLE_DIM, h, h),
            wq: Dense::new(&mut l, "actor.attn.q", h, h, false),
            wk: Dense::new(&mut l, "actor.attn.k", h, h, false),
            wv: Dense::new(&mut l, "actor.attn.v", h, h, false),
            wo: Dense::new(&mut l, "actor.attn.o", h, h, false),
            head: Dense::new(&mut l, "actor.head.0", h, h, true),
            mean: Dense::new(&mut l, "actor.head.mean", h, ACTION_DIM, true),
            log_std: l.add("actor.log_std", ACTION_DIM, 1),
        };
        (l, net)
    }

    /// Randomly initialized actor whose mean action is hover (all outputs
    /// start near zero pre-squash).
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Self {
        let (layout, net) = Self::build(config);
        let mut p = vec![0.0; layout.len()];
        for m in [net.self_enc, net.neighbor_enc, net.obstacle_enc] {
            m.init(&mut p, rng);
        }
        for d in [net.wq, net.wk, net.wv, net.wo, net.head] {
            d.init(&mut p, 1.0, rng);
        }
        net.mean.init(&mut p, 0.01, rng);
        p[net.log_std..net.log_std + ACTION_DIM].fill(config.log_std_init);
        Actor {
            config,
            layout,
            params: p,
            net,
        }
    }

    /// Actor with the given flat parameters; errors on a length mismatch.
    pub fn from_params(config: PolicyConfig, params: Vec<f64>) -> Result<Self> {
        let (layout, net) = Self::build(config);
        if params.len() != layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "actor expects {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        Ok(Actor {
            config,
            layout,
            params,
            net,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, obs: &ObservationBundle) -> Result<ActorOutput> {
        self.forward_with_tape(obs).map(|(o, _)| o)
    }

    pub fn forward_with_tape(&self, obs: &ObservationBundle) -> Result<(ActorOutput, ActorTape)> {
        let p = &self.params;
        let n = &self.net;
        let hd = self.config.hidden;

        let self_t = n.self_enc.forward(p, scale_self(&obs.self_goal));
        check_finite("actor.self", &self_t.y)?;

        let mut pooled = vec![0.0; hd];
        let mut neighbor_t = Vec::with_capacity(NEIGHBOR_SLOTS);
        for k in 0..NEIGHBOR_SLOTS {
            let m = obs.neighbor_mask[k];
            if m == 0.0 {
                neighbor_t.push(None);
                continue;
            }
            let t = n.neighbor_enc.forward(p, neighbor_input(&obs.neighbors[k], m));
            for (a, b) in pooled.iter_mut().zip(&t.y) {
                *a += m * b;
            }
            neighbor_t.push(Some(t));
        }
        check_finite("actor.neighbor", &pooled)?;

        let obstacle_t = n.obstacle_enc.forward(p, scale_ranges(&obs.obstacles));
        check_finite("actor.obstacle", &obstacle_t.y)?;

        let tokens = [self_t.y.clone(), pooled, obstacle_t.y.clone()];
        let q = n.wq.forward_vec(p, &tokens[0]);
        let k = tokens.clone().map(|t| n.wk.forward_vec(p, &t));
        let v = tokens.clone().map(|t| n.wv.forward_vec(p, &t));
        let scale = 1.0 / (hd as f64).sqrt();
        let scores: Vec<f64> = k.iter().map(|ki| scale * q.iter().zip(ki).map(|(a, b)| a * b).sum::<f64>()).collect();
        let wv = softmax(&scores);
        let w = [wv[0], wv[1], wv[2]];
        check_finite("actor.attention", &w)?;
        let mut c = vec![0.0; hd];
        for (t, vt) in v.iter().enumerate() {
            for (ci, vi) in c.iter_mut().zip(vt) {
                *ci += w[t] * vi;
            }
        }
        let att = n.wo.forward_vec(p, &c);
        let z: Vec<f64> = tokens[0].iter().zip(&att).map(|(a, b)| a + b).collect();

        let mut h = n.head.forward_vec(p, &z);
        tanh_inplace(&mut h);
        let mean_v = n.mean.forward_vec(p, &h);
        check_finite("actor.head", &mean_v)?;
        let mut mean = [0.0; ACTION_DIM];
        mean.copy_from_slice(&mean_v);
        let mut raw_log_std = [0.0; ACTION_DIM];
        raw_log_std.copy_from_slice(&p[n.log_std..n.log_std + ACTION_DIM]);

        let out = ActorOutput {
            dist: ActionDistribution::new(mean, raw_log_std),
            attention: w,
        };
        let tape = ActorTape {
            self_t,
            neighbor_t,
            mask: obs.neighbor_mask,
            obstacle_t,
            tokens,
            q,
            k,
            v,
            w,
            c,
            z,
            h,
            raw_log_std,
        };
        Ok((out, tape))
    }

    /// Accumulates into `grad` the parameter gradient of a scalar loss whose
    /// gradients with respect to the distribution mean and (clamped) log-std
    /// are `d_mean` and `d_log_std`.
    pub fn backward(
        &self,
        tape: &ActorTape,
        d_mean: &[f64; ACTION_DIM],
        d_log_std: &[f64; ACTION_DIM],
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "actor gradient buffer has {} entries, expected {}",
                grad.len(),
                self.params.len()
            )));
        }
        let p = &self.params;
        let n = &self.net;
        let hd = self.config.hidden;

        for i in 0..ACTION_DIM {
            let raw = tape.raw_log_std[i];
            if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                grad[n.log_std + i] += d_log_std[i];
            }
        }

        let mut dh = vec![0.0; hd];
        n.mean.backward(p, &tape.h, d_mean, grad, Some(&mut dh));
        let dh_pre = tanh_backward(&tape.h, &dh);
        let mut dz = vec![0.0; hd];
        n.head.backward(p, &tape.z, &dh_pre, grad, Some(&mut dz));

        // z = self token + Wo c
        let mut dtok: [Vec<f64>; TOKENS] = std::array::from_fn(|_| vec![0.0; hd]);
        for (a, b) in dtok[0].iter_mut().zip(&dz) {
            *a += b;
        }
        let mut dc = vec![0.0; hd];
        n.wo.backward(p, &tape.c, &dz, grad, Some(&mut dc));

        let mut dw = [0.0; TOKENS];
        for t in 0..TOKENS {
            dw[t] = dc.iter().zip(&tape.v[t]).map(|(a, b)| a * b).sum();
            let dv: Vec<f64> = dc.iter().map(|d| tape.w[t] * d).collect();
            n.wv.backward(p, &tape.tokens[t], &dv, grad, Some(&mut dtok[t]));
        }
        let dscore = softmax_backward(&tape.w, &dw);
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = vec![0.0; hd];
        for t in 0..TOKENS {
            let ds = dscore[t] * scale;
            for (a, b) in dq.iter_mut().zip(&tape.k[t]) {
                *a += ds * b;
            }
            let dk: Vec<f64> = tape.q.iter().map(|qi| ds * qi).collect();
            n.wk.backward(p, &tape.tokens[t], &dk, grad, Some(&mut dtok[t]));
        }
        n.wq.backward(p, &tape.tokens[0], &dq, grad, Some(&mut dtok[0]));

        n.self_enc.backward(p, &tape.self_t, &dtok[0], grad);
        for (k, t) in tape.neighbor_t.iter().enumerate() {
            if let Some(t) = t {
                let dy: Vec<f64> = dtok[1].iter().map(|d| tape.mask[k] * d).collect();
                n.neighbor_enc.backward(p, t, &dy, grad);
            }
        }
        n.obstacle_enc.backward(p, &tape.obstacle_t, &dtok[2], grad);
        Ok(())
    }
}
