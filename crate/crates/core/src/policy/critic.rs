//! Critic: wider encoders with the privileged clearance grid in place of
//! the range scan, multi-head attention over the three tokens, a gated
//! recurrent cell and a linear value head.

use rand::Rng;

use super::nn::{check_finite, sigmoid, softmax, softmax_backward, Dense, Layout, Mlp2, Mlp2Tape};
use super::{neighbor_input, scale_ranges, scale_self, ObservationBundle, PolicyConfig, NEIGHBOR_DIM, NEIGHBOR_SLOTS, SDF_DIM, SELF_DIM};
use crate::error::{Error, Result};

const TOKENS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Gru {
    wr: Dense,
    ur: Dense,
    wu: Dense,
    uu: Dense,
    wn: Dense,
    un: Dense,
}

#[derive(Clone, Debug, PartialEq)]
struct CriticNet {
    self_enc: Mlp2,
    neighbor_enc: Mlp2,
    obstacle_enc: Mlp2,
    wq: Dense,
    wk: Dense,
    wv: Dense,
    wo: Dense,
    gru: Gru,
    value: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub config: PolicyConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
    net: CriticNet,
}

/// One recurrent step's intermediates, consumed by [`Critic::backward_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct CriticTape {
    self_t: Mlp2Tape,
    neighbor_t: Vec<Option<Mlp2Tape>>,
    mask: [f64; NEIGHBOR_SLOTS],
    obstacle_t: Mlp2Tape,
    tokens: [Vec<f64>; TOKENS],
    q: Vec<f64>,
    k: [Vec<f64>; TOKENS],
    v: [Vec<f64>; TOKENS],
    /// `w[head][token]`
    w: Vec<[f64; TOKENS]>,
    c: Vec<f64>,
    z: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
    pub h_new: Vec<f64>,
    pub value: f64,
}

impl Critic {
    fn build(config: PolicyConfig) -> (Layout, CriticNet) {
        let h = config.critic_hidden;
        let mut l = Layout::default();
        let self_enc = Mlp2::new(&mut l, "critic.self", SELF_DIM, h, h);
        let neighbor_enc = Mlp2::new(&mut l, "critic.neighbor", NEIGHBOR_DIM + 1, h, h);
        let obstacle_enc = Mlp2::new(&mut l, "critic.obstacle", SDF_DIM, h, h);
        let wq = Dense::new(&mut l, "critic.attn.q", h, h, false);
        let wk = Dense::new(&mut l, "critic.attn.k", h, h, false);
        let wv = Dense::new(&mut l, "critic.attn.v", h, h, false);
        let wo = Dense::new(&mut l, "critic.attn.o", h, h, false);
        let gru = Gru {
            wr: Dense::new(&mut l, "critic.gru.wr", h, h, true),
            ur: Dense::new(&mut l, "critic.gru.ur", h, h, false),
            wu: Dense::new(&mut l, "critic.gru.wu", h, h, true),
            uu: Dense::new(&mut l, "critic.gru.uu", h, h, false),
            wn: Dense::new(&mut l, "critic.gru.wn", h, h, true),
            un: Dense::new(&mut l, "critic.gru.un", h, h, false),
        };
        let value = Dense::new(&mut l, "critic.value", h, 1, true);
        (
            l,
            CriticNet {
                self_enc,
                neighbor_enc,
                obstacle_enc,
                wq,
                wk,
                wv,
                wo,
                gru,
                value,
            },
        )
    }

    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Self {
        let (layout, net) = Self::build(config);
        let mut p = vec![0.0; layout.len()];
        for m in [net.self_enc, net.neighbor_enc, net.obstacle_enc] {
            m.init(&mut p, rng);
        }
        for d in [net.wq, net.wk, net.wv, net.wo] {
            d.init(&mut p, 1.0, rng);
        }
        let g = net.gru;
        for d in [g.wr, g.ur, g.wu, g.uu, g.wn, g.un] {
            d.init(&mut p, 1.0, rng);
        }
        net.value.init(&mut p, 1.0, rng);
        Critic {
            config,
            layout,
            params: p,
            net,
        }
    }

    pub fn zeros(config: PolicyConfig) -> Self {
        let (layout, net) = Self::build(config);
        Critic {
            config,
            params: vec![0.0; layout.len()],
            layout,
            net,
        }
    }

    pub fn from_params(config: PolicyConfig, params: Vec<f64>) -> Result<Self> {
        let (layout, net) = Self::build(config);
        if params.len() != layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "critic expects {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        Ok(Critic {
            config,
            layout,
            params,
            net,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.config.critic_hidden
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.critic_hidden]
    }

    /// Value and next hidden state.
    pub fn forward(&self, obs: &ObservationBundle, hidden: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = self.forward_step(obs, hidden)?;
        Ok((t.value, t.h_new))
    }

    pub fn forward_step(&self, obs: &ObservationBundle, hidden: &[f64]) -> Result<CriticTape> {
        let hd = self.config.critic_hidden;
        if hidden.len() != hd {
            return Err(Error::ShapeMismatch(format!("critic hidden has {} entries, expected {hd}", hidden.len())));
        }
        let p = &self.params;
        let n = &self.net;

        let self_t = n.self_enc.forward(p, scale_self(&obs.self_goal));
        check_finite("critic.self", &self_t.y)?;
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
        check_finite("critic.neighbor", &pooled)?;
        let obstacle_t = n.obstacle_enc.forward(p, scale_ranges(&obs.sdf));
        check_finite("critic.obstacle", &obstacle_t.y)?;

        let tokens = [self_t.y.clone(), pooled, obstacle_t.y.clone()];
        let q = n.wq.forward_vec(p, &tokens[0]);
        let k = tokens.clone().map(|t| n.wk.forward_vec(p, &t));
        let v = tokens.clone().map(|t| n.wv.forward_vec(p, &t));
        let heads = self.config.critic_heads;
        let dh = hd / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut w = Vec::with_capacity(heads);
        let mut c = vec![0.0; hd];
        for head in 0..heads {
            let r = head * dh..(head + 1) * dh;
            let scores: Vec<f64> = k
                .iter()
                .map(|kt| scale * q[r.clone()].iter().zip(&kt[r.clone()]).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let sw = softmax(&scores);
            let hw = [sw[0], sw[1], sw[2]];
            for t in 0..TOKENS {
                for i in r.clone() {
                    c[i] += hw[t] * v[t][i];
                }
            }
            w.push(hw);
        }
        let att = n.wo.forward_vec(p, &c);
        let z: Vec<f64> = tokens[0].iter().zip(&att).map(|(a, b)| a + b).collect();
        check_finite("critic.attention", &z)?;

        let h_prev: Vec<f64> = if self.config.recurrent_critic {
            hidden.to_vec()
        } else {
            vec![0.0; hd]
        };
        let g = &n.gru;
        let gate = |wx: &Dense, uh: &Dense, hin: &[f64]| -> Vec<f64> {
            let a = wx.forward_vec(p, &z);
            let b = uh.forward_vec(p, hin);
            a.iter().zip(&b).map(|(x, y)| sigmoid(x + y)).collect()
        };
        let r = gate(&g.wr, &g.ur, &h_prev);
        let u = gate(&g.wu, &g.uu, &h_prev);
        let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
        let nx = g.wn.forward_vec(p, &z);
        let nh = g.un.forward_vec(p, &rh);
        let ncand: Vec<f64> = nx.iter().zip(&nh).map(|(a, b)| (a + b).tanh()).collect();
        let h_new: Vec<f64> = (0..hd).map(|i| (1.0 - u[i]) * ncand[i] + u[i] * h_prev[i]).collect();
        check_finite("critic.gru", &h_new)?;
        let value = n.value.forward_vec(p, &h_new)[0];
        check_finite("critic.value", &[value])?;

        Ok(CriticTape {
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
            h_prev,
            r,
            u,
            n: ncand,
            rh,
            h_new,
            value,
        })
    }

    /// Backpropagates one step given the loss gradient on its value output
    /// and on its emitted hidden state. Accumulates parameter gradients into
    /// `grad` and returns the gradient on the incoming hidden state.
    pub fn backward_step(&self, tape: &CriticTape, d_value: f64, d_hidden: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let hd = self.config.critic_hidden;
        if grad.len() != self.params.len() || d_hidden.len() != hd {
            return Err(Error::ShapeMismatch(format!(
                "critic gradient buffer {} / hidden gradient {}, expected {} / {hd}",
                grad.len(),
                d_hidden.len(),
                self.params.len()
            )));
        }
        let p = &self.params;
        let n = &self.net;
        let g = &n.gru;

        let mut dh_new = d_hidden.to_vec();
        n.value.backward(p, &tape.h_new, &[d_value], grad, Some(&mut dh_new));

        let mut dh_prev = vec![0.0; hd];
        let mut dn = vec![0.0; hd];
        let mut du = vec![0.0; hd];
        for i in 0..hd {
            dn[i] = dh_new[i] * (1.0 - tape.u[i]);
            du[i] = dh_new[i] * (tape.h_prev[i] - tape.n[i]);
            dh_prev[i] = dh_new[i] * tape.u[i];
        }
        let dn_pre: Vec<f64> = dn.iter().zip(&tape.n).map(|(d, y)| d * (1.0 - y * y)).collect();
        let mut dz = vec![0.0; hd];
        g.wn.backward(p, &tape.z, &dn_pre, grad, Some(&mut dz));
        let mut drh = vec![0.0; hd];
        g.un.backward(p, &tape.rh, &dn_pre, grad, Some(&mut drh));
        let mut dr = vec![0.0; hd];
        for i in 0..hd {
            dr[i] = drh[i] * tape.h_prev[i];
            dh_prev[i] += drh[i] * tape.r[i];
        }
        let du_pre: Vec<f64> = du.iter().zip(&tape.u).map(|(d, s)| d * s * (1.0 - s)).collect();
        let dr_pre: Vec<f64> = dr.iter().zip(&tape.r).map(|(d, s)| d * s * (1.0 - s)).collect();
        g.wu.backward(p, &tape.z, &du_pre, grad, Some(&mut dz));
        g.uu.backward(p, &tape.h_prev, &du_pre, grad, Some(&mut dh_prev));
        g.wr.backward(p, &tape.z, &dr_pre, grad, Some(&mut dz));
        g.ur.backward(p, &tape.h_prev, &dr_pre, grad, Some(&mut dh_prev));
        if !self.config.recurrent_critic {
            dh_prev.fill(0.0);
        }

        let mut dtok: [Vec<f64>; TOKENS] = std::array::from_fn(|_| vec![0.0; hd]);
        for (a, b) in dtok[0].iter_mut().zip(&dz) {
            *a += b;
        }
        let mut dc = vec![0.0; hd];
        n.wo.backward(p, &tape.c, &dz, grad, Some(&mut dc));

        let heads = self.config.critic_heads;
        let dhd = hd / heads;
        let scale = 1.0 / (dhd as f64).sqrt();
        let mut dq = vec![0.0; hd];
        let mut dk: [Vec<f64>; TOKENS] = std::array::from_fn(|_| vec![0.0; hd]);
        let mut dv: [Vec<f64>; TOKENS] = std::array::from_fn(|_| vec![0.0; hd]);
        for head in 0..heads {
            let r = head * dhd..(head + 1) * dhd;
            let hw = tape.w[head];
            let mut dw = [0.0; TOKENS];
            for t in 0..TOKENS {
                for i in r.clone() {
                    dw[t] += dc[i] * tape.v[t][i];
                    dv[t][i] += hw[t] * dc[i];
                }
            }
            let ds = softmax_backward(&hw, &dw);
            for t in 0..TOKENS {
                let s = ds[t] * scale;
                for i in r.clone() {
                    dq[i] += s * tape.k[t][i];
                    dk[t][i] += s * tape.q[i];
                }
            }
        }
        for t in 0..TOKENS {
            n.wk.backward(p, &tape.tokens[t], &dk[t], grad, Some(&mut dtok[t]));
            n.wv.backward(p, &tape.tokens[t], &dv[t], grad, Some(&mut dtok[t]));
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
        Ok(dh_prev)
    }

    /// Values along a sequence starting from `hidden`, with backprop through
    /// the whole window. `d_values[t]` is the loss gradient on value t.
    pub fn backward_sequence(
        &self,
        tapes: &[CriticTape],
        d_values: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let mut dh = vec![0.0; self.config.critic_hidden];
        for (tape, &dv) in tapes.iter().zip(d_values).rev() {
            dh = self.backward_step(tape, dv, &dh, grad)?;
        }
        Ok(())
    }
}
