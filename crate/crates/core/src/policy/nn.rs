//! Flat parameter storage and the handful of layer primitives the actor and
//! critic are built from. Every forward routine has a matching backward that
//! accumulates into a gradient buffer laid out like the parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named row-major blocks inside one flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<Block>,
}

impl Layout {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let offset = self.len();
        self.blocks.push(Block {
            name: name.into(),
            rows,
            cols,
            offset,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Errors unless `other` has identical names and shapes in the same order.
    pub fn check_compatible(&self, other: &Layout) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter blocks, expected {}",
                other.blocks.len(),
                self.blocks.len()
            )));
        }
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            if a.name != b.name || a.rows != b.rows || a.cols != b.cols {
                return Err(Error::ShapeMismatch(format!(
                    "block {} is {}x{}, expected {} {}x{}",
                    b.name, b.rows, b.cols, a.name, a.rows, a.cols
                )));
            }
        }
        Ok(())
    }
}

/// Affine map `y = W x (+ b)` with `W` stored row-major (n_out × n_in).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub w: usize,
    pub b: Option<usize>,
    pub n_in: usize,
    pub n_out: usize,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Dense {
    pub fn new(layout: &mut Layout, name: &str, n_in: usize, n_out: usize, bias: bool) -> Self {
        let w = layout.add(format!("{name}.weight"), n_out, n_in);
        let b = bias.then(|| layout.add(format!("{name}.bias"), n_out, 1));
        Dense { w, b, n_in, n_out }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let w = &p[self.w..self.w + self.n_in * self.n_out];
        for (o, yo) in y.iter_mut().enumerate().take(self.n_out) {
            *yo = dot(&w[o * self.n_in..(o + 1) * self.n_in], x);
        }
        if let Some(b) = self.b {
            for (yo, bo) in y.iter_mut().zip(&p[b..b + self.n_out]) {
                *yo += bo;
            }
        }
    }

    pub fn forward_vec(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_out];
        self.forward(p, x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `g` and, if given, input
    /// gradients into `dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
        let n_in = self.n_in;
        {
            let gw = &mut g[self.w..self.w + n_in * self.n_out];
            for (o, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, x, &mut gw[o * n_in..(o + 1) * n_in]);
                }
            }
        }
        if let Some(b) = self.b {
            for (gb, d) in g[b..b + self.n_out].iter_mut().zip(dy) {
                *gb += d;
            }
        }
        if let Some(dx) = dx {
            let w = &p[self.w..self.w + n_in * self.n_out];
            for (o, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[o * n_in..(o + 1) * n_in], dx);
                }
            }
        }
    }

    /// Uniform Glorot initialization scaled by `gain`; biases zero.
    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], gain: f64, rng: &mut R) {
        let limit = gain * (6.0 / (self.n_in + self.n_out) as f64).sqrt();
        for v in &mut p[self.w..self.w + self.n_in * self.n_out] {
            *v = if limit > 0.0 { rng.gen_range(-limit..limit) } else { 0.0 };
        }
        if let Some(b) = self.b {
            p[b..b + self.n_out].fill(0.0);
        }
    }
}

pub fn tanh_inplace(x: &mut [f64]) {
    for v in x {
        *v = v.tanh();
    }
}

/// Turns an upstream gradient on tanh outputs `y` into one on the inputs.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Gradient on the scores given the gradient on the softmax output.
pub fn softmax_backward(w: &[f64], dw: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
    w.iter().zip(dw).map(|(wi, di)| wi * (di - s)).collect()
}

/// Two tanh layers, the shape of every encoder in the actor and critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp2 {
    pub l1: Dense,
    pub l2: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2Tape {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub y: Vec<f64>,
}

impl Mlp2 {
    pub fn new(layout: &mut Layout, name: &str, n_in: usize, hidden: usize, n_out: usize) -> Self {
        Mlp2 {
            l1: Dense::new(layout, &format!("{name}.0"), n_in, hidden, true),
            l2: Dense::new(layout, &format!("{name}.1"), hidden, n_out, true),
        }
    }

    pub fn forward(&self, p: &[f64], x: Vec<f64>) -> Mlp2Tape {
        let mut h = self.l1.forward_vec(p, &x);
        tanh_inplace(&mut h);
        let mut y = self.l2.forward_vec(p, &h);
        tanh_inplace(&mut y);
        Mlp2Tape { x, h, y }
    }

    /// Returns the gradient with respect to the input.
    pub fn backward(&self, p: &[f64], t: &Mlp2Tape, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let d2 = tanh_backward(&t.y, dy);
        let mut dh = vec![0.0; t.h.len()];
        self.l2.backward(p, &t.h, &d2, g, Some(&mut dh));
        let d1 = tanh_backward(&t.h, &dh);
        let mut dx = vec![0.0; t.x.len()];
        self.l1.backward(p, &t.x, &d1, g, Some(&mut dx));
        dx
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        self.l1.init(p, 1.0, rng);
        self.l2.init(p, 1.0, rng);
    }
}

pub fn check_finite(name: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer: name })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn layout_offsets_are_contiguous() {
        let mut l = Layout::default();
        let d = Dense::new(&mut l, "a", 3, 2, true);
        let e = Dense::new(&mut l, "b", 2, 5, false);
        assert_eq!(d.w, 0);
        assert_eq!(d.b, Some(6));
        assert_eq!(e.w, 8);
        assert_eq!(l.len(), 18);
        assert_eq!(l.block("b.weight").unwrap().rows, 5);
    }

    #[test]
    fn incompatible_layouts_rejected() {
        let mut a = Layout::default();
        Dense::new(&mut a, "x", 3, 2, true);
        let mut b = Layout::default();
        Dense::new(&mut b, "x", 4, 2, true);
        assert!(a.check_compatible(&b).is_err());
        assert!(a.check_compatible(&a.clone()).is_ok());
    }

    #[test]
    fn dense_backward_matches_fd() {
        let mut l = Layout::default();
        let d = Dense::new(&mut l, "d", 5, 3, true);
        let mut rng = seeded_rng(1);
        let mut p: Vec<f64> = (0..l.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = [0.3, -1.2, 0.7];
        let f = |p: &[f64]| -> f64 { d.forward_vec(p, &x).iter().zip(&c).map(|(a, b)| a * b).sum() };
        let mut g = vec![0.0; l.len()];
        let mut dx = vec![0.0; 5];
        d.backward(&p, &x, &c, &mut g, Some(&mut dx));
        for i in 0..p.len() {
            let v = p[i];
            p[i] = v + 1e-6;
            let up = f(&p);
            p[i] = v - 1e-6;
            let dn = f(&p);
            p[i] = v;
            assert!(((up - dn) / 2e-6 - g[i]).abs() < 1e-8);
        }
        // input gradient is Wᵀc
        for j in 0..5 {
            let expected: f64 = (0..3).map(|o| p[o * 5 + j] * c[o]).sum();
            assert!((dx[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let w = softmax(&[1000.0, 999.0, -5.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn sigmoid_softplus_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(-50.0) - (-50f64).exp()).abs() < 1e-30);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
    }
}
