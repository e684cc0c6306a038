//! Dense ReLU networks with hand-written backpropagation and Adam.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `inputs x outputs`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Uniform fan-in initialization scaled by `gain`.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain / (inputs as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Linear { w: Array2::from_shape_fn((inputs, outputs), |_| u.sample(rng)), b: Array1::zeros(outputs) }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear { w: Array2::zeros((inputs, outputs)), b: Array1::zeros(outputs) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations kept from a forward pass: the input of every layer.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes` lists the width of every layer including input and output.
    /// The output layer starts small so initial outputs are near zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| Linear::new(sizes[i], sizes[i + 1], if i + 1 == n { 0.1 } else { 6f64.sqrt() }, rng))
            .collect();
        Mlp { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp { layers: (0..sizes.len() - 1).map(|i| Linear::zeros(sizes[i], sizes[i + 1])).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.ncols())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            inputs.push(h);
            h = if i < last { z.mapv(|v| v.max(0.0)) } else { z };
        }
        (h, MlpCache { inputs })
    }

    /// Gradients of the parameters and of the input given the gradient of
    /// the output.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>, want_params: bool) -> (Option<MlpGrads>, Array2<f64>) {
        let mut g = grad_out.clone();
        let mut grads: Vec<Linear> = Vec::new();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            if want_params {
                grads.push(Linear { w: x.t().dot(&g), b: g.sum_axis(Axis(0)) });
            }
            let mut gx = g.dot(&l.w.t());
            if i > 0 {
                // x is the ReLU output of the previous layer.
                ndarray::Zip::from(&mut gx).and(x).for_each(|gv, &xv| {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            g = gx;
        }
        grads.reverse();
        (want_params.then_some(MlpGrads { layers: grads }), g)
    }

    /// `self = tau * other + (1 - tau) * self`.
    pub fn polyak(&mut self, other: &Mlp, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&other.layers) {
            t.w.zip_mut_with(&s.w, |a, &b| *a = tau * b + (1.0 - tau) * *a);
            t.b.zip_mut_with(&s.b, |a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One step on a list of parameter slices with matching gradient slices.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }

    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        let params: Vec<&mut [f64]> = net
            .layers
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().expect("standard layout"), l.b.as_slice_mut().expect("standard layout")])
            .collect();
        let g: Vec<&[f64]> =
            grads.layers.iter().flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")]).collect();
        self.step(params, g);
    }
}
