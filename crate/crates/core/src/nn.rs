//! Convolutional stacks and the Adam optimizer.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::tensor::{Element, Shape, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvStackSpec {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub out_channels: usize,
    /// Number of convolutions, at least 1.
    pub layers: usize,
    pub kernel: usize,
}

impl ConvStackSpec {
    fn layer_channels(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|i| {
                let cin = if i == 0 {
                    self.in_channels
                } else {
                    self.hidden_channels
                };
                let cout = if i + 1 == self.layers {
                    self.out_channels
                } else {
                    self.hidden_channels
                };
                (cin, cout)
            })
            .collect()
    }
}

/// A stack of same-size convolutions with leaky-ReLU between layers and a
/// linear last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    spec: ConvStackSpec,
    weights: Vec<Tensor<f32>>,
    biases: Vec<Tensor<f32>>,
}

impl ConvStack {
    /// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    /// With `zero_last` the final layer starts at zero so the stack outputs 0.
    pub fn new(spec: ConvStackSpec, rng: &mut impl Rng, zero_last: bool) -> Self {
        assert!(spec.layers >= 1 && spec.kernel % 2 == 1);
        let kk = spec.kernel * spec.kernel;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, (cin, cout)) in spec.layer_channels().into_iter().enumerate() {
            let last = i + 1 == spec.layers;
            let bound = 1.0 / ((cin * kk) as f32).sqrt();
            let mut draw = |shape: Shape| {
                if last && zero_last {
                    Tensor::zeros(shape)
                } else {
                    Tensor::from_fn(shape, |_, _, _| rng.random_range(-bound..bound))
                }
            };
            weights.push(draw(Shape::new(cout, cin, kk)));
            biases.push(draw(Shape::new(cout, 1, 1)));
        }
        Self {
            spec,
            weights,
            biases,
        }
    }

    pub fn spec(&self) -> ConvStackSpec {
        self.spec
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }

    /// `(name, tensor)` pairs in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("conv{i}.weight"), w));
            out.push((format!("conv{i}.bias"), b));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Registers the parameters on `g` (as trainable leaves when `trainable`).
    pub fn bind<T: Element>(&self, g: &mut Graph<T>, trainable: bool) -> BoundStack {
        let mut leaf = |t: &Tensor<f32>| {
            let v = t.cast::<T>();
            if trainable {
                g.param(v)
            } else {
                g.constant(v)
            }
        };
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (leaf(w), leaf(b)))
            .collect();
        BoundStack { layers }
    }
}

/// Parameter handles of a [`ConvStack`] inside one graph.
#[derive(Clone, Debug)]
pub struct BoundStack {
    layers: Vec<(Var, Var)>,
}

impl BoundStack {
    /// A stack with no layers; `forward` is the identity.
    pub fn empty() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let mut h = x;
        let n = self.layers.len();
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.conv2d(h, w, b);
            if i + 1 < n {
                h = g.leaky_relu(h, T::lit(LEAKY_SLOPE));
            }
        }
        h
    }

    /// Parameter vars in the same order as [`ConvStack::parameters_mut`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 3e-4,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    steps: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update; `params` and `grads` must keep the same order
    /// across calls. A missing gradient is treated as zero.
    pub fn step(&mut self, params: &mut [&mut Tensor<f32>], grads: &[Option<Tensor<f32>>]) {
        assert_eq!(params.len(), grads.len());
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let c = self.cfg;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let g = grads[i].as_ref().map(Tensor::data);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j] as f64);
                let mj = c.beta1 * m[j] as f64 + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v[j] as f64 + (1.0 - c.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = (mj / bc1) / ((vj / bc2).sqrt() + c.eps);
                let wj = *w as f64;
                *w = (wj - c.lr * (update + c.weight_decay * wj)) as f32;
            }
        }
    }
}
