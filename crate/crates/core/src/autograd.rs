//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value, and [`Graph::backward`] walks the tape in reverse accumulating
//! gradients for every node that (transitively) depends on a trainable leaf.
//! The op set is exactly what the enhancement networks and losses need.

use crate::retinex::{pair_downsample_one, Diagonal};
use crate::tensor::{luminance, Element, Shape, Tensor, LUMA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ChannelAffine { x: Var, scale: Vec<T> },
    PowChannels { x: Var, exps: Vec<T> },
    Square(Var),
    Abs(Var),
    Sqrt(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Clamp(Var, T, T),
    Conv2d { input: Var, weight: Var, bias: Var, kernel: usize },
    Concat(Vec<Var>),
    Narrow { x: Var, start: usize },
    PairDown(Var, Diagonal),
    Luminance(Var),
    SumChannels(Var),
    BoxMean { x: Var, k: usize },
    DiffX(Var),
    DiffY(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies `v` into a new constant leaf, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        assert_eq!(va.shape(), vb.shape(), "elementwise op on mismatched shapes");
        let value = va.zip_map(vb, f).expect("shapes checked");
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    /// `x[c] * scale[c] + shift[c]` per channel.
    pub fn channel_affine(&mut self, x: Var, scale: &[T], shift: &[T]) -> Var {
        let v = &self.nodes[x.0].value;
        assert_eq!(scale.len(), v.channels());
        assert_eq!(shift.len(), v.channels());
        let mut out = v.clone();
        for c in 0..out.channels() {
            let (s, o) = (scale[c], shift[c]);
            out.channel_mut(c).iter_mut().for_each(|p| *p = *p * s + o);
        }
        let rg = self.rg(&[x]);
        self.push(
            out,
            Op::ChannelAffine {
                x,
                scale: scale.to_vec(),
            },
            rg,
        )
    }

    /// `x[c] ^ exps[c]`; inputs must be positive.
    pub fn pow_channels(&mut self, x: Var, exps: &[T]) -> Var {
        let v = &self.nodes[x.0].value;
        assert_eq!(exps.len(), v.channels());
        let mut out = v.clone();
        for (c, &e) in exps.iter().enumerate() {
            out.channel_mut(c).iter_mut().for_each(|p| *p = p.powf(e));
        }
        let rg = self.rg(&[x]);
        self.push(
            out,
            Op::PowChannels {
                x,
                exps: exps.to_vec(),
            },
            rg,
        )
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * slope },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, move |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    pub fn clamp_min(&mut self, x: Var, lo: T) -> Var {
        self.clamp(x, lo, T::infinity())
    }

    /// Same-size 2-D convolution (zero padding `kernel / 2`, stride 1).
    ///
    /// `weight` has shape `out × in × kernel²` and `bias` `out × 1 × 1`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let b = &self.nodes[bias.0].value;
        let kernel = (w.width() as f64).sqrt().round() as usize;
        assert_eq!(kernel * kernel, w.width(), "square kernels only");
        assert_eq!(kernel % 2, 1, "odd kernels only");
        assert_eq!(w.height(), x.channels(), "conv input channels");
        assert_eq!(b.channels(), w.channels(), "conv bias channels");
        let cols = im2col(x, kernel);
        let (cout, k, n) = (w.channels(), w.height() * w.width(), x.height() * x.width());
        let mut out = vec![T::zero(); cout * n];
        for (o, row) in out.chunks_mut(n).enumerate() {
            row.fill(b.data()[o]);
        }
        T::gemm(
            cout,
            k,
            n,
            T::one(),
            w.data(),
            k as isize,
            1,
            &cols,
            n as isize,
            1,
            T::one(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(Shape::new(cout, x.height(), x.width()), out).expect("conv shape");
        let rg = self.rg(&[input, weight, bias]);
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                kernel,
            },
            rg,
        )
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Tensor<T>> = parts.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = Tensor::concat(&values).expect("concat shapes");
        let rg = self.rg(parts);
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    /// Channels `start..start + count`.
    pub fn narrow(&mut self, x: Var, start: usize, count: usize) -> Var {
        let value = self.nodes[x.0].value.narrow(start, count);
        let rg = self.rg(&[x]);
        self.push(value, Op::Narrow { x, start }, rg)
    }

    pub fn pair_down(&mut self, x: Var, diagonal: Diagonal) -> Var {
        let value = pair_downsample_one(&self.nodes[x.0].value, diagonal);
        let rg = self.rg(&[x]);
        self.push(value, Op::PairDown(x, diagonal), rg)
    }

    pub fn luminance(&mut self, x: Var) -> Var {
        let value = luminance(&self.nodes[x.0].value);
        let rg = self.rg(&[x]);
        self.push(value, Op::Luminance(x), rg)
    }

    pub fn sum_channels(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let mut out = Tensor::zeros(Shape::new(1, v.height(), v.width()));
        for c in 0..v.channels() {
            for (o, &p) in out.data_mut().iter_mut().zip(v.channel(c)) {
                *o = *o + p;
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::SumChannels(x), rg)
    }

    /// Mean over every fully contained `k × k` window, per channel.
    pub fn box_mean(&mut self, x: Var, k: usize) -> Var {
        let value = box_mean_valid(&self.nodes[x.0].value, k);
        let rg = self.rg(&[x]);
        self.push(value, Op::BoxMean { x, k }, rg)
    }

    /// Forward horizontal difference `x[.., i + 1] - x[.., i]`.
    pub fn diff_x(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let shape = Shape::new(v.channels(), v.height(), v.width() - 1);
        let value = Tensor::from_fn(shape, |c, y, i| v.get(c, y, i + 1) - v.get(c, y, i));
        let rg = self.rg(&[x]);
        self.push(value, Op::DiffX(x), rg)
    }

    /// Forward vertical difference `x[.., j + 1, ..] - x[.., j, ..]`.
    pub fn diff_y(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let shape = Shape::new(v.channels(), v.height() - 1, v.width());
        let value = Tensor::from_fn(shape, |c, j, i| v.get(c, j + 1, i) - v.get(c, j, i));
        let rg = self.rg(&[x]);
        self.push(value, Op::DiffY(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.nodes[x.0].value.sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.nodes[x.0].value.mean());
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Walks the tape from `root` (seeded with ones) back to the leaves.
    pub fn backward(&self, root: Var) -> Grads<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Grads { grads };
        }
        grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape(), T::one()));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, gy.zip_map(val(*b), |g, q| g * q).unwrap());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, gy.zip_map(val(*a), |g, p| g * p).unwrap());
                }
            }
            Op::Div(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, gy.zip_map(val(*b), |g, q| g / q).unwrap());
                }
                if self.requires_grad(*b) {
                    // d(a/b)/db = -y / b
                    let gb = gy
                        .zip_map(y, |g, yv| g * yv)
                        .unwrap()
                        .zip_map(val(*b), |gyv, q| -gyv / q)
                        .unwrap();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, gy.map(|g| g * *s)),
            Op::AddScalar(x) => self.accumulate(grads, *x, gy.clone()),
            Op::ChannelAffine { x, scale } => {
                let mut g = gy.clone();
                for (c, &s) in scale.iter().enumerate() {
                    g.channel_mut(c).iter_mut().for_each(|v| *v = *v * s);
                }
                self.accumulate(grads, *x, g);
            }
            Op::PowChannels { x, exps } => {
                let xv = val(*x);
                let mut g = gy.clone();
                for (c, &e) in exps.iter().enumerate() {
                    let xs = xv.channel(c);
                    g.channel_mut(c)
                        .iter_mut()
                        .zip(xs)
                        .for_each(|(v, &p)| *v = *v * e * p.powf(e - T::one()));
                }
                self.accumulate(grads, *x, g);
            }
            Op::Square(x) => self.accumulate(
                grads,
                *x,
                gy.zip_map(val(*x), |g, p| g * (p + p)).unwrap(),
            ),
            Op::Abs(x) => self.accumulate(
                grads,
                *x,
                gy.zip_map(val(*x), |g, p| {
                    if p > T::zero() {
                        g
                    } else if p < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
                .unwrap(),
            ),
            Op::Sqrt(x) => self.accumulate(
                grads,
                *x,
                gy.zip_map(y, |g, s| g / (s + s)).unwrap(),
            ),
            Op::Sigmoid(x) => self.accumulate(
                grads,
                *x,
                gy.zip_map(y, |g, s| g * s * (T::one() - s)).unwrap(),
            ),
            Op::LeakyRelu(x, slope) => self.accumulate(
                grads,
                *x,
                gy.zip_map(val(*x), |g, p| if p > T::zero() { g } else { g * *slope })
                    .unwrap(),
            ),
            Op::Clamp(x, lo, hi) => self.accumulate(
                grads,
                *x,
                gy.zip_map(val(*x), |g, p| {
                    if p >= *lo && p <= *hi {
                        g
                    } else {
                        T::zero()
                    }
                })
                .unwrap(),
            ),
            Op::Conv2d {
                input,
                weight,
                bias,
                kernel,
            } => self.conv2d_backward(*input, *weight, *bias, *kernel, gy, grads),
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = val(*p).channels();
                    self.accumulate(grads, *p, gy.narrow(start, c));
                    start += c;
                }
            }
            Op::Narrow { x, start } => {
                let xv = val(*x);
                let mut g = Tensor::zeros(xv.shape());
                let p = xv.shape().plane();
                g.data_mut()[start * p..start * p + gy.len()].copy_from_slice(gy.data());
                self.accumulate(grads, *x, g);
            }
            Op::PairDown(x, diagonal) => {
                let xv = val(*x);
                let mut g = Tensor::zeros(xv.shape());
                let half = T::lit(0.5);
                for c in 0..gy.channels() {
                    for j in 0..gy.height() {
                        for i in 0..gy.width() {
                            let v = gy.get(c, j, i) * half;
                            let (y0, x0) = (2 * j, 2 * i);
                            let taps = match diagonal {
                                Diagonal::Anti => [(y0, x0 + 1), (y0 + 1, x0)],
                                Diagonal::Main => [(y0, x0), (y0 + 1, x0 + 1)],
                            };
                            for (yy, xx) in taps {
                                let k = g.index(c, yy, xx);
                                g.data_mut()[k] = g.data()[k] + v;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::Luminance(x) => {
                let xv = val(*x);
                let mut g = Tensor::zeros(xv.shape());
                for (c, w) in LUMA.iter().enumerate() {
                    let w = T::lit(*w);
                    g.channel_mut(c)
                        .iter_mut()
                        .zip(gy.data())
                        .for_each(|(d, &s)| *d = s * w);
                }
                self.accumulate(grads, *x, g);
            }
            Op::SumChannels(x) => {
                let xv = val(*x);
                let mut g = Tensor::zeros(xv.shape());
                for c in 0..xv.channels() {
                    g.channel_mut(c).copy_from_slice(gy.data());
                }
                self.accumulate(grads, *x, g);
            }
            Op::BoxMean { x, k } => {
                let xv = val(*x);
                let mut g = Tensor::zeros(xv.shape());
                let inv = T::lit(1.0 / (k * k) as f64);
                for c in 0..gy.channels() {
                    for j in 0..gy.height() {
                        for i in 0..gy.width() {
                            let v = gy.get(c, j, i) * inv;
                            for dy in 0..*k {
                                for dx in 0..*k {
                                    let idx = g.index(c, j + dy, i + dx);
                                    g.data_mut()[idx] = g.data()[idx] + v;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::DiffX(x) => {
                let mut g = Tensor::zeros(val(*x).shape());
                for c in 0..gy.channels() {
                    for j in 0..gy.height() {
                        for i in 0..gy.width() {
                            let v = gy.get(c, j, i);
                            g.set(c, j, i + 1, g.get(c, j, i + 1) + v);
                            g.set(c, j, i, g.get(c, j, i) - v);
                        }
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::DiffY(x) => {
                let mut g = Tensor::zeros(val(*x).shape());
                for c in 0..gy.channels() {
                    for j in 0..gy.height() {
                        for i in 0..gy.width() {
                            let v = gy.get(c, j, i);
                            g.set(c, j + 1, i, g.get(c, j + 1, i) + v);
                            g.set(c, j, i, g.get(c, j, i) - v);
                        }
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::Sum(x) => {
                let s = gy.data()[0];
                self.accumulate(grads, *x, Tensor::full(val(*x).shape(), s));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let s = gy.data()[0] / T::lit(xv.len() as f64);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), s));
            }
        }
    }

    fn conv2d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        kernel: usize,
        gy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let x = self.value(input);
        let w = self.value(weight);
        let (cout, k, n) = (w.channels(), w.height() * w.width(), x.height() * x.width());

        if self.requires_grad(bias) {
            let gb: Vec<T> = gy.data().chunks(n).map(|row| row.iter().copied().sum()).collect();
            self.accumulate(
                grads,
                bias,
                Tensor::new(Shape::new(cout, 1, 1), gb).expect("bias grad"),
            );
        }
        if self.requires_grad(weight) {
            let cols = im2col(x, kernel);
            let mut gw = vec![T::zero(); cout * k];
            // gw = gy (cout×n) · colsᵀ (n×k)
            T::gemm(
                cout,
                n,
                k,
                T::one(),
                gy.data(),
                n as isize,
                1,
                &cols,
                1,
                n as isize,
                T::zero(),
                &mut gw,
                k as isize,
                1,
            );
            self.accumulate(grads, weight, Tensor::new(w.shape(), gw).expect("weight grad"));
        }
        if self.requires_grad(input) {
            let mut gcols = vec![T::zero(); k * n];
            // gcols = wᵀ (k×cout) · gy (cout×n)
            T::gemm(
                k,
                cout,
                n,
                T::one(),
                w.data(),
                1,
                k as isize,
                gy.data(),
                n as isize,
                1,
                T::zero(),
                &mut gcols,
                n as isize,
                1,
            );
            self.accumulate(grads, input, col2im(&gcols, x.shape(), kernel));
        }
    }
}

#[inline]
fn sigmoid<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Unfolds zero-padded `kernel × kernel` patches into a `(cin·k²) × (h·w)` matrix.
fn im2col<T: Element>(x: &Tensor<T>, kernel: usize) -> Vec<T> {
    let (cin, h, w) = (x.channels(), x.height(), x.width());
    let pad = kernel / 2;
    let n = h * w;
    let mut cols = vec![T::zero(); cin * kernel * kernel * n];
    for c in 0..cin {
        let plane = x.channel(c);
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for yy in 0..h {
                    let sy = yy as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[yy * w..(yy + 1) * w];
                    let shift = kx as isize - pad as isize;
                    let (x_lo, x_hi) = (
                        (-shift).max(0) as usize,
                        (w as isize - shift).min(w as isize).max(0) as usize,
                    );
                    for xx in x_lo..x_hi {
                        dst_row[xx] = src_row[(xx as isize + shift) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Element>(cols: &[T], shape: Shape, kernel: usize) -> Tensor<T> {
    let (cin, h, w) = (shape.channels, shape.height, shape.width);
    let pad = kernel / 2;
    let n = h * w;
    let mut out = Tensor::zeros(shape);
    for c in 0..cin {
        let plane = out.channel_mut(c);
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &cols[row * n..(row + 1) * n];
                for yy in 0..h {
                    let sy = yy as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let shift = kx as isize - pad as isize;
                    let (x_lo, x_hi) = (
                        (-shift).max(0) as usize,
                        (w as isize - shift).min(w as isize).max(0) as usize,
                    );
                    for xx in x_lo..x_hi {
                        let d = sy as usize * w + (xx as isize + shift) as usize;
                        plane[d] = plane[d] + src[yy * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Per-channel mean over valid `k × k` windows; output is `(h-k+1) × (w-k+1)`.
pub(crate) fn box_mean_valid<T: Element>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    assert!(k >= 1 && k <= x.height() && k <= x.width(), "window larger than image");
    let shape = Shape::new(x.channels(), x.height() - k + 1, x.width() - k + 1);
    let inv = T::lit(1.0 / (k * k) as f64);
    Tensor::from_fn(shape, |c, j, i| {
        let mut s = T::zero();
        for dy in 0..k {
            for dx in 0..k {
                s = s + x.get(c, j + dy, i + dx);
            }
        }
        s * inv
    })
}
