//! Coarse-to-fine pyramidal Lucas–Kanade dense flow.

use crate::error::{Error, Result};
use crate::tensor::{luminance, Tensor};

use super::flow::{FlowBackend, FlowField};
use super::warp::sample_bilinear;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LucasKanadeConfig {
    pub levels: usize,
    /// Side of the square aggregation window, odd.
    pub window: usize,
    /// Warp-and-solve iterations per level.
    pub iterations: usize,
    /// Tikhonov term added to the structure-tensor diagonal.
    pub regularization: f64,
    /// Largest update per iteration in pixels of the current level; keeps
    /// aliased coarse levels from running away.
    pub max_step: f64,
}

impl Default for LucasKanadeConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 5,
            iterations: 3,
            regularization: 1e-3,
            max_step: 1.0,
        }
    }
}

/// The built-in flow backend. Works on luminance, deterministic.
#[derive(Clone, Debug, Default)]
pub struct LucasKanade {
    pub config: LucasKanadeConfig,
}

impl LucasKanade {
    pub fn new(config: LucasKanadeConfig) -> Self {
        Self { config }
    }
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn from_tensor(t: &Tensor<f32>) -> Self {
        let y = luminance(t);
        Self {
            h: t.height(),
            w: t.width(),
            v: y.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        self.v[y * self.w + x]
    }

    /// 2×2 average, trailing row/column folded in by clamping.
    fn half(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * y, 2 * x)
                    + self.at(2 * y, 2 * x + 1)
                    + self.at(2 * y + 1, 2 * x)
                    + self.at(2 * y + 1, 2 * x + 1);
                v.push(s / 4.0);
            }
        }
        Self { h, w, v }
    }

    fn warped(&self, flow: &FlowField) -> Self {
        let mut v = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                let (dx, dy) = flow.get(y, x);
                v.push(sample_bilinear(&self.v, self.h, self.w, x as f64 + dx as f64, y as f64 + dy as f64));
            }
        }
        Self { h: self.h, w: self.w, v }
    }

    /// Central differences with border clamping.
    fn gradients(&self) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (self.h, self.w);
        let mut gx = vec![0.0; h * w];
        let mut gy = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                if xr > xl {
                    gx[y * w + x] = (self.at(y, xr) - self.at(y, xl)) / (xr - xl) as f64;
                }
                if yd > yu {
                    gy[y * w + x] = (self.at(yd, x) - self.at(yu, x)) / (yd - yu) as f64;
                }
            }
        }
        (gx, gy)
    }
}

/// Sums over a `k×k` window truncated at the borders, via an integral image.
fn box_sum(v: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = k / 2;
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += v[y * w + x];
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            out[y * w + x] = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
        }
    }
    out
}

impl LucasKanade {
    fn refine(&self, reference: &Plane, target: &Plane, flow: &mut FlowField) {
        let (h, w) = (reference.h, reference.w);
        let k = self.config.window;
        let lambda = self.config.regularization;
        for _ in 0..self.config.iterations {
            let warped = target.warped(flow);
            let (wx, wy) = warped.gradients();
            let (rx, ry) = reference.gradients();
            let n = h * w;
            let mut ixx = vec![0.0; n];
            let mut ixy = vec![0.0; n];
            let mut iyy = vec![0.0; n];
            let mut ixt = vec![0.0; n];
            let mut iyt = vec![0.0; n];
            for i in 0..n {
                let (fx, fy) = flow.get(i / w, i % w);
                let (sx, sy) = ((i % w) as f64 + fx as f64, (i / w) as f64 + fy as f64);
                // samples clamped at the border carry no motion information
                if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                    continue;
                }
                // averaged gradients are symmetric in the two frames
                let gx = 0.5 * (wx[i] + rx[i]);
                let gy = 0.5 * (wy[i] + ry[i]);
                let e = warped.v[i] - reference.v[i];
                ixx[i] = gx * gx;
                ixy[i] = gx * gy;
                iyy[i] = gy * gy;
                ixt[i] = gx * e;
                iyt[i] = gy * e;
            }
            let [sxx, sxy, syy, sxt, syt] =
                [ixx, ixy, iyy, ixt, iyt].map(|v| box_sum(&v, h, w, k));
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let a = sxx[i] + lambda;
                    let b = sxy[i];
                    let d = syy[i] + lambda;
                    let det = a * d - b * b;
                    if det <= 0.0 || !det.is_finite() {
                        continue;
                    }
                    let ux = -(d * sxt[i] - b * syt[i]) / det;
                    let uy = -(a * syt[i] - b * sxt[i]) / det;
                    let norm = ux.hypot(uy);
                    let k = if norm > self.config.max_step { self.config.max_step / norm } else { 1.0 };
                    let (ux, uy) = (ux * k, uy * k);
                    let (fx, fy) = flow.get(y, x);
                    flow.set(y, x, ((fx as f64 + ux) as f32, (fy as f64 + uy) as f32));
                }
            }
        }
    }
}

/// 3×3 component-wise median, truncated at the borders.
fn median3(flow: &FlowField) -> FlowField {
    let (h, w) = (flow.height(), flow.width());
    let mut out = FlowField::from_fn(h, w, |y, x| {
        let mut xs = Vec::with_capacity(9);
        let mut ys = Vec::with_capacity(9);
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                let (dx, dy) = flow.get(yy, xx);
                xs.push(dx);
                ys.push(dy);
            }
        }
        xs.sort_by(f32::total_cmp);
        ys.sort_by(f32::total_cmp);
        let m = |v: &[f32]| {
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        };
        (m(&xs), m(&ys))
    });
    out.src_index = flow.src_index;
    out.dst_index = flow.dst_index;
    out
}

impl FlowBackend for LucasKanade {
    fn name(&self) -> &str {
        "lucas-kanade"
    }

    fn estimate(&mut self, reference: &Tensor<f32>, target: &Tensor<f32>) -> Result<FlowField> {
        if reference.shape() != target.shape() {
            return Err(Error::BackendFailure(format!(
                "inputs {} and {} differ",
                reference.shape(),
                target.shape()
            )));
        }
        let mut refs = vec![Plane::from_tensor(reference)];
        let mut tars = vec![Plane::from_tensor(target)];
        while refs.len() < self.config.levels.max(1) {
            let last = refs.last().expect("non-empty");
            if last.h / 2 < 8 || last.w / 2 < 8 {
                break;
            }
            let (r, t) = (last.half(), tars.last().expect("non-empty").half());
            refs.push(r);
            tars.push(t);
        }
        let coarsest = refs.last().expect("non-empty");
        let mut flow = FlowField::zeros(coarsest.h, coarsest.w);
        for level in (0..refs.len()).rev() {
            let (r, t) = (&refs[level], &tars[level]);
            if (flow.height(), flow.width()) != (r.h, r.w) {
                flow = flow.resize(r.h, r.w);
            }
            self.refine(r, t, &mut flow);
            flow = median3(&flow);
        }
        if !flow.is_finite() {
            return Err(Error::BackendFailure("non-finite flow".into()));
        }
        Ok(flow)
    }
}
