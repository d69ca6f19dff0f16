//! Direct-definition reference implementations at 64-bit, written without
//! reusing the library's helpers.

use retinex_video::tensor::{Shape, Tensor};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// `(g1, g2)` of every 2×2 block `[[a, b], [c, d]]`: `((b + c)/2, (a + d)/2)`.
pub fn pair_downsample(img: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let (ch, h, w) = (img.channels(), img.height(), img.width());
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for c in 0..ch {
        for by in 0..h / 2 {
            for bx in 0..w / 2 {
                let a = img.get(c, 2 * by, 2 * bx);
                let b = img.get(c, 2 * by, 2 * bx + 1);
                let cc = img.get(c, 2 * by + 1, 2 * bx);
                let d = img.get(c, 2 * by + 1, 2 * bx + 1);
                g1.push((b + cc) / 2.0);
                g2.push((a + d) / 2.0);
            }
        }
    }
    (g1, g2)
}

fn level(v: f64) -> usize {
    (v * 255.0).round().clamp(0.0, 255.0) as usize
}

/// Per channel, each pixel becomes the fraction of pixels whose level is at
/// most its own; a channel occupying one level is returned unchanged.
pub fn histogram_equalize(img: &Tensor<f64>) -> Tensor<f64> {
    let mut out = img.clone();
    let n = img.height() * img.width();
    for c in 0..img.channels() {
        let levels: Vec<usize> = img.channel(c).iter().map(|&v| level(v)).collect();
        if levels.iter().all(|&l| l == levels[0]) {
            continue;
        }
        for i in 0..n {
            let below = levels.iter().filter(|&&l| l <= levels[i]).count();
            out.channel_mut(c)[i] = below as f64 / n as f64;
        }
    }
    out
}

/// Per channel, each source level maps to the smallest reference level
/// whose cumulative share is at least the source's cumulative share.
pub fn histogram_match(src: &Tensor<f32>, reference: &Tensor<f32>) -> Tensor<f64> {
    let mut out = Tensor::<f64>::zeros(src.shape());
    for c in 0..src.channels() {
        let sl: Vec<usize> = src.channel(c).iter().map(|&v| level(v as f64)).collect();
        let rl: Vec<usize> = reference.channel(c).iter().map(|&v| level(v as f64)).collect();
        let (ns, nr) = (sl.len() as u128, rl.len() as u128);
        for (i, &k) in sl.iter().enumerate() {
            let cs = sl.iter().filter(|&&l| l <= k).count() as u128;
            let j = (0..256usize)
                .find(|&j| (rl.iter().filter(|&&l| l <= j).count() as u128) * ns >= cs * nr)
                .unwrap_or(255);
            out.channel_mut(c)[i] = j as f64 / 255.0;
        }
    }
    out
}

/// Backward bilinear lookup with coordinates clamped to the frame.
pub fn warp(img: &Tensor<f32>, flow: &[(f64, f64)]) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::new();
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = flow[y * w + x];
                let sx = (x as f64 + dx).clamp(0.0, (w - 1) as f64);
                let sy = (y as f64 + dy).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let p = |yy: usize, xx: usize| img.get(c, yy, xx) as f64;
                out.push(
                    (1.0 - fx) * (1.0 - fy) * p(y0, x0)
                        + fx * (1.0 - fy) * p(y0, x1)
                        + (1.0 - fx) * fy * p(y1, x0)
                        + fx * fy * p(y1, x1),
                );
            }
        }
    }
    out
}

pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mut s = 0.0;
    for (x, y) in to_f64(a).iter().zip(to_f64(b)) {
        s += (x - y) * (x - y);
    }
    let mse = s / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn luma(img: &Tensor<f32>) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut y = vec![0.0; h * w];
    for (i, v) in y.iter_mut().enumerate() {
        for c in 0..3 {
            *v += LUMA[c] * img.channel(c)[i] as f64;
        }
    }
    y
}

/// Mean over valid window positions of the SSIM index, with the weighted
/// statistics summed directly over each 2-D window.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>, window: usize, sigma: f64) -> f64 {
    let (h, w) = (a.height(), a.width());
    let (x, y) = (luma(a), luma(b));
    let r = (window / 2) as f64;
    let mut k = vec![vec![0.0; window]; window];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-((i as f64 - r).powi(2) + (j as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for oy in 0..=h - window {
        for ox in 0..=w - window {
            let at = |p: &[f64], i: usize, j: usize| p[(oy + i) * w + ox + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    mx += k[i][j] / total * at(&x, i, j);
                    my += k[i][j] / total * at(&y, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let wt = k[i][j] / total;
                    let (dx, dy) = (at(&x, i, j) - mx, at(&y, i, j) - my);
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// `(series, smoothed)`; the smoothing window is centered and truncated.
pub fn mabd(frames: &[Tensor<f32>], window: usize) -> (Vec<f64>, Vec<f64>) {
    let means: Vec<f64> = frames
        .iter()
        .map(|f| {
            let y = luma(f);
            y.iter().sum::<f64>() / y.len() as f64
        })
        .collect();
    let series: Vec<f64> = (1..means.len()).map(|t| (means[t] - means[t - 1]).abs()).collect();
    let half_l = (window - 1) / 2;
    let half_r = window / 2;
    let n = series.len() as isize;
    let smoothed = (0..n)
        .map(|i| {
            let mut s = 0.0;
            let mut k = 0.0;
            for j in i - half_l as isize..=i + half_r as isize {
                if j >= 0 && j < n {
                    s += series[j as usize];
                    k += 1.0;
                }
            }
            s / k
        })
        .collect();
    (series, smoothed)
}

fn trimmed(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let lo = (alpha * n).ceil() as usize;
    let hi = v.len() - (alpha * n).floor() as usize;
    v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
}

fn code(img: &Tensor<f32>, c: usize, y: usize, x: usize) -> f64 {
    img.get(c, y, x) as f64 * 255.0
}

pub fn uicm(img: &Tensor<f32>) -> f64 {
    let (h, w) = (img.height(), img.width());
    let (mut rg, mut yb) = (Vec::new(), Vec::new());
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (code(img, 0, y, x), code(img, 1, y, x), code(img, 2, y, x));
            rg.push(r - g);
            yb.push((r + g) / 2.0 - b);
        }
    }
    let (mrg, myb) = (trimmed(&rg, 0.1), trimmed(&yb, 0.1));
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    -0.0268 * (mrg * mrg + myb * myb).sqrt() + 0.1586 * (var(&rg, mrg) + var(&yb, myb)).sqrt()
}

fn sobel(img: &Tensor<f32>, c: usize) -> Vec<f64> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..3isize {
                for j in 0..3isize {
                    let yy = (y + i - 1).clamp(0, h - 1) as usize;
                    let xx = (x + j - 1).clamp(0, w - 1) as usize;
                    let v = code(img, c, yy, xx);
                    gx += kx[i as usize][j as usize] * v;
                    gy += ky[i as usize][j as usize] * v;
                }
            }
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

fn blocks(v: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for by in 0..h / 8 {
        for bx in 0..w / 8 {
            let mut cell = Vec::new();
            for y in 0..8 {
                for x in 0..8 {
                    cell.push(v[(by * 8 + y) * w + bx * 8 + x]);
                }
            }
            let lo = cell.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = cell.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.push((lo, hi));
        }
    }
    out
}

pub fn uism(img: &Tensor<f32>) -> f64 {
    let (h, w) = (img.height(), img.width());
    let mut total = 0.0;
    for c in 0..3 {
        let s = sobel(img, c);
        let edge: Vec<f64> = (0..h * w).map(|i| s[i] * code(img, c, i / w, i % w)).collect();
        let b = blocks(&edge, h, w);
        let sum: f64 = b.iter().filter(|(lo, hi)| *lo > 0.0 && *hi > 0.0).map(|(lo, hi)| (hi / lo).ln()).sum();
        total += LUMA[c] * 2.0 * sum / b.len() as f64;
    }
    total
}

pub fn uiconm(img: &Tensor<f32>) -> f64 {
    let (h, w) = (img.height(), img.width());
    let y: Vec<f64> = luma(img).iter().map(|v| v * 255.0).collect();
    let b = blocks(&y, h, w);
    let mut s = 0.0;
    for (lo, hi) in &b {
        if hi - lo > 0.0 && hi + lo > 0.0 {
            let r = (hi - lo) / (hi + lo);
            s += r * r.ln();
        }
    }
    -s / b.len() as f64
}

pub fn uiqm(img: &Tensor<f32>) -> f64 {
    0.0282 * uicm(img) + 0.2953 * uism(img) + 3.5753 * uiconm(img)
}

fn lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let lin = |v: f64| if v <= 0.04045 { v / 12.92 } else { ((v + 0.055) / 1.055).powf(2.4) };
    let (r, g, b) = (lin(r), lin(g), lin(b));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (xn, yn, zn) = (0.4124564 + 0.3575761 + 0.1804375, 0.2126729 + 0.7151522 + 0.0721750, 0.0193339 + 0.1191920 + 0.9503041);
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d.powi(3) {
            t.powf(1.0 / 3.0)
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// `(chroma std, luminance contrast, mean saturation, weighted sum)`.
pub fn uciqe(img: &Tensor<f32>) -> (f64, f64, f64, f64) {
    let (h, w) = (img.height(), img.width());
    let (mut ls, mut cs, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    for y in 0..h {
        for x in 0..w {
            let (l, a, b) = lab(img.get(0, y, x) as f64, img.get(1, y, x) as f64, img.get(2, y, x) as f64);
            let (l, c) = (l / 100.0, (a * a + b * b).sqrt() / 100.0);
            ls.push(l);
            cs.push(c);
            ss.push(if c == 0.0 && l == 0.0 { 0.0 } else { c / (c * c + l * l).sqrt() });
        }
    }
    let n = cs.len() as f64;
    let mc = cs.iter().sum::<f64>() / n;
    let sc = (cs.iter().map(|c| (c - mc).powi(2)).sum::<f64>() / n).sqrt();
    ls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| ls[(p * (ls.len() - 1) as f64).round() as usize];
    let con = q(0.99) - q(0.01);
    let ms = ss.iter().sum::<f64>() / n;
    (sc, con, ms, 0.4680 * sc + 0.2745 * con + 0.2576 * ms)
}

pub fn shape3(h: usize, w: usize) -> Shape {
    Shape::new(3, h, w)
}
