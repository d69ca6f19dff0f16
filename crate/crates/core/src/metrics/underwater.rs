//! No-reference underwater quality: UIQM and UCIQE.
//!
//! UIQM works on 8-bit code values (inputs scaled by 255), the range its
//! weights were fitted on. UCIQE works on CIELab with `L` and chroma divided
//! by 100.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, LUMA};

pub const UIQM_WEIGHTS: [f64; 3] = [0.0282, 0.2953, 3.5753];
pub const UCIQE_WEIGHTS: [f64; 3] = [0.4680, 0.2745, 0.2576];
/// Fraction trimmed from each tail for the colorfulness statistics.
pub const UICM_TRIM: f64 = 0.1;
pub const EME_BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UiqmComponents {
    pub uicm: f64,
    pub uism: f64,
    pub uiconm: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UciqeComponents {
    pub chroma_std: f64,
    pub luminance_contrast: f64,
    pub mean_saturation: f64,
    pub value: f64,
}

fn check_rgb(frame: &Tensor<f32>) -> Result<()> {
    if frame.channels() != 3 || frame.is_empty() {
        return Err(Error::DegenerateInput(format!("expected a non-empty RGB frame, got {}", frame.shape())));
    }
    Ok(())
}

fn codes(frame: &Tensor<f32>, c: usize) -> Vec<f64> {
    frame.channel(c).iter().map(|&v| v as f64 * 255.0).collect()
}

/// Mean after dropping `ceil(α·n)` smallest and `floor(α·n)` largest values.
pub fn trimmed_mean(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let lo = ((alpha * n as f64).ceil() as usize).min(n);
    let hi = n - ((alpha * n as f64).floor() as usize).min(n - lo);
    if hi <= lo {
        return v.iter().sum::<f64>() / n as f64;
    }
    v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
}

/// Colorfulness from the opponent planes `R−G` and `(R+G)/2 − B`.
pub fn uicm(frame: &Tensor<f32>) -> f64 {
    let (r, g, b) = (codes(frame, 0), codes(frame, 1), codes(frame, 2));
    let rg: Vec<f64> = r.iter().zip(&g).map(|(r, g)| r - g).collect();
    let yb: Vec<f64> = (0..r.len()).map(|i| 0.5 * (r[i] + g[i]) - b[i]).collect();
    let stats = |v: &[f64]| {
        let mu = trimmed_mean(v, UICM_TRIM);
        let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
        (mu, var)
    };
    let (mrg, vrg) = stats(&rg);
    let (myb, vyb) = stats(&yb);
    -0.0268 * (mrg * mrg + myb * myb).sqrt() + 0.1586 * (vrg + vyb).sqrt()
}

/// Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        v[y * w + x]
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            out[y as usize * w + x as usize] = gx.hypot(gy);
        }
    }
    out
}

/// Visits the extremes of every full `block × block` tile; trailing rows and
/// columns that do not fill a tile are ignored. Returns the tile count.
fn for_each_block(v: &[f64], h: usize, w: usize, block: usize, mut f: impl FnMut(f64, f64)) -> usize {
    let (k1, k2) = (h / block, w / block);
    for by in 0..k1 {
        for bx in 0..k2 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for y in by * block..(by + 1) * block {
                for &p in &v[y * w + bx * block..y * w + (bx + 1) * block] {
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
            }
            f(lo, hi);
        }
    }
    k1 * k2
}

/// Measure of enhancement `2/B · Σ ln(max/min)`; tiles with a zero extreme
/// contribute nothing.
pub fn eme(v: &[f64], h: usize, w: usize, block: usize) -> f64 {
    let mut s = 0.0;
    let n = for_each_block(v, h, w, block, |lo, hi| {
        if lo > 0.0 && hi > 0.0 {
            s += (hi / lo).ln();
        }
    });
    if n == 0 {
        0.0
    } else {
        2.0 * s / n as f64
    }
}

/// Sharpness: luma-weighted EME of each channel's Sobel edge map multiplied
/// by the channel itself.
pub fn uism(frame: &Tensor<f32>) -> f64 {
    let (h, w) = (frame.height(), frame.width());
    (0..3)
        .map(|c| {
            let ch = codes(frame, c);
            let edges: Vec<f64> = sobel_magnitude(&ch, h, w).iter().zip(&ch).map(|(e, v)| e * v).collect();
            LUMA[c] * eme(&edges, h, w, EME_BLOCK)
        })
        .sum()
}

/// Contrast: `−1/B · Σ r ln r` with `r = (max − min)/(max + min)` per tile of
/// the luminance plane; flat or black tiles contribute nothing.
pub fn uiconm(frame: &Tensor<f32>) -> f64 {
    let (h, w) = (frame.height(), frame.width());
    let y: Vec<f64> = (0..h * w)
        .map(|i| (0..3).map(|c| LUMA[c] * frame.channel(c)[i] as f64 * 255.0).sum())
        .collect();
    let mut s = 0.0;
    let n = for_each_block(&y, h, w, EME_BLOCK, |lo, hi| {
        let (top, bot) = (hi - lo, hi + lo);
        if top > 0.0 && bot > 0.0 {
            let r = top / bot;
            s += r * r.ln();
        }
    });
    if n == 0 {
        0.0
    } else {
        -s / n as f64
    }
}

pub fn uiqm_components(frame: &Tensor<f32>) -> Result<UiqmComponents> {
    check_rgb(frame)?;
    let (uicm, uism, uiconm) = (uicm(frame), uism(frame), uiconm(frame));
    let [c1, c2, c3] = UIQM_WEIGHTS;
    Ok(UiqmComponents {
        uicm,
        uism,
        uiconm,
        value: c1 * uicm + c2 * uism + c3 * uiconm,
    })
}

pub fn uiqm(frame: &Tensor<f32>) -> Result<f64> {
    uiqm_components(frame).map(|c| c.value)
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// CIELab of an sRGB triple in `[0, 1]`, D65 white taken as the image of
/// sRGB white so that grays map to `a = b = 0`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz = SRGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    let white = SRGB_TO_XYZ.map(|row| row[0] + row[1] + row[2]);
    let [fx, fy, fz] = [0, 1, 2].map(|i| lab_f(xyz[i] / white[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Value at rank `round(q · (n − 1))` of the sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)]
}

pub fn uciqe_components(frame: &Tensor<f32>) -> Result<UciqeComponents> {
    check_rgb(frame)?;
    let n = frame.shape().plane();
    let mut lum = Vec::with_capacity(n);
    let mut chroma = Vec::with_capacity(n);
    let mut sat = Vec::with_capacity(n);
    for i in 0..n {
        let [l, a, b] = srgb_to_lab([0, 1, 2].map(|c| frame.channel(c)[i] as f64));
        let (l, c) = (l / 100.0, a.hypot(b) / 100.0);
        lum.push(l);
        chroma.push(c);
        let norm = c.hypot(l);
        sat.push(if norm > 0.0 { c / norm } else { 0.0 });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mc = mean(&chroma);
    let chroma_std = (chroma.iter().map(|c| (c - mc).powi(2)).sum::<f64>() / n as f64).sqrt();
    lum.sort_by(f64::total_cmp);
    let luminance_contrast = quantile(&lum, 0.99) - quantile(&lum, 0.01);
    let mean_saturation = mean(&sat);
    let [c1, c2, c3] = UCIQE_WEIGHTS;
    Ok(UciqeComponents {
        chroma_std,
        luminance_contrast,
        mean_saturation,
        value: c1 * chroma_std + c2 * luminance_contrast + c3 * mean_saturation,
    })
}

pub fn uciqe(frame: &Tensor<f32>) -> Result<f64> {
    uciqe_components(frame).map(|c| c.value)
}
