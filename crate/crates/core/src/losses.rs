//! The eleven self-supervised loss terms.
//!
//! Every term is a mean over elements so magnitudes do not depend on the
//! frame resolution. The terms fall into three groups:
//!
//! * denoising: `res1`/`cons1` on the low-light denoiser and `res2`/`cons2`
//!   on the reflection denoiser, both built from the two diagonal
//!   sub-images (see [`DenoiseTerms`]);
//! * illumination: `over` and `pix` pull `S_IE` towards brightness targets
//!   derived from the mean luminance of `I_LD`, `smooth` penalizes its
//!   gradients, `ill` ties `S_RD` to `S_IE`;
//! * reflectance: `inter` compares the luminance of the two sub-images of
//!   `R_RD`, `var` matches 5×5 local variances and `color` matches hue
//!   (cosine similarity) between `R_RD` and `R_IE`.
//!
//! `res2`, `cons2`, `inter`, `var` and `color` are this crate's concrete forms
//! of terms that are otherwise only described qualitatively.

use std::fmt;

use crate::autograd::{Graph, Var};
use crate::retinex::{DenoiseTerms, Diagonal, IntermediateBundle, ILLUMINATION_FLOOR};
use crate::tensor::{Element, Tensor, LUMA};

/// Floor on mean luminance before inverting it.
pub const LUMINANCE_FLOOR: f64 = 1e-3;
/// Base of the pixel-wise adjustment scaling `β = α⁻¹ · 0.7^(-α)`.
pub const PIXEL_ADJUST_BASE: f64 = 0.7;
pub const STANDARD_TARGET_BRIGHTNESS: f64 = 0.5;
pub const UNDERWATER_TARGET_BRIGHTNESS: f64 = 0.3;
/// Window of the local variance loss.
pub const VARIANCE_WINDOW: usize = 5;
/// Pixels whose RGB norm is below this are ignored by the color loss.
pub const COLOR_NORM_FLOOR: f64 = 1e-4;
/// Lower clamp applied to `I_LD` before the fractional power in `pix`.
const PIX_BASE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LossMode {
    #[default]
    Standard,
    /// Per-channel brightness coefficients (adaptive white balance).
    Underwater,
}

impl LossMode {
    pub fn default_target_brightness(self) -> f64 {
        match self {
            LossMode::Standard => STANDARD_TARGET_BRIGHTNESS,
            LossMode::Underwater => UNDERWATER_TARGET_BRIGHTNESS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Standard => "standard",
            LossMode::Underwater => "underwater",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(LossMode::Standard),
            "underwater" => Ok(LossMode::Underwater),
            other => Err(format!("unknown mode `{other}` (standard | underwater)")),
        }
    }
}

/// `α`, `β` and the mean luminance they derive from, one entry per RGB
/// channel. In standard mode all three entries are equal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrightnessCoefficients {
    pub mode: LossMode,
    pub mean_luminance: [f64; 3],
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
}

impl BrightnessCoefficients {
    pub fn from_mean_luminance(mode: LossMode, target: f64, mean_luminance: [f64; 3]) -> Self {
        let alpha = mean_luminance.map(|y| target / y.max(LUMINANCE_FLOOR));
        let beta = alpha.map(|a| PIXEL_ADJUST_BASE.powf(-a) / a);
        Self {
            mode,
            mean_luminance,
            alpha,
            beta,
        }
    }

    /// Illumination target of the overall-mean loss, `α⁻¹` clamped into the
    /// attainable illumination range.
    pub fn over_target(&self) -> [f64; 3] {
        self.alpha
            .map(|a| (1.0 / a).clamp(ILLUMINATION_FLOOR, 1.0))
    }
}

/// Brightness coefficients of a denoised frame.
///
/// Standard mode uses the Rec.601 mean luminance for every channel;
/// underwater mode uses each channel's own mean.
pub fn compute_coefficients<T: Element>(
    denoised: &Tensor<T>,
    mode: LossMode,
    target_brightness: f64,
) -> BrightnessCoefficients {
    let means = [0, 1, 2].map(|c| denoised.channel_mean(c).as_f64());
    let y = match mode {
        LossMode::Standard => {
            let y = LUMA[0] * means[0] + LUMA[1] * means[1] + LUMA[2] * means[2];
            [y; 3]
        }
        LossMode::Underwater => means,
    };
    BrightnessCoefficients::from_mean_luminance(mode, target_brightness, y)
}

/// Residual term: each denoised sub-image should predict the other sub-image.
pub fn residual_loss<T: Element>(g: &mut Graph<T>, t: &DenoiseTerms) -> Var {
    let a = g.mse(t.denoised_g1, t.g2);
    let b = g.mse(t.denoised_g2, t.g1);
    g.add(a, b)
}

/// Consistency term: denoise-then-downsample agrees with downsample-then-denoise.
pub fn consistency_loss<T: Element>(g: &mut Graph<T>, t: &DenoiseTerms) -> Var {
    let a = g.mse(t.denoised_g1, t.g1_of_denoised);
    let b = g.mse(t.denoised_g2, t.g2_of_denoised);
    g.add(a, b)
}

fn channel_reduce<T: Element>(g: &mut Graph<T>, sq: Var, mode: LossMode) -> Var {
    let m = g.mean(sq);
    match mode {
        // sum over channels of per-channel means
        LossMode::Underwater => g.scale(m, T::lit(3.0)),
        LossMode::Standard => m,
    }
}

pub fn loss_over<T: Element>(g: &mut Graph<T>, s_ie: Var, coeffs: &BrightnessCoefficients) -> Var {
    let target = coeffs.over_target();
    let d = g.channel_affine(s_ie, &[T::one(); 3], &target.map(|t| T::lit(-t)));
    let sq = g.square(d);
    channel_reduce(g, sq, coeffs.mode)
}

/// Pixel-wise target `β (α I_LD)^α`, clamped into the illumination range.
pub fn pix_target<T: Element>(
    g: &mut Graph<T>,
    denoised: Var,
    coeffs: &BrightnessCoefficients,
) -> Var {
    let alpha = coeffs.alpha.map(T::lit);
    let base = g.clamp_min(denoised, T::lit(PIX_BASE_FLOOR));
    let scaled = g.channel_affine(base, &alpha, &[T::zero(); 3]);
    let powered = g.pow_channels(scaled, &alpha);
    let target = g.channel_affine(powered, &coeffs.beta.map(T::lit), &[T::zero(); 3]);
    g.clamp(target, T::lit(ILLUMINATION_FLOOR), T::one())
}

pub fn loss_pix<T: Element>(
    g: &mut Graph<T>,
    s_ie: Var,
    denoised: Var,
    coeffs: &BrightnessCoefficients,
) -> Var {
    let target = pix_target(g, denoised, coeffs);
    let d = g.sub(s_ie, target);
    let sq = g.square(d);
    channel_reduce(g, sq, coeffs.mode)
}

pub fn loss_smooth<T: Element>(g: &mut Graph<T>, s_ie: Var) -> Var {
    let dx = g.diff_x(s_ie);
    let dx = g.abs(dx);
    let mx = g.mean(dx);
    let dy = g.diff_y(s_ie);
    let dy = g.abs(dy);
    let my = g.mean(dy);
    g.add(mx, my)
}

pub fn loss_ill<T: Element>(g: &mut Graph<T>, s_rd: Var, s_ie: Var) -> Var {
    g.mse(s_rd, s_ie)
}

pub fn loss_inter<T: Element>(g: &mut Graph<T>, r_rd: Var) -> Var {
    let a = g.pair_down(r_rd, Diagonal::Anti);
    let b = g.pair_down(r_rd, Diagonal::Main);
    let ya = g.luminance(a);
    let yb = g.luminance(b);
    let d = g.sub(ya, yb);
    let d = g.abs(d);
    g.mean(d)
}

fn local_variance<T: Element>(g: &mut Graph<T>, y: Var, k: usize) -> Var {
    let sq = g.square(y);
    let mean_sq = g.box_mean(sq, k);
    let mean = g.box_mean(y, k);
    let mean2 = g.square(mean);
    g.sub(mean_sq, mean2)
}

pub fn loss_var<T: Element>(g: &mut Graph<T>, r_rd: Var, r_ie: Var) -> Var {
    let s = g.shape(r_rd);
    let k = VARIANCE_WINDOW.min(s.height).min(s.width);
    let ya = g.luminance(r_rd);
    let yb = g.luminance(r_ie);
    let va = local_variance(g, ya, k);
    let vb = local_variance(g, yb, k);
    g.mse(va, vb)
}

pub fn loss_color<T: Element>(g: &mut Graph<T>, r_rd: Var, r_ie: Var) -> Var {
    let floor = T::lit(COLOR_NORM_FLOOR * COLOR_NORM_FLOOR);
    let dot = g.mul(r_rd, r_ie);
    let dot = g.sum_channels(dot);
    let na = g.square(r_rd);
    let na = g.sum_channels(na);
    let nb = g.square(r_ie);
    let nb = g.sum_channels(nb);
    let mask = g
        .value(na)
        .zip_map(g.value(nb), |a, b| {
            if a > floor && b > floor {
                T::one()
            } else {
                T::zero()
            }
        })
        .expect("same plane");
    let count = mask.sum().as_f64();
    if count == 0.0 {
        return g.constant(Tensor::scalar(T::zero()));
    }
    let na = g.clamp_min(na, floor);
    let na = g.sqrt(na);
    let nb = g.clamp_min(nb, floor);
    let nb = g.sqrt(nb);
    let denom = g.mul(na, nb);
    let cos = g.div(dot, denom);
    let mask = g.constant(mask);
    let cos = g.mul(cos, mask);
    let total = g.sum(cos);
    let mean = g.scale(total, T::lit(-1.0 / count));
    g.add_scalar(mean, T::one())
}

pub const TERM_NAMES: [&str; 11] = [
    "res1", "cons1", "over", "pix", "smooth", "res2", "cons2", "ill", "inter", "var", "color",
];

/// Per-term weights, in [`TERM_NAMES`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights(pub [f64; 11]);

impl Default for LossWeights {
    fn default() -> Self {
        Self([1.0; 11])
    }
}

/// Graph nodes of all eleven terms and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub terms: [Var; 11],
    pub total: Var,
}

/// Scalar values of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub res1: f64,
    pub cons1: f64,
    pub over: f64,
    pub pix: f64,
    pub smooth: f64,
    pub res2: f64,
    pub cons2: f64,
    pub ill: f64,
    pub inter: f64,
    pub var: f64,
    pub color: f64,
    pub total: f64,
}

impl LossReport {
    /// Fills the terms and sets `total` to their weighted sum in term order.
    pub fn from_terms(values: [f64; 11], weights: &LossWeights) -> Self {
        let [res1, cons1, over, pix, smooth, res2, cons2, ill, inter, var, color] = values;
        let total = values
            .iter()
            .zip(weights.0)
            .fold(0.0, |acc, (v, w)| acc + w * v);
        Self {
            res1,
            cons1,
            over,
            pix,
            smooth,
            res2,
            cons2,
            ill,
            inter,
            var,
            color,
            total,
        }
    }

    pub fn terms(&self) -> [(&'static str, f64); 11] {
        let v = [
            self.res1, self.cons1, self.over, self.pix, self.smooth, self.res2, self.cons2,
            self.ill, self.inter, self.var, self.color,
        ];
        let mut out = [("", 0.0); 11];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (TERM_NAMES[i], v[i]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms().iter().all(|(_, v)| v.is_finite())
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.terms() {
            write!(f, "{name}={v:.6} ")?;
        }
        write!(f, "total={:.6}", self.total)
    }
}

/// Builds all eleven terms for one frame.
///
/// The bundle must have been produced with loss terms enabled.
pub fn total_loss<T: Element>(
    g: &mut Graph<T>,
    b: &IntermediateBundle,
    coeffs: &BrightnessCoefficients,
    weights: &LossWeights,
) -> LossVars {
    let ld = b.ld.expect("bundle without low-light denoiser terms");
    let rd = b.rd.expect("bundle without reflection denoiser terms");
    let terms = [
        residual_loss(g, &ld),
        consistency_loss(g, &ld),
        loss_over(g, b.s_ie, coeffs),
        loss_pix(g, b.s_ie, b.denoised_const, coeffs),
        loss_smooth(g, b.s_ie),
        residual_loss(g, &rd),
        consistency_loss(g, &rd),
        loss_ill(g, b.s_rd, b.s_ie),
        loss_inter(g, b.r_rd),
        loss_var(g, b.r_rd, b.r_ie),
        loss_color(g, b.r_rd, b.r_ie),
    ];
    let mut total = g.scale(terms[0], T::lit(weights.0[0]));
    for (t, &w) in terms.iter().zip(&weights.0).skip(1) {
        let wt = g.scale(*t, T::lit(w));
        total = g.add(total, wt);
    }
    LossVars { terms, total }
}

impl LossVars {
    pub fn report<T: Element>(&self, g: &Graph<T>, weights: &LossWeights) -> LossReport {
        LossReport::from_terms(self.terms.map(|v| g.scalar(v).as_f64()), weights)
    }
}
