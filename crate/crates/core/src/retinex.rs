//! The enhancement forward pass.
//!
//! Three trainable convolutional stages turn a dark noisy frame into a
//! reflectance/illumination pair:
//!
//! * the low-light denoiser predicts a noise residual that is subtracted from
//!   the input, giving `I_LP`;
//! * the illumination estimator maps `I_LP` (plus warped feedback from the
//!   previous frame) to an illumination map `S_IE` in `[s_min, 1]`, and the
//!   reflectance follows from the Retinex product `I_LP = R · S`;
//! * the reflection denoiser refines the concatenated `(R_IE, S_IE)` into
//!   `(R_RD, S_RD)`. `R_RD` is the enhanced frame.
//!
//! The self-supervised losses compare the stages on the two diagonal
//! sub-images produced by [`pair_downsample`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{BoundStack, ConvStack, ConvStackSpec};
use crate::temporal::TemporalState;
use crate::tensor::{Element, Shape, Tensor};

/// Lower bound on illumination; keeps `I / S` finite.
pub const ILLUMINATION_FLOOR: f64 = 1e-3;

/// Which diagonal of each 2×2 block a sub-image averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Diagonal {
    /// `(top-right + bottom-left) / 2`, the first sub-image.
    Anti,
    /// `(top-left + bottom-right) / 2`, the second sub-image.
    Main,
}

/// One diagonal sub-image. A trailing odd row/column is dropped.
pub fn pair_downsample_one<T: Element>(img: &Tensor<T>, diagonal: Diagonal) -> Tensor<T> {
    let shape = Shape::new(img.channels(), img.height() / 2, img.width() / 2);
    let half = T::lit(0.5);
    Tensor::from_fn(shape, |c, j, i| {
        let (y, x) = (2 * j, 2 * i);
        match diagonal {
            Diagonal::Anti => (img.get(c, y, x + 1) + img.get(c, y + 1, x)) * half,
            Diagonal::Main => (img.get(c, y, x) + img.get(c, y + 1, x + 1)) * half,
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDownsampleOutput<T: Element = f32> {
    pub g1: Tensor<T>,
    pub g2: Tensor<T>,
}

/// Splits every 2×2 block `[[a, b], [c, d]]` into `g1 = (b + c) / 2` and
/// `g2 = (a + d) / 2`.
pub fn pair_downsample<T: Element>(img: &Tensor<T>) -> Result<PairDownsampleOutput<T>> {
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::DegenerateInput(format!(
            "pair downsampling needs at least 2x2 pixels, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(PairDownsampleOutput {
        g1: pair_downsample_one(img, Diagonal::Anti),
        g2: pair_downsample_one(img, Diagonal::Main),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetKind {
    LowLightDenoise,
    IlluminationEstimate,
    ReflectionDenoise,
}

impl NetKind {
    pub const ALL: [NetKind; 3] = [
        NetKind::LowLightDenoise,
        NetKind::IlluminationEstimate,
        NetKind::ReflectionDenoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::LowLightDenoise => "ld",
            NetKind::IlluminationEstimate => "ie",
            NetKind::ReflectionDenoise => "rd",
        }
    }

    /// `(input channels, output channels)`, feedback channels included.
    pub fn channels(self) -> (usize, usize) {
        match self {
            NetKind::LowLightDenoise => (3, 3),
            NetKind::IlluminationEstimate => (3 + 6, 3),
            NetKind::ReflectionDenoise => (6 + 6, 6),
        }
    }
}

/// Depth and width of the three stages. These are hyperparameters; they are
/// part of the checkpoint compatibility hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchConfig {
    pub ld_layers: usize,
    pub ld_channels: usize,
    pub ie_layers: usize,
    pub ie_channels: usize,
    pub rd_layers: usize,
    pub rd_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            ld_layers: 3,
            ld_channels: 48,
            ie_layers: 3,
            ie_channels: 48,
            rd_layers: 5,
            rd_channels: 64,
        }
    }
}

impl ArchConfig {
    pub fn stack_spec(&self, kind: NetKind) -> ConvStackSpec {
        let (in_channels, out_channels) = kind.channels();
        let (layers, hidden_channels) = match kind {
            NetKind::LowLightDenoise => (self.ld_layers, self.ld_channels),
            NetKind::IlluminationEstimate => (self.ie_layers, self.ie_channels),
            NetKind::ReflectionDenoise => (self.rd_layers, self.rd_channels),
        };
        ConvStackSpec {
            in_channels,
            hidden_channels,
            out_channels,
            layers,
            kernel: 3,
        }
    }
}

/// The three subnetworks with their channel contracts.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancementNets {
    pub ld: ConvStack,
    pub ie: ConvStack,
    pub rd: ConvStack,
}

impl EnhancementNets {
    /// The residual denoisers start with a zeroed last layer, so a fresh
    /// pipeline passes its input through unchanged.
    pub fn new(arch: &ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            ld: ConvStack::new(arch.stack_spec(NetKind::LowLightDenoise), &mut rng, true),
            ie: ConvStack::new(arch.stack_spec(NetKind::IlluminationEstimate), &mut rng, false),
            rd: ConvStack::new(arch.stack_spec(NetKind::ReflectionDenoise), &mut rng, true),
        }
    }

    pub fn get(&self, kind: NetKind) -> &ConvStack {
        match kind {
            NetKind::LowLightDenoise => &self.ld,
            NetKind::IlluminationEstimate => &self.ie,
            NetKind::ReflectionDenoise => &self.rd,
        }
    }

    pub fn get_mut(&mut self, kind: NetKind) -> &mut ConvStack {
        match kind {
            NetKind::LowLightDenoise => &mut self.ld,
            NetKind::IlluminationEstimate => &mut self.ie,
            NetKind::ReflectionDenoise => &mut self.rd,
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut out = self.ld.parameters_mut();
        out.extend(self.ie.parameters_mut());
        out.extend(self.rd.parameters_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        NetKind::ALL.iter().all(|&k| {
            self.get(k)
                .parameters()
                .into_iter()
                .all(|(_, t)| t.is_finite())
        })
    }

    pub fn bind<T: Element>(&self, g: &mut Graph<T>, trainable: bool) -> BoundNets {
        BoundNets {
            ld: self.ld.bind(g, trainable),
            ie: self.ie.bind(g, trainable),
            rd: self.rd.bind(g, trainable),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundNets {
    pub ld: BoundStack,
    pub ie: BoundStack,
    pub rd: BoundStack,
}

impl BoundNets {
    /// All parameter vars, ordered like [`EnhancementNets::parameters_mut`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.ld.vars();
        v.extend(self.ie.vars());
        v.extend(self.rd.vars());
        v
    }
}

/// Reflectance and illumination maps, both `3 × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct RetinexPair {
    pub reflectance: Tensor<f32>,
    pub illumination: Tensor<f32>,
}

impl RetinexPair {
    pub fn zeros(height: usize, width: usize) -> Self {
        let shape = Shape::new(3, height, width);
        Self {
            reflectance: Tensor::zeros(shape),
            illumination: Tensor::zeros(shape),
        }
    }
}

/// Graph nodes of one residual denoising stage (`d(x) = x - f(x)`) evaluated
/// on the full input and on both diagonal sub-images, as consumed by the
/// residual and consistency losses.
#[derive(Clone, Copy, Debug)]
pub struct DenoiseTerms {
    /// `G1(x)`.
    pub g1: Var,
    /// `G2(x)`.
    pub g2: Var,
    /// `G1(x) - f(G1(x))`.
    pub denoised_g1: Var,
    /// `G2(x) - f(G2(x))`.
    pub denoised_g2: Var,
    /// `G1(x - f(x))`.
    pub g1_of_denoised: Var,
    /// `G2(x - f(x))`.
    pub g2_of_denoised: Var,
}

/// Output of the low-light denoising stage.
#[derive(Clone, Copy, Debug)]
pub struct LdOutput {
    pub input: Var,
    /// `clamp(I - f_LD(I), 0, 1)`.
    pub denoised: Var,
    pub terms: Option<DenoiseTerms>,
}

/// Every tensor the losses need for one frame.
#[derive(Clone, Copy, Debug)]
pub struct IntermediateBundle {
    pub input: Var,
    /// `I_LP`, carrying gradient into the denoiser.
    pub denoised: Var,
    /// `I_LP` detached, as seen by the later stages.
    pub denoised_const: Var,
    pub ld: Option<DenoiseTerms>,
    pub rd: Option<DenoiseTerms>,
    pub r_ie: Var,
    pub s_ie: Var,
    pub r_rd: Var,
    pub s_rd: Var,
}

/// Runs the low-light denoiser. With `loss_terms` the sub-image passes needed
/// by the residual/consistency losses are evaluated too.
pub fn forward_ld<T: Element>(
    g: &mut Graph<T>,
    nets: &BoundNets,
    input: Var,
    loss_terms: bool,
) -> LdOutput {
    let noise = nets.ld.forward(g, input);
    let raw = g.sub(input, noise);
    let denoised = g.clamp(raw, T::zero(), T::one());
    let terms = loss_terms.then(|| {
        denoise_terms(g, input, raw, |g, x| {
            let n = nets.ld.forward(g, x);
            g.sub(x, n)
        })
    });
    LdOutput {
        input,
        denoised,
        terms,
    }
}

fn denoise_terms<T: Element>(
    g: &mut Graph<T>,
    input: Var,
    denoised_full: Var,
    mut denoise: impl FnMut(&mut Graph<T>, Var) -> Var,
) -> DenoiseTerms {
    let g1 = g.pair_down(input, Diagonal::Anti);
    let g2 = g.pair_down(input, Diagonal::Main);
    let denoised_g1 = denoise(g, g1);
    let denoised_g2 = denoise(g, g2);
    let g1_of_denoised = g.pair_down(denoised_full, Diagonal::Anti);
    let g2_of_denoised = g.pair_down(denoised_full, Diagonal::Main);
    DenoiseTerms {
        g1,
        g2,
        denoised_g1,
        denoised_g2,
        g1_of_denoised,
        g2_of_denoised,
    }
}

/// Illumination estimate and Retinex division on graph nodes.
/// Returns `(R_IE, S_IE)`.
pub fn forward_ie<T: Element>(
    g: &mut Graph<T>,
    nets: &BoundNets,
    denoised: Var,
    feedback: (Var, Var),
) -> (Var, Var) {
    let x = g.concat(&[denoised, feedback.0, feedback.1]);
    let z = nets.ie.forward(g, x);
    let sig = g.sigmoid(z);
    let floor = T::lit(ILLUMINATION_FLOOR);
    let s = g.scale(sig, T::one() - floor);
    let s = g.add_scalar(s, floor);
    let guarded = g.clamp_min(s, floor);
    let r = g.div(denoised, guarded);
    let r = g.clamp(r, T::zero(), T::one());
    (r, s)
}

/// Reflection denoiser on `(R_IE, S_IE)`. Returns `(R_RD, S_RD, terms)`.
pub fn forward_rd<T: Element>(
    g: &mut Graph<T>,
    nets: &BoundNets,
    pair: (Var, Var),
    feedback: (Var, Var),
    loss_terms: bool,
) -> (Var, Var, Option<DenoiseTerms>) {
    let joined = g.concat(&[pair.0, pair.1]);
    let x = g.detach(joined);
    let fb = g.concat(&[feedback.0, feedback.1]);
    let denoise = |g: &mut Graph<T>, x: Var, fb: Var| {
        let inp = g.concat(&[x, fb]);
        let n = nets.rd.forward(g, inp);
        g.sub(x, n)
    };
    let raw = denoise(g, x, fb);
    let out = g.clamp(raw, T::zero(), T::one());
    let r = g.narrow(out, 0, 3);
    let s = g.narrow(out, 3, 3);
    let terms = loss_terms.then(|| {
        let fb1 = g.pair_down(fb, Diagonal::Anti);
        let fb2 = g.pair_down(fb, Diagonal::Main);
        let mut subs = [fb1, fb2].into_iter();
        denoise_terms(g, x, raw, |g, sub| {
            let fb = subs.next().expect("two sub-images");
            denoise(g, sub, fb)
        })
    });
    (r, s, terms)
}

/// Places the temporal feedback on the graph as constants.
pub fn feedback_vars<T: Element>(g: &mut Graph<T>, state: &TemporalState) -> (Var, Var) {
    (
        g.constant(state.reflection.cast()),
        g.constant(state.illumination.cast()),
    )
}

/// IE and RD stages after [`forward_ld`].
pub fn forward_rest<T: Element>(
    g: &mut Graph<T>,
    nets: &BoundNets,
    ld: LdOutput,
    state: &TemporalState,
    loss_terms: bool,
) -> Result<IntermediateBundle> {
    let shape = g.shape(ld.input);
    state.check_shape(shape.height, shape.width)?;
    let fb = feedback_vars(g, state);
    let denoised_const = g.detach(ld.denoised);
    let (r_ie, s_ie) = forward_ie(g, nets, denoised_const, fb);
    let (r_rd, s_rd, rd) = forward_rd(g, nets, (r_ie, s_ie), fb, loss_terms);
    Ok(IntermediateBundle {
        input: ld.input,
        denoised: ld.denoised,
        denoised_const,
        ld: ld.terms,
        rd,
        r_ie,
        s_ie,
        r_rd,
        s_rd,
    })
}

/// Full forward pass for one frame on an existing graph.
pub fn forward_frame<T: Element>(
    g: &mut Graph<T>,
    nets: &BoundNets,
    frame: &Tensor<f32>,
    state: &TemporalState,
    loss_terms: bool,
) -> Result<IntermediateBundle> {
    check_frame(frame)?;
    let input = g.constant(frame.cast());
    let ld = forward_ld(g, nets, input, loss_terms);
    forward_rest(g, nets, ld, state, loss_terms)
}

fn check_frame(frame: &Tensor<f32>) -> Result<()> {
    if frame.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "frames must have 3 channels, got {}",
            frame.channels()
        )));
    }
    if frame.height() < 2 || frame.width() < 2 {
        return Err(Error::DegenerateInput(format!(
            "frame of {}x{} pixels",
            frame.height(),
            frame.width()
        )));
    }
    Ok(())
}

/// `clamp(I - f_LD(I), 0, 1)`.
pub fn ld_denoise(frame: &Tensor<f32>, ld: &ConvStack) -> Result<Tensor<f32>> {
    check_frame(frame)?;
    let mut g = Graph::<f32>::new();
    let b = ld.bind(&mut g, false);
    let x = g.constant(frame.clone());
    let n = b.forward(&mut g, x);
    let raw = g.sub(x, n);
    let out = g.clamp(raw, 0.0, 1.0);
    Ok(g.value(out).clone())
}

/// `R = clamp(I_LP / max(S, s_min), 0, 1)`.
pub fn retinex_divide(denoised: &Tensor<f32>, illumination: &Tensor<f32>) -> Result<Tensor<f32>> {
    let floor = ILLUMINATION_FLOOR as f32;
    denoised.zip_map(illumination, |i, s| (i / s.max(floor)).clamp(0.0, 1.0))
}

/// Illumination estimate plus Retinex division.
pub fn ie_decompose(
    denoised: &Tensor<f32>,
    feedback: &TemporalState,
    ie: &ConvStack,
) -> Result<RetinexPair> {
    check_frame(denoised)?;
    feedback.check_shape(denoised.height(), denoised.width())?;
    let mut g = Graph::<f32>::new();
    let ie = ie.bind(&mut g, false);
    let nets = BoundNets {
        ld: BoundStack::empty(),
        ie,
        rd: BoundStack::empty(),
    };
    let x = g.constant(denoised.clone());
    let fb = feedback_vars(&mut g, feedback);
    let (r, s) = forward_ie(&mut g, &nets, x, fb);
    Ok(RetinexPair {
        reflectance: g.value(r).clone(),
        illumination: g.value(s).clone(),
    })
}

/// Refines a decomposition with the reflection denoiser.
pub fn rd_refine(
    pair: &RetinexPair,
    feedback: &TemporalState,
    rd: &ConvStack,
) -> Result<RetinexPair> {
    let (h, w) = (pair.reflectance.height(), pair.reflectance.width());
    pair.illumination.expect_shape(pair.reflectance.shape())?;
    feedback.check_shape(h, w)?;
    let mut g = Graph::<f32>::new();
    let rd = rd.bind(&mut g, false);
    let nets = BoundNets {
        ld: BoundStack::empty(),
        ie: BoundStack::empty(),
        rd,
    };
    let r = g.constant(pair.reflectance.clone());
    let s = g.constant(pair.illumination.clone());
    let fb = feedback_vars(&mut g, feedback);
    let (r, s, _) = forward_rd(&mut g, &nets, (r, s), fb, false);
    Ok(RetinexPair {
        reflectance: g.value(r).clone(),
        illumination: g.value(s).clone(),
    })
}

/// Enhanced frame plus everything the caller may need afterwards.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    /// `R_RD`, the enhanced frame.
    pub enhanced: Tensor<f32>,
    /// `(R_RD, S_RD)` for temporal feedback.
    pub refined: RetinexPair,
    /// `(R_IE, S_IE)`.
    pub decomposed: RetinexPair,
    /// `I_LP`.
    pub denoised: Tensor<f32>,
}

impl FrameOutput {
    pub fn from_bundle<T: Element>(g: &Graph<T>, b: &IntermediateBundle) -> Self {
        let get = |v: Var| g.value(v).cast::<f32>();
        Self {
            enhanced: get(b.r_rd),
            refined: RetinexPair {
                reflectance: get(b.r_rd),
                illumination: get(b.s_rd),
            },
            decomposed: RetinexPair {
                reflectance: get(b.r_ie),
                illumination: get(b.s_ie),
            },
            denoised: get(b.denoised),
        }
    }
}

/// Inference pass for one frame: denoise, decompose, refine.
pub fn enhance_frame(
    frame: &Tensor<f32>,
    state: &TemporalState,
    nets: &EnhancementNets,
) -> Result<FrameOutput> {
    let mut g = Graph::<f32>::new();
    let bound = nets.bind(&mut g, false);
    let bundle = forward_frame(&mut g, &bound, frame, state, false)?;
    Ok(FrameOutput::from_bundle(&g, &bundle))
}
