//! Per-channel histogram matching on the 8-bit grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::temporal::{bin_of, HISTOGRAM_BINS};
use crate::tensor::Tensor;

/// Which side of a prediction/reference pair is remapped before the
/// full-reference metrics are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HmDirection {
    /// The reference is matched to the prediction's histogram.
    #[default]
    ReferenceToPrediction,
    /// The prediction is matched to the reference's histogram.
    PredictionToReference,
}

impl HmDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ReferenceToPrediction => "ref-to-pred",
            Self::PredictionToReference => "pred-to-ref",
        }
    }
}

impl fmt::Display for HmDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HmDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref-to-pred" => Ok(Self::ReferenceToPrediction),
            "pred-to-ref" => Ok(Self::PredictionToReference),
            other => Err(Error::Config(format!("unknown histogram-matching direction {other:?}"))),
        }
    }
}

pub(crate) fn histogram(channel: &[f32]) -> [u64; HISTOGRAM_BINS] {
    let mut h = [0u64; HISTOGRAM_BINS];
    for &v in channel {
        h[bin_of(v)] += 1;
    }
    h
}

fn cumulative(h: &[u64; HISTOGRAM_BINS]) -> [u64; HISTOGRAM_BINS] {
    let mut c = [0u64; HISTOGRAM_BINS];
    let mut acc = 0;
    for (dst, &n) in c.iter_mut().zip(h) {
        acc += n;
        *dst = acc;
    }
    c
}

/// Level map sending source level `k` to the smallest reference level whose
/// CDF reaches the source CDF at `k`. Compared in exact integer arithmetic.
pub fn matching_lut(src: &[f32], reference: &[f32]) -> [u8; HISTOGRAM_BINS] {
    let cs = cumulative(&histogram(src));
    let cr = cumulative(&histogram(reference));
    let (ns, nr) = (src.len() as u128, reference.len() as u128);
    let mut lut = [0u8; HISTOGRAM_BINS];
    let mut j = 0;
    for k in 0..HISTOGRAM_BINS {
        // source CDF is non-decreasing, so the search resumes where it stopped
        while j + 1 < HISTOGRAM_BINS && (cr[j] as u128) * ns < (cs[k] as u128) * nr {
            j += 1;
        }
        lut[k] = j as u8;
    }
    lut
}

/// Values snapped to the grid `k / 255` used by [`histogram_match`].
pub fn quantize(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| bin_of(v) as f32 / 255.0)
}

/// `src` remapped channel-wise so its histogram follows `reference`. Output
/// values lie on the grid `k / 255`.
pub fn histogram_match(src: &Tensor<f32>, reference: &Tensor<f32>) -> Result<Tensor<f32>> {
    if src.channels() != reference.channels() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", src.shape(), reference.shape())));
    }
    if src.is_empty() || reference.is_empty() {
        return Err(Error::DegenerateInput("empty frame".into()));
    }
    let mut out = src.clone();
    for c in 0..src.channels() {
        let lut = matching_lut(src.channel(c), reference.channel(c));
        for v in out.channel_mut(c) {
            *v = lut[bin_of(*v)] as f32 / 255.0;
        }
    }
    Ok(out)
}
