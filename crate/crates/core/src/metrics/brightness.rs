//! Mean absolute brightness difference between consecutive frames.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::fidelity::luma_plane;

pub const MABD_WINDOW: usize = 15;

pub fn mean_luminance(frame: &Tensor<f32>) -> f64 {
    let y = luma_plane(frame);
    y.iter().sum::<f64>() / y.len() as f64
}

/// `|Y(t+1) − Y(t)|` of consecutive mean luminances.
pub fn mabd_series(means: &[f64]) -> Vec<f64> {
    means.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
}

/// Centered moving average; near the ends the window is truncated to the
/// available samples. An even `window` extends one sample further right.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let (left, right) = ((window - 1) / 2, window / 2);
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mabd {
    pub series: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl Mabd {
    pub fn mean_smoothed(&self) -> f64 {
        self.smoothed.iter().sum::<f64>() / self.smoothed.len() as f64
    }
}

pub fn mabd<'a>(frames: impl IntoIterator<Item = &'a Tensor<f32>>, window: usize) -> Result<Mabd> {
    let means: Vec<f64> = frames.into_iter().map(mean_luminance).collect();
    if means.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "brightness differences need at least two frames, got {}",
            means.len()
        )));
    }
    let series = mabd_series(&means);
    let smoothed = moving_average(&series, window);
    Ok(Mabd { series, smoothed })
}
