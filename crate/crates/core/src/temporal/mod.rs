//! Temporal feedback: the previous frame's refined `(R, S)` is warped onto
//! the current frame's grid and fed to the networks.
//!
//! Flow is estimated between the histogram-equalized denoised current frame
//! and the previous enhanced frame, at reduced resolution. The backend is
//! asked for the field that maps current-grid coordinates into the previous
//! frame, so warping is a plain backward bilinear lookup.

mod equalize;
mod flow;
mod lucas_kanade;
mod process;
mod warp;

pub use equalize::{bin_of, histogram_equalize, HISTOGRAM_BINS};
pub use flow::{
    downsample_area, estimate_flow, reduced_size, FlowBackend, FlowField, DEFAULT_FLOW_SCALE,
    FLOW_MAGIC,
};
pub use lucas_kanade::{LucasKanade, LucasKanadeConfig};
pub use process::{rgb24, FlowCache, ProcessBackend, PROCESS_MAGIC};
pub use warp::{sample_bilinear, warp};

use crate::error::{Error, Result};
use crate::media::Clip;
use crate::retinex::RetinexPair;
use crate::tensor::{Shape, Tensor};

/// Warped feedback for one frame. `valid` is false for the zero state.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalState {
    pub reflection: Tensor<f32>,
    pub illumination: Tensor<f32>,
    pub valid: bool,
}

impl TemporalState {
    pub fn zero(height: usize, width: usize) -> Self {
        let shape = Shape::new(3, height, width);
        Self {
            reflection: Tensor::zeros(shape),
            illumination: Tensor::zeros(shape),
            valid: false,
        }
    }

    pub fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        let want = Shape::new(3, height, width);
        if self.reflection.shape() != want || self.illumination.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "feedback is {}/{}, frame needs {want}",
                self.reflection.shape(),
                self.illumination.shape()
            )));
        }
        Ok(())
    }
}

/// Warps both components of `prev_pair` with one field.
pub fn warp_pair(prev_pair: &RetinexPair, flow: &FlowField) -> Result<TemporalState> {
    Ok(TemporalState {
        reflection: warp(&prev_pair.reflectance, flow)?,
        illumination: warp(&prev_pair.illumination, flow)?,
        valid: true,
    })
}

/// Feedback for the current frame, propagating backend errors.
///
/// `prev` holds the previous refined pair and the previous enhanced frame;
/// `None` marks the first frame.
pub fn try_advance_state(
    prev: Option<(&RetinexPair, &Tensor<f32>)>,
    cur_denoised: &Tensor<f32>,
    backend: &mut dyn FlowBackend,
    flow_scale: usize,
) -> Result<TemporalState> {
    let (h, w) = (cur_denoised.height(), cur_denoised.width());
    let Some((pair, prev_out)) = prev else {
        return Ok(TemporalState::zero(h, w));
    };
    let equalized = histogram_equalize(cur_denoised);
    let flow = estimate_flow(prev_out, &equalized, backend, flow_scale)?;
    warp_pair(pair, &flow)
}

/// [`try_advance_state`] that falls back to the zero state on failure, so a
/// clip never aborts because of its flow estimator.
pub fn advance_state(
    prev: Option<(&RetinexPair, &Tensor<f32>)>,
    cur_denoised: &Tensor<f32>,
    backend: &mut dyn FlowBackend,
    flow_scale: usize,
) -> TemporalState {
    try_advance_state(prev, cur_denoised, backend, flow_scale).unwrap_or_else(|e| {
        log::warn!("temporal feedback disabled for this frame: {e}");
        TemporalState::zero(cur_denoised.height(), cur_denoised.width())
    })
}

/// Flow between two input frames after equalization, as stored in a
/// [`FlowCache`]. Unlike the live rule it does not depend on network weights.
pub fn input_flow(
    prev_frame: &Tensor<f32>,
    cur_frame: &Tensor<f32>,
    backend: &mut dyn FlowBackend,
    flow_scale: usize,
) -> Result<FlowField> {
    estimate_flow(
        &histogram_equalize(prev_frame),
        &histogram_equalize(cur_frame),
        backend,
        flow_scale,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    NeedState,
    NeedRecord,
}

/// Sequential feedback for one clip.
///
/// Per frame `t` call [`state_for`](Self::state_for) and then
/// [`record`](Self::record) in strictly increasing `t`, starting at 0.
pub struct TemporalTracker {
    backend: Box<dyn FlowBackend + Send>,
    flow_scale: usize,
    cache: Option<(FlowCache, String)>,
    frozen: bool,
    next: usize,
    phase: Phase,
    prev_pair: Option<RetinexPair>,
    prev_input: Option<Tensor<f32>>,
    cur_input: Option<Tensor<f32>>,
    fallbacks: usize,
}

impl TemporalTracker {
    pub fn new(backend: Box<dyn FlowBackend + Send>, flow_scale: usize) -> Self {
        Self {
            backend,
            flow_scale: flow_scale.max(1),
            cache: None,
            frozen: false,
            next: 0,
            phase: Phase::NeedState,
            prev_pair: None,
            prev_input: None,
            cur_input: None,
            fallbacks: 0,
        }
    }

    /// Reads flows from `cache`, computing and storing [`input_flow`] for
    /// missing entries.
    pub fn with_cache(mut self, cache: FlowCache, clip_id: impl Into<String>) -> Self {
        self.cache = Some((cache, clip_id.into()));
        self
    }

    /// With `frozen` every frame receives the zero state.
    pub fn frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn into_backend(self) -> Box<dyn FlowBackend + Send> {
        self.backend
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn next_index(&self) -> usize {
        self.next
    }

    /// Frames that received the zero state because flow failed.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Forgets the previous frame; the next call must be for `t = 0`.
    pub fn reset(&mut self) {
        self.next = 0;
        self.phase = Phase::NeedState;
        self.prev_pair = None;
        self.prev_input = None;
        self.cur_input = None;
    }

    fn order(&self, t: usize, phase: Phase) -> Result<()> {
        if t != self.next || self.phase != phase {
            let expected = if self.phase == phase { self.next } else { self.next + 1 };
            return Err(Error::OutOfOrder { expected, got: t });
        }
        Ok(())
    }

    /// Feedback for frame `t`. `frame` is the raw input (used for cached
    /// flows), `denoised` is `I_LP` of the same frame.
    pub fn state_for(&mut self, t: usize, frame: &Tensor<f32>, denoised: &Tensor<f32>) -> Result<TemporalState> {
        self.order(t, Phase::NeedState)?;
        self.phase = Phase::NeedRecord;
        let (h, w) = (denoised.height(), denoised.width());
        if self.cache.is_some() {
            self.cur_input = Some(frame.clone());
        }
        if self.frozen {
            return Ok(TemporalState::zero(h, w));
        }
        let Some(pair) = self.prev_pair.as_ref() else {
            return Ok(TemporalState::zero(h, w));
        };
        let result = match &self.cache {
            None => try_advance_state(
                Some((pair, &pair.reflectance)),
                denoised,
                self.backend.as_mut(),
                self.flow_scale,
            ),
            Some((cache, id)) => {
                let prev = self.prev_input.as_ref().expect("previous input kept with cache");
                cached_flow(cache, id, t, prev, frame, self.backend.as_mut(), self.flow_scale)
                    .and_then(|f| warp_pair(pair, &f))
            }
        };
        Ok(result.unwrap_or_else(|e| {
            log::warn!("frame {t}: temporal feedback disabled: {e}");
            self.fallbacks += 1;
            TemporalState::zero(h, w)
        }))
    }

    /// Stores the refined `(R_RD, S_RD)` of frame `t`.
    pub fn record(&mut self, t: usize, refined: &RetinexPair) -> Result<()> {
        self.order(t, Phase::NeedRecord)?;
        self.prev_pair = Some(refined.clone());
        self.prev_input = self.cur_input.take();
        self.next += 1;
        self.phase = Phase::NeedState;
        Ok(())
    }
}

fn cached_flow(
    cache: &FlowCache,
    clip_id: &str,
    t: usize,
    prev: &Tensor<f32>,
    cur: &Tensor<f32>,
    backend: &mut dyn FlowBackend,
    flow_scale: usize,
) -> Result<FlowField> {
    if let Some(f) = cache.get(clip_id, t)? {
        if f.height() == cur.height() && f.width() == cur.width() {
            return Ok(f);
        }
        log::warn!("cached flow for {clip_id} t={t} has the wrong size, recomputing");
    }
    let f = input_flow(prev, cur, backend, flow_scale)?.with_indices(t - 1, t);
    cache.put(clip_id, t, &f)?;
    Ok(f)
}

/// Computes and stores the flow of every transition of `clip`, keeping
/// entries that are already present. Returns the number of transitions.
pub fn fill_flow_cache(
    clip: &Clip,
    cache: &FlowCache,
    backend: &mut dyn FlowBackend,
    flow_scale: usize,
) -> Result<usize> {
    let frames: Vec<&Tensor<f32>> = clip.pixels().collect();
    for t in 1..frames.len() {
        cached_flow(cache, &clip.source_id, t, frames[t - 1], frames[t], backend, flow_scale)?;
    }
    Ok(frames.len().saturating_sub(1))
}
