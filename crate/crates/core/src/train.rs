//! Zero-shot per-clip training and sequential inference.
//!
//! Every optimizer step sees one frame. Frames are visited in time order and
//! the temporal state restarts from zero at each epoch. Feedback tensors are
//! constants of the step that consumes them. Within a step:
//!
//! * the denoiser is trained by its residual and consistency terms only: the
//!   later stages see `I_LP` detached;
//! * the illumination estimator receives all brightness, smoothness and
//!   reflectance terms through `(R_IE, S_IE)`;
//! * the reflection denoiser sees `(R_IE, S_IE)` as a fixed input.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::losses::{compute_coefficients, total_loss, LossMode, LossReport, LossWeights, TERM_NAMES};
use crate::media::{arch_hash, Checkpoint, Clip};
use crate::nn::{Adam, AdamConfig};
use crate::retinex::{forward_ld, forward_rest, ArchConfig, EnhancementNets, FrameOutput};
use crate::temporal::{FlowBackend, FlowCache, LucasKanade, TemporalTracker, DEFAULT_FLOW_SCALE};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Epochs with temporal feedback.
    pub epochs: usize,
    /// Epochs before `epochs` with the feedback forced to zero.
    pub pretrain_epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub mode: LossMode,
    pub seed: u64,
    pub flow_scale: usize,
    /// `None` selects the mode default (0.5 standard, 0.3 underwater).
    pub target_brightness: Option<f64>,
    pub loss_weights: LossWeights,
    pub arch: ArchConfig,
    /// Train on a fixed seeded `height × width` window of every frame.
    pub crop: Option<(usize, usize)>,
    /// Zero feedback everywhere, training and inference.
    pub freeze_temporal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            weight_decay: adam.weight_decay,
            epochs: 5,
            pretrain_epochs: 5,
            max_steps: 0,
            mode: LossMode::Standard,
            seed: 0,
            flow_scale: DEFAULT_FLOW_SCALE,
            target_brightness: None,
            loss_weights: LossWeights::default(),
            arch: ArchConfig::default(),
            crop: None,
            freeze_temporal: false,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "weight_decay",
    "epochs",
    "pretrain_epochs",
    "max_steps",
    "mode",
    "seed",
    "flow_scale",
    "target_brightness",
    "loss_weights",
    "ld_layers",
    "ld_channels",
    "ie_layers",
    "ie_channels",
    "rd_layers",
    "rd_channels",
    "crop",
    "freeze_temporal",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

impl TrainConfig {
    pub fn target_brightness(&self) -> f64 {
        self.target_brightness
            .unwrap_or_else(|| self.mode.default_target_brightness())
    }

    pub fn total_epochs(&self) -> usize {
        self.pretrain_epochs + self.epochs
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Hash stored in checkpoints; covers the parameter shapes only.
    pub fn config_hash(&self) -> String {
        arch_hash(&self.arch)
    }

    /// Sets one field from its textual form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lr" => self.lr = parse(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "mode" => self.mode = v.parse().map_err(Error::Config)?,
            "seed" => self.seed = parse(key, v)?,
            "flow_scale" => self.flow_scale = parse(key, v)?,
            "target_brightness" => {
                self.target_brightness = match v {
                    "" | "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "loss_weights" => {
                let w: Vec<f64> = v
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_>>()?;
                let w: [f64; 11] = w.try_into().map_err(|w: Vec<f64>| {
                    Error::Config(format!("`loss_weights` needs 11 values ({}), got {}", TERM_NAMES.join(","), w.len()))
                })?;
                self.loss_weights = LossWeights(w);
            }
            "ld_layers" => self.arch.ld_layers = parse(key, v)?,
            "ld_channels" => self.arch.ld_channels = parse(key, v)?,
            "ie_layers" => self.arch.ie_layers = parse(key, v)?,
            "ie_channels" => self.arch.ie_channels = parse(key, v)?,
            "rd_layers" => self.arch.rd_layers = parse(key, v)?,
            "rd_channels" => self.arch.rd_channels = parse(key, v)?,
            "crop" => {
                self.crop = match v {
                    "" | "none" => None,
                    _ => {
                        let (h, w) = v
                            .split_once('x')
                            .ok_or_else(|| Error::Config(format!("`crop`: expected HxW, got `{v}`")))?;
                        Some((parse(key, h)?, parse(key, w)?))
                    }
                }
            }
            "freeze_temporal" => self.freeze_temporal = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
            ("target_brightness", self.target_brightness()),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        for (k, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("`{k}` must lie in [0, 1), got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("`weight_decay` must be non-negative".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("`epochs` must be at least 1".into()));
        }
        if self.flow_scale < 1 {
            return Err(Error::Config("`flow_scale` must be at least 1".into()));
        }
        if self.loss_weights.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        let a = &self.arch;
        if [a.ld_layers, a.ld_channels, a.ie_layers, a.ie_channels, a.rd_layers, a.rd_channels].contains(&0) {
            return Err(Error::Config("layer and channel counts must be positive".into()));
        }
        if let Some((h, w)) = self.crop {
            if h < 2 || w < 2 {
                return Err(Error::Config(format!("crop {h}x{w} is smaller than 2x2")));
            }
        }
        Ok(())
    }

    /// `key = value` lines that [`from_text`](Self::from_text) reads back.
    pub fn to_text(&self) -> String {
        let w: Vec<String> = self.loss_weights.0.iter().map(f64::to_string).collect();
        let crop = self.crop.map_or("none".to_string(), |(h, w)| format!("{h}x{w}"));
        let tb = self.target_brightness.map_or("auto".to_string(), |v| v.to_string());
        let a = &self.arch;
        let values = [
            self.lr.to_string(),
            self.adam_beta1.to_string(),
            self.adam_beta2.to_string(),
            self.adam_eps.to_string(),
            self.weight_decay.to_string(),
            self.epochs.to_string(),
            self.pretrain_epochs.to_string(),
            self.max_steps.to_string(),
            self.mode.as_str().to_string(),
            self.seed.to_string(),
            self.flow_scale.to_string(),
            tb,
            w.join(","),
            a.ld_layers.to_string(),
            a.ld_channels.to_string(),
            a.ie_layers.to_string(),
            a.ie_channels.to_string(),
            a.rd_layers.to_string(),
            a.rd_channels.to_string(),
            crop,
            self.freeze_temporal.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub feedback: bool,
    pub steps: usize,
    pub mean_total: f64,
}

impl fmt::Display for EpochSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} ({}): {} steps, mean loss {:.6}",
            self.epoch,
            if self.feedback { "feedback" } else { "zero feedback" },
            self.steps,
            self.mean_total
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub history: Vec<LossReport>,
    pub epochs: Vec<EpochSummary>,
    pub checkpoint: Checkpoint,
    /// Sequential inference pass with the final weights.
    pub outputs: Vec<FrameOutput>,
}

impl TrainRun {
    pub fn enhanced(&self) -> Vec<Tensor<f32>> {
        self.outputs.iter().map(|o| o.enhanced.clone()).collect()
    }
}

/// Everything besides the clip and configuration a run may need.
pub struct TrainOptions<'a> {
    pub init: Option<&'a Checkpoint>,
    pub backend: Box<dyn FlowBackend + Send>,
    pub flow_cache: Option<FlowCache>,
    /// Called after every optimizer step.
    pub on_step: Option<&'a mut dyn FnMut(usize, &LossReport)>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            init: None,
            backend: Box::new(LucasKanade::default()),
            flow_cache: None,
            on_step: None,
        }
    }
}

fn crop_window(clip: &Clip, cfg: &TrainConfig) -> Option<(usize, usize, usize, usize)> {
    let (ch, cw) = cfg.crop?;
    let (h, w) = (clip.height(), clip.width());
    let (ch, cw) = (ch.min(h), cw.min(w));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00c0_ffee);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    Some((top, left, ch, cw))
}

fn check_init(init: &Checkpoint, cfg: &TrainConfig) -> Result<()> {
    let expected = cfg.config_hash();
    if init.config_hash != expected {
        return Err(Error::ConfigMismatch {
            expected,
            found: init.config_hash.clone(),
        });
    }
    Ok(())
}

fn tracker_for(clip: &Clip, cfg: &TrainConfig, backend: Box<dyn FlowBackend + Send>, cache: Option<FlowCache>, cropped: bool) -> TemporalTracker {
    let mut tr = TemporalTracker::new(backend, cfg.flow_scale).frozen(cfg.freeze_temporal);
    // cached flows are full-resolution, so they are not used on crops
    if let (Some(cache), false) = (cache, cropped) {
        tr = tr.with_cache(cache, clip.source_id.clone());
    }
    tr
}

/// One optimizer step on `frame`, returning the loss report and the refined
/// pair for the next frame's feedback.
fn train_step(
    nets: &mut EnhancementNets,
    adam: &mut Adam,
    tracker: &mut TemporalTracker,
    t: usize,
    frame: &Tensor<f32>,
    cfg: &TrainConfig,
    step: usize,
) -> Result<(LossReport, FrameOutput)> {
    let mut g = Graph::<f32>::new();
    let bound = nets.bind(&mut g, true);
    let input = g.constant(frame.clone());
    let ld = forward_ld(&mut g, &bound, input, true);
    let denoised = g.value(ld.denoised).clone();
    let state = tracker.state_for(t, frame, &denoised)?;
    let bundle = forward_rest(&mut g, &bound, ld, &state, true)?;
    let coeffs = compute_coefficients(&denoised, cfg.mode, cfg.target_brightness());
    let vars = total_loss(&mut g, &bundle, &coeffs, &cfg.loss_weights);
    let report = vars.report(&g, &cfg.loss_weights);
    if !report.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            report: report.to_string(),
        });
    }
    let out = FrameOutput::from_bundle(&g, &bundle);
    let mut grads = g.backward(vars.total);
    let grads: Vec<Option<Tensor<f32>>> = bound.vars().into_iter().map(|v| grads.take(v)).collect();
    adam.step(&mut nets.parameters_mut(), &grads);
    if !nets.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            report: format!("parameters became non-finite after {report}"),
        });
    }
    tracker.record(t, &out.refined)?;
    Ok((report, out))
}

pub fn train(clip: &Clip, cfg: &TrainConfig, init: Option<&Checkpoint>) -> Result<TrainRun> {
    train_with(
        clip,
        cfg,
        TrainOptions {
            init,
            ..TrainOptions::default()
        },
    )
}

pub fn train_with(clip: &Clip, cfg: &TrainConfig, mut opts: TrainOptions<'_>) -> Result<TrainRun> {
    cfg.validate()?;
    if clip.is_empty() {
        return Err(Error::EmptyClip(clip.source_id.clone().into()));
    }
    let mut nets = match opts.init {
        Some(init) => {
            check_init(init, cfg)?;
            init.nets.clone()
        }
        None => EnhancementNets::new(&cfg.arch, cfg.seed),
    };
    let window = crop_window(clip, cfg);
    let frames: Vec<Tensor<f32>> = clip
        .pixels()
        .map(|p| match window {
            Some((top, left, h, w)) => p.window(top, left, h, w),
            None => p.clone(),
        })
        .collect();
    let backend = std::mem::replace(&mut opts.backend, Box::new(LucasKanade::default()));
    let mut tracker = tracker_for(clip, cfg, backend, opts.flow_cache.clone(), window.is_some());
    let mut adam = Adam::new(cfg.adam());
    let mut history = Vec::new();
    let mut epochs = Vec::new();
    let limit = if cfg.max_steps == 0 { usize::MAX } else { cfg.max_steps };
    'epochs: for epoch in 0..cfg.total_epochs() {
        let feedback = epoch >= cfg.pretrain_epochs && !cfg.freeze_temporal;
        tracker.reset();
        tracker.set_frozen(!feedback);
        let start = history.len();
        for (t, frame) in frames.iter().enumerate() {
            if history.len() >= limit {
                break;
            }
            let step = history.len();
            let (report, _) = train_step(&mut nets, &mut adam, &mut tracker, t, frame, cfg, step)?;
            log::debug!("step {step} epoch {epoch} frame {t}: {report}");
            if let Some(cb) = opts.on_step.as_mut() {
                cb(step, &report);
            }
            history.push(report);
        }
        let steps = history.len() - start;
        if steps > 0 {
            let summary = EpochSummary {
                epoch,
                feedback,
                steps,
                mean_total: history[start..].iter().map(|r| r.total).sum::<f64>() / steps as f64,
            };
            log::info!("{summary}");
            epochs.push(summary);
        }
        if history.len() >= limit {
            break 'epochs;
        }
    }
    let checkpoint = Checkpoint::new(nets, &cfg.arch, epochs.len() as u32);
    let backend = tracker.into_backend();
    let outputs = enhance_sequence(clip, &checkpoint.nets, cfg, backend, opts.flow_cache, cfg.freeze_temporal)?;
    Ok(TrainRun {
        history,
        epochs,
        checkpoint,
        outputs,
    })
}

/// Inference over the whole clip in time order with the given backend.
/// With `zero_feedback` every frame receives the zero state.
pub fn enhance_sequence(
    clip: &Clip,
    nets: &EnhancementNets,
    cfg: &TrainConfig,
    backend: Box<dyn FlowBackend + Send>,
    flow_cache: Option<FlowCache>,
    zero_feedback: bool,
) -> Result<Vec<FrameOutput>> {
    let mut tracker = tracker_for(clip, cfg, backend, flow_cache, false).frozen(zero_feedback);
    let mut outputs = Vec::with_capacity(clip.len());
    for (t, frame) in clip.pixels().enumerate() {
        let mut g = Graph::<f32>::new();
        let bound = nets.bind(&mut g, false);
        let input = g.constant(frame.clone());
        let ld = forward_ld(&mut g, &bound, input, false);
        let denoised = g.value(ld.denoised).clone();
        let state = tracker.state_for(t, frame, &denoised)?;
        let bundle = forward_rest(&mut g, &bound, ld, &state, false)?;
        let out = FrameOutput::from_bundle(&g, &bundle);
        tracker.record(t, &out.refined)?;
        outputs.push(out);
    }
    Ok(outputs)
}

/// Enhanced clip (`R_RD` of every frame) from checkpointed weights.
pub fn enhance_clip(clip: &Clip, ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<Clip> {
    enhance_clip_with(clip, ckpt, cfg, Box::new(LucasKanade::default()), None)
}

pub fn enhance_clip_with(
    clip: &Clip,
    ckpt: &Checkpoint,
    cfg: &TrainConfig,
    backend: Box<dyn FlowBackend + Send>,
    flow_cache: Option<FlowCache>,
) -> Result<Clip> {
    check_init(ckpt, cfg)?;
    let outs = enhance_sequence(clip, &ckpt.nets, cfg, backend, flow_cache, cfg.freeze_temporal)?;
    clip.with_frames(outs.into_iter().map(|o| o.enhanced).collect())
}
