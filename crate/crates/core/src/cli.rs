//! Command-line front end. [`run`] parses arguments, dispatches, and maps
//! failures to exit codes: 0 success, 1 runtime error, 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::losses::LossMode;
use crate::media::{load_clip, save_clip, sha256_file, sha256_input, BitDepth, Checkpoint, ClipKind, DecoderConfig, DEFAULT_FPS};
use crate::metrics::{evaluate, EvaluateOptions, HmDirection, LpipsPlugin, MABD_WINDOW};
use crate::temporal::{fill_flow_cache, FlowBackend, FlowCache, LucasKanade, ProcessBackend};
use crate::train::{enhance_clip_with, train_with, TrainConfig, TrainOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "retinex-video", version, about = "Zero-shot low-light and underwater video enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the enhancement networks on one clip and write a checkpoint.
    Train(TrainArgs),
    /// Enhance a clip with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Compute quality and flicker metrics of an enhanced clip.
    Evaluate(EvaluateArgs),
    /// Precompute optical flow between consecutive input frames.
    FlowCache(FlowCacheArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Frame directory, or a video file when `--decoder` is given.
    #[arg(long)]
    pub input: PathBuf,
    /// Decoder command writing RGB24 frames to stdout; `{input}` is replaced
    /// by the input path.
    #[arg(long, requires_all = ["width", "height"])]
    pub decoder: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_FPS)]
    pub fps: f64,
}

impl InputArgs {
    fn kind(&self) -> Result<ClipKind> {
        match &self.decoder {
            None => Ok(ClipKind::FrameDir),
            Some(template) => Ok(ClipKind::Video(DecoderConfig::from_template(
                template,
                self.width.unwrap_or_default(),
                self.height.unwrap_or_default(),
                self.fps,
            )?)),
        }
    }
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides applied after the file, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Underwater loss mode.
    #[arg(long)]
    pub underwater: bool,
    /// Force the temporal feedback to zero.
    #[arg(long)]
    pub freeze_temporal: bool,
    /// External flow backend command; the built-in estimator is used
    /// otherwise.
    #[arg(long)]
    pub flow_backend: Option<String>,
    /// Directory of precomputed input flows.
    #[arg(long)]
    pub flow_cache: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            cfg.set(k, v)?;
        }
        if self.underwater {
            cfg.mode = LossMode::Underwater;
        }
        if self.freeze_temporal {
            cfg.freeze_temporal = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn backend(cmd: Option<&str>) -> Result<Box<dyn FlowBackend + Send>> {
    Ok(match cmd {
        Some(c) => Box::new(ProcessBackend::from_command_line(c)?),
        None => Box::new(LucasKanade::default()),
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Train on a fixed `HxW` window of every frame.
    #[arg(long, value_name = "HxW")]
    pub crop: Option<String>,
    /// Also write the final enhanced frames here.
    #[arg(long)]
    pub enhanced_out: Option<PathBuf>,
    /// Per-step loss terms as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output frame directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Output PNG bit depth, 8 or 16.
    #[arg(long, default_value_t = 8)]
    pub bit_depth: u32,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Enhanced frame directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference frame directory.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Add UIQM and UCIQE.
    #[arg(long)]
    pub underwater: bool,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "ref-to-pred")]
    pub hm_direction: HmDirection,
    #[arg(long, default_value_t = MABD_WINDOW)]
    pub mabd_window: usize,
    /// Perceptual metric command; `{a}` and `{b}` become PNG paths.
    #[arg(long)]
    pub lpips: Option<String>,
}

#[derive(Debug, Args)]
pub struct FlowCacheArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Cache directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub flow_backend: Option<String>,
    #[arg(long, default_value_t = crate::temporal::DEFAULT_FLOW_SCALE)]
    pub flow_scale: usize,
}

/// `key = value` record of one invocation: everything that determines the
/// outputs, so equal manifests imply equal outputs on one platform.
pub struct Manifest {
    text: String,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        let mut m = Self { text: String::new() };
        m.push("subcommand", subcommand);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} = {value}");
    }

    pub fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        let hash = sha256_input(path)?;
        self.push(&format!("{key}.path"), path.display());
        self.push(&format!("{key}.sha256"), hash);
        Ok(())
    }

    pub fn config(&mut self, cfg: &TrainConfig) {
        self.push("seed", cfg.seed);
        for line in cfg.to_text().lines() {
            let _ = writeln!(self.text, "config.{line}");
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).map_err(|_| Error::UnwritablePath(path.to_path_buf()))
    }
}

/// Manifest path of a checkpoint file.
pub fn manifest_path_for_file(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run-manifest");
    PathBuf::from(s)
}

pub const MANIFEST_FILE: &str = "run-manifest";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|_| Error::UnwritablePath(dir.to_path_buf()))
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(c) = &a.crop {
        cfg.set("crop", c)?;
    }
    let clip = load_clip(&a.input.input, &a.input.kind()?)?;
    log::info!("loaded {} frames of {}x{} from {}", clip.len(), clip.width(), clip.height(), a.input.input.display());
    let init = a.init.as_deref().map(|p| Checkpoint::load(p, &cfg.arch)).transpose()?;
    let backend = backend(a.config.flow_backend.as_deref())?;
    let mut manifest = Manifest::new("train");
    manifest.config(&cfg);
    manifest.push("flow_backend", backend.name());
    manifest.input("input", &a.input.input)?;
    if let Some(p) = &a.init {
        manifest.push("init.path", p.display());
        manifest.push("init.sha256", sha256_file(p)?);
    }

    let mut rows = String::from("step,");
    rows.push_str(&crate::losses::TERM_NAMES.join(","));
    rows.push_str(",total\n");
    let mut on_step = |step: usize, r: &crate::losses::LossReport| {
        if step.is_multiple_of(50) {
            log::info!("step {step}: {r}");
        }
        let vals: Vec<String> = r.terms().iter().map(|(_, v)| v.to_string()).collect();
        let _ = writeln!(rows, "{step},{},{}", vals.join(","), r.total);
    };
    let run = train_with(
        &clip,
        &cfg,
        TrainOptions {
            init: init.as_ref(),
            backend,
            flow_cache: a.config.flow_cache.clone().map(FlowCache::new),
            on_step: Some(&mut on_step),
        },
    )?;
    for e in &run.epochs {
        log::info!("{e}");
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    run.checkpoint.save(&a.out)?;
    if let Some(dir) = &a.enhanced_out {
        save_clip(&clip.with_frames(run.enhanced())?, dir, BitDepth::Eight)?;
    }
    if let Some(p) = &a.history {
        fs::write(p, &rows).map_err(|_| Error::UnwritablePath(p.clone()))?;
    }
    manifest.write(&manifest_path_for_file(&a.out))?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn run_enhance(a: &EnhanceArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let depth = BitDepth::try_from(a.bit_depth)?;
    let clip = load_clip(&a.input.input, &a.input.kind()?)?;
    let ckpt = Checkpoint::load(&a.ckpt, &cfg.arch)?;
    let backend = backend(a.config.flow_backend.as_deref())?;
    let mut manifest = Manifest::new("enhance");
    manifest.config(&cfg);
    manifest.push("flow_backend", backend.name());
    manifest.input("input", &a.input.input)?;
    manifest.push("ckpt.path", a.ckpt.display());
    manifest.push("ckpt.sha256", sha256_file(&a.ckpt)?);
    manifest.push("bit_depth", a.bit_depth);
    let cache = a.config.flow_cache.clone().map(FlowCache::new);
    let out = enhance_clip_with(&clip, &ckpt, &cfg, backend, cache)?;
    let written = save_clip(&out, &a.out, depth)?;
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    log::info!("wrote {} frames to {}", written.len(), a.out.display());
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs) -> Result<()> {
    let pred = load_clip(&a.pred, &ClipKind::FrameDir)?;
    let reference = a.reference.as_deref().map(|p| load_clip(p, &ClipKind::FrameDir)).transpose()?;
    if a.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let opts = EvaluateOptions {
        underwater: a.underwater,
        hm_direction: a.hm_direction,
        mabd_window: a.mabd_window,
        jobs: a.jobs,
        lpips: a.lpips.as_deref().map(LpipsPlugin::from_template).transpose()?,
    };
    let mut manifest = Manifest::new("evaluate");
    manifest.input("pred", &a.pred)?;
    if let Some(r) = &a.reference {
        manifest.input("ref", r)?;
    }
    manifest.push("underwater", a.underwater);
    manifest.push("hm_direction", a.hm_direction);
    manifest.push("mabd_window", a.mabd_window);
    let report = evaluate(&pred, reference.as_ref(), &opts)?;
    report.write(&a.out)?;
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    eprint!("{}", report.summary());
    Ok(())
}

fn run_flow_cache(a: &FlowCacheArgs) -> Result<()> {
    if a.flow_scale == 0 {
        return Err(Error::Config("--flow-scale must be at least 1".into()));
    }
    let clip = load_clip(&a.input.input, &a.input.kind()?)?;
    let mut backend = backend(a.flow_backend.as_deref())?;
    let mut manifest = Manifest::new("flow-cache");
    manifest.push("flow_backend", backend.name());
    manifest.push("flow_scale", a.flow_scale);
    manifest.input("input", &a.input.input)?;
    let cache = FlowCache::new(&a.out);
    ensure_dir(&a.out)?;
    let n = fill_flow_cache(&clip, &cache, backend.as_mut(), a.flow_scale)?;
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    log::info!("cached {n} flows in {}", a.out.display());
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Enhance(a) => run_enhance(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::FlowCache(a) => run_flow_cache(a),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
