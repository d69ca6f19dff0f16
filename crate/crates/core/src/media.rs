//! Clip ingestion and persistence: frame directories, externally decoded
//! video, PNG output and weight checkpoints.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::{DynamicImage, ImageBuffer, Rgb};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::retinex::{ArchConfig, EnhancementNets, NetKind};
use crate::tensor::{Shape, Tensor};

/// One RGB frame with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub pixels: Tensor<f32>,
    pub time_index: usize,
}

impl Frame {
    pub fn new(pixels: Tensor<f32>, time_index: usize) -> Self {
        Self { pixels, time_index }
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }
}

/// Frames of equal size with consecutive time indices from 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frames: Vec<Frame>,
    pub fps: f64,
    pub source_id: String,
}

impl Clip {
    /// Validates shapes and renumbers time indices by position.
    pub fn new(pixels: Vec<Tensor<f32>>, fps: f64, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        let first = pixels
            .first()
            .ok_or_else(|| Error::EmptyClip(PathBuf::from(&source_id)))?
            .shape();
        for (t, p) in pixels.iter().enumerate() {
            if p.channels() != 3 {
                return Err(Error::ShapeMismatch(format!("frame {t} has {} channels", p.channels())));
            }
            if p.shape() != first {
                return Err(Error::InconsistentDimensions {
                    frame_a: format!("frame 0 ({first})"),
                    frame_b: format!("frame {t} ({})", p.shape()),
                });
            }
        }
        if first.height < 2 || first.width < 2 {
            return Err(Error::DegenerateInput(format!("frames of {}x{} pixels", first.height, first.width)));
        }
        let frames = pixels
            .into_iter()
            .enumerate()
            .map(|(t, p)| Frame::new(p, t))
            .collect();
        Ok(Self {
            frames,
            fps,
            source_id,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn pixels(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.frames.iter().map(|f| &f.pixels)
    }

    /// Same metadata, new frames.
    pub fn with_frames(&self, pixels: Vec<Tensor<f32>>) -> Result<Self> {
        Self::new(pixels, self.fps, self.source_id.clone())
    }
}

/// External decoder invocation. `{input}` in any argument is replaced by the
/// video path; the process must write `width × height` RGB24 frames to
/// stdout.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub command: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
}

impl DecoderConfig {
    pub fn from_template(template: &str, width: usize, height: usize, fps: f64) -> Result<Self> {
        let command: Vec<String> = template.split_whitespace().map(str::to_owned).collect();
        if command.is_empty() {
            return Err(Error::Config("empty decoder command".into()));
        }
        Ok(Self {
            command,
            width,
            height,
            fps,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClipKind {
    FrameDir,
    Video(DecoderConfig),
}

pub const DEFAULT_FPS: f64 = 30.0;

pub fn load_clip(path: &Path, kind: &ClipKind) -> Result<Clip> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    match kind {
        ClipKind::FrameDir => load_frame_dir(path),
        ClipKind::Video(dec) => load_video(path, dec),
    }
}

/// `*.png` files of a directory in lexicographic file-name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn source_id_of(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into())
}

/// Decodes one image file, dividing by the maximum code value.
pub fn read_frame(path: &Path) -> Result<Tensor<f32>> {
    let name = path.display().to_string();
    let img = image::open(path).map_err(|e| Error::UnreadableFrame(format!("{name}: {e}")))?;
    Ok(image_to_tensor(&img))
}

pub fn image_to_tensor(img: &DynamicImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let shape = Shape::new(3, h, w);
    if img.color().bytes_per_pixel() / img.color().channel_count() >= 2 {
        let rgb = img.to_rgb16();
        let raw = rgb.as_raw();
        Tensor::from_fn(shape, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 65535.0)
    } else {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        Tensor::from_fn(shape, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
    }
}

fn load_frame_dir(dir: &Path) -> Result<Clip> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyClip(dir.to_path_buf()));
    }
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        let t = read_frame(f)?;
        if let Some(first) = frames.first().map(Tensor::shape) {
            if t.shape() != first {
                return Err(Error::InconsistentDimensions {
                    frame_a: files[0].display().to_string(),
                    frame_b: f.display().to_string(),
                });
            }
        }
        frames.push(t);
    }
    Clip::new(frames, DEFAULT_FPS, source_id_of(dir))
}

/// Splits raw RGB24 bytes into frames.
pub fn frames_from_rgb24(bytes: &[u8], width: usize, height: usize) -> Result<Vec<Tensor<f32>>> {
    let size = width * height * 3;
    if size == 0 {
        return Err(Error::Decoder("zero frame size".into()));
    }
    if !bytes.len().is_multiple_of(size) {
        return Err(Error::Decoder(format!(
            "{} bytes is not a whole number of {width}x{height} frames",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(size)
        .map(|raw| {
            Tensor::from_fn(Shape::new(3, height, width), |c, y, x| {
                raw[(y * width + x) * 3 + c] as f32 / 255.0
            })
        })
        .collect())
}

fn load_video(path: &Path, dec: &DecoderConfig) -> Result<Clip> {
    let input = path.display().to_string();
    let args: Vec<String> = dec.command.iter().map(|a| a.replace("{input}", &input)).collect();
    let mut child = Command::new(&args[0])
        .args(&args[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Decoder(format!("{}: {e}", args[0])))?;
    let mut bytes = Vec::new();
    child
        .stdout
        .take()
        .expect("piped stdout")
        .read_to_end(&mut bytes)?;
    let out = child.wait_with_output()?;
    if !out.status.success() {
        return Err(Error::Decoder(format!(
            "{} exited with {}: {}",
            args[0],
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let frames = frames_from_rgb24(&bytes, dec.width, dec.height)?;
    if frames.is_empty() {
        return Err(Error::EmptyClip(path.to_path_buf()));
    }
    Clip::new(frames, dec.fps, source_id_of(path))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_code(self) -> f32 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

impl TryFrom<u32> for BitDepth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::Config(format!("bit depth must be 8 or 16, got {other}"))),
        }
    }
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

pub fn write_frame(pixels: &Tensor<f32>, path: &Path, depth: BitDepth) -> Result<()> {
    let (h, w) = (pixels.height() as u32, pixels.width() as u32);
    let q = |c: usize, i: usize| (pixels.channel(c)[i].clamp(0.0, 1.0) * depth.max_code()).round();
    let n = pixels.shape().plane();
    let result = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = (0..n).flat_map(|i| [0, 1, 2].map(|c| q(c, i) as u8)).collect();
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw)
                .expect("buffer length")
                .save(path)
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = (0..n).flat_map(|i| [0, 1, 2].map(|c| q(c, i) as u16)).collect();
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw)
                .expect("buffer length")
                .save(path)
        }
    };
    result.map_err(|_| Error::UnwritablePath(path.to_path_buf()))
}

/// Writes `frame_000000.png`, `frame_000001.png`, … into `dir`.
pub fn save_clip(clip: &Clip, dir: &Path, depth: BitDepth) -> Result<Vec<PathBuf>> {
    if clip.is_empty() {
        return Err(Error::EmptyClip(dir.to_path_buf()));
    }
    std::fs::create_dir_all(dir).map_err(|_| Error::UnwritablePath(dir.to_path_buf()))?;
    clip.frames()
        .iter()
        .map(|f| {
            let p = dir.join(frame_file_name(f.time_index));
            write_frame(&f.pixels, &p, depth)?;
            Ok(p)
        })
        .collect()
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ZTIG";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hash of everything that determines parameter shapes.
pub fn arch_hash(arch: &ArchConfig) -> String {
    let canon = format!(
        "v{CHECKPOINT_VERSION};ld={}x{};ie={}x{};rd={}x{};k=3",
        arch.ld_layers, arch.ld_channels, arch.ie_layers, arch.ie_channels, arch.rd_layers, arch.rd_channels
    );
    hex::encode(&Sha256::digest(canon.as_bytes())[..8])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub nets: EnhancementNets,
    pub epoch: u32,
    pub config_hash: String,
}

/// Header fields of a checkpoint file, readable without knowing its shapes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config_hash: String,
    pub epoch: u32,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("non-utf8 name".into()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn read_header(c: &mut Cursor<'_>) -> Result<CheckpointHeader> {
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let config_hash = c.string()?;
    let epoch = c.u32()?;
    Ok(CheckpointHeader {
        version,
        config_hash,
        epoch,
    })
}

impl Checkpoint {
    pub fn new(nets: EnhancementNets, arch: &ArchConfig, epoch: u32) -> Self {
        Self {
            nets,
            epoch,
            config_hash: arch_hash(arch),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, &self.config_hash);
        put_u32(&mut out, self.epoch);
        let blobs: Vec<(String, &Tensor<f32>)> = NetKind::ALL
            .iter()
            .flat_map(|&k| {
                self.nets
                    .get(k)
                    .parameters()
                    .into_iter()
                    .map(move |(n, t)| (format!("{}.{n}", k.name()), t))
            })
            .collect();
        put_u32(&mut out, blobs.len() as u32);
        for (name, t) in blobs {
            put_str(&mut out, &name);
            let s = t.shape();
            for d in [s.channels, s.height, s.width] {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn header_from_bytes(bytes: &[u8]) -> Result<CheckpointHeader> {
        read_header(&mut Cursor { buf: bytes, pos: 0 })
    }

    /// Decodes a checkpoint for `arch`, refusing a different configuration.
    pub fn from_bytes(bytes: &[u8], arch: &ArchConfig) -> Result<Self> {
        let mut c = Cursor { buf: bytes, pos: 0 };
        let header = read_header(&mut c)?;
        let expected = arch_hash(arch);
        if header.config_hash != expected {
            return Err(Error::ConfigMismatch {
                expected,
                found: header.config_hash,
            });
        }
        let mut nets = EnhancementNets::new(arch, 0);
        let count = c.u32()? as usize;
        let mut slots: Vec<(String, &mut Tensor<f32>)> = Vec::new();
        let names: Vec<String> = NetKind::ALL
            .iter()
            .flat_map(|&k| {
                nets.get(k)
                    .parameters()
                    .into_iter()
                    .map(move |(n, _)| format!("{}.{n}", k.name()))
            })
            .collect();
        for (name, t) in names.into_iter().zip(nets.parameters_mut()) {
            slots.push((name, t));
        }
        if count != slots.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{count} parameter blobs, expected {}",
                slots.len()
            )));
        }
        for (want, slot) in slots.iter_mut() {
            let name = c.string()?;
            if &name != want {
                return Err(Error::CorruptCheckpoint(format!("blob `{name}` where `{want}` was expected")));
            }
            let dims = [c.u32()?, c.u32()?, c.u32()?].map(|d| d as usize);
            let shape = Shape::new(dims[0], dims[1], dims[2]);
            if shape != slot.shape() {
                return Err(Error::CorruptCheckpoint(format!("blob `{name}` has shape {shape}, expected {}", slot.shape())));
            }
            let raw = c.take(shape.len() * 4)?;
            for (dst, b) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            }
        }
        if c.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        Ok(Self {
            nets,
            epoch: header.epoch,
            config_hash: header.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|_| Error::UnwritablePath(path.to_path_buf()))
    }

    pub fn load(path: &Path, arch: &ArchConfig) -> Result<Self> {
        Self::from_bytes(&read_existing(path)?, arch)
    }

    pub fn load_header(path: &Path) -> Result<CheckpointHeader> {
        Self::header_from_bytes(&read_existing(path)?)
    }
}

fn read_existing(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    Ok(std::fs::read(path)?)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path, arch: &ArchConfig) -> Result<Checkpoint> {
    Checkpoint::load(path, arch)
}

/// Lowercase hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Hash of a directory's frames (or of a single file), in load order.
pub fn sha256_input(path: &Path) -> Result<String> {
    if path.is_file() {
        return sha256_file(path);
    }
    let mut h = Sha256::new();
    for f in list_frames(path)? {
        h.update(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        h.update(sha256_file(&f)?);
    }
    Ok(hex::encode(h.finalize()))
}
