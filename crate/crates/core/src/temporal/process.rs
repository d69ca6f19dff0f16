//! External flow estimators and the on-disk flow cache.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::flow::{FlowBackend, FlowField};

pub const PROCESS_MAGIC: &[u8; 4] = b"ZTFP";

/// Interleaved RGB24 bytes of a `3×H×W` frame.
pub fn rgb24(frame: &Tensor<f32>) -> Vec<u8> {
    let plane = frame.shape().plane();
    let mut out = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            let v = frame.channel(c)[i];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Runs an external program once per frame pair.
///
/// The child receives a 16-byte header (`ZTFP`, then height, width and
/// channel count as little-endian `u32`) followed by the reference and the
/// target frame as RGB24, and must print one `ZTFL` record on stdout.
#[derive(Clone, Debug)]
pub struct ProcessBackend {
    program: String,
    args: Vec<String>,
}

impl ProcessBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Splits a whitespace-separated command line.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty flow backend command".into()))?;
        Ok(Self::new(program, parts.collect()))
    }
}

impl FlowBackend for ProcessBackend {
    fn name(&self) -> &str {
        &self.program
    }

    fn estimate(&mut self, reference: &Tensor<f32>, target: &Tensor<f32>) -> Result<FlowField> {
        let fail = |what: String| Error::BackendFailure(format!("{}: {what}", self.program));
        let (h, w) = (reference.height(), reference.width());
        let mut payload = Vec::with_capacity(16 + 6 * h * w);
        payload.extend_from_slice(PROCESS_MAGIC);
        for v in [h as u32, w as u32, 3] {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        payload.extend(rgb24(reference));
        payload.extend(rgb24(target));

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("spawn: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&payload));
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        // a child that exits without reading its input is reported below
        let _ = writer.join();
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(fail(format!("{} {}", output.status, stderr.trim())));
        }
        let flow = FlowField::read_from(&output.stdout[..]).map_err(|e| fail(e.to_string()))?;
        if flow.height() != h || flow.width() != w {
            return Err(fail(format!("returned {}x{} for {h}x{w}", flow.height(), flow.width())));
        }
        Ok(flow)
    }
}

/// Directory of `ZTFL` files keyed by clip id and time index.
#[derive(Clone, Debug)]
pub struct FlowCache {
    dir: PathBuf,
}

impl FlowCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// File holding the flow of transition `t - 1 → t`.
    pub fn path(&self, clip_id: &str, t: usize) -> PathBuf {
        let safe: String = clip_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        self.dir.join(format!("{safe}_{t:06}.ztfl"))
    }

    pub fn get(&self, clip_id: &str, t: usize) -> Result<Option<FlowField>> {
        let p = self.path(clip_id, t);
        if !p.exists() {
            return Ok(None);
        }
        let f = FlowField::load(&p)?;
        Ok(Some(f.with_indices(t - 1, t)))
    }

    pub fn put(&self, clip_id: &str, t: usize, flow: &FlowField) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|_| Error::UnwritablePath(self.dir.clone()))?;
        flow.save(&self.path(clip_id, t))
    }
}
