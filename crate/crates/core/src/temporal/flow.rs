use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const FLOW_MAGIC: &[u8; 4] = b"ZTFL";
pub const DEFAULT_FLOW_SCALE: usize = 3;

/// Dense displacement field, row-major with `(dx, dy)` interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    vectors: Vec<f32>,
    /// Time index of the frame the vectors point into.
    pub src_index: usize,
    /// Time index of the grid the vectors live on.
    pub dst_index: usize,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        let vectors = (0..height * width).flat_map(|_| [dx, dy]).collect();
        Self {
            height,
            width,
            vectors,
            src_index: 0,
            dst_index: 0,
        }
    }

    pub fn from_vectors(height: usize, width: usize, vectors: Vec<f32>) -> Result<Self> {
        if vectors.len() != height * width * 2 {
            return Err(Error::ShapeMismatch(format!(
                "{} flow components for a {height}x{width} field",
                vectors.len()
            )));
        }
        Ok(Self {
            height,
            width,
            vectors,
            src_index: 0,
            dst_index: 0,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut vectors = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                vectors.push(dx);
                vectors.push(dy);
            }
        }
        Self {
            height,
            width,
            vectors,
            src_index: 0,
            dst_index: 0,
        }
    }

    pub fn with_indices(mut self, src_index: usize, dst_index: usize) -> Self {
        self.src_index = src_index;
        self.dst_index = dst_index;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = 2 * (y * self.width + x);
        (self.vectors[i], self.vectors[i + 1])
    }

    pub fn set(&mut self, y: usize, x: usize, v: (f32, f32)) {
        let i = 2 * (y * self.width + x);
        self.vectors[i] = v.0;
        self.vectors[i + 1] = v.1;
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.is_finite())
    }

    /// Mean of `(dx, dy)`.
    pub fn mean(&self) -> (f64, f64) {
        let n = (self.height * self.width).max(1) as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for p in self.vectors.chunks_exact(2) {
            sx += p[0] as f64;
            sy += p[1] as f64;
        }
        (sx / n, sy / n)
    }

    /// Mean endpoint error against a constant displacement.
    pub fn endpoint_error(&self, dx: f64, dy: f64) -> f64 {
        let n = (self.height * self.width).max(1) as f64;
        self.vectors
            .chunks_exact(2)
            .map(|p| ((p[0] as f64 - dx).powi(2) + (p[1] as f64 - dy).powi(2)).sqrt())
            .sum::<f64>()
            / n
    }

    /// Bilinear resize (half-pixel centers). Vectors are multiplied by the
    /// per-axis size ratio so they stay in pixels of the new grid.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let (gx, gy) = (1.0 / sx, 1.0 / sy);
        let plane = |k: usize| -> Vec<f32> { self.vectors.iter().skip(k).step_by(2).copied().collect() };
        let (px, py) = (plane(0), plane(1));
        let out = Self::from_fn(height, width, |y, x| {
            let u = (x as f64 + 0.5) * sx - 0.5;
            let v = (y as f64 + 0.5) * sy - 0.5;
            let dx = super::warp::sample_bilinear(&px, self.height, self.width, u, v);
            let dy = super::warp::sample_bilinear(&py, self.height, self.width, u, v);
            ((dx as f64 * gx) as f32, (dy as f64 * gy) as f32)
        });
        out.with_indices(self.src_index, self.dst_index)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.vectors.len() * 4);
        buf.extend_from_slice(FLOW_MAGIC);
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.vectors {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)
            .map_err(|e| Error::CorruptFlow(format!("header: {e}")))?;
        if &header[..4] != FLOW_MAGIC {
            return Err(Error::CorruptFlow("bad magic".into()));
        }
        let h = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let w = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        let n = h
            .checked_mul(w)
            .and_then(|p| p.checked_mul(8))
            .ok_or_else(|| Error::CorruptFlow(format!("implausible size {h}x{w}")))?;
        let mut body = Vec::new();
        r.take(n as u64).read_to_end(&mut body)?;
        if body.len() != n {
            return Err(Error::CorruptFlow(format!(
                "expected {n} payload bytes, found {}",
                body.len()
            )));
        }
        let vectors = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Self::from_vectors(h, w, vectors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|_| Error::UnwritablePath(path.to_path_buf()))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// A dense optical-flow estimator.
///
/// `estimate(reference, target)` returns `f` at the inputs' resolution with
/// `reference(p) ≈ target(p + f(p))`, which is the field [`warp`] consumes to
/// bring `target` onto the grid of `reference`. Implementations must be
/// deterministic for fixed inputs.
///
/// [`warp`]: super::warp
pub trait FlowBackend {
    fn name(&self) -> &str;

    fn estimate(&mut self, reference: &Tensor<f32>, target: &Tensor<f32>) -> Result<FlowField>;
}

impl<B: FlowBackend + ?Sized> FlowBackend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn estimate(&mut self, reference: &Tensor<f32>, target: &Tensor<f32>) -> Result<FlowField> {
        (**self).estimate(reference, target)
    }
}

/// Size of the grid flow is estimated on; never below one pixel.
pub fn reduced_size(height: usize, width: usize, scale: usize) -> (usize, usize) {
    let s = scale.max(1);
    ((height / s).max(1), (width / s).max(1))
}

/// Area-average downsample by an integer factor. Trailing rows/columns that
/// do not fill a block are folded into the last block.
pub fn downsample_area(img: &Tensor<f32>, scale: usize) -> Tensor<f32> {
    let (h, w) = (img.height(), img.width());
    let (oh, ow) = reduced_size(h, w, scale);
    if (oh, ow) == (h, w) {
        return img.clone();
    }
    let span = |q: usize, n: usize, out: usize| {
        let s = n / out;
        let start = q * s;
        let end = if q + 1 == out { n } else { start + s };
        start..end
    };
    Tensor::from_fn(Shape::new(img.channels(), oh, ow), |c, j, i| {
        let plane = img.channel(c);
        let (ys, xs) = (span(j, h, oh), span(i, w, ow));
        let count = (ys.len() * xs.len()) as f64;
        let mut acc = 0.0f64;
        for y in ys {
            for x in xs.clone() {
                acc += plane[y * w + x] as f64;
            }
        }
        (acc / count) as f32
    })
}

/// Flow from the current frame's grid into the previous enhanced frame.
///
/// Both frames are reduced by `scale`, the backend runs on the reduced pair
/// and its field is resized back to full resolution.
pub fn estimate_flow(
    prev_enhanced: &Tensor<f32>,
    cur_equalized: &Tensor<f32>,
    backend: &mut dyn FlowBackend,
    scale: usize,
) -> Result<FlowField> {
    if prev_enhanced.shape() != cur_equalized.shape() {
        return Err(Error::ShapeMismatch(format!(
            "flow inputs {} and {}",
            prev_enhanced.shape(),
            cur_equalized.shape()
        )));
    }
    let (h, w) = (cur_equalized.height(), cur_equalized.width());
    let reference = downsample_area(cur_equalized, scale);
    let target = downsample_area(prev_enhanced, scale);
    let small = backend.estimate(&reference, &target)?;
    if small.height() != reference.height() || small.width() != reference.width() {
        return Err(Error::BackendFailure(format!(
            "{} returned a {}x{} field for {}x{} input",
            backend.name(),
            small.height(),
            small.width(),
            reference.height(),
            reference.width()
        )));
    }
    if !small.is_finite() {
        return Err(Error::BackendFailure(format!("{} returned non-finite flow", backend.name())));
    }
    Ok(small.resize(h, w))
}
