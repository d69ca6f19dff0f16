//! Evaluation: full-reference fidelity with and without histogram matching,
//! brightness-flicker statistics, and no-reference underwater quality.

mod brightness;
mod fidelity;
mod histogram;
mod underwater;

pub use brightness::{mabd, mabd_series, mean_luminance, moving_average, Mabd, MABD_WINDOW};
pub use fidelity::{gaussian_kernel, mse, psnr, ssim, ssim_window, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use histogram::{histogram_match, matching_lut, quantize, HmDirection};
pub use underwater::{
    eme, quantile, sobel_magnitude, srgb_to_lab, trimmed_mean, uciqe, uciqe_components, uicm, uiconm, uiqm,
    uiqm_components, uism, UciqeComponents, UiqmComponents, EME_BLOCK, UCIQE_WEIGHTS, UICM_TRIM, UIQM_WEIGHTS,
};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};
use crate::media::{write_frame, BitDepth, Clip};
use crate::tensor::Tensor;

/// External perceptual metric. `{a}` and `{b}` in the command are replaced by
/// the paths of two PNG files; the process must print one number.
#[derive(Clone, Debug, PartialEq)]
pub struct LpipsPlugin {
    pub command: Vec<String>,
}

impl LpipsPlugin {
    pub fn from_template(template: &str) -> Result<Self> {
        let command: Vec<String> = template.split_whitespace().map(str::to_owned).collect();
        if command.is_empty() {
            return Err(Error::Config("empty perceptual-metric command".into()));
        }
        Ok(Self { command })
    }

    pub fn score(&self, a: &Tensor<f32>, b: &Tensor<f32>, scratch: &Path, tag: usize) -> Result<f64> {
        let (pa, pb) = (scratch.join(format!("{tag:06}_a.png")), scratch.join(format!("{tag:06}_b.png")));
        write_frame(a, &pa, BitDepth::Sixteen)?;
        write_frame(b, &pb, BitDepth::Sixteen)?;
        let args: Vec<String> = self
            .command
            .iter()
            .map(|s| s.replace("{a}", &pa.display().to_string()).replace("{b}", &pb.display().to_string()))
            .collect();
        let out = Command::new(&args[0])
            .args(&args[1..])
            .output()
            .map_err(|e| Error::Plugin(format!("{}: {e}", args[0])))?;
        if !out.status.success() {
            return Err(Error::Plugin(format!(
                "{} exited with {}: {}",
                args[0],
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.trim()
            .parse::<f64>()
            .map_err(|_| Error::Plugin(format!("{} printed {:?}, expected one number", args[0], text.trim())))
    }
}

#[derive(Clone, Debug)]
pub struct EvaluateOptions {
    pub underwater: bool,
    pub hm_direction: HmDirection,
    pub mabd_window: usize,
    /// Worker threads for the per-frame metrics.
    pub jobs: usize,
    pub lpips: Option<LpipsPlugin>,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            underwater: false,
            hm_direction: HmDirection::default(),
            mabd_window: MABD_WINDOW,
            jobs: 1,
            lpips: None,
        }
    }
}

/// Metrics of one frame; full-reference fields are `None` without a
/// reference, underwater fields are `None` unless requested.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameMetrics {
    pub psnr: Option<f64>,
    pub psnr_hm: Option<f64>,
    pub ssim: Option<f64>,
    pub ssim_hm: Option<f64>,
    pub lpips: Option<f64>,
    pub uiqm: Option<f64>,
    pub uciqe: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
    /// `None` for single-frame clips.
    pub mabd: Option<Mabd>,
    pub hm_direction: HmDirection,
    pub has_reference: bool,
    pub underwater: bool,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricReport {
    pub fn series(&self, pick: impl Fn(&FrameMetrics) -> Option<f64>) -> Vec<Option<f64>> {
        self.frames.iter().map(pick).collect()
    }

    /// Clip mean of one per-frame field; an infinite PSNR makes the mean
    /// infinite.
    pub fn mean(&self, pick: impl Fn(&FrameMetrics) -> Option<f64>) -> Option<f64> {
        mean_of(self.frames.iter().map(pick))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames {}", self.frames.len());
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        if self.has_reference {
            let _ = writeln!(s, "hm_direction {}", self.hm_direction);
            let _ = writeln!(s, "psnr {}", fmt(self.mean(|f| f.psnr)));
            let _ = writeln!(s, "psnr_hm {}", fmt(self.mean(|f| f.psnr_hm)));
            let _ = writeln!(s, "ssim {}", fmt(self.mean(|f| f.ssim)));
            let _ = writeln!(s, "ssim_hm {}", fmt(self.mean(|f| f.ssim_hm)));
            if self.frames.iter().any(|f| f.lpips.is_some()) {
                let _ = writeln!(s, "lpips {}", fmt(self.mean(|f| f.lpips)));
            }
        }
        if let Some(m) = &self.mabd {
            let mean = m.series.iter().sum::<f64>() / m.series.len() as f64;
            let _ = writeln!(s, "mabd {}", fmt(Some(mean)));
            let _ = writeln!(s, "mabd_smoothed {}", fmt(Some(m.mean_smoothed())));
        }
        if self.underwater {
            let _ = writeln!(s, "uiqm {}", fmt(self.mean(|f| f.uiqm)));
            let _ = writeln!(s, "uciqe {}", fmt(self.mean(|f| f.uciqe)));
        }
        s
    }

    pub fn frames_csv(&self) -> String {
        let lpips = self.frames.iter().any(|f| f.lpips.is_some());
        let mut header = vec!["frame"];
        if self.has_reference {
            header.extend(["psnr", "psnr_hm", "ssim", "ssim_hm"]);
            if lpips {
                header.push("lpips");
            }
        }
        if self.underwater {
            header.extend(["uiqm", "uciqe"]);
        }
        let mut s = header.join(",");
        s.push('\n');
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        for (t, f) in self.frames.iter().enumerate() {
            let mut row = vec![t.to_string()];
            if self.has_reference {
                row.extend([f.psnr, f.psnr_hm, f.ssim, f.ssim_hm].map(cell));
                if lpips {
                    row.push(cell(f.lpips));
                }
            }
            if self.underwater {
                row.extend([f.uiqm, f.uciqe].map(cell));
            }
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Row `t` describes the transition from frame `t` to `t + 1`.
    pub fn mabd_csv(&self) -> String {
        let mut s = String::from("t,mabd,mabd_smoothed\n");
        if let Some(m) = &self.mabd {
            for (t, (a, b)) in m.series.iter().zip(&m.smoothed).enumerate() {
                let _ = writeln!(s, "{t},{a},{b}");
            }
        }
        s
    }

    /// Writes `metrics.csv`, `mabd.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|_| Error::UnwritablePath(dir.to_path_buf()))?;
        let files = [
            ("metrics.csv", self.frames_csv()),
            ("mabd.csv", self.mabd_csv()),
            ("summary.txt", self.summary()),
        ];
        files
            .into_iter()
            .map(|(name, text)| {
                let p = dir.join(name);
                fs::write(&p, text).map_err(|_| Error::UnwritablePath(p.clone()))?;
                Ok(p)
            })
            .collect()
    }
}

fn frame_metrics(
    t: usize,
    pred: &Tensor<f32>,
    reference: Option<&Tensor<f32>>,
    opts: &EvaluateOptions,
    scratch: Option<&Path>,
) -> Result<FrameMetrics> {
    let mut m = FrameMetrics::default();
    if let Some(r) = reference {
        m.psnr = Some(psnr(pred, r)?);
        m.ssim = Some(ssim(pred, r)?);
        // matched values lie on the 8-bit grid, so the other side is put there too
        let (p_hm, r_hm) = match opts.hm_direction {
            HmDirection::ReferenceToPrediction => (quantize(pred), histogram_match(r, pred)?),
            HmDirection::PredictionToReference => (histogram_match(pred, r)?, quantize(r)),
        };
        m.psnr_hm = Some(psnr(&p_hm, &r_hm)?);
        m.ssim_hm = Some(ssim(&p_hm, &r_hm)?);
        if let (Some(plugin), Some(dir)) = (&opts.lpips, scratch) {
            m.lpips = Some(plugin.score(pred, r, dir, t)?);
        }
    }
    if opts.underwater {
        m.uiqm = Some(uiqm(pred)?);
        m.uciqe = Some(uciqe(pred)?);
    }
    Ok(m)
}

pub fn evaluate(pred: &Clip, reference: Option<&Clip>, opts: &EvaluateOptions) -> Result<MetricReport> {
    if let Some(r) = reference {
        if r.len() != pred.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predicted frames against {} reference frames",
                pred.len(),
                r.len()
            )));
        }
    }
    let preds: Vec<&Tensor<f32>> = pred.pixels().collect();
    let refs: Option<Vec<&Tensor<f32>>> = reference.map(|r| r.pixels().collect());
    let scratch = match (&opts.lpips, reference) {
        (Some(_), Some(_)) => Some(tempfile::tempdir()?),
        _ => None,
    };
    let scratch_path = scratch.as_ref().map(|d| d.path());
    let n = preds.len();
    let jobs = opts.jobs.clamp(1, n.max(1));
    let chunk = n.div_ceil(jobs);
    let run = |lo: usize, hi: usize| -> Result<Vec<FrameMetrics>> {
        (lo..hi)
            .map(|t| frame_metrics(t, preds[t], refs.as_ref().map(|r| r[t]), opts, scratch_path))
            .collect()
    };
    let frames: Vec<FrameMetrics> = if jobs == 1 {
        run(0, n)?
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let run = &run;
                    s.spawn(move || run((j * chunk).min(n), ((j + 1) * chunk).min(n)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("metric worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    };
    let mabd = if n >= 2 {
        Some(brightness::mabd(preds.iter().copied(), opts.mabd_window)?)
    } else {
        None
    };
    Ok(MetricReport {
        frames,
        mabd,
        hm_direction: opts.hm_direction,
        has_reference: reference.is_some(),
        underwater: opts.underwater,
    })
}
