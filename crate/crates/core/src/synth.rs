//! Deterministic synthetic clips for tests, examples and desk-scale checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::media::Clip;
use crate::tensor::{luminance, Shape, Tensor};

/// A smooth colored texture in `[0, 1]`, a sum of random plane waves and
/// Gaussian blobs. `at(c, y, x)` may be evaluated at any real coordinate.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<([f64; 3], f64, f64, f64)>,
    blobs: Vec<([f64; 3], f64, f64, f64)>,
}

impl Texture {
    pub fn new(seed: u64, extent: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amp = || [0, 1, 2].map(|_| rng.random_range(0.3..1.0));
        let amps: Vec<[f64; 3]> = (0..14).map(|_| amp()).collect();
        let waves = amps[..6]
            .iter()
            .map(|&a| {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let freq: f64 = rng.random_range(0.08..0.35);
                (a, freq * theta.cos(), freq * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let blobs = amps[6..]
            .iter()
            .map(|&a| {
                (
                    a,
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                    rng.random_range(3.0..extent / 4.0 + 3.0),
                )
            })
            .collect();
        Self { waves, blobs }
    }

    pub fn at(&self, c: usize, y: f64, x: f64) -> f64 {
        let mut v = 0.0;
        for (a, kx, ky, phase) in &self.waves {
            v += a[c] * 0.08 * (kx * x + ky * y + phase).sin();
        }
        for (a, bx, by, r) in &self.blobs {
            let d2 = ((x - bx).powi(2) + (y - by).powi(2)) / (r * r);
            v += a[c] * 0.25 * (-d2).exp();
        }
        (0.35 + v).clamp(0.0, 1.0)
    }

    /// `height × width` window whose top-left corner is at `(top, left)`.
    pub fn render(&self, height: usize, width: usize, top: f64, left: f64) -> Tensor<f32> {
        Tensor::from_fn(Shape::new(3, height, width), |c, y, x| {
            self.at(c, top + y as f64, left + x as f64) as f32
        })
    }
}

/// Parameters of a dark noisy clip of a translating scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DarkClipSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Mean luminance of the clean scene after scaling.
    pub mean_luminance: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    /// Integer translation per frame, `(dx, dy)` in pixels.
    pub shift: (i64, i64),
    pub seed: u64,
}

impl Default for DarkClipSpec {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 64,
            width: 64,
            mean_luminance: 0.1,
            noise_sigma: 0.05,
            shift: (1, 0),
            seed: 0,
        }
    }
}

/// A synthetic clip together with its clean frames.
#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub clip: Clip,
    pub clean: Vec<Tensor<f32>>,
}

fn scale_to_luminance(frames: &mut [Tensor<f32>], target: f64) {
    let mean = frames
        .iter()
        .map(|f| luminance(f).mean() as f64)
        .sum::<f64>()
        / frames.len() as f64;
    let k = (target / mean.max(1e-9)) as f32;
    for f in frames.iter_mut() {
        f.data_mut().iter_mut().for_each(|v| *v = (*v * k).clamp(0.0, 1.0));
    }
}

fn add_noise(frames: &[Tensor<f32>], sigma: f64, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    frames
        .iter()
        .map(|f| f.map(|v| (v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32))
        .collect()
}

/// Frame `t` shows the scene window at `t · shift`, so consecutive frames
/// satisfy `frame_{t+1}(p) = frame_t(p + shift)` for clean pixels.
pub fn dark_clip(spec: &DarkClipSpec) -> SyntheticClip {
    let extent = (spec.height.max(spec.width) + spec.frames * 4) as f64;
    let tex = Texture::new(spec.seed, extent);
    let mut clean: Vec<Tensor<f32>> = (0..spec.frames)
        .map(|t| {
            let t = t as f64;
            tex.render(spec.height, spec.width, t * spec.shift.1 as f64, t * spec.shift.0 as f64)
        })
        .collect();
    scale_to_luminance(&mut clean, spec.mean_luminance);
    let noisy = add_noise(&clean, spec.noise_sigma, spec.seed);
    SyntheticClip {
        clip: Clip::new(noisy, 30.0, format!("dark-{}", spec.seed)).expect("valid synthetic clip"),
        clean,
    }
}

/// Multiplies frame `t` by `1 + amplitude` for even `t` and `1 - amplitude`
/// for odd `t`.
pub fn flicker_factors(frames: usize, amplitude: f64) -> Vec<f64> {
    (0..frames)
        .map(|t| if t % 2 == 0 { 1.0 + amplitude } else { 1.0 - amplitude })
        .collect()
}

/// [`dark_clip`] with per-frame brightness flicker applied to the clean
/// scene before noise.
pub fn flicker_clip(spec: &DarkClipSpec, amplitude: f64) -> SyntheticClip {
    let base = dark_clip(&DarkClipSpec { noise_sigma: 0.0, ..*spec });
    let clean: Vec<Tensor<f32>> = base
        .clean
        .iter()
        .zip(flicker_factors(spec.frames, amplitude))
        .map(|(f, k)| f.map(|v| (v as f64 * k).clamp(0.0, 1.0) as f32))
        .collect();
    let noisy = add_noise(&clean, spec.noise_sigma, spec.seed);
    SyntheticClip {
        clip: Clip::new(noisy, 30.0, format!("flicker-{}", spec.seed)).expect("valid synthetic clip"),
        clean,
    }
}

/// A color-cast clip: the scene's gray level is rescaled per channel so the
/// channel means equal `means`.
pub fn tinted_clip(spec: &DarkClipSpec, means: [f64; 3]) -> SyntheticClip {
    let base = dark_clip(&DarkClipSpec {
        noise_sigma: 0.0,
        mean_luminance: 0.4,
        ..*spec
    });
    let gray: Vec<Tensor<f32>> = base.clean.iter().map(luminance).collect();
    let mean_gray = gray.iter().map(|g| g.mean() as f64).sum::<f64>() / gray.len() as f64;
    let clean: Vec<Tensor<f32>> = gray
        .iter()
        .map(|g| {
            Tensor::from_fn(Shape::new(3, g.height(), g.width()), |c, y, x| {
                (g.get(0, y, x) as f64 * means[c] / mean_gray).clamp(0.0, 1.0) as f32
            })
        })
        .collect();
    let noisy = add_noise(&clean, spec.noise_sigma, spec.seed);
    SyntheticClip {
        clip: Clip::new(noisy, 30.0, format!("tinted-{}", spec.seed)).expect("valid synthetic clip"),
        clean,
    }
}

/// Two renderings of one texture with `second(p) = first(p + shift)`.
pub fn textured_pair(height: usize, width: usize, shift: (f64, f64), seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let tex = Texture::new(seed, height.max(width) as f64);
    (
        tex.render(height, width, 0.0, 0.0),
        tex.render(height, width, shift.1, shift.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dark_clip_statistics() {
        let s = dark_clip(&DarkClipSpec::default());
        assert_eq!(s.clip.len(), 8);
        let mean: f64 = s.clean.iter().map(|f| luminance(f).mean() as f64).sum::<f64>() / 8.0;
        assert!((mean - 0.1).abs() < 2e-3, "{mean}");
        let noise: f64 = s
            .clip
            .pixels()
            .zip(&s.clean)
            .map(|(n, c)| {
                n.data().iter().zip(c.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / n.len() as f64
            })
            .sum::<f64>()
            / 8.0;
        // clamping at zero trims a little of the variance
        assert!(noise.sqrt() > 0.04 && noise.sqrt() < 0.055, "{}", noise.sqrt());
    }

    #[test]
    fn translation_between_clean_frames() {
        let s = dark_clip(&DarkClipSpec { shift: (2, 1), ..DarkClipSpec::default() });
        let (a, b) = (&s.clean[0], &s.clean[1]);
        for y in 0..60 {
            for x in 0..60 {
                assert_eq!(b.get(1, y, x), a.get(1, y + 1, x + 2));
            }
        }
    }

    #[test]
    fn tint_sets_channel_means() {
        let s = tinted_clip(&DarkClipSpec { noise_sigma: 0.0, ..DarkClipSpec::default() }, [0.1, 0.3, 0.6]);
        let means: Vec<f64> = (0..3)
            .map(|c| s.clip.pixels().map(|f| f.channel_mean(c) as f64).sum::<f64>() / 8.0)
            .collect();
        for (m, want) in means.iter().zip([0.1, 0.3, 0.6]) {
            assert!((m - want).abs() < 0.02 * want + 1e-3, "{means:?}");
        }
    }

    #[test]
    fn flicker_alternates_brightness() {
        let s = flicker_clip(&DarkClipSpec { noise_sigma: 0.0, shift: (0, 0), ..DarkClipSpec::default() }, 0.1);
        let m: Vec<f64> = s.clean.iter().map(|f| luminance(f).mean() as f64).collect();
        assert!((m[0] / m[1] - 1.1 / 0.9).abs() < 1e-3);
    }
}
