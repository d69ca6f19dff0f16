use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::flow::FlowField;

/// Bilinear sample of one plane at `(x, y)`, coordinates clamped to the border.
pub fn sample_bilinear<T: Element>(plane: &[T], height: usize, width: usize, x: f64, y: f64) -> T {
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, (width - 1) as f64) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, (height - 1) as f64) };
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = T::lit(x - x0 as f64);
    let fy = T::lit(y - y0 as f64);
    let one = T::one();
    let at = |yy: usize, xx: usize| plane[yy * width + xx];
    let top = at(y0, x0) * (one - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (one - fx) + at(y1, x1) * fx;
    top * (one - fy) + bottom * fy
}

/// Backward warping: `out(p) = img(p + flow(p))`, sampled bilinearly with
/// border clamping.
pub fn warp<T: Element>(img: &Tensor<T>, flow: &FlowField) -> Result<Tensor<T>> {
    let (h, w) = (img.height(), img.width());
    if flow.height() != h || flow.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "flow is {}x{}, image is {}x{}",
            flow.height(),
            flow.width(),
            h,
            w
        )));
    }
    let mut out = Tensor::zeros(img.shape());
    for c in 0..img.channels() {
        let src = img.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = flow.get(y, x);
                dst[y * w + x] =
                    sample_bilinear(src, h, w, x as f64 + dx as f64, y as f64 + dy as f64);
            }
        }
    }
    Ok(out)
}
