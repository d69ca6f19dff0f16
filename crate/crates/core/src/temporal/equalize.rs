use crate::tensor::{Element, Tensor};

pub const HISTOGRAM_BINS: usize = 256;

/// 8-bit bin of a value in `[0, 1]`; out-of-range values saturate.
pub fn bin_of<T: Element>(v: T) -> usize {
    let b = (v.as_f64() * 255.0).round();
    if b.is_nan() || b <= 0.0 {
        0
    } else if b >= 255.0 {
        255
    } else {
        b as usize
    }
}

/// Per-channel histogram equalization on 256 bins: a value in bin `b` maps
/// to `cdf(b) / N`. Channels whose pixels all fall in one bin are returned
/// unchanged.
pub fn histogram_equalize<T: Element>(img: &Tensor<T>) -> Tensor<T> {
    let mut out = img.clone();
    let n = img.shape().plane();
    for c in 0..img.channels() {
        let plane = img.channel(c);
        let mut hist = [0usize; HISTOGRAM_BINS];
        for &v in plane {
            hist[bin_of(v)] += 1;
        }
        if hist.iter().filter(|&&h| h > 0).count() <= 1 {
            continue;
        }
        let mut lut = [T::zero(); HISTOGRAM_BINS];
        let mut acc = 0usize;
        for (b, h) in hist.iter().enumerate() {
            acc += h;
            lut[b] = T::lit(acc as f64 / n as f64);
        }
        for (o, &v) in out.channel_mut(c).iter_mut().zip(plane) {
            *o = lut[bin_of(v)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn single_value_is_unchanged() {
        let img = Tensor::<f32>::full(Shape::new(3, 4, 4), 0.3);
        assert_eq!(histogram_equalize(&img), img);
    }

    #[test]
    fn two_levels_map_to_half_and_one() {
        let img = Tensor::<f64>::from_fn(Shape::new(1, 2, 4), |_, _, x| if x < 2 { 0.0 } else { 1.0 });
        let out = histogram_equalize(&img);
        assert_eq!(out.data(), &[0.5, 0.5, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn output_in_unit_range() {
        let img = Tensor::<f64>::from_fn(Shape::new(3, 5, 7), |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f64 / 16.0);
        let out = histogram_equalize(&img);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(out.data().iter().any(|&v| v == 1.0));
    }
}
