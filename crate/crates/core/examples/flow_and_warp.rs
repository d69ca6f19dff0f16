//! Dense flow on a translated texture, then backward warping of the target
//! into the reference frame.

use retinex_video::synth::textured_pair;
use retinex_video::temporal::{histogram_equalize, warp, FlowBackend, LucasKanade};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shift = (3.0, -2.0);
    let (first, second) = textured_pair(96, 96, shift, 7);

    // second(p) = first(p + shift): the flow from second to first is +shift
    let mut lk = LucasKanade::default();
    let flow = lk.estimate(&second, &first)?;
    let (mx, my) = flow.mean();
    println!("true shift ({:.2}, {:.2})  mean flow ({mx:.3}, {my:.3})", shift.0, shift.1);
    println!("mean endpoint error {:.4} px", flow.endpoint_error(shift.0, shift.1));

    let aligned = warp(&first, &flow)?;
    println!("max |second - warped first| {:.4}", interior_gap(&aligned, &second, 8));

    // equalization makes dark frames usable for flow estimation
    let dark = first.map(|v| v * 0.1);
    let eq = histogram_equalize(&dark);
    println!("dark mean {:.4} -> equalized mean {:.4}", dark.mean(), eq.mean());
    Ok(())
}

/// Largest difference away from a border band, where warping samples
/// outside the frame.
fn interior_gap(a: &retinex_video::Tensor<f32>, b: &retinex_video::Tensor<f32>, band: usize) -> f32 {
    let mut gap = 0.0f32;
    for c in 0..a.channels() {
        for y in band..a.height() - band {
            for x in band..a.width() - band {
                gap = gap.max((a.get(c, y, x) - b.get(c, y, x)).abs());
            }
        }
    }
    gap
}
