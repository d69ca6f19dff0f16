//! Full-reference and no-reference metrics on a degraded copy of a clip.

use retinex_video::metrics::{evaluate, EvaluateOptions};
use retinex_video::synth::{dark_clip, DarkClipSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synthetic = dark_clip(&DarkClipSpec::default());
    let reference = synthetic.clip.with_frames(synthetic.clean.clone())?;
    // a global gain error is mostly removed by histogram matching
    let prediction = reference.with_frames(reference.pixels().map(|f| f.map(|v| (v * 1.6).min(1.0))).collect())?;

    let opts = EvaluateOptions {
        underwater: true,
        jobs: 2,
        ..EvaluateOptions::default()
    };
    let report = evaluate(&prediction, Some(&reference), &opts)?;
    print!("{}", report.summary());
    Ok(())
}
