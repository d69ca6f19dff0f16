//! Zero-shot training on a synthetic dark clip, then inference with the
//! trained weights. Pass a step count to train longer (default 120).

use retinex_video::synth::{dark_clip, DarkClipSpec};
use retinex_video::tensor::luminance;
use retinex_video::train::{enhance_clip, train_with, TrainConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(120);
    let synthetic = dark_clip(&DarkClipSpec::default());
    let cfg = TrainConfig {
        epochs: steps.div_ceil(synthetic.clip.len()),
        pretrain_epochs: 0,
        max_steps: steps,
        ..TrainConfig::default()
    };

    let mut progress = |step: usize, report: &retinex_video::losses::LossReport| {
        if step % 40 == 0 {
            println!("step {step:4}  total {:.5}", report.total);
        }
    };
    let run = train_with(&synthetic.clip, &cfg, TrainOptions { on_step: Some(&mut progress), ..Default::default() })?;

    let enhanced = enhance_clip(&synthetic.clip, &run.checkpoint, &cfg)?;
    let mean = |frames: &mut dyn Iterator<Item = &retinex_video::Tensor<f32>>| {
        let (sum, n) = frames.fold((0.0, 0), |(s, n), f| (s + luminance(f).mean() as f64, n + 1));
        sum / n as f64
    };
    println!("input luminance    {:.4}", mean(&mut synthetic.clip.pixels()));
    println!("enhanced luminance {:.4}", mean(&mut enhanced.pixels()));
    println!("clean luminance    {:.4}", mean(&mut synthetic.clean.iter()));
    Ok(())
}
