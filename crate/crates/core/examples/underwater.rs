//! Underwater mode on a blue-green tinted clip: per-channel brightness
//! targets pull the channel means toward each other.

use retinex_video::losses::LossMode;
use retinex_video::metrics::{uciqe, uiqm};
use retinex_video::synth::{tinted_clip, DarkClipSpec};
use retinex_video::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(120);
    let synthetic = tinted_clip(&DarkClipSpec::default(), [0.1, 0.3, 0.6]);
    let cfg = TrainConfig {
        mode: LossMode::Underwater,
        epochs: steps.div_ceil(synthetic.clip.len()),
        pretrain_epochs: 0,
        max_steps: steps,
        ..TrainConfig::default()
    };
    let run = train(&synthetic.clip, &cfg, None)?;

    let means = |frames: Vec<&retinex_video::Tensor<f32>>| -> [f64; 3] {
        let n = frames.len() as f64;
        [0, 1, 2].map(|c| frames.iter().map(|f| f.channel_mean(c) as f64).sum::<f64>() / n)
    };
    let before = means(synthetic.clip.pixels().collect());
    let after = means(run.outputs.iter().map(|o| &o.enhanced).collect());
    println!("channel means before {before:.3?}");
    println!("channel means after  {after:.3?}");

    let first_in = &synthetic.clip.frames()[0].pixels;
    let first_out = &run.outputs[0].enhanced;
    println!("UIQM  {:.3} -> {:.3}", uiqm(first_in)?, uiqm(first_out)?);
    println!("UCIQE {:.3} -> {:.3}", uciqe(first_in)?, uciqe(first_out)?);
    Ok(())
}
