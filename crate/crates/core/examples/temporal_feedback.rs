//! Inference on a flickering clip with and without the warped feedback of
//! the previous frame, compared by smoothed MABD.

use retinex_video::metrics::{mabd, MABD_WINDOW};
use retinex_video::synth::{flicker_clip, DarkClipSpec};
use retinex_video::temporal::LucasKanade;
use retinex_video::train::{enhance_sequence, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(120);
    let synthetic = flicker_clip(&DarkClipSpec::default(), 0.1);
    let cfg = TrainConfig {
        epochs: steps.div_ceil(synthetic.clip.len()),
        pretrain_epochs: 0,
        max_steps: steps,
        ..TrainConfig::default()
    };
    let run = train(&synthetic.clip, &cfg, None)?;
    let nets = &run.checkpoint.nets;

    let input = mabd(synthetic.clip.pixels(), MABD_WINDOW)?;
    let fed = enhance_sequence(&synthetic.clip, nets, &cfg, Box::new(LucasKanade::default()), None, false)?;
    let zero = enhance_sequence(&synthetic.clip, nets, &cfg, Box::new(LucasKanade::default()), None, true)?;
    let fed = mabd(fed.iter().map(|o| &o.enhanced), MABD_WINDOW)?;
    let zero = mabd(zero.iter().map(|o| &o.enhanced), MABD_WINDOW)?;
    println!("input          {:.5}", input.mean_smoothed());
    println!("with feedback  {:.5}", fed.mean_smoothed());
    println!("zero feedback  {:.5}", zero.mean_smoothed());
    Ok(())
}
