//! Saving and restoring weights, with the architecture check on load.

use retinex_video::media::Checkpoint;
use retinex_video::retinex::{enhance_frame, ArchConfig, EnhancementNets};
use retinex_video::synth::{dark_clip, DarkClipSpec};
use retinex_video::temporal::TemporalState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arch = ArchConfig::default();
    let ckpt = Checkpoint::new(EnhancementNets::new(&arch, 3), &arch, 0);
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path)?;

    let header = Checkpoint::load_header(&path)?;
    println!("{header:?}");
    let restored = Checkpoint::load(&path, &arch)?;

    let synthetic = dark_clip(&DarkClipSpec::default());
    let frame = &synthetic.clip.frames()[0].pixels;
    let zero = TemporalState::zero(frame.height(), frame.width());
    let a = enhance_frame(frame, &zero, &ckpt.nets)?;
    let b = enhance_frame(frame, &zero, &restored.nets)?;
    println!("outputs identical after reload: {}", a.enhanced == b.enhanced);

    let other = ArchConfig { rd_channels: arch.rd_channels + 1, ..arch };
    match Checkpoint::load(&path, &other) {
        Ok(_) => println!("unexpected: mismatched architecture accepted"),
        Err(e) => println!("mismatched architecture rejected: {e}"),
    }
    Ok(())
}
