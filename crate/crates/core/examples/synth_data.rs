//! Builds the labeled synthetic corpus and optionally writes it to disk.
//!
//!     cargo run --release --example synth_data [-- OUT_DIR]

use gesturelab::data::{generate_synthetic, min_mode_separation, Split, SynthSpec};

fn main() -> gesturelab::Result<()> {
    let spec = SynthSpec::default();
    let ds = generate_synthetic(&spec)?;
    let train = ds.split(Split::Train).count();
    let test = ds.split(Split::Test).count();
    println!(
        "{} sequences ({train} train, {test} test), {} classes x {} modes, {} joints, {} fps",
        ds.len(),
        spec.classes,
        spec.modes,
        ds.skeleton.joint_count(),
        ds.frame_rate
    );
    println!("closest two modes of a class: {:.4} m mean joint l1", min_mode_separation(&spec, &ds.skeleton)?);
    for s in ds.sequences.iter().step_by(spec.sequences_per_mode) {
        let beats = s.labels.as_ref().map_or(0, |l| l.beats.len());
        println!(
            "  {:<10} {:?}  {} frames, {} mel bins, {beats} beats",
            s.id,
            s.split,
            s.frames(),
            s.feature.bins()
        );
    }
    if let Some(dir) = std::env::args().nth(1) {
        let manifest = ds.save(dir.as_ref())?;
        println!("wrote {}", manifest.display());
    }
    Ok(())
}
