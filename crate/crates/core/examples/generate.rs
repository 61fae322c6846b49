//! Samples several motions for one test clip and shows which mode each
//! lands nearest to.
//!
//!     cargo run --release --example generate [-- CHECKPOINT]
//!
//! Without a checkpoint a short diversity run is trained first.

use gesturelab::checkpoint::load_checkpoint;
use gesturelab::cli::{train_into, RunConfig};
use gesturelab::data::{generate_synthetic, mode_targets, save_motion, Split};
use gesturelab::metrics::{l1_metric, multimodality_metric};
use gesturelab::model::ModelParams;

fn main() -> gesturelab::Result<()> {
    let cfg = RunConfig::default();
    let ds = generate_synthetic(&cfg.data)?;
    let params: ModelParams = match std::env::args().nth(1) {
        Some(p) => load_checkpoint(p.as_ref(), None)?.state.params,
        None => {
            let mut quick = cfg.clone();
            quick.train.steps = 300;
            train_into(&ds, &quick, &std::env::temp_dir().join("gesturelab-generate"), None)?
        }
    };

    let seq = ds.split(Split::Test).next().expect("test split");
    let labels = seq.labels.as_ref().expect("synthetic labels");
    let modes = mode_targets(&cfg.data, &ds.skeleton, labels, seq.frames())?;
    let modes: Vec<_> = modes.iter().map(|m| m.positions()).collect::<Result<_, _>>()?;
    println!("{}: class {}, recorded mode {}", seq.id, labels.class, labels.mode);

    let mut samples = Vec::new();
    for seed in 0..6 {
        let motion = params.generate(&seq.feature, seed, Some(ds.skeleton.clone()))?;
        let pos = motion.positions()?;
        let d: Vec<String> = modes.iter().map(|m| l1_metric(&pos, m).map(|x| format!("{x:.3}"))).collect::<Result<_, _>>()?;
        println!("  seed {seed}: l1 to modes [{}]", d.join(", "));
        if seed == 0 {
            let path = std::env::temp_dir().join("gesturelab_seed0.json");
            save_motion(&path, &motion, None, true)?;
            println!("  wrote {}", path.display());
        }
        samples.push(pos);
    }
    println!("multimodality over {} seeds: {:.4}", samples.len(), multimodality_metric(&samples)?);
    Ok(())
}
