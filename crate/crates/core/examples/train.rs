//! Trains one configuration on the synthetic corpus and writes a checkpoint
//! plus a JSON-lines loss log.
//!
//!     cargo run --release --example train [-- ABLATION STEPS OUT_DIR]
//!
//! ABLATION is one of baseline, split, mapping, bicycle, diversity.

use std::path::PathBuf;

use gesturelab::cli::{train_into, RunConfig, CHECKPOINT_FILE, LOG_FILE};
use gesturelab::data::generate_synthetic;

fn main() -> gesturelab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::default();
    if let Some(a) = args.first() {
        cfg.ablation = a.parse()?;
    }
    cfg.train.steps = args.get(1).map_or(300, |s| s.parse().expect("STEPS is an integer"));
    cfg.train.log_every = 50;
    let out = args.get(2).map_or_else(|| PathBuf::from("target/example-run"), PathBuf::from);

    let ds = generate_synthetic(&cfg.data)?;
    let t = std::time::Instant::now();
    let params = train_into(&ds, &cfg, &out, None)?;
    println!(
        "{} ({} parameters): {} steps in {:.1}s",
        cfg.ablation,
        params.param_count(),
        cfg.train.steps,
        t.elapsed().as_secs_f64()
    );
    let log = std::fs::read_to_string(out.join(LOG_FILE)).expect("log written");
    for line in log.lines() {
        println!("  {line}");
    }
    println!("checkpoint: {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}
