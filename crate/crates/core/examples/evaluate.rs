//! Scores a checkpoint on the test split: l1, PCK, diversity,
//! multimodality and mode coverage.
//!
//!     cargo run --release --example evaluate [-- CHECKPOINT RUNS]

use gesturelab::checkpoint::load_checkpoint;
use gesturelab::cli::{train_into, RunConfig};
use gesturelab::data::generate_synthetic;
use gesturelab::evaluate::evaluate;
use gesturelab::metrics::MetricReport;

fn main() -> gesturelab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::default();
    let ds = generate_synthetic(&cfg.data)?;
    let params = match args.first() {
        Some(p) => load_checkpoint(p.as_ref(), None)?.state.params,
        None => {
            let mut quick = cfg.clone();
            quick.train.steps = 300;
            train_into(&ds, &quick, &std::env::temp_dir().join("gesturelab-evaluate"), None)?
        }
    };
    if let Some(r) = args.get(1) {
        cfg.eval.runs = r.parse().expect("RUNS is an integer");
    }
    let report = evaluate(&params, &ds, &cfg.eval)?;
    println!("{}", MetricReport::csv_header());
    println!("{}", report.csv_row(params.config().ablation().map_or("custom", |a| a.name())));
    if let (Some(best), Some(avg)) = (report.mode_best_l1, report.mode_average_l1) {
        println!("best-of-{} distance to a mode {best:.4}, mode average sits at {avg:.4}", report.runs);
    }
    Ok(())
}
