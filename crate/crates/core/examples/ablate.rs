//! Trains the five cumulative configurations with one seed and prints the
//! metric table.
//!
//!     cargo run --release --example ablate [-- STEPS]

use gesturelab::data::generate_synthetic;
use gesturelab::evaluate::evaluate;
use gesturelab::metrics::MetricReport;
use gesturelab::model::Ablation;
use gesturelab::train::Trainer;
use gesturelab::cli::RunConfig;

fn main() -> gesturelab::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(s) = std::env::args().nth(1) {
        cfg.train.steps = s.parse().expect("STEPS is an integer");
    }
    let ds = generate_synthetic(&cfg.data)?;
    println!("{},mode_best_l1", MetricReport::csv_header());
    for ablation in Ablation::ALL {
        let run = RunConfig { ablation, ..cfg.clone() };
        let model = run.model_config(ds.mode, ds.skeleton.joint_count())?;
        let mut trainer = Trainer::new(&ds, model, run.train.clone())?;
        trainer.run(None, None)?;
        let report = evaluate(&trainer.state.params, &ds, &run.eval)?;
        println!("{},{:.4}", report.csv_row(ablation.name()), report.mode_best_l1.unwrap_or(f64::NAN));
    }
    Ok(())
}
