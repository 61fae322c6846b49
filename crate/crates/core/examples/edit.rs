//! Timeline editing: generate for one clip's audio, but force a window of
//! frames to follow another recording's motion-specific code.
//!
//!     cargo run --release --example edit [-- CHECKPOINT T_START N_FRAMES]

use gesturelab::checkpoint::load_checkpoint;
use gesturelab::cli::{train_into, RunConfig};
use gesturelab::data::{generate_synthetic, Split};
use gesturelab::metrics::{joint_speeds, l1_metric, percentile};
use ndgrad::Array;

fn window(pos: &Array, start: usize, len: usize) -> gesturelab::Result<Array> {
    let per = pos.len() / pos.shape()[0];
    let mut shape = pos.shape().to_vec();
    shape[0] = len;
    Ok(Array::new(shape, pos.data()[start * per..(start + len) * per].to_vec())?)
}

fn main() -> gesturelab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::default();
    let ds = generate_synthetic(&cfg.data)?;
    let params = match args.first() {
        Some(p) => load_checkpoint(p.as_ref(), None)?.state.params,
        None => {
            let mut quick = cfg.clone();
            quick.train.steps = 300;
            train_into(&ds, &quick, &std::env::temp_dir().join("gesturelab-edit"), None)?
        }
    };
    let t_start: usize = args.get(1).map_or(60, |s| s.parse().expect("T_START is an integer"));
    let n: usize = args.get(2).map_or(60, |s| s.parse().expect("N_FRAMES is an integer"));

    // Audio from a mode-0 recording, reference motion from a mode-1
    // recording of the same class.
    let train: Vec<_> = ds.split(Split::Train).collect();
    let mode_of = |s: &&gesturelab::data::Sequence| s.labels.as_ref().map(|l| (l.class, l.mode));
    let audio = train.iter().find(|s| mode_of(s) == Some((0, 0))).expect("class 0 mode 0");
    let reference = train.iter().find(|s| mode_of(s) == Some((0, 1))).expect("class 0 mode 1");

    let sk = Some(ds.skeleton.clone());
    let plain = params.generate(&audio.feature, 0, sk.clone())?.positions()?;
    let edited = params.edit(&audio.feature, &reference.motion, t_start, n, 0, sk)?.positions()?;
    let target = window(&reference.motion.positions()?, 0, n)?;
    println!(
        "window [{t_start}, {}): l1 to reference {:.4} edited vs {:.4} unedited",
        t_start + n,
        l1_metric(&window(&edited, t_start, n)?, &target)?,
        l1_metric(&window(&plain, t_start, n)?, &target)?
    );

    let speeds: Vec<f64> = train.iter().map(|s| s.motion.positions().and_then(|p| joint_speeds(&p))).collect::<Result<Vec<_>, _>>()?.concat();
    let p99 = percentile(&speeds, 0.99).expect("non-empty");
    let sp = joint_speeds(&edited)?;
    let j = ds.skeleton.joint_count();
    let around = |t: usize| sp[(t - 3) * j..(t + 3) * j].iter().copied().fold(0.0, f64::max);
    println!("max joint speed near the splice start {:.4}, near its end {:.4}; training p99 {p99:.4}", around(t_start), around(t_start + n));
    Ok(())
}
