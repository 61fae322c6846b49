//! Log-mel features of a beeping clip at the motion frame rate.
//!
//!     cargo run --release --example audio_features [-- OUT.wav]

use std::f64::consts::PI;

use gesturelab::audio::{hop_size, log_mel, AudioClip, MEL_BINS, SAMPLE_RATE};

fn main() -> gesturelab::Result<()> {
    let fps = 30.0;
    // Two seconds: a 440 Hz beep in the first half, 2 kHz in the second.
    let samples = (0..2 * SAMPLE_RATE as usize)
        .map(|n| {
            let t = n as f64 / SAMPLE_RATE as f64;
            let f = if t < 1.0 { 440.0 } else { 2000.0 };
            let gate = if (t * 4.0).fract() < 0.5 { 0.5 } else { 0.0 };
            gate * (2.0 * PI * f * t).sin()
        })
        .collect();
    let clip = AudioClip::new(SAMPLE_RATE, samples)?;
    let feat = log_mel(&clip, fps)?;
    println!(
        "{:.1} s at {} Hz, hop {} samples -> {} frames x {} bands",
        clip.duration(),
        SAMPLE_RATE,
        hop_size(SAMPLE_RATE, fps)?,
        feat.frames(),
        feat.bins()
    );
    for t in (0..feat.frames()).step_by(5) {
        let col: Vec<f64> = (0..MEL_BINS).map(|b| feat.values().get(&[b, t])).collect();
        let (band, level) = col
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("64 bands");
        println!("  frame {t:>2}: loudest band {band:>2} at {level:>7.2}");
    }
    if let Some(path) = std::env::args().nth(1) {
        clip.write_wav(path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
