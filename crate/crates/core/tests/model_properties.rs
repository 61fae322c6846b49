mod common;

use common::*;
use gesturelab::audio::AudioFeature;
use gesturelab::kinematics::{MotionMode, MotionSequence};
use gesturelab::model::{specific_noise, Ablation, LatentCode, ModelConfig, ModelParams, RunningStats, Sampler};
use gesturelab::train::{build_objective, TrainConfig};
use ndgrad::{Array, Tape};

fn positional(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        audio_bins: 6,
        code_dim: 4,
        hidden: 8,
        kernel: 3,
        blocks: 4,
        ..ModelConfig::new(MotionMode::Positional2d, 3, ablation)
    }
}

/// Frames of context each side of an output frame: every conv in a
/// backbone widens it by `(kernel - 1) / 2`.
fn receptive_radius(cfg: &ModelConfig) -> usize {
    (2 + 2 * cfg.blocks) * (cfg.kernel - 1) / 2
}

fn feature(cfg: &ModelConfig, frames: usize, seed: u64) -> AudioFeature {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioFeature::new(uniform(&[cfg.audio_bins, frames], -3.0, 0.0, &mut rng), 30.0).unwrap()
}

fn trained_looking(cfg: ModelConfig, seed: u64) -> ModelParams {
    let mut p = toy_params(cfg.clone(), seed);
    if cfg.switches.split {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = uniform(&[4, cfg.code_dim, 20], -1.0, 1.0, &mut rng);
        p.set_running(Some(RunningStats::update(None, Some(&sample), 0.99).unwrap()));
    } else {
        p.set_running(Some(RunningStats::update(None, None, 0.99).unwrap()));
    }
    p
}

#[test]
fn audio_code_is_translation_equivariant_in_the_interior() {
    let cfg = positional(Ablation::Diversity);
    let p = toy_params(cfg.clone(), 1);
    let (t, shift) = (60, 7);
    let long = feature(&cfg, t + shift, 2);
    let a = p.encode_audio_mean(&long.crop(0, t).unwrap()).unwrap();
    let b = p.encode_audio_mean(&long.crop(shift, t).unwrap()).unwrap();
    let r = receptive_radius(&cfg);
    for c in 0..cfg.code_dim {
        for f in r + shift..t - r {
            let (x, y) = (a.get(&[c, f]), b.get(&[c, f - shift]));
            assert!((x - y).abs() < 1e-6, "channel {c} frame {f}: {x} vs {y}");
        }
    }
}

#[test]
fn motion_code_only_sees_its_receptive_field() {
    let cfg = positional(Ablation::Diversity);
    let p = toy_params(cfg.clone(), 3);
    let (t, change) = (50, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = uniform(&[t, cfg.joints, 2], -0.5, 0.5, &mut rng);
    let altered = Array::from_fn(base.shape().to_vec(), |i| {
        base.data()[i] + if i / (cfg.joints * 2) >= change { 0.3 } else { 0.0 }
    });
    let m = |v: Array| MotionSequence::positional(v, 30.0).unwrap();
    let (s1, i1) = p.encode_motion_means(&m(base)).unwrap();
    let (s2, i2) = p.encode_motion_means(&m(altered)).unwrap();
    let (i1, i2) = (i1.unwrap(), i2.unwrap());
    let r = receptive_radius(&cfg);
    for c in 0..cfg.code_dim {
        for f in 0..t {
            let same = s1.get(&[c, f]) == s2.get(&[c, f]) && i1.get(&[c, f]) == i2.get(&[c, f]);
            if f + r < change {
                assert!(same, "frame {f} sees frame {change}");
            }
        }
        // The frame right at the edge of the field does change.
        assert_ne!(s1.get(&[c, change - r]), s2.get(&[c, change - r]));
    }
}

#[test]
fn every_network_preserves_length() {
    for ablation in Ablation::ALL {
        let cfg = positional(ablation);
        let p = trained_looking(cfg.clone(), 5);
        for t in [2, 3, 17] {
            let out = p.generate(&feature(&cfg, t, 6), 0, None).unwrap();
            assert_eq!(out.frames(), t, "{ablation}");
        }
    }
}

#[test]
fn reparameterized_samples_match_their_moments() {
    let tape = Tape::new();
    let (mu, lv) = (0.7, -0.9);
    let n = 10_000;
    let mean = tape.constant(Array::full(vec![1, 1, n], mu));
    let log_var = tape.constant(Array::full(vec![1, 1, n], lv));
    let code = LatentCode::with_sample(mean, log_var, &mut Sampler::seeded(7)).unwrap();
    let x = code.sample.value();
    let m = x.data().iter().sum::<f64>() / n as f64;
    let v = x.data().iter().map(|s| (s - m).powi(2)).sum::<f64>() / n as f64;
    assert!((m - mu).abs() < 0.05 * mu, "mean {m}");
    assert!((v - lv.exp()).abs() < 0.05 * lv.exp(), "variance {v}");
}

#[test]
fn specific_noise_of_a_constant_code_is_that_constant() {
    let tape = Tape::new();
    let c = Array::from_fn(vec![2, 3, 10], |i| (i / 10) as f64 * 0.5 - 1.0);
    let noise = specific_noise(tape.constant(c.clone()), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    for (a, b) in noise.value().data().iter().zip(c.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn specific_noise_means_stay_within_three_standard_errors() {
    let (k, t) = (16, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let code = Array::from_fn(vec![1, k, t], |i| (i / t) as f64 * 0.1 + rng.gen_range(-1.0..1.0));
    let stats: Vec<(f64, f64)> = (0..k)
        .map(|c| {
            let row = &code.data()[c * t..(c + 1) * t];
            let m = row.iter().sum::<f64>() / t as f64;
            (m, (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64).sqrt())
        })
        .collect();
    let (trials, mut inside) = (100, 0);
    for trial in 0..trials {
        let tape = Tape::new();
        let draw = specific_noise(tape.constant(code.clone()), &mut ChaCha8Rng::seed_from_u64(trial)).unwrap();
        let d = draw.value();
        for (c, &(m, sd)) in stats.iter().enumerate() {
            let got = d.data()[c * t..(c + 1) * t].iter().sum::<f64>() / t as f64;
            inside += usize::from((got - m).abs() <= 3.0 * sd / (t as f64).sqrt());
        }
    }
    // A normal mean leaves 3 standard errors 0.27% of the time.
    let frac = inside as f64 / (trials as usize * k) as f64;
    assert!(frac >= 0.99, "{frac}");
}

#[test]
fn mapping_net_passthrough_and_distinctness() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = uniform(&[1, 4, 12], -1.0, 1.0, &mut rng);
    let b = uniform(&[1, 4, 12], -1.0, 1.0, &mut rng);

    let off = toy_params(positional(Ablation::Split), 11);
    let g = off.bind(&tape, false);
    let (out, z) = g.map_noise(tape.constant(a.clone()), &mut Sampler::Mean).unwrap();
    assert!(z.is_none());
    assert_eq!(*out.value(), a);

    let on = toy_params(positional(Ablation::Mapping), 11);
    let g = on.bind(&tape, false);
    let ra = g.map_noise(tape.constant(a.clone()), &mut Sampler::Mean).unwrap().0.value();
    let ra2 = g.map_noise(tape.constant(a), &mut Sampler::Mean).unwrap().0.value();
    let rb = g.map_noise(tape.constant(b), &mut Sampler::Mean).unwrap().0.value();
    assert_eq!(ra, ra2);
    let l1: f64 = ra.data().iter().zip(rb.data()).map(|(x, y)| (x - y).abs()).sum();
    assert!(l1 > 0.0);
}

#[test]
fn generation_is_seeded() {
    let cfg = positional(Ablation::Diversity);
    let p = trained_looking(cfg.clone(), 12);
    let f = feature(&cfg, 30, 13);
    let a = p.generate(&f, 5, None).unwrap();
    assert_eq!(a, p.generate(&f, 5, None).unwrap());
    assert_ne!(a, p.generate(&f, 6, None).unwrap());
    let baseline = trained_looking(positional(Ablation::Baseline), 12);
    assert_eq!(baseline.generate(&f, 5, None).unwrap(), baseline.generate(&f, 6, None).unwrap());
}

#[test]
fn empty_edit_is_plain_generation() {
    let cfg = positional(Ablation::Diversity);
    let p = trained_looking(cfg.clone(), 14);
    let f = feature(&cfg, 30, 15);
    let reference = MotionSequence::positional(Array::zeros(vec![30, cfg.joints, 2]), 30.0).unwrap();
    assert_eq!(p.edit(&f, &reference, 4, 0, 3, None).unwrap(), p.generate(&f, 3, None).unwrap());
    assert!(p.edit(&f, &reference, 20, 11, 3, None).is_err());
}

/// Convolutions per backbone, and how many times each flow runs one.
#[test]
fn switches_change_only_their_data_flows() {
    let sk = toy_skeleton();
    let tc = TrainConfig::desk();
    for ablation in Ablation::ALL {
        let cfg = toy_config(ablation);
        let sw = cfg.switches;
        let net = 2 + 2 * cfg.blocks;
        let enc_blocks = cfg.blocks / 2;
        let mapping = (2 + 2 * enc_blocks) + (2 + 2 * (cfg.blocks - enc_blocks));
        let mut expect = 3 * net;
        if sw.split {
            expect += 2 * net;
        }
        if sw.mapping_net {
            expect += mapping;
        }
        if sw.bicycle {
            expect += net;
        }
        if sw.diversity {
            expect += mapping + net;
        }
        let p = toy_params(cfg.clone(), 16);
        let batch = toy_batch(&cfg, 17);
        let tape = Tape::new();
        let g = p.bind(&tape, true);
        let obj = build_objective(&g, &batch, &tc, &sk, &mut Sampler::seeded(18), None).unwrap();
        let (report, i) = (obj.report, obj.specific);
        let counts = tape.op_counts();
        assert_eq!(counts.get("conv1d").copied().unwrap_or(0), expect, "{ablation}");
        assert_eq!(i.is_some(), sw.split);
        let has = |n: &str| report.terms.contains_key(n);
        assert_eq!(has("cross_pos"), sw.split, "{ablation}");
        assert_eq!(has("kl_map"), sw.mapping_net, "{ablation}");
        assert_eq!(has("cyc"), sw.bicycle, "{ablation}");
        assert_eq!(has("ds"), sw.diversity, "{ablation}");
    }
}

#[test]
fn baseline_has_no_specific_channels() {
    let base = ModelParams::init(toy_config(Ablation::Baseline), 19).unwrap();
    let split = ModelParams::init(toy_config(Ablation::Split), 19).unwrap();
    let width = |p: &ModelParams, name: &str| {
        let i = p.names().iter().position(|n| n == name).unwrap();
        p.arrays()[i].shape().to_vec()
    };
    let k = toy_config(Ablation::Baseline).code_dim;
    assert_eq!(width(&base, "decoder.lift.weight")[1], k);
    assert_eq!(width(&split, "decoder.lift.weight")[1], 2 * k);
    assert_eq!(width(&base, "motion_encoder.out.weight")[0], 2 * k);
    assert_eq!(width(&split, "motion_encoder.out.weight")[0], 4 * k);
}
