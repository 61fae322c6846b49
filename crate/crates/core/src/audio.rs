//! Log-mel features, WAV interchange and class-coded pseudo-audio.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndgrad::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW: usize = 1024;
pub const MEL_BINS: usize = 64;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8_000.0;
pub const LOG_FLOOR: f64 = 1e-6;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    sample_rate: u32,
    samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Audio("clip is empty".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Audio(format!("sample {i} outside [-1, 1]")));
        }
        Ok(AudioClip {
            sample_rate,
            samples,
        })
    }

    pub fn silence(sample_rate: u32, len: usize) -> Result<Self> {
        Self::new(sample_rate, vec![0.0; len])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// 16-bit PCM mono with the canonical 44-byte header.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s * i16::MAX as f64).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }

    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut r = hound::WavReader::open(path)?;
        let spec = r.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::Audio(format!(
                "{}: expected mono 16-bit PCM, got {} ch / {} bit",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            )));
        }
        let samples = r
            .samples::<i16>()
            .map(|s| s.map(|v| (v as f64 / i16::MAX as f64).max(-1.0)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(spec.sample_rate, samples)
    }
}

/// Integer hop, `floor(sr / fr)`.
pub fn hop_size(sample_rate: u32, frame_rate: f64) -> Result<usize> {
    if !(frame_rate > 0.0) || !frame_rate.is_finite() {
        return Err(Error::Audio(format!("frame rate {frame_rate} must be positive")));
    }
    let hop = (sample_rate as f64 / frame_rate).floor() as usize;
    if hop == 0 {
        return Err(Error::Audio("frame rate exceeds sample rate".into()));
    }
    Ok(hop)
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Magnitude STFT `[window/2 + 1, ceil(len/hop)]` with a periodic Hann
/// window; frame `t` is centered on sample `t·hop` of the reflect-padded clip.
pub fn stft(clip: &AudioClip, window: usize, hop: usize) -> Result<Array> {
    if hop == 0 || window < 2 {
        return Err(Error::Audio(format!("bad stft geometry: window {window}, hop {hop}")));
    }
    let x = clip.samples();
    let pad = window / 2;
    if x.len() <= pad {
        return Err(Error::Audio(format!(
            "clip of {} samples is shorter than one window after padding",
            x.len()
        )));
    }
    let n = x.len();
    let padded: Vec<f64> = (0..n + 2 * pad)
        .map(|i| {
            let j = i as isize - pad as isize;
            let r = if j < 0 {
                -j
            } else if j >= n as isize {
                2 * (n as isize - 1) - j
            } else {
                j
            };
            x[r as usize]
        })
        .collect();
    let frames = n.div_ceil(hop);
    let bins = window / 2 + 1;
    let win = hann(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut out = Array::zeros(vec![bins, frames]);
    let data = out.data_mut();
    for t in 0..frames {
        let start = t * hop;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[start + k] * win[k], 0.0);
        }
        fft.process(&mut buf);
        for (f, c) in buf.iter().take(bins).enumerate() {
            data[f * frames + t] = c.norm();
        }
    }
    Ok(out)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters of unit height, `[n_mels, window/2 + 1]`.
pub fn mel_filterbank(sample_rate: u32, window: usize, n_mels: usize, f_min: f64, f_max: f64) -> Array {
    let bins = window / 2 + 1;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / window as f64;
    Array::from_fn(vec![n_mels, bins], |i| {
        let (m, k) = (i / bins, i % bins);
        let f = k as f64 * bin_hz;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= l || f >= r {
            0.0
        } else if f <= c {
            (f - l) / (c - l)
        } else {
            (r - f) / (r - c)
        }
    })
}

/// Per-frame 64-bin log-mel energies, `values: [64, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeature {
    values: Array,
    frame_rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureSidecar {
    bins: usize,
    frames: usize,
    frame_rate: f64,
}

impl AudioFeature {
    pub fn new(values: Array, frame_rate: f64) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::Shape(format!("feature must be [bins, T], got {:?}", values.shape())));
        }
        if !values.is_finite() {
            return Err(Error::Audio("feature contains non-finite values".into()));
        }
        Ok(AudioFeature { values, frame_rate })
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn bins(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    /// Truncates, or repeats the last frame, to exactly `frames`.
    pub fn align_to(&self, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Audio("cannot align to zero frames".into()));
        }
        let (b, t) = (self.bins(), self.frames());
        let v = &self.values;
        let values = Array::from_fn(vec![b, frames], |i| v.get(&[i / frames, (i % frames).min(t - 1)]));
        Self::new(values, self.frame_rate)
    }

    /// Frames `[start, start + len)`.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        let t = self.frames();
        if len == 0 || start + len > t {
            return Err(Error::Window {
                start,
                end: start + len,
                len: t,
            });
        }
        let v = &self.values;
        let values = Array::from_fn(vec![self.bins(), len], |i| v.get(&[i / len, start + i % len]));
        Self::new(values, self.frame_rate)
    }

    /// Sidecar path for a raw feature file: same stem, `.json` extension.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Raw little-endian f64 values plus a `{bins, frames, frame_rate}` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in self.values.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(Error::io(path))?;
        let side = Self::sidecar_path(path);
        let meta = FeatureSidecar {
            bins: self.bins(),
            frames: self.frames(),
            frame_rate: self.frame_rate,
        };
        let text = serde_json::to_string_pretty(&meta).map_err(Error::json(&side))?;
        std::fs::write(&side, text).map_err(Error::io(&side))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(Error::io(&side))?;
        let meta: FeatureSidecar = serde_json::from_str(&text).map_err(Error::json(&side))?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(Error::io(path))?;
        if bytes.len() != meta.bins * meta.frames * 8 {
            return Err(Error::Audio(format!(
                "{}: {} bytes, sidecar expects {}x{} values",
                path.display(),
                bytes.len(),
                meta.bins,
                meta.frames
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::new(Array::new(vec![meta.bins, meta.frames], data)?, meta.frame_rate)
    }
}

/// Frames covered by a clip at `frame_rate`: `floor(len · fr / sr)`.
pub fn feature_frames(samples: usize, sample_rate: u32, frame_rate: f64) -> usize {
    (samples as f64 * frame_rate / sample_rate as f64 + 1e-9).floor() as usize
}

/// 64-bin log-mel spectrogram at `frame_rate` frames per second.
pub fn log_mel(clip: &AudioClip, frame_rate: f64) -> Result<AudioFeature> {
    let hop = hop_size(clip.sample_rate(), frame_rate)?;
    if (clip.sample_rate() as f64) < 2.0 * F_MAX {
        return Err(Error::Audio(format!(
            "sample rate {} below {} Hz needed for the mel range",
            clip.sample_rate(),
            2.0 * F_MAX
        )));
    }
    let frames = feature_frames(clip.len(), clip.sample_rate(), frame_rate);
    if frames == 0 {
        return Err(Error::Audio("clip shorter than one feature frame".into()));
    }
    let mag = stft(clip, WINDOW, hop)?;
    let fb = mel_filterbank(clip.sample_rate(), WINDOW, MEL_BINS, F_MIN, F_MAX);
    let (bins, t_stft) = (mag.shape()[0], mag.shape()[1]);
    let frames = frames.min(t_stft);
    let (m, f) = (mag.data(), fb.data());
    let mut out = Array::zeros(vec![MEL_BINS, frames]);
    let od = out.data_mut();
    for mel in 0..MEL_BINS {
        let row = &f[mel * bins..(mel + 1) * bins];
        for t in 0..frames {
            let e: f64 = row
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(k, w)| {
                    let a = m[k * t_stft + t];
                    w * a * a
                })
                .sum();
            od[mel * frames + t] = (e + LOG_FLOOR).ln();
        }
    }
    AudioFeature::new(out, frame_rate)
}

/// Seeded beat onsets in seconds: first at 0.13 to 0.4 s, then every
/// 0.4 to 0.8 s.
pub fn beat_times(duration: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb3a7_5eed);
    let mut t = rng.gen_range(0.13..0.4);
    let mut beats = Vec::new();
    while t < duration {
        beats.push(t);
        t += rng.gen_range(0.4..0.8);
    }
    beats
}

/// Fundamental and harmonic amplitudes identifying a class.
fn class_signature(class_id: usize) -> (f64, [f64; 6]) {
    let f0 = 110.0 * 1.5f64.powi(class_id as i32 % 8);
    let mut amps = [0.0; 6];
    for (h, a) in amps.iter_mut().enumerate() {
        // Each class keeps a different subset of harmonics.
        let keep = (h + class_id) % 3 != 2;
        *a = if keep { 1.0 / (h + 1) as f64 } else { 0.0 };
    }
    (f0, amps)
}

/// Class-coded harmonic stack with bursts at the seeded beat onsets.
pub fn synth_audio(class_id: usize, duration: f64, seed: u64) -> Result<AudioClip> {
    let beats = beat_times(duration, seed);
    synth_audio_with_beats(class_id, duration, &beats, seed)
}

pub fn synth_audio_with_beats(class_id: usize, duration: f64, beats: &[f64], seed: u64) -> Result<AudioClip> {
    if !(duration > 0.0) {
        return Err(Error::Audio(format!("duration {duration} must be positive")));
    }
    let sr = SAMPLE_RATE as f64;
    let n = (duration * sr).round() as usize;
    let (f0, amps) = class_signature(class_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..amps.len()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let mut raw: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let tone: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * (2.0 * PI * f0 * (h + 1) as f64 * t + p).sin())
                .sum();
            let burst: f64 = beats
                .iter()
                .filter(|&&b| t >= b)
                .map(|&b| (-(t - b) / 0.08).exp())
                .sum();
            let env = 0.15 + 0.85 * burst.min(1.5);
            env * tone + 0.01 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        raw.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    AudioClip::new(SAMPLE_RATE, raw)
}
