//! Audio encoder `f_A`, motion encoder `f_M`, mapping net `f_R` and decoder
//! `g`, all fully convolutional over time, plus latent sampling.
//!
//! Codes and features are laid out channel-first, `[B, C, T]`; motion is
//! `[B, T, J, D]` and is flattened to `[B, J·D, T]` at network boundaries.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndgrad::{concat, Array, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioFeature, MEL_BINS};
use crate::error::{Error, Result};
use crate::kinematics::{MotionMode, MotionSequence, Skeleton};
use crate::optim::xavier_uniform;

pub const CODE_DIM: usize = 16;
/// Log-variances leaving an encoder are clamped to `±LOG_VAR_BOUND`.
pub const LOG_VAR_BOUND: f64 = 10.0;
/// Initial bias of every log-variance head.
pub const LOG_VAR_INIT: f64 = -4.0;
pub const VAR_FLOOR: f64 = 1e-12;
pub const STATS_MOMENTUM: f64 = 0.99;

static VARIANCE_FLOORS: AtomicU64 = AtomicU64::new(0);

/// How many per-channel variances have been floored at `VAR_FLOOR` so far.
pub fn variance_floors() -> u64 {
    VARIANCE_FLOORS.load(Ordering::Relaxed)
}

/// The five cumulative configurations of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    Baseline,
    Split,
    Mapping,
    Bicycle,
    Diversity,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Baseline,
        Ablation::Split,
        Ablation::Mapping,
        Ablation::Bicycle,
        Ablation::Diversity,
    ];

    pub fn switches(self) -> Switches {
        let rank = self as u8;
        Switches {
            split: rank >= 1,
            mapping_net: rank >= 2,
            bicycle: rank >= 3,
            diversity: rank >= 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Split => "split",
            Ablation::Mapping => "mapping",
            Ablation::Bicycle => "bicycle",
            Ablation::Diversity => "diversity",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    pub split: bool,
    pub mapping_net: bool,
    pub bicycle: bool,
    pub diversity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: MotionMode,
    pub joints: usize,
    pub audio_bins: usize,
    pub code_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub switches: Switches,
}

impl ModelConfig {
    pub fn new(mode: MotionMode, joints: usize, ablation: Ablation) -> Self {
        ModelConfig {
            mode,
            joints,
            audio_bins: MEL_BINS,
            code_dim: CODE_DIM,
            hidden: 64,
            kernel: 5,
            blocks: 4,
            switches: ablation.switches(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.switches;
        if self.joints < 2 || self.audio_bins == 0 || self.code_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("joints >= 2 and non-zero widths required".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.blocks < 2 {
            return Err(Error::Config("at least two residual blocks required".into()));
        }
        if s.split && self.hidden < 2 * self.code_dim {
            return Err(Error::Config(format!(
                "hidden {} must be at least 2 x code_dim {} with split codes",
                self.hidden, self.code_dim
            )));
        }
        if !s.split && (s.mapping_net || s.bicycle || s.diversity) {
            return Err(Error::Config("mapping, bicycle and diversity need split codes".into()));
        }
        Ok(())
    }

    /// The named configuration these switches match, if any.
    pub fn ablation(&self) -> Option<Ablation> {
        Ablation::ALL.into_iter().find(|a| a.switches() == self.switches)
    }

    /// Flattened motion channels `J · D`.
    pub fn motion_channels(&self) -> usize {
        self.joints * self.mode.channels()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct ResNet {
    lift: Conv,
    blocks: Vec<(Conv, Conv)>,
    out: Conv,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    audio: ResNet,
    motion: ResNet,
    map_enc: Option<ResNet>,
    map_dec: Option<ResNet>,
    decoder: ResNet,
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    /// Shape plus Xavier fans; `None` fans mean zero init.
    specs: Vec<(Vec<usize>, Option<(usize, usize)>)>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, fans: Option<(usize, usize)>) -> usize {
        self.names.push(name);
        self.specs.push((shape, fans));
        self.names.len() - 1
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Conv {
        Conv {
            w: self.push(format!("{name}.weight"), vec![c_out, c_in, k], Some((c_in * k, c_out * k))),
            b: self.push(format!("{name}.bias"), vec![c_out], None),
        }
    }

    fn resnet(&mut self, name: &str, c_in: usize, c_out: usize, cfg: &ModelConfig, blocks: usize) -> ResNet {
        let (h, k) = (cfg.hidden, cfg.kernel);
        let lift = self.conv(&format!("{name}.lift"), c_in, h, k);
        let blocks = (0..blocks)
            .map(|i| {
                (
                    self.conv(&format!("{name}.block{i}.conv1"), h, h, k),
                    self.conv(&format!("{name}.block{i}.conv2"), h, h, k),
                )
            })
            .collect();
        let out = self.conv(&format!("{name}.out"), h, c_out, k);
        ResNet { lift, blocks, out }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let mut b = Builder::default();
    let k = cfg.code_dim;
    let motion_out = if cfg.switches.split { 4 * k } else { 2 * k };
    let dec_in = if cfg.switches.split { 2 * k } else { k };
    let audio = b.resnet("audio_encoder", cfg.audio_bins, 2 * k, cfg, cfg.blocks);
    let motion = b.resnet("motion_encoder", cfg.motion_channels(), motion_out, cfg, cfg.blocks);
    let (map_enc, map_dec) = if cfg.switches.mapping_net {
        let enc_blocks = cfg.blocks / 2;
        (
            Some(b.resnet("mapping.encoder", k, 2 * k, cfg, enc_blocks)),
            Some(b.resnet("mapping.decoder", k, k, cfg, cfg.blocks - enc_blocks)),
        )
    } else {
        (None, None)
    };
    let decoder = b.resnet("decoder", dec_in, cfg.motion_channels(), cfg, cfg.blocks);
    (
        Layout {
            audio,
            motion,
            map_enc,
            map_dec,
            decoder,
        },
        b,
    )
}

/// Exponential moving statistics of the motion-specific code, per channel:
/// the mean of per-sequence means, the spread of those means across
/// sequences, and the average spread within a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub between_var: Vec<f64>,
    pub within_var: Vec<f64>,
    pub updates: u64,
}

impl RunningStats {
    fn batch_moments(sample: &Array) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let s = sample.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("code batch must be [B, k, T], got {s:?}")));
        }
        let (b, k, t) = (s[0], s[1], s[2]);
        let d = sample.data();
        let mut mean = vec![0.0; k];
        let mut between = vec![0.0; k];
        let mut within = vec![0.0; k];
        for c in 0..k {
            let seq_means: Vec<f64> = (0..b)
                .map(|bi| d[(bi * k + c) * t..(bi * k + c + 1) * t].iter().sum::<f64>() / t as f64)
                .collect();
            let m = seq_means.iter().sum::<f64>() / b as f64;
            mean[c] = m;
            between[c] = seq_means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / b as f64;
            within[c] = (0..b)
                .map(|bi| {
                    let row = &d[(bi * k + c) * t..(bi * k + c + 1) * t];
                    row.iter().map(|v| (v - seq_means[bi]).powi(2)).sum::<f64>() / t as f64
                })
                .sum::<f64>()
                / b as f64;
        }
        Ok((mean, between, within))
    }

    /// EMA update from one batch of samples `[B, k, T]`; the first update
    /// copies the batch statistics. `None` records a step without codes.
    pub fn update(prev: Option<&RunningStats>, sample: Option<&Array>, momentum: f64) -> Result<RunningStats> {
        let Some(sample) = sample else {
            let mut s = prev.cloned().unwrap_or(RunningStats {
                mean: vec![],
                between_var: vec![],
                within_var: vec![],
                updates: 0,
            });
            s.updates += 1;
            return Ok(s);
        };
        let (m, bv, wv) = Self::batch_moments(sample)?;
        let floor = |v: Vec<f64>| v.into_iter().map(|x| x.max(VAR_FLOOR)).collect::<Vec<_>>();
        Ok(match prev {
            Some(p) if p.updates > 0 && p.mean.len() == m.len() => {
                let ema = |old: &[f64], new: &[f64]| {
                    old.iter()
                        .zip(new)
                        .map(|(o, n)| momentum * o + (1.0 - momentum) * n)
                        .collect::<Vec<_>>()
                };
                RunningStats {
                    mean: ema(&p.mean, &m),
                    between_var: floor(ema(&p.between_var, &bv)),
                    within_var: floor(ema(&p.within_var, &wv)),
                    updates: p.updates + 1,
                }
            }
            _ => RunningStats {
                mean: m,
                between_var: floor(bv),
                within_var: floor(wv),
                updates: prev.map_or(0, |p| p.updates) + 1,
            },
        })
    }

    /// Seeded draw `[k, frames]`: a sequence-level center from the
    /// between-sequence spread, then per-frame values around it.
    pub fn draw(&self, frames: usize, seed: u64) -> Array {
        let k = self.mean.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<f64> = (0..k)
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.mean[c] + self.between_var[c].sqrt() * z
            })
            .collect();
        Array::from_fn(vec![k, frames], |i| {
            let c = i / frames;
            let z: f64 = StandardNormal.sample(&mut rng);
            centers[c] + self.within_var[c].sqrt() * z
        })
    }
}

/// All learnable arrays in declaration order plus inference statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    arrays: Vec<Array>,
    layout: Layout,
    running: Option<RunningStats>,
}

impl ModelParams {
    /// Xavier-uniform weights and zero biases, deterministic in `seed`,
    /// except that log-variance heads start at `LOG_VAR_INIT`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arrays = b
            .specs
            .iter()
            .map(|(shape, fans)| match fans {
                Some((fi, fo)) => xavier_uniform(shape, *fi, *fo, &mut rng),
                None => Ok(Array::zeros(shape.clone())),
            })
            .collect::<Result<Vec<_>>>()?;
        let k = config.code_dim;
        let mut heads = vec![(layout.audio.out.b, k), (layout.motion.out.b, k)];
        if config.switches.split {
            heads.push((layout.motion.out.b, 3 * k));
        }
        if let Some(enc) = &layout.map_enc {
            heads.push((enc.out.b, k));
        }
        for (bias, at) in heads {
            arrays[bias].data_mut()[at..at + k].fill(LOG_VAR_INIT);
        }
        Ok(ModelParams {
            config,
            names: b.names,
            arrays,
            layout,
            running: None,
        })
    }

    /// Rebuilds parameters from stored arrays, checking every shape.
    pub fn from_arrays(config: ModelConfig, arrays: Vec<Array>, running: Option<RunningStats>) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        if arrays.len() != b.specs.len() {
            return Err(Error::ConfigConflict(format!(
                "{} arrays stored, config declares {}",
                arrays.len(),
                b.specs.len()
            )));
        }
        for (i, (a, (shape, _))) in arrays.iter().zip(&b.specs).enumerate() {
            if a.shape() != shape.as_slice() {
                return Err(Error::ConfigConflict(format!(
                    "`{}` stored as {:?}, config declares {:?}",
                    b.names[i],
                    a.shape(),
                    shape
                )));
            }
        }
        Ok(ModelParams {
            config,
            names: b.names,
            arrays,
            layout,
            running,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn running(&self) -> Option<&RunningStats> {
        self.running.as_ref()
    }

    pub fn set_running(&mut self, stats: Option<RunningStats>) {
        self.running = stats;
    }

    pub fn param_count(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(Array::is_finite)
    }

    /// Puts every parameter on `tape`, as leaves when `trainable`.
    pub fn bind<'p, 't>(&'p self, tape: &'t Tape, trainable: bool) -> Graph<'p, 't> {
        let vars = self
            .arrays
            .iter()
            .map(|a| {
                if trainable {
                    tape.leaf(a.clone())
                } else {
                    tape.constant(a.clone())
                }
            })
            .collect();
        Graph {
            params: self,
            vars,
            tape,
        }
    }

    /// Binds caller-made variables, one per parameter in declaration order.
    pub fn bind_vars<'p, 't>(&'p self, tape: &'t Tape, vars: Vec<Var<'t>>) -> Result<Graph<'p, 't>> {
        if vars.len() != self.arrays.len() {
            return Err(Error::Shape(format!("{} vars for {} parameters", vars.len(), self.arrays.len())));
        }
        for ((v, a), name) in vars.iter().zip(&self.arrays).zip(&self.names) {
            if v.shape() != a.shape() {
                return Err(Error::Shape(format!("`{name}`: {:?} vs {:?}", v.shape(), a.shape())));
            }
        }
        Ok(Graph {
            params: self,
            vars,
            tape,
        })
    }

    fn check_feature(&self, feature: &AudioFeature) -> Result<()> {
        if feature.bins() != self.config.audio_bins {
            return Err(Error::Shape(format!(
                "feature has {} bins, model expects {}",
                feature.bins(),
                self.config.audio_bins
            )));
        }
        Ok(())
    }

    fn batch1(a: &Array) -> Result<Array> {
        let mut shape = vec![1];
        shape.extend_from_slice(a.shape());
        Ok(a.reshape(shape)?)
    }

    fn unbatch(v: Var<'_>) -> Result<Array> {
        let shape = v.shape()[1..].to_vec();
        Ok(v.value().reshape(shape)?)
    }

    /// Mean shared code `[k, T]` of a feature.
    pub fn encode_audio_mean(&self, feature: &AudioFeature) -> Result<Array> {
        self.check_feature(feature)?;
        let tape = Tape::new();
        let g = self.bind(&tape, false);
        let code = g.encode_audio(tape.constant(Self::batch1(feature.values())?), &mut Sampler::Mean)?;
        Self::unbatch(code.mean)
    }

    /// Mean shared and (when split) specific codes of a motion.
    pub fn encode_motion_means(&self, motion: &MotionSequence) -> Result<(Array, Option<Array>)> {
        let tape = Tape::new();
        let g = self.bind(&tape, false);
        let m = tape.constant(Self::batch1(motion.values())?);
        let (s, i) = g.encode_motion_checked(motion.mode(), m, &mut Sampler::Mean)?;
        Ok((Self::unbatch(s.mean)?, i.map(|c| Self::unbatch(c.mean)).transpose()?))
    }

    /// Seeded specific code `[k, frames]` for inference, after the mapping
    /// net when present. `None` without split codes.
    pub fn specific_code(&self, frames: usize, seed: u64) -> Result<Option<Array>> {
        let stats = self.running.as_ref().ok_or(Error::Untrained)?;
        if !self.config.switches.split {
            return Ok(None);
        }
        if stats.mean.len() != self.config.code_dim {
            return Err(Error::Untrained);
        }
        let noise = stats.draw(frames, seed);
        if !self.config.switches.mapping_net {
            return Ok(Some(noise));
        }
        let tape = Tape::new();
        let g = self.bind(&tape, false);
        let (i_r, _) = g.map_noise(tape.constant(Self::batch1(&noise)?), &mut Sampler::Mean)?;
        Ok(Some(Self::unbatch(i_r)?))
    }

    /// Decodes codes `[k, T]` to motion values `[T, J, D]`.
    pub fn decode_values(&self, shared: &Array, specific: Option<&Array>) -> Result<Array> {
        let tape = Tape::new();
        let g = self.bind(&tape, false);
        let s = tape.constant(Self::batch1(shared)?);
        let i = specific.map(|a| Self::batch1(a).map(|b| tape.constant(b))).transpose()?;
        Self::unbatch(g.decode(s, i)?)
    }

    fn wrap(&self, values: Array, frame_rate: f64, skeleton: Option<Arc<Skeleton>>) -> Result<MotionSequence> {
        match self.config.mode {
            MotionMode::Rotational3d => {
                let sk = skeleton.ok_or_else(|| Error::Skeleton("3d generation needs a skeleton".into()))?;
                MotionSequence::rotational(sk, values, frame_rate)
            }
            MotionMode::Positional2d => MotionSequence::positional(values, frame_rate),
        }
    }

    /// Audio to motion: shared-code means, a seeded specific code, decode.
    pub fn generate(&self, feature: &AudioFeature, seed: u64, skeleton: Option<Arc<Skeleton>>) -> Result<MotionSequence> {
        if self.running.is_none() {
            return Err(Error::Untrained);
        }
        let s = self.encode_audio_mean(feature)?;
        let i = self.specific_code(feature.frames(), seed)?;
        let values = self.decode_values(&s, i.as_ref())?;
        self.wrap(values, feature.frame_rate(), skeleton)
    }

    /// Like `generate`, but frames `[t_start, t_start + n_frames)` of the
    /// sampled specific code are replaced by frames `[0, n_frames)` of the
    /// reference motion's specific code.
    pub fn edit(
        &self,
        feature: &AudioFeature,
        reference: &MotionSequence,
        t_start: usize,
        n_frames: usize,
        seed: u64,
        skeleton: Option<Arc<Skeleton>>,
    ) -> Result<MotionSequence> {
        if !self.config.switches.split {
            return Err(Error::Config("editing needs a model with split codes".into()));
        }
        let t = feature.frames();
        if t_start + n_frames > t || n_frames > reference.frames() {
            return Err(Error::Window {
                start: t_start,
                end: t_start + n_frames,
                len: t.min(reference.frames() + t_start),
            });
        }
        let s = self.encode_audio_mean(feature)?;
        let mut i = self.specific_code(t, seed)?.ok_or(Error::Untrained)?;
        if n_frames > 0 {
            let (_, i_ref) = self.encode_motion_means(reference)?;
            let i_ref = i_ref.expect("split model yields a specific code");
            let t_ref = i_ref.shape()[1];
            let k = self.config.code_dim;
            let data = i.data_mut();
            for c in 0..k {
                for f in 0..n_frames {
                    data[c * t + t_start + f] = i_ref.data()[c * t_ref + f];
                }
            }
        }
        let values = self.decode_values(&s, Some(&i))?;
        self.wrap(values, feature.frame_rate(), skeleton)
    }
}

/// Reparameterization policy for code sampling.
pub enum Sampler {
    /// Use code means as samples.
    Mean,
    /// `mean + exp(log_var / 2) · ε` with `ε` drawn from this stream.
    Reparam(ChaCha8Rng),
}

impl Sampler {
    pub fn seeded(seed: u64) -> Self {
        Sampler::Reparam(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn rng_mut(&mut self) -> Option<&mut ChaCha8Rng> {
        match self {
            Sampler::Mean => None,
            Sampler::Reparam(rng) => Some(rng),
        }
    }
}

pub fn standard_normal(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Array {
    Array::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Per-frame Gaussian code `[B, k, T]`.
#[derive(Clone, Copy)]
pub struct LatentCode<'t> {
    pub mean: Var<'t>,
    pub log_var: Var<'t>,
    pub sample: Var<'t>,
}

impl<'t> LatentCode<'t> {
    /// Takes `k` mean channels at `mean_at` and `k` log-variance channels at
    /// `log_var_at` from `stats: [B, C, T]`.
    fn from_channels(stats: Var<'t>, mean_at: usize, log_var_at: usize, k: usize, s: &mut Sampler) -> Result<Self> {
        let mean = stats.slice(1, mean_at, k)?;
        let log_var = stats.slice(1, log_var_at, k)?.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)?;
        Self::with_sample(mean, log_var, s)
    }

    pub fn with_sample(mean: Var<'t>, log_var: Var<'t>, s: &mut Sampler) -> Result<Self> {
        let sample = match s {
            Sampler::Mean => mean,
            Sampler::Reparam(rng) => {
                let eps = mean.tape().constant(standard_normal(mean.shape(), rng));
                mean.add(log_var.scale(0.5)?.exp()?.mul(eps)?)?
            }
        };
        Ok(LatentCode { mean, log_var, sample })
    }
}

/// Training-time specific-code draw: per sequence and channel, the mean
/// and variance of `i_sample: [B, k, T]` over time parameterize a Gaussian
/// sampled independently per frame. Differentiable in `i_sample`.
pub fn specific_noise<'t>(i_sample: Var<'t>, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
    let shape = i_sample.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("specific code must be [B, k, T], got {shape:?}")));
    }
    let keep = vec![shape[0], shape[1], 1];
    let mu = i_sample.mean_axes(&[2])?.reshape(&keep)?;
    let var = i_sample.sub(mu)?.square()?.mean_axes(&[2])?.reshape(&keep)?;
    let floored = var.value().data().iter().filter(|&&v| v < VAR_FLOOR).count();
    if floored > 0 {
        VARIANCE_FLOORS.fetch_add(floored as u64, Ordering::Relaxed);
    }
    let std = var.max_scalar(VAR_FLOOR)?.sqrt()?;
    let eps = i_sample.tape().constant(standard_normal(shape, rng));
    Ok(mu.add(std.mul(eps)?)?)
}

/// Model parameters bound to one tape.
pub struct Graph<'p, 't> {
    params: &'p ModelParams,
    vars: Vec<Var<'t>>,
    tape: &'t Tape,
}

impl<'p, 't> Graph<'p, 't> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn config(&self) -> &'p ModelConfig {
        &self.params.config
    }

    /// Current parameter values.
    pub fn values(&self) -> Vec<Array> {
        self.vars.iter().map(|v| (*v.value()).clone()).collect()
    }

    /// The same networks with `arrays` as constants on this tape.
    pub fn constants(&self, arrays: &[Array]) -> Result<Graph<'p, 't>> {
        let vars = arrays.iter().map(|a| self.tape.constant(a.clone())).collect();
        self.params.bind_vars(self.tape, vars)
    }

    fn conv(&self, c: Conv, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.conv1d(self.vars[c.w], self.vars[c.b])?)
    }

    fn run(&self, net: &ResNet, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = self.conv(net.lift, x)?;
        for &(c1, c2) in &net.blocks {
            let r = self.conv(c1, h)?.relu()?;
            h = h.add(self.conv(c2, r)?)?;
        }
        self.conv(net.out, h.relu()?)
    }

    fn expect_channels(&self, what: &str, x: Var<'t>, channels: usize) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != channels {
            return Err(Error::Shape(format!("{what}: expected [B, {channels}, T], got {s:?}")));
        }
        Ok(())
    }

    /// `S_A = f_A(A)` from features `[B, bins, T]`.
    pub fn encode_audio(&self, feature: Var<'t>, s: &mut Sampler) -> Result<LatentCode<'t>> {
        let cfg = self.config();
        self.expect_channels("audio features", feature, cfg.audio_bins)?;
        let out = self.run(&self.params.layout.audio, feature)?;
        LatentCode::from_channels(out, 0, cfg.code_dim, cfg.code_dim, s)
    }

    fn encode_motion_checked(
        &self,
        mode: MotionMode,
        motion: Var<'t>,
        s: &mut Sampler,
    ) -> Result<(LatentCode<'t>, Option<LatentCode<'t>>)> {
        if mode != self.config().mode {
            return Err(Error::Mode {
                expected: self.config().mode.name().into(),
                found: mode.name().into(),
            });
        }
        self.encode_motion(motion, s)
    }

    /// `(S_M, I_M) = f_M(M)` from motion `[B, T, J, D]`; `I_M` is absent
    /// without split codes.
    pub fn encode_motion(&self, motion: Var<'t>, s: &mut Sampler) -> Result<(LatentCode<'t>, Option<LatentCode<'t>>)> {
        let cfg = self.config();
        let shape = motion.shape();
        if shape.len() != 4 || shape[2] != cfg.joints || shape[3] != cfg.mode.channels() {
            return Err(Error::Shape(format!(
                "motion: expected [B, T, {}, {}], got {shape:?}",
                cfg.joints,
                cfg.mode.channels()
            )));
        }
        let (b, t) = (shape[0], shape[1]);
        let x = motion.reshape(&[b, t, cfg.motion_channels()])?.permute(&[0, 2, 1])?;
        let out = self.run(&self.params.layout.motion, x)?;
        let k = cfg.code_dim;
        if cfg.switches.split {
            let shared = LatentCode::from_channels(out, 0, k, k, s)?;
            let specific = LatentCode::from_channels(out, 2 * k, 3 * k, k, s)?;
            Ok((shared, Some(specific)))
        } else {
            Ok((LatentCode::from_channels(out, 0, k, k, s)?, None))
        }
    }

    /// `I_R = f_R(noise)`; the bottleneck code is returned for its KL term.
    /// Without the mapping net the noise passes through unchanged.
    pub fn map_noise(&self, noise: Var<'t>, s: &mut Sampler) -> Result<(Var<'t>, Option<LatentCode<'t>>)> {
        let cfg = self.config();
        self.expect_channels("noise", noise, cfg.code_dim)?;
        let (Some(enc), Some(dec)) = (&self.params.layout.map_enc, &self.params.layout.map_dec) else {
            return Ok((noise, None));
        };
        let k = cfg.code_dim;
        let z = LatentCode::from_channels(self.run(enc, noise)?, 0, k, k, s)?;
        Ok((self.run(dec, z.sample)?, Some(z)))
    }

    /// `g(S ⊕ I)` to motion `[B, T, J, D]`.
    pub fn decode(&self, shared: Var<'t>, specific: Option<Var<'t>>) -> Result<Var<'t>> {
        let cfg = self.config();
        self.expect_channels("shared code", shared, cfg.code_dim)?;
        let x = match (cfg.switches.split, specific) {
            (true, Some(i)) => {
                self.expect_channels("specific code", i, cfg.code_dim)?;
                if i.shape()[2] != shared.shape()[2] || i.shape()[0] != shared.shape()[0] {
                    return Err(Error::Shape(format!(
                        "decode: shared {:?} vs specific {:?}",
                        shared.shape(),
                        i.shape()
                    )));
                }
                concat(&[shared, i], 1)?
            }
            (false, None) => shared,
            (true, None) => return Err(Error::Shape("decoder expects a specific code".into())),
            (false, Some(_)) => return Err(Error::Shape("decoder takes no specific code without split".into())),
        };
        let out = self.run(&self.params.layout.decoder, x)?;
        let (b, t) = (out.shape()[0], out.shape()[2]);
        Ok(out
            .permute(&[0, 2, 1])?
            .reshape(&[b, t, cfg.joints, cfg.mode.channels()])?)
    }
}
