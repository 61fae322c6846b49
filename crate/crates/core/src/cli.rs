//! Command-line front end: `synth-data`, `train`, `generate`, `evaluate`,
//! `ablate` and `edit`.
//!
//! Every command writes `run_manifest.json` into its output directory with
//! the parsed command and the fully resolved configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audio::{log_mel, AudioClip, AudioFeature};
use crate::checkpoint::load_checkpoint;
use crate::data::{generate_synthetic, load_motion, save_motion, GestureDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalConfig};
use crate::kinematics::{MotionMode, Skeleton};
use crate::metrics::MetricReport;
use crate::model::{Ablation, ModelConfig, ModelParams, CODE_DIM};
use crate::train::{TrainConfig, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.glck";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const RUN_MANIFEST: &str = "run_manifest.json";
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "GESTURELAB_THREADS";

/// Network widths; the ablation switches come from `RunConfig::ablation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSizes {
    pub hidden: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub code_dim: usize,
}

impl ModelSizes {
    pub fn desk() -> Self {
        ModelSizes {
            hidden: 32,
            kernel: 3,
            blocks: 4,
            code_dim: CODE_DIM,
        }
    }
}

impl Default for ModelSizes {
    fn default() -> Self {
        Self::desk()
    }
}

/// Everything a command needs besides file paths. Loaded from `--config`
/// and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SynthSpec,
    pub model: ModelSizes,
    pub ablation: Ablation,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: SynthSpec::default(),
            model: ModelSizes::desk(),
            ablation: Ablation::Diversity,
            train: TrainConfig::desk(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// One seed drives data synthesis, training and evaluation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn model_config(&self, mode: MotionMode, joints: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(mode, joints, self.ablation);
        cfg.hidden = self.model.hidden;
        cfg.kernel = self.model.kernel;
        cfg.blocks = self.model.blocks;
        cfg.code_dim = self.model.code_dim;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "gesturelab", version, about = "Audio-driven gesture generation with split latent codes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate the labeled synthetic corpus.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Motion representation.
        #[arg(long, value_parser = ["3d", "2d"])]
        mode: Option<String>,
    },
    /// Train one configuration.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample motions for one audio clip.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: AudioInput,
        /// Number of seeds, starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Skeleton JSON for 3D output; defaults to the built-in upper body.
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Train and evaluate all five ablation configurations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Generate with frames of a reference motion's specific code spliced in.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: AudioInput,
        /// Reference motion JSON.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        t_start: usize,
        #[arg(long)]
        n_frames: usize,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AudioInput {
    /// 16 kHz mono WAV.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub audio: Option<PathBuf>,
    /// Saved log-mel features (`.f64` with JSON sidecar).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Motion frame rate used when features come from audio.
    #[arg(long, default_value_t = 30.0)]
    pub frame_rate: f64,
}

impl AudioInput {
    fn feature(&self) -> Result<AudioFeature> {
        match (&self.audio, &self.features) {
            (Some(wav), _) => log_mel(&AudioClip::read_wav(wav)?, self.frame_rate),
            (None, Some(f)) => AudioFeature::load(f),
            (None, None) => Err(Error::Config("pass --audio or --features".into())),
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    seed: u64,
    config: &'a RunConfig,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    std::fs::write(path, text + "\n").map_err(Error::io(path))
}

fn prepare_out(dir: &Path, command: &Command, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    write_json(
        &dir.join(RUN_MANIFEST),
        &RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.train.seed,
            config: cfg,
        },
    )
}

fn load_skeleton(path: Option<&Path>) -> Result<Arc<Skeleton>> {
    Ok(Arc::new(match path {
        Some(p) => Skeleton::load(p)?,
        None => Skeleton::upper_body(),
    }))
}

fn load_params(path: &Path) -> Result<ModelParams> {
    let ckpt = load_checkpoint(path, None)?;
    if ckpt.state.params.running().is_none() {
        return Err(Error::Untrained);
    }
    Ok(ckpt.state.params)
}

/// Trains one configuration into `dir`; returns the final parameters.
pub fn train_into(dataset: &GestureDataset, cfg: &RunConfig, dir: &Path, resume: Option<&Path>) -> Result<ModelParams> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let model = cfg.model_config(dataset.mode, dataset.skeleton.joint_count())?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(dataset, cfg.train.clone(), load_checkpoint(p, Some(&model))?.state)?,
        None => Trainer::new(dataset, model, cfg.train.clone())?,
    };
    let log_path = dir.join(LOG_FILE);
    let file = if resume.is_some() {
        File::options().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    };
    let mut log = BufWriter::new(file.map_err(Error::io(&log_path))?);
    trainer.run(Some(&mut log), Some(dir.join(CHECKPOINT_FILE)))?;
    log.flush().map_err(Error::io(&log_path))?;
    Ok(trainer.state.params)
}

fn label(cfg: &ModelConfig) -> &'static str {
    cfg.ablation().map_or("custom", Ablation::name)
}

fn write_report(dir: &Path, label: &str, report: &MetricReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    let csv = format!("{}\n{}\n", MetricReport::csv_header(), report.csv_row(label));
    let path = dir.join("report.csv");
    std::fs::write(&path, csv).map_err(Error::io(&path))
}

pub fn run(cli: &Cli) -> Result<()> {
    let command = &cli.command;
    match command {
        Command::SynthData { common, mode } => {
            let mut cfg = resolve(common)?;
            if let Some(m) = mode {
                cfg.data.motion_mode = if m == "2d" { MotionMode::Positional2d } else { MotionMode::Rotational3d };
            }
            prepare_out(&common.out, command, &cfg)?;
            let manifest = generate_synthetic(&cfg.data)?.save(&common.out)?;
            println!("{}", manifest.display());
        }
        Command::Train {
            common,
            data,
            ablation,
            steps,
            resume,
        } => {
            let mut cfg = resolve(common)?;
            if let Some(a) = ablation {
                cfg.ablation = *a;
            }
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            prepare_out(&common.out, command, &cfg)?;
            let dataset = GestureDataset::load(data)?;
            train_into(&dataset, &cfg, &common.out, resume.as_deref())?;
            println!("{}", common.out.join(CHECKPOINT_FILE).display());
        }
        Command::Generate {
            common,
            checkpoint,
            input,
            runs,
            skeleton,
        } => {
            let cfg = resolve(common)?;
            prepare_out(&common.out, command, &cfg)?;
            let params = load_params(checkpoint)?;
            let skeleton = load_skeleton(skeleton.as_deref())?;
            let feature = input.feature()?;
            let base = common.seed.unwrap_or(0);
            for seed in base..base + *runs as u64 {
                let motion = params.generate(&feature, seed, Some(skeleton.clone()))?;
                let path = common.out.join(format!("motion_seed{seed}.json"));
                save_motion(&path, &motion, None, true)?;
                println!("{}", path.display());
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
            runs,
        } => {
            let mut cfg = resolve(common)?;
            if let Some(r) = runs {
                cfg.eval.runs = *r;
            }
            prepare_out(&common.out, command, &cfg)?;
            let params = load_params(checkpoint)?;
            let dataset = GestureDataset::load(data)?;
            let report = evaluate(&params, &dataset, &cfg.eval)?;
            let label = label(params.config());
            write_report(&common.out, label, &report)?;
            println!("{}", report.csv_row(label));
        }
        Command::Ablate {
            common,
            data,
            steps,
            runs,
        } => {
            let mut cfg = resolve(common)?;
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            if let Some(r) = runs {
                cfg.eval.runs = *r;
            }
            prepare_out(&common.out, command, &cfg)?;
            let dataset = GestureDataset::load(data)?;
            let mut csv = format!("{}\n", MetricReport::csv_header());
            for ablation in Ablation::ALL {
                let run_cfg = RunConfig { ablation, ..cfg.clone() };
                let dir = common.out.join(ablation.name());
                let params = train_into(&dataset, &run_cfg, &dir, None)?;
                let report = evaluate(&params, &dataset, &run_cfg.eval)?;
                write_report(&dir, ablation.name(), &report)?;
                let row = report.csv_row(ablation.name());
                println!("{row}");
                csv.push_str(&row);
                csv.push('\n');
            }
            let path = common.out.join("ablation.csv");
            std::fs::write(&path, csv).map_err(Error::io(&path))?;
        }
        Command::Edit {
            common,
            checkpoint,
            input,
            reference,
            t_start,
            n_frames,
            skeleton,
        } => {
            let cfg = resolve(common)?;
            prepare_out(&common.out, command, &cfg)?;
            let params = load_params(checkpoint)?;
            let skeleton = load_skeleton(skeleton.as_deref())?;
            let reference = load_motion(reference, Some(&skeleton))?;
            let feature = input.feature()?;
            let seed = common.seed.unwrap_or(0);
            let motion = params.edit(&feature, &reference, *t_start, *n_frames, seed, Some(skeleton))?;
            let path = common.out.join("edited.json");
            save_motion(&path, &motion, None, true)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Applies `GESTURELAB_THREADS` to the global worker pool.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|_| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_unknown_fields() {
        let cfg = RunConfig::default().with_seed(9);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"ablation": "baseline"}"#).unwrap();
        assert_eq!(partial.ablation, Ablation::Baseline);
        assert_eq!(partial.train, TrainConfig::desk());
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        assert_eq!(main_with_args(["gesturelab", "train", "--bogus"]), 2);
        assert_eq!(main_with_args(["gesturelab", "frobnicate"]), 2);
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = main_with_args([
            "gesturelab",
            "train",
            "--data",
            "/nonexistent/manifest.json",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 4);
        assert!(out.join(RUN_MANIFEST).exists());
    }

    #[test]
    fn bad_config_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"data": {"classes": 1}}"#).unwrap();
        let data = dir.path().join("d");
        let args = |out: &str| {
            vec![
                "gesturelab".to_string(),
                "synth-data".into(),
                "--config".into(),
                cfg.to_str().unwrap().into(),
                "--out".into(),
                data.join(out).to_str().unwrap().into(),
            ]
        };
        assert_eq!(main_with_args(args("a")), 2);
    }
}
