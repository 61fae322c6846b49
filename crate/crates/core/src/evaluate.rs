//! Test-split evaluation: repeated seeded generation and metric aggregation.

use ndgrad::Array;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, mode_targets, GestureDataset, Sequence, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    diversity_metric, l1_metric, mean_of, mode_coverage, multimodality_metric, pck, Aggregate, MetricReport,
    RunMetrics, CLIP_LEN, PCK_DELTA, RUNS,
};
use crate::model::ModelParams;

/// Coverage threshold as a fraction of the smallest distance between two
/// modes of the same sequence.
pub const COVERAGE_RATIO: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub runs: usize,
    pub seed: u64,
    pub clip_len: usize,
    pub pck_delta: f64,
    pub coverage_ratio: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            runs: RUNS,
            seed: 0,
            clip_len: CLIP_LEN,
            pck_delta: PCK_DELTA,
            coverage_ratio: COVERAGE_RATIO,
        }
    }
}

/// Seed of run `run` on test sequence `index`.
pub fn run_seed(seed: u64, run: usize, index: usize) -> u64 {
    mix_seed(mix_seed(seed, run as u64), index as u64)
}

/// Evaluates an arbitrary generator returning positions `[T, J, P]` for a
/// sequence and seed.
pub fn evaluate_with<G>(dataset: &GestureDataset, cfg: &EvalConfig, generate: G) -> Result<MetricReport>
where
    G: Fn(&Sequence, u64) -> Result<Array> + Sync,
{
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let test: Vec<&Sequence> = dataset.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let truth: Vec<Array> = test.iter().map(|s| s.motion.positions()).collect::<Result<_>>()?;
    // samples[i][r]: positions of run r on test sequence i.
    let samples: Vec<Vec<Array>> = test
        .par_iter()
        .enumerate()
        .map(|(i, s)| (0..cfg.runs).map(|r| generate(s, run_seed(cfg.seed, r, i))).collect())
        .collect::<Result<_>>()?;

    let mut per_run = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let (mut l1, mut hit, mut div) = (0.0, 0.0, 0.0);
        for (i, t) in truth.iter().enumerate() {
            let p = &samples[i][r];
            l1 += l1_metric(p, t)?;
            hit += pck(p, t, cfg.pck_delta)?;
            div += diversity_metric(p, cfg.clip_len)?;
        }
        let n = truth.len() as f64;
        per_run.push(RunMetrics {
            l1: l1 / n,
            pck: hit / n,
            diversity: div / n,
        });
    }
    let pick = |f: fn(&RunMetrics) -> f64| per_run.iter().map(f).collect::<Vec<_>>();

    let multimodality = if cfg.runs >= 2 {
        let per_seq = samples.iter().map(|s| multimodality_metric(s)).collect::<Result<Vec<_>>>()?;
        Some(per_seq.iter().sum::<f64>() / per_seq.len() as f64)
    } else {
        None
    };

    let modes = match &dataset.spec {
        Some(spec) if test.iter().all(|s| s.labels.is_some()) => {
            let (mut cov, mut best, mut avg, mut n) = (0.0, 0.0, 0.0, 0usize);
            for (i, s) in test.iter().enumerate() {
                let labels = s.labels.as_ref().expect("checked above");
                let targets: Vec<Array> = mode_targets(spec, &dataset.skeleton, labels, s.frames())?
                    .iter()
                    .map(|m| m.positions())
                    .collect::<Result<_>>()?;
                let mut gap = f64::INFINITY;
                for a in 0..targets.len() {
                    for b in a + 1..targets.len() {
                        gap = gap.min(l1_metric(&targets[a], &targets[b])?);
                    }
                }
                let c = mode_coverage(&samples[i], &targets, cfg.coverage_ratio * gap)?;
                cov += c.coverage;
                best += c.nearest.iter().sum::<f64>();
                let center = mean_of(&targets)?;
                for t in &targets {
                    avg += l1_metric(t, &center)?;
                }
                n += targets.len();
            }
            Some((cov / test.len() as f64, best / n as f64, avg / n as f64))
        }
        _ => None,
    };

    Ok(MetricReport {
        runs: cfg.runs,
        l1: Aggregate::lower_is_better(&pick(|m| m.l1)),
        pck: Aggregate::higher_is_better(&pick(|m| m.pck)),
        diversity: Aggregate::higher_is_better(&pick(|m| m.diversity)),
        multimodality,
        mode_coverage: modes.map(|m| m.0),
        mode_best_l1: modes.map(|m| m.1),
        mode_average_l1: modes.map(|m| m.2),
        per_run,
    })
}

/// Evaluates a trained model on the test split.
pub fn evaluate(params: &ModelParams, dataset: &GestureDataset, cfg: &EvalConfig) -> Result<MetricReport> {
    if params.config().mode != dataset.mode {
        return Err(Error::Mode {
            expected: params.config().mode.name().into(),
            found: dataset.mode.name().into(),
        });
    }
    evaluate_with(dataset, cfg, |s, seed| {
        params
            .generate(&s.feature, seed, Some(dataset.skeleton.clone()))?
            .positions()
    })
}
