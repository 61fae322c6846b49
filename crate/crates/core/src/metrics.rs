//! L1, PCK, diversity, multimodality and mode coverage over joint
//! positions `[T, J, D]`.

use ndgrad::Array;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PCK_DELTA: f64 = 0.2;
pub const CLIP_LEN: usize = 50;
pub const RUNS: usize = 20;

fn check_pair(op: &str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.rank() < 2 {
        return Err(Error::Shape(format!("{op}: positions need [..., J, D]")));
    }
    Ok(())
}

/// Mean over frames and joints of the per-joint coordinate-sum L1 error.
pub fn l1_metric(pred: &Array, target: &Array) -> Result<f64> {
    check_pair("l1", pred, target)?;
    let d = *pred.shape().last().expect("rank >= 2");
    let total: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / (pred.len() / d) as f64)
}

/// Fraction of joints whose Euclidean error is strictly below `delta`.
pub fn pck(pred: &Array, target: &Array, delta: f64) -> Result<f64> {
    check_pair("pck", pred, target)?;
    let d = *pred.shape().last().expect("rank >= 2");
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, t) in pred.data().chunks_exact(d).zip(target.data().chunks_exact(d)) {
        let dist = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        hit += usize::from(dist < delta);
        n += 1;
    }
    Ok(hit as f64 / n as f64)
}

/// The pairwise normalization `1 / (N · ceil(N / 2))`.
pub fn pair_normalization(n: usize) -> f64 {
    1.0 / (n * n.div_ceil(2)) as f64
}

fn pairwise(items: &[Array]) -> Result<f64> {
    let mut sum = 0.0;
    for a in 0..items.len() {
        for b in a + 1..items.len() {
            sum += l1_metric(&items[a], &items[b])?;
        }
    }
    Ok(sum * pair_normalization(items.len()))
}

fn frames_slice(motion: &Array, start: usize, len: usize) -> Array {
    let per = motion.len() / motion.shape()[0];
    let mut shape = motion.shape().to_vec();
    shape[0] = len;
    Array::new(shape, motion.data()[start * per..(start + len) * per].to_vec()).expect("in-range slice")
}

/// Pairwise L1 between non-overlapping `clip_len`-frame clips of one motion.
pub fn diversity_metric(motion: &Array, clip_len: usize) -> Result<f64> {
    if motion.rank() != 3 {
        return Err(Error::Shape(format!("diversity: expected [T, J, D], got {:?}", motion.shape())));
    }
    let t = motion.shape()[0];
    if clip_len == 0 || t < 2 * clip_len {
        return Err(Error::Shape(format!("diversity needs at least {} frames, got {t}", 2 * clip_len)));
    }
    let clips: Vec<Array> = (0..t / clip_len).map(|i| frames_slice(motion, i * clip_len, clip_len)).collect();
    pairwise(&clips)
}

/// Pairwise L1 between motions generated for one audio.
pub fn multimodality_metric(runs: &[Array]) -> Result<f64> {
    if runs.len() < 2 {
        return Err(Error::Shape("multimodality needs at least two runs".into()));
    }
    pairwise(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub coverage: f64,
    /// Best-of-n distance from the samples to each mode.
    pub nearest: Vec<f64>,
    pub covered: Vec<bool>,
}

/// A mode is covered when some sample is closer to it than to every other
/// mode and lies within `threshold` of it.
pub fn mode_coverage(samples: &[Array], modes: &[Array], threshold: f64) -> Result<ModeCoverage> {
    if modes.is_empty() {
        return Err(Error::Dataset("mode coverage needs labeled modes".into()));
    }
    if samples.is_empty() {
        return Err(Error::Shape("mode coverage needs at least one sample".into()));
    }
    let k = modes.len();
    let mut nearest = vec![f64::INFINITY; k];
    let mut covered = vec![false; k];
    for s in samples {
        let d: Vec<f64> = modes.iter().map(|m| l1_metric(s, m)).collect::<Result<_>>()?;
        for (m, &dm) in d.iter().enumerate() {
            nearest[m] = nearest[m].min(dm);
        }
        let (best, &dist) = d
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one mode");
        let unique = d.iter().enumerate().all(|(m, &dm)| m == best || dm > dist);
        if unique && dist < threshold {
            covered[best] = true;
        }
    }
    Ok(ModeCoverage {
        coverage: covered.iter().filter(|&&c| c).count() as f64 / k as f64,
        nearest,
        covered,
    })
}

/// Euclidean per-joint displacement between consecutive frames, `[T-1, J]`
/// flattened frame-major.
pub fn joint_speeds(positions: &Array) -> Result<Vec<f64>> {
    if positions.rank() != 3 || positions.shape()[0] < 2 {
        return Err(Error::Shape(format!("speeds need [T >= 2, J, D], got {:?}", positions.shape())));
    }
    let d = positions.shape()[2];
    let per = positions.len() / positions.shape()[0];
    let x = positions.data();
    Ok((per..x.len())
        .step_by(d)
        .map(|i| (0..d).map(|c| (x[i + c] - x[i + c - per]).powi(2)).sum::<f64>().sqrt())
        .collect())
}

/// Nearest-rank percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).max(1);
    Some(v[rank - 1])
}

/// Elementwise mean of equally shaped arrays.
pub fn mean_of(items: &[Array]) -> Result<Array> {
    let first = items.first().ok_or_else(|| Error::Shape("mean of nothing".into()))?;
    let mut acc = vec![0.0; first.len()];
    for a in items {
        if a.shape() != first.shape() {
            return Err(Error::Shape("mean of differently shaped arrays".into()));
        }
        acc.iter_mut().zip(a.data()).for_each(|(s, v)| *s += v);
    }
    let n = items.len() as f64;
    Ok(Array::new(first.shape().to_vec(), acc.into_iter().map(|v| v / n).collect())?)
}

/// Average and best over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub avg: f64,
    pub best: f64,
}

impl Aggregate {
    pub fn lower_is_better(values: &[f64]) -> Self {
        Aggregate {
            avg: values.iter().sum::<f64>() / values.len() as f64,
            best: values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn higher_is_better(values: &[f64]) -> Self {
        Aggregate {
            avg: values.iter().sum::<f64>() / values.len() as f64,
            best: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// `avg (best)`.
    pub fn cell(&self) -> String {
        format!("{:.4} ({:.4})", self.avg, self.best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub l1: f64,
    pub pck: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub runs: usize,
    pub l1: Aggregate,
    pub pck: Aggregate,
    pub diversity: Aggregate,
    /// Absent for a single run.
    pub multimodality: Option<f64>,
    pub mode_coverage: Option<f64>,
    /// Mean over sequences and modes of the best-of-runs distance to a mode.
    pub mode_best_l1: Option<f64>,
    /// Mean distance from each mode to the average of all modes.
    pub mode_average_l1: Option<f64>,
    pub per_run: Vec<RunMetrics>,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "config,l1,pck,diversity,multimodality,mode_coverage"
    }

    pub fn csv_row(&self, label: &str) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        format!(
            "{label},{},{},{},{},{}",
            self.l1.cell(),
            self.pck.cell(),
            self.diversity.cell(),
            opt(self.multimodality),
            opt(self.mode_coverage)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], f: impl FnMut(usize) -> f64) -> Array {
        Array::from_fn(shape.to_vec(), f)
    }

    #[test]
    fn l1_examples() {
        let a = arr(&[5, 3, 3], |i| (i as f64).sin());
        assert_eq!(l1_metric(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.1);
        assert!((l1_metric(&b, &a).unwrap() - 0.3).abs() < 1e-12);
        assert!(l1_metric(&a, &arr(&[5, 3, 2], |_| 0.0)).is_err());
    }

    #[test]
    fn pck_examples() {
        let t = arr(&[4, 2, 3], |_| 0.0);
        assert_eq!(pck(&t, &t, PCK_DELTA).unwrap(), 1.0);
        let half = arr(&[4, 2, 3], |i| if (i / 3) % 2 == 1 && i % 3 == 0 { 0.3 } else { 0.0 });
        assert_eq!(pck(&half, &t, PCK_DELTA).unwrap(), 0.5);
        let edge = arr(&[4, 2, 3], |i| if i % 3 == 1 { PCK_DELTA } else { 0.0 });
        assert_eq!(pck(&edge, &t, PCK_DELTA).unwrap(), 0.0);
    }

    #[test]
    fn diversity_examples() {
        let still = arr(&[120, 3, 3], |i| (i % 9) as f64);
        assert_eq!(diversity_metric(&still, CLIP_LEN).unwrap(), 0.0);
        // Two clips: the second offset by 0.5 on every coordinate.
        let two = arr(&[100, 2, 2], |i| if i >= 200 { 0.5 } else { 0.0 });
        let d = 1.0;
        assert!((diversity_metric(&two, CLIP_LEN).unwrap() - d / 2.0).abs() < 1e-12);
        assert!(diversity_metric(&arr(&[99, 2, 2], |_| 0.0), CLIP_LEN).is_err());
    }

    #[test]
    fn multimodality_examples() {
        let a = arr(&[6, 2, 2], |i| i as f64);
        assert_eq!(multimodality_metric(&vec![a.clone(); 20]).unwrap(), 0.0);
        let b = a.map(|v| v + 0.25);
        assert!((multimodality_metric(&[a.clone(), b]).unwrap() - 0.25).abs() < 1e-12);
        assert!(multimodality_metric(&[a]).is_err());
        assert_eq!(pair_normalization(20), 1.0 / 200.0);
    }

    #[test]
    fn coverage_examples() {
        let m0 = arr(&[10, 2, 2], |_| 0.0);
        let m1 = arr(&[10, 2, 2], |_| 1.0);
        let modes = [m0.clone(), m1.clone()];
        let gap = l1_metric(&m0, &m1).unwrap();
        let thr = 0.35 * gap;
        let exact = mode_coverage(&modes, &modes, thr).unwrap();
        assert_eq!(exact.coverage, 1.0);
        let avg = mean_of(&modes).unwrap();
        let mid = mode_coverage(&vec![avg; 20], &modes, thr).unwrap();
        assert_eq!(mid.coverage, 0.0);
        assert!((mid.nearest[0] - gap / 2.0).abs() < 1e-12);
        let single = mode_coverage(&[m1], &modes, thr).unwrap();
        assert!(single.coverage <= 0.5);
        assert!(mode_coverage(&modes, &[], thr).is_err());
    }

    #[test]
    fn speeds_and_percentiles() {
        // Joint 0 static, joint 1 moving (3, 4) per frame.
        let m = arr(&[3, 2, 2], |i| if (i / 2) % 2 == 1 { [3.0, 4.0][i % 2] * (i / 4) as f64 } else { 1.0 });
        assert_eq!(joint_speeds(&m).unwrap(), vec![0.0, 5.0, 0.0, 5.0]);
        assert!(joint_speeds(&arr(&[1, 2, 2], |_| 0.0)).is_err());
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.99), Some(99.0));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 1.0), Some(100.0));
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn aggregate_cells() {
        let l = Aggregate::lower_is_better(&[0.3, 0.1, 0.2]);
        assert!((l.avg - 0.2).abs() < 1e-12 && l.best == 0.1);
        let h = Aggregate::higher_is_better(&[0.3, 0.1, 0.2]);
        assert_eq!(h.best, 0.3);
        assert_eq!(l.cell(), "0.2000 (0.1000)");
    }
}
