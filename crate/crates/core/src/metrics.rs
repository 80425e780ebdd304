//! Embedding-space metrics: contrastive loss, Fréchet distance, retrieval
//! precision, diversity, multimodality, joint-subset statistics and face error.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{bail, Result};
use crate::features::MotionFeatures;
use crate::graph::contrastive_value;
use crate::linalg::{mean_cov, sqrt_psd, trace};
use crate::skeleton::SkeletonSpec;
use crate::tensor::Matrix;

pub const DEFAULT_MARGIN: f64 = 10.0;
pub const RETRIEVAL_POOL: usize = 32;
pub const DIVERSITY_PAIRS: usize = 300;
pub const COVARIANCE_RIDGE: f64 = 1e-6;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding widths differ");
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `(1-y) D² + y max(0, margin - D)²` with `D` the Euclidean distance.
pub fn contrastive_loss(st: &[f64], sm: &[f64], mismatched: bool, margin: f64) -> f64 {
    contrastive_value(euclidean(st, sm), mismatched, margin)
}

fn check_finite(name: &str, set: &[Vec<f64>]) -> Result<usize> {
    let Some(d) = set.first().map(Vec::len) else {
        bail!(InvalidArgument, "{name} is empty");
    };
    for (i, v) in set.iter().enumerate() {
        if v.len() != d {
            bail!(InvalidArgument, "{name}[{i}] has dimension {} (expected {d})", v.len());
        }
        if v.iter().any(|x| !x.is_finite()) {
            bail!(NonFinite, "{name}[{i}] has non-finite entries");
        }
    }
    Ok(d)
}

/// Fréchet distance between Gaussian fits; `Tr((Σa Σb)^½)` is evaluated as
/// `Tr((Sa Σb Sa)^½)` with `Sa = Σa^½`, which is symmetric by construction.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let da = check_finite("first embedding set", a)?;
    let db = check_finite("second embedding set", b)?;
    if da != db {
        bail!(InvalidArgument, "embedding dimensions differ ({da} vs {db})");
    }
    if a.len() < 2 || b.len() < 2 {
        bail!(InvalidArgument, "each set needs at least two samples");
    }
    if a.len() <= da || b.len() <= da {
        log::warn!("fid: sample counts ({}, {}) do not exceed dimension {da}", a.len(), b.len());
    }
    let (ma, mut ca) = mean_cov(a);
    let (mb, mut cb) = mean_cov(b);
    for i in 0..da {
        ca.data[i * da + i] += COVARIANCE_RIDGE;
        cb.data[i * da + i] += COVARIANCE_RIDGE;
    }
    let mean_term: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = sqrt_psd(&ca);
    let mut inner = sa.matmul(&cb).matmul(&sa);
    symmetrize(&mut inner);
    let cross = trace(&sqrt_psd(&inner));
    Ok((mean_term + trace(&ca) + trace(&cb) - 2.0 * cross).max(0.0))
}

fn symmetrize(m: &mut Matrix) {
    let n = m.rows;
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Retrieval {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub mm_dist: f64,
}

/// R-precision over `pools` random pools of `pool` aligned pairs, plus the
/// mean matched distance over every pair.
pub fn retrieval_metrics(
    text: &[Vec<f64>],
    motion: &[Vec<f64>],
    pool: usize,
    pools: usize,
    rng: &mut impl Rng,
) -> Result<Retrieval> {
    let n = text.len();
    if motion.len() != n {
        bail!(InvalidArgument, "{} text embeddings but {} motion embeddings", n, motion.len());
    }
    if pool == 0 || n < pool {
        bail!(InvalidArgument, "retrieval needs at least {pool} pairs, got {n}");
    }
    if pools == 0 {
        bail!(InvalidArgument, "retrieval needs at least one pool");
    }
    check_finite("text embeddings", text)?;
    check_finite("motion embeddings", motion)?;
    let mut hits = [0usize; 3];
    let mut queries = 0usize;
    for _ in 0..pools {
        let idx = sample(rng, n, pool).into_vec();
        for &q in &idx {
            let own = euclidean(&text[q], &motion[q]);
            let better = idx.iter().filter(|&&m| m != q && euclidean(&text[q], &motion[m]) < own).count();
            for (k, h) in hits.iter_mut().enumerate() {
                if better <= k {
                    *h += 1;
                }
            }
            queries += 1;
        }
    }
    let mm = text.iter().zip(motion).map(|(t, m)| euclidean(t, m)).sum::<f64>() / n as f64;
    let q = queries as f64;
    Ok(Retrieval { r1: hits[0] as f64 / q, r2: hits[1] as f64 / q, r3: hits[2] as f64 / q, mm_dist: mm })
}

/// Mean distance over disjoint random pairs; `pairs` is capped at `n / 2`.
pub fn diversity(emb: &[Vec<f64>], pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    if pairs < 1 {
        bail!(InvalidArgument, "diversity needs at least one pair");
    }
    check_finite("embeddings", emb)?;
    let pairs = pairs.min(emb.len() / 2);
    if pairs < 1 {
        bail!(InvalidArgument, "diversity needs at least two embeddings");
    }
    let idx = sample(rng, emb.len(), 2 * pairs).into_vec();
    Ok(idx.chunks(2).map(|p| euclidean(&emb[p[0]], &emb[p[1]])).sum::<f64>() / pairs as f64)
}

/// Mean pairwise distance among repeated generations of one condition,
/// averaged over conditions.
pub fn multimodality(groups: &[Vec<Vec<f64>>]) -> Result<f64> {
    if groups.is_empty() {
        bail!(InvalidArgument, "multimodality needs at least one condition");
    }
    let mut total = 0.0;
    for (g, reps) in groups.iter().enumerate() {
        if reps.len() < 2 {
            bail!(InvalidArgument, "condition {g} has {} generations (need at least 2)", reps.len());
        }
        check_finite("generations", reps)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..reps.len() {
            for j in i + 1..reps.len() {
                sum += euclidean(&reps[i], &reps[j]);
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    Ok(total / groups.len() as f64)
}

/// Position and velocity feature columns of a joint subset.
pub fn subset_columns(skeleton: &SkeletonSpec, subset: &[usize]) -> Result<Vec<usize>> {
    if subset.is_empty() {
        bail!(InvalidArgument, "joint subset is empty");
    }
    let layout = skeleton.layout();
    let mut cols = Vec::new();
    for &j in subset {
        if j >= skeleton.joint_count() {
            bail!(InvalidArgument, "joint {j} is outside the skeleton ({} joints)", skeleton.joint_count());
        }
        if j > 0 {
            cols.extend(layout.position_of(j));
        } else {
            cols.extend(layout.root());
        }
    }
    for &j in subset {
        cols.extend(layout.velocity_of(j));
    }
    Ok(cols)
}

/// Per-column mean and standard deviation over frames of the subset columns.
pub fn subset_statistics(clip: &MotionFeatures, columns: &[usize]) -> Vec<f64> {
    let f = clip.frames() as f64;
    let mut out = Vec::with_capacity(2 * columns.len());
    for &c in columns {
        let mean = (0..clip.frames()).map(|i| clip.values.get(i, c)).sum::<f64>() / f;
        out.push(mean);
    }
    for (k, &c) in columns.iter().enumerate() {
        let mean = out[k];
        let var = (0..clip.frames()).map(|i| { let d = clip.values.get(i, c) - mean; d * d }).sum::<f64>() / f;
        out.push(libm::sqrt(var));
    }
    out
}

/// Copy of `clip` with every column outside `columns` set to zero.
pub fn restrict_columns(clip: &MotionFeatures, columns: &[usize]) -> MotionFeatures {
    let mut keep = vec![false; clip.dim()];
    for &c in columns {
        keep[c] = true;
    }
    let mut out = clip.clone();
    for i in 0..out.frames() {
        for (c, v) in out.values.row_mut(i).iter_mut().enumerate() {
            if !keep[c] {
                *v = 0.0;
            }
        }
    }
    out
}

/// Mean squared error over the face coefficients of paired clips.
pub fn face_mse(generated: &[MotionFeatures], reference: &[MotionFeatures], skeleton: &SkeletonSpec) -> Result<f64> {
    if generated.len() != reference.len() || generated.is_empty() {
        bail!(InvalidArgument, "face MSE needs equally many clips ({} vs {})", generated.len(), reference.len());
    }
    let face = skeleton.layout().face();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (g, r) in generated.iter().zip(reference) {
        if g.frames() != r.frames() || g.dim() != r.dim() {
            bail!(InvalidArgument, "clip shapes differ ({}x{} vs {}x{})", g.frames(), g.dim(), r.frames(), r.dim());
        }
        for i in 0..g.frames() {
            for c in face.clone() {
                let d = g.values.get(i, c) - r.values.get(i, c);
                sum += d * d;
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRow {
    pub name: String,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
}

/// Mean and 95% half-width over repeats; needs at least two values.
pub fn summarize(name: impl Into<String>, values: &[f64]) -> Result<MetricRow> {
    let name = name.into();
    if values.len() < 2 {
        bail!(InvalidArgument, "metric '{name}' needs at least 2 repeats for an interval");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MetricRow { name, mean, ci95: 1.96 * libm::sqrt(var) / libm::sqrt(n) })
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    /// `key: value` lines printed above the table.
    pub header: Vec<(String, String)>,
    pub repeats: usize,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn row(&self, name: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.header {
            writeln!(f, "# {k}: {v}")?;
        }
        writeln!(f, "# repeats: {}", self.repeats)?;
        writeln!(f, "{:<28} {:>14} {:>14}", "metric", "mean", "ci95")?;
        for r in &self.rows {
            writeln!(f, "{}", format!("{:<28} {:>14.6} {:>14.6}", r.name, r.mean, r.ci95))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_sets_have_zero_fid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();
        assert!(fid(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn summarize_interval() {
        let r = summarize("x", &[1.0, 3.0]).unwrap();
        assert_eq!(r.mean, 2.0);
        assert!((r.ci95 - 1.96 * libm::sqrt(2.0) / libm::sqrt(2.0)).abs() < 1e-12);
        assert!(summarize("x", &[1.0]).is_err());
    }

    #[test]
    fn retrieval_is_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let m: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let r = retrieval_metrics(&t, &m, 32, 20, &mut rng).unwrap();
        assert!(r.r1 <= r.r2 && r.r2 <= r.r3);
    }
}
