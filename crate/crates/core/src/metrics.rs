//! Sparsity and distribution statistics.
//!
//! Global sparsity of an identity is the negated mean of all ordered
//! pairwise cosine similarities, self-pairs included; it is computed as
//! `-|sum of features|^2 / N^2`, which is algebraically identical to the
//! double sum but O(N d). The intra-class pair histogram excludes
//! self-pairs since it describes distinct-face pairs. Both choices are
//! recorded in report metadata.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::identity_stream;
use crate::store::{Dataset, IdentityGroup};
use crate::vecmath::{dot_unit, FeatureVector};

/// Default cap on intra-class pairs fed into the histogram; above it pairs
/// are subsampled uniformly with a fixed seed.
pub const DEFAULT_PAIR_BUDGET: u64 = 10_000_000;
/// Fixed seed for pair subsampling, so reports are reproducible without a
/// user-provided seed.
pub const PAIR_SAMPLE_SEED: u64 = 0x6e6d_7370_6169_7273;

/// Global sparsity per identity plus the unweighted mean over identities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparsityReport {
    pub per_identity: BTreeMap<String, f64>,
    pub mean_s: f64,
    /// Total ordered pairs considered, self-pairs included.
    pub pair_count: u64,
}

/// Global sparsity of one identity: `-(1/N^2) * sum_ij f_i . f_j`,
/// including the `i = j` terms, computed as `-|sum f_i|^2 / N^2`.
pub fn sparsity(group: &IdentityGroup) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    sparsity_of(group.features())
}

/// Same as [`sparsity`] but over any nonempty feature sequence.
pub fn sparsity_of<'a, I>(features: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    let mut iter = features.into_iter();
    let first = iter.next().ok_or(Error::EmptyGroup)?;
    let mut sum: Vec<f64> = first.values().iter().map(|&v| f64::from(v)).collect();
    let mut n = 1u64;
    for f in iter {
        if f.dim() != sum.len() {
            return Err(Error::DimensionMismatch {
                left: sum.len(),
                right: f.dim(),
            });
        }
        for (acc, &v) in sum.iter_mut().zip(f.values()) {
            *acc += f64::from(v);
        }
        n += 1;
    }
    let norm_sq: f64 = sum.iter().map(|&v| v * v).sum();
    Ok(-norm_sq / (n * n) as f64)
}

/// Sparsity of every identity plus the unweighted mean, reduced in sorted
/// identity order so parallel and serial runs agree bit for bit.
pub fn dataset_sparsity(ds: &Dataset) -> SparsityReport {
    let per: Vec<(String, f64, u64)> = ds
        .groups
        .par_iter()
        .map(|g| {
            let s = sparsity(g).expect("dataset groups are nonempty");
            (g.id.clone(), s, (g.len() as u64).pow(2))
        })
        .collect();
    let per_identity: BTreeMap<String, f64> =
        per.iter().map(|(id, s, _)| (id.clone(), *s)).collect();
    let pair_count = per.iter().map(|(_, _, p)| *p).sum();
    let mean_s = per_identity.values().sum::<f64>() / per_identity.len() as f64;
    SparsityReport {
        per_identity,
        mean_s,
        pair_count,
    }
}

/// Closed-form difference in global sparsity from adding `f` versus adding
/// `f_prime` to the group: `-(2/(N+1)^2) * sum_i f_i . (f - f_prime)`.
/// Equals `sparsity(group + f) - sparsity(group + f_prime)` for unit-norm
/// inputs.
pub fn contribution_diff(
    group: &IdentityGroup,
    f: &FeatureVector,
    f_prime: &FeatureVector,
) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let dim = group.dim();
    if f.dim() != dim {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: f.dim(),
        });
    }
    if f_prime.dim() != dim {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: f_prime.dim(),
        });
    }
    let mut sum = vec![0.0f64; dim];
    for feat in group.features() {
        for (acc, &v) in sum.iter_mut().zip(feat.values()) {
            *acc += f64::from(v);
        }
    }
    let mut dot = 0.0f64;
    for ((acc, &a), &b) in sum.iter().zip(f.values()).zip(f_prime.values()) {
        dot += acc * (f64::from(a) - f64::from(b));
    }
    let n = group.len() as f64;
    Ok(-2.0 / ((n + 1.0) * (n + 1.0)) * dot)
}

/// Frequency-normalized histogram of within-identity pair similarities
/// over [-1, 1], excluding self-pairs. Identities with one face contribute
/// nothing; an empty pair set yields an all-zero histogram with no mean.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub bins: usize,
    /// Per-bin frequencies; they sum to 1 when any pair was seen.
    pub frequencies: Vec<f64>,
    /// Mean pair similarity, absent when no pairs exist.
    pub mean: Option<f64>,
    /// Unordered within-identity pairs in the dataset.
    pub pairs_total: u64,
    /// Pairs actually scored (smaller than `pairs_total` only when the
    /// budget forced subsampling).
    pub pairs_used: u64,
}

struct HistPartial {
    counts: Vec<u64>,
    sum: f64,
    used: u64,
}

/// Histogram over all unordered within-identity pairs, subsampled above
/// `pair_budget` with the fixed [`PAIR_SAMPLE_SEED`].
pub fn intra_similarity_histogram(
    ds: &Dataset,
    bins: usize,
    pair_budget: u64,
) -> Result<SimilarityHistogram> {
    if bins < 2 {
        return Err(Error::Config(format!("bins must be at least 2, got {bins}")));
    }
    let pairs_total: u64 = ds
        .groups
        .iter()
        .map(|g| {
            let n = g.len() as u64;
            n * (n - 1) / 2
        })
        .sum();
    let keep_probability = if pairs_total > pair_budget {
        pair_budget as f64 / pairs_total as f64
    } else {
        1.0
    };

    let partials: Vec<HistPartial> = ds
        .groups
        .par_iter()
        .map(|g| {
            let mut counts = vec![0u64; bins];
            let mut sum = 0.0f64;
            let mut used = 0u64;
            let mut rng = identity_stream(PAIR_SAMPLE_SEED, &g.id);
            for i in 0..g.len() {
                for j in (i + 1)..g.len() {
                    if keep_probability < 1.0 && rng.gen::<f64>() >= keep_probability {
                        continue;
                    }
                    let s = dot_unit(&g.faces[i].1, &g.faces[j].1);
                    let bin = (((s + 1.0) / 2.0) * bins as f64) as usize;
                    counts[bin.min(bins - 1)] += 1;
                    sum += s;
                    used += 1;
                }
            }
            HistPartial { counts, sum, used }
        })
        .collect();

    let mut counts = vec![0u64; bins];
    let mut sum = 0.0f64;
    let mut used = 0u64;
    for p in &partials {
        for (acc, &c) in counts.iter_mut().zip(&p.counts) {
            *acc += c;
        }
        sum += p.sum;
        used += p.used;
    }

    let frequencies = if used == 0 {
        vec![0.0; bins]
    } else {
        counts.iter().map(|&c| c as f64 / used as f64).collect()
    };
    let mean = if used == 0 { None } else { Some(sum / used as f64) };
    Ok(SimilarityHistogram {
        bins,
        frequencies,
        mean,
        pairs_total,
        pairs_used: used,
    })
}

/// Left and right edge of a histogram bin over [-1, 1].
pub fn bin_edges(bins: usize, bin: usize) -> (f64, f64) {
    let width = 2.0 / bins as f64;
    (-1.0 + bin as f64 * width, -1.0 + (bin + 1) as f64 * width)
}

/// Population statistics of faces-per-identity counts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountStats {
    pub mean: f64,
    pub variance: f64,
    /// Population standard deviation; text output reports mean +/- std.
    pub std: f64,
    /// Identities per distinct face count, ascending by count.
    pub histogram: Vec<CountBucket>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountBucket {
    pub faces: u64,
    pub identities: u64,
}

pub fn count_stats(ds: &Dataset) -> CountStats {
    let mut buckets: BTreeMap<u64, u64> = BTreeMap::new();
    for g in &ds.groups {
        *buckets.entry(g.len() as u64).or_insert(0) += 1;
    }
    let total = ds.groups.len() as f64;
    let mean = buckets
        .iter()
        .map(|(&c, &n)| c as f64 * n as f64)
        .sum::<f64>()
        / total;
    let variance = buckets
        .iter()
        .map(|(&c, &n)| (c as f64 - mean).powi(2) * n as f64)
        .sum::<f64>()
        / total;
    CountStats {
        mean,
        variance,
        std: variance.sqrt(),
        histogram: buckets
            .into_iter()
            .map(|(faces, identities)| CountBucket { faces, identities })
            .collect(),
    }
}
