//! Desk-scale downstream evaluation: nearest-class-mean identification and
//! cosine pair verification.
//!
//! Nearest class mean is used instead of training a classifier because it
//! is deterministic, fast, and directly sensitive to how well the retained
//! faces estimate class structure, which is the property a core set must
//! preserve. The reports say so in their metadata; the numbers are not
//! claims about any benchmark protocol.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::master_stream;
use crate::store::{apply_manifest, Dataset, SelectionManifest};
use crate::vecmath::{cluster_center, cosine_to_direction, dot_unit};

/// Evaluation of one training set against the shared holdout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    /// Strategy label ("full" for the unrestricted set).
    pub strategy: String,
    /// Retained fraction of the full set.
    pub ratio: f64,
    pub rank1_accuracy: f64,
    /// (FAR level, TAR) in the order the levels were requested.
    pub tar_at_far: Vec<(f64, f64)>,
    pub genuine_pairs: u64,
    pub impostor_pairs: u64,
}

/// Rank-1 nearest-class-mean identification: each holdout face is assigned
/// the identity whose renormalized train center it is most similar to,
/// ties broken by ascending identity id.
pub fn ncm_identify(train: &Dataset, holdout: &Dataset) -> Result<f64> {
    let mut centers: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for g in &train.groups {
        let c = cluster_center(g.features())?;
        centers.insert(g.id.as_str(), c.unit_direction()?);
    }
    for g in &holdout.groups {
        if !centers.contains_key(g.id.as_str()) {
            return Err(Error::MissingIdentity(g.id.clone()));
        }
    }
    let center_list: Vec<(&str, &Vec<f64>)> = centers.iter().map(|(k, v)| (*k, v)).collect();

    let correct: usize = holdout
        .groups
        .par_iter()
        .map(|g| {
            let mut hits = 0usize;
            for (_, face) in &g.faces {
                let mut best: Option<(&str, f64)> = None;
                for (id, dir) in &center_list {
                    let s = cosine_to_direction(face, dir);
                    match best {
                        Some((_, bs)) if s <= bs => {}
                        _ => best = Some((id, s)),
                    }
                }
                if best.expect("train has identities").0 == g.id {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(correct as f64 / holdout.total_faces() as f64)
}

/// Pair-verification result.
#[derive(Clone, Debug)]
pub struct VerifyResult {
    pub tar_at_far: Vec<(f64, f64)>,
    pub genuine_pairs: u64,
    pub impostor_pairs: u64,
}

/// Cosine pair verification on the holdout set: up to `pair_budget`
/// genuine (same identity) and impostor (cross identity) pairs are scored,
/// the threshold for each FAR level is the empirical impostor quantile
/// (no interpolation), and TAR is the fraction of genuine pairs above it.
///
/// `train` participates only through its identity coverage check; the pair
/// scores are holdout-only, so verification does not vary across core
/// sets of the same dataset.
pub fn verify(
    train: &Dataset,
    holdout: &Dataset,
    far_levels: &[f64],
    pair_budget: usize,
    seed: u64,
) -> Result<VerifyResult> {
    if holdout.groups.len() < 2 {
        return Err(Error::Config(
            "verification needs at least 2 identities".into(),
        ));
    }
    if far_levels.is_empty() {
        return Err(Error::Config("at least one FAR level is required".into()));
    }
    for &far in far_levels {
        if !far.is_finite() || far <= 0.0 || far >= 1.0 {
            return Err(Error::Config(format!(
                "FAR levels must lie in (0, 1), got {far}"
            )));
        }
    }
    if pair_budget == 0 {
        return Err(Error::Config("pair budget must be positive".into()));
    }
    let train_ids: HashSet<&str> = train.groups.iter().map(|g| g.id.as_str()).collect();
    for g in &holdout.groups {
        if !train_ids.contains(g.id.as_str()) {
            return Err(Error::MissingIdentity(g.id.clone()));
        }
    }

    let mut rng = master_stream(seed);

    // Canonical group order (sorted identity id), so pair sampling does
    // not depend on how the holdout file happens to be ordered.
    let mut group_order: Vec<usize> = (0..holdout.groups.len()).collect();
    group_order.sort_by(|&a, &b| holdout.groups[a].id.cmp(&holdout.groups[b].id));

    // Flat face list and per-group offsets for pair decoding.
    let flat: Vec<(usize, usize)> = group_order
        .iter()
        .flat_map(|&gi| (0..holdout.groups[gi].len()).map(move |p| (gi, p)))
        .collect();

    // Genuine pairs: exhaustive up to the budget, uniform sample otherwise.
    let genuine_total: u64 = holdout
        .groups
        .iter()
        .map(|g| {
            let n = g.len() as u64;
            n * (n - 1) / 2
        })
        .sum();
    let mut genuine_scores: Vec<f64> = Vec::new();
    if genuine_total <= pair_budget as u64 {
        for &gi in &group_order {
            let g = &holdout.groups[gi];
            for i in 0..g.len() {
                for j in (i + 1)..g.len() {
                    genuine_scores.push(dot_unit(&g.faces[i].1, &g.faces[j].1));
                }
            }
        }
    } else {
        let mut group_offsets = Vec::with_capacity(group_order.len());
        let mut acc = 0u64;
        for &gi in &group_order {
            group_offsets.push(acc);
            let n = holdout.groups[gi].len() as u64;
            acc += n * (n - 1) / 2;
        }
        for pick in rand::seq::index::sample(&mut rng, genuine_total as usize, pair_budget) {
            let pick = pick as u64;
            let slot = match group_offsets.binary_search(&pick) {
                Ok(i) => i,
                Err(i) => i - 1,
            };
            let g = &holdout.groups[group_order[slot]];
            let (i, j) = unrank_pair(g.len(), pick - group_offsets[slot]);
            genuine_scores.push(dot_unit(&g.faces[i].1, &g.faces[j].1));
        }
    }

    // Impostor pairs: exhaustive when small, otherwise rejection-sampled
    // distinct pairs.
    let faces_total = flat.len() as u64;
    let impostor_total = faces_total * (faces_total - 1) / 2 - genuine_total;
    let mut impostor_scores: Vec<f64> = Vec::new();
    if impostor_total <= pair_budget as u64 {
        for a in 0..flat.len() {
            for b in (a + 1)..flat.len() {
                let (ga, pa) = flat[a];
                let (gb, pb) = flat[b];
                if ga == gb {
                    continue;
                }
                impostor_scores.push(dot_unit(
                    &holdout.groups[ga].faces[pa].1,
                    &holdout.groups[gb].faces[pb].1,
                ));
            }
        }
    } else {
        let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(pair_budget);
        while impostor_scores.len() < pair_budget {
            let a = rng.gen_range(0..flat.len());
            let b = rng.gen_range(0..flat.len());
            if a == b {
                continue;
            }
            let (lo, hi) = (a.min(b), a.max(b));
            let (ga, pa) = flat[lo];
            let (gb, pb) = flat[hi];
            if ga == gb || !seen.insert((lo, hi)) {
                continue;
            }
            impostor_scores.push(dot_unit(
                &holdout.groups[ga].faces[pa].1,
                &holdout.groups[gb].faces[pb].1,
            ));
        }
    }

    let min_far = far_levels.iter().copied().fold(f64::INFINITY, f64::min);
    if (impostor_scores.len() as f64) < 1.0 / min_far {
        return Err(Error::InsufficientPairs {
            available: impostor_scores.len(),
            far: min_far,
        });
    }

    // Impostor scores descending; the threshold for FAR f is the score at
    // rank floor(f * M), so at most that many impostors score above it.
    let mut sorted = impostor_scores.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let m = sorted.len();
    let g_total = genuine_scores.len() as f64;
    let tar_at_far: Vec<(f64, f64)> = far_levels
        .iter()
        .map(|&far| {
            let k = ((far * m as f64).floor() as usize).min(m - 1);
            let threshold = sorted[k];
            let tar = genuine_scores.iter().filter(|&&s| s > threshold).count() as f64 / g_total;
            (far, tar)
        })
        .collect();

    Ok(VerifyResult {
        tar_at_far,
        genuine_pairs: genuine_scores.len() as u64,
        impostor_pairs: impostor_scores.len() as u64,
    })
}

/// Unranks pair index `p` into (i, j), i < j, for a group of `n` faces,
/// enumerating row by row: (0,1), (0,2), ..., (1,2), ...
fn unrank_pair(n: usize, mut p: u64) -> (usize, usize) {
    for i in 0..n {
        let row = (n - 1 - i) as u64;
        if p < row {
            return (i, i + 1 + p as usize);
        }
        p -= row;
    }
    unreachable!("pair index out of range");
}

/// Evaluates the full set and each manifest-restricted set against the
/// holdout. Pair verification is computed once; its scores depend only on
/// the holdout.
pub fn compare(
    full: &Dataset,
    manifests: &[SelectionManifest],
    holdout: &Dataset,
    far_levels: &[f64],
    pair_budget: usize,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let verification = verify(full, holdout, far_levels, pair_budget, seed)?;
    let mut reports = Vec::with_capacity(manifests.len() + 1);
    reports.push(EvalReport {
        strategy: "full".into(),
        ratio: 1.0,
        rank1_accuracy: ncm_identify(full, holdout)?,
        tar_at_far: verification.tar_at_far.clone(),
        genuine_pairs: verification.genuine_pairs,
        impostor_pairs: verification.impostor_pairs,
    });
    for manifest in manifests {
        let restricted = apply_manifest(full, manifest)?;
        let strategy = manifest
            .sampler
            .get("strategy")
            .and_then(|v| v.as_str())
            .unwrap_or("unknown")
            .to_string();
        reports.push(EvalReport {
            strategy,
            ratio: manifest.totals.ratio,
            rank1_accuracy: ncm_identify(&restricted, holdout)?,
            tar_at_far: verification.tar_at_far.clone(),
            genuine_pairs: verification.genuine_pairs,
            impostor_pairs: verification.impostor_pairs,
        });
    }
    Ok(reports)
}
