//! Core-set selection strategies.
//!
//! Face-NMS is the main strategy. Per identity it scores every face by
//! similarity to the cluster center (computed once, from the full group,
//! never updated after suppression), then loops: retain the remaining face
//! with the lowest score and drop every remaining face whose cosine
//! similarity to it is `>= n_t`. Retained pairs therefore always sit
//! strictly below the threshold, and the selection sequence has
//! non-decreasing center similarity.
//!
//! The remaining strategies are comparison baselines: keep the faces
//! farthest from the center, threshold pairs in a random visitation order,
//! uniform sampling globally or per identity, greedy max-min k-center, and
//! top-k selection from an external score file.
//!
//! Tie-breaking is ascending face index everywhere. Budgets round half up
//! and never empty an identity: `k = max(1, round(ratio * N))`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{identity_stream, master_stream};
use crate::store::{Dataset, IdentityGroup, SelectionManifest};
use crate::vecmath::{cluster_center, cosine_to_direction, dot_unit};

/// Default cap on group size for the quadratic k-center baseline.
pub const DEFAULT_K_CENTER_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FaceNms,
    AwayCenter,
    SimThreshold,
    GlobalRandom,
    IdentityRandom,
    KCenter,
    ScoreFile,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::FaceNms,
        Strategy::AwayCenter,
        Strategy::SimThreshold,
        Strategy::GlobalRandom,
        Strategy::IdentityRandom,
        Strategy::KCenter,
        Strategy::ScoreFile,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::FaceNms => "face_nms",
            Strategy::AwayCenter => "away_center",
            Strategy::SimThreshold => "sim_threshold",
            Strategy::GlobalRandom => "global_random",
            Strategy::IdentityRandom => "identity_random",
            Strategy::KCenter => "k_center",
            Strategy::ScoreFile => "score_file",
        }
    }

    /// Strategies that consume random draws.
    pub fn is_randomized(&self) -> bool {
        matches!(
            self,
            Strategy::SimThreshold | Strategy::GlobalRandom | Strategy::IdentityRandom
        )
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreOrder {
    HigherScoreFirst,
    LowerScoreFirst,
}

impl std::str::FromStr for ScoreOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher_score_first" => Ok(ScoreOrder::HigherScoreFirst),
            "lower_score_first" => Ok(ScoreOrder::LowerScoreFirst),
            other => Err(Error::Config(format!(
                "unknown score order '{other}' (expected higher_score_first or lower_score_first)"
            ))),
        }
    }
}

/// Sampler configuration; echoed verbatim into the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Similarity threshold for face_nms and sim_threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nt: Option<f64>,
    /// Budget for the ratio-driven strategies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// Master seed; consumed only by the randomized strategies.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<ScoreOrder>,
    /// Group-size cap for k_center.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_center_cap: Option<usize>,
}

impl SamplerConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            nt: None,
            ratio: None,
            seed: 0,
            score_path: None,
            order: None,
            k_center_cap: None,
        }
    }

    /// Rejects missing or extraneous parameters for the chosen strategy.
    pub fn validate(&self) -> Result<()> {
        let needs_nt = matches!(self.strategy, Strategy::FaceNms | Strategy::SimThreshold);
        let needs_ratio = matches!(
            self.strategy,
            Strategy::AwayCenter
                | Strategy::GlobalRandom
                | Strategy::IdentityRandom
                | Strategy::KCenter
                | Strategy::ScoreFile
        );
        if needs_nt != self.nt.is_some() {
            return Err(Error::Config(format!(
                "strategy {} {} --nt",
                self.strategy.as_str(),
                if needs_nt { "requires" } else { "does not take" }
            )));
        }
        if needs_ratio != self.ratio.is_some() {
            return Err(Error::Config(format!(
                "strategy {} {} --ratio",
                self.strategy.as_str(),
                if needs_ratio { "requires" } else { "does not take" }
            )));
        }
        if let Some(nt) = self.nt {
            if !(-1.0..=1.01).contains(&nt) {
                return Err(Error::Config(format!(
                    "nt must lie in [-1, 1.01], got {nt}"
                )));
            }
        }
        if let Some(ratio) = self.ratio {
            if !ratio.is_finite() || ratio <= 0.0 || ratio > 1.0 {
                return Err(Error::Config(format!(
                    "ratio must lie in (0, 1], got {ratio}"
                )));
            }
        }
        let is_score = self.strategy == Strategy::ScoreFile;
        if is_score != self.score_path.is_some() {
            return Err(Error::Config(format!(
                "strategy {} {} --scores",
                self.strategy.as_str(),
                if is_score { "requires" } else { "does not take" }
            )));
        }
        if is_score != self.order.is_some() {
            return Err(Error::Config(format!(
                "strategy {} {} --order",
                self.strategy.as_str(),
                if is_score { "requires" } else { "does not take" }
            )));
        }
        if self.k_center_cap.is_some() && self.strategy != Strategy::KCenter {
            return Err(Error::Config(format!(
                "strategy {} does not take --k-center-cap",
                self.strategy.as_str()
            )));
        }
        Ok(())
    }
}

/// Budget rounding: half up, never below one face.
fn budget(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).max(1)
}

/// Center-similarity score per face; on a degenerate center all ranks tie
/// and ascending face index decides, which the all-zero scores produce.
fn center_scores(group: &IdentityGroup) -> Result<Vec<f64>> {
    let center = cluster_center(group.features())?;
    match center.unit_direction() {
        Ok(dir) => Ok(group
            .faces
            .iter()
            .map(|(_, f)| cosine_to_direction(f, &dir))
            .collect()),
        Err(Error::DegenerateCenter) => Ok(vec![0.0; group.len()]),
        Err(e) => Err(e),
    }
}

/// Positions 0..n sorted ascending by score; stable, so equal scores keep
/// ascending face-index order.
fn positions_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    order
}

/// Greedy suppression: repeatedly retain the remaining face least similar
/// to the cluster center and drop every remaining face with cosine
/// `>= n_t` to it. Returns retained indices in selection order.
pub fn face_nms(group: &IdentityGroup, n_t: f64) -> Result<Vec<u32>> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let scores = center_scores(group)?;
    let order = positions_by_score(&scores);
    let mut removed = vec![false; group.len()];
    let mut retained = Vec::new();
    for &pos in &order {
        if removed[pos] {
            continue;
        }
        removed[pos] = true;
        retained.push(group.faces[pos].0);
        let kept = &group.faces[pos].1;
        for (flag, (_, face)) in removed.iter_mut().zip(&group.faces) {
            if !*flag && dot_unit(kept, face) >= n_t {
                *flag = true;
            }
        }
    }
    Ok(retained)
}

/// Keeps the `k = max(1, round(ratio * N))` faces with the lowest center
/// similarity. Maximizes global sparsity among selections that ignore pair
/// interactions.
pub fn away_center(group: &IdentityGroup, ratio: f64) -> Result<Vec<u32>> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let scores = center_scores(group)?;
    let order = positions_by_score(&scores);
    let k = budget(ratio, group.len());
    let mut indices: Vec<u32> = order[..k].iter().map(|&p| group.faces[p].0).collect();
    indices.sort_unstable();
    Ok(indices)
}

/// Visits faces in a uniformly random order and keeps a face only when its
/// cosine to every already-kept face stays below `n_t`. Local sparsity
/// only; the first visited face is always kept.
pub fn sim_threshold(group: &IdentityGroup, n_t: f64, rng: &mut impl Rng) -> Result<Vec<u32>> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut order: Vec<usize> = (0..group.len()).collect();
    order.shuffle(rng);
    let mut kept_positions: Vec<usize> = Vec::new();
    for &pos in &order {
        let candidate = &group.faces[pos].1;
        let conflict = kept_positions
            .iter()
            .any(|&kp| dot_unit(candidate, &group.faces[kp].1) >= n_t);
        if !conflict {
            kept_positions.push(pos);
        }
    }
    let mut indices: Vec<u32> = kept_positions
        .iter()
        .map(|&p| group.faces[p].0)
        .collect();
    indices.sort_unstable();
    Ok(indices)
}

/// Uniform sample of `k = max(1, round(ratio * N))` faces within the group.
pub fn identity_random(group: &IdentityGroup, ratio: f64, rng: &mut impl Rng) -> Result<Vec<u32>> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let k = budget(ratio, group.len());
    let mut picks: Vec<usize> = rand::seq::index::sample(rng, group.len(), k).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|p| group.faces[p].0).collect())
}

/// Greedy max-min k-center: seed with the face farthest from the cluster
/// center, then repeatedly add the face maximizing its minimum cosine
/// distance (1 - cosine) to the selected set. Quadratic in the group size,
/// hence the cap.
pub fn k_center(group: &IdentityGroup, ratio: f64, cap: usize) -> Result<Vec<u32>> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if group.len() > cap {
        return Err(Error::GroupTooLarge {
            identity: group.id.clone(),
            size: group.len(),
            cap,
        });
    }
    let scores = center_scores(group)?;
    let seed = positions_by_score(&scores)[0];
    let k = budget(ratio, group.len());

    let mut selected = vec![false; group.len()];
    selected[seed] = true;
    let mut picked = vec![seed];
    let mut min_dist: Vec<f64> = group
        .faces
        .iter()
        .map(|(_, f)| 1.0 - dot_unit(&group.faces[seed].1, f))
        .collect();
    while picked.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for pos in 0..group.len() {
            if selected[pos] {
                continue;
            }
            match best {
                Some((_, d)) if min_dist[pos] <= d => {}
                _ => best = Some((pos, min_dist[pos])),
            }
        }
        let (next, _) = best.expect("k <= N leaves a candidate");
        selected[next] = true;
        picked.push(next);
        for pos in 0..group.len() {
            if !selected[pos] {
                let d = 1.0 - dot_unit(&group.faces[next].1, &group.faces[pos].1);
                if d < min_dist[pos] {
                    min_dist[pos] = d;
                }
            }
        }
    }
    let mut indices: Vec<u32> = picked.iter().map(|&p| group.faces[p].0).collect();
    indices.sort_unstable();
    Ok(indices)
}

/// Uniform sample of `round(ratio * total)` faces across the whole dataset.
/// Identities left empty get their single highest-center-similarity face
/// restored; the excess is then trimmed from the currently largest groups
/// (never below one face) to hold the budget.
fn global_random_selection(
    ds: &Dataset,
    ratio: f64,
    rng: &mut impl Rng,
) -> Result<BTreeMap<String, Vec<u32>>> {
    let total = ds.total_faces();
    let target = (ratio * total as f64).round() as usize;

    let mut offsets = Vec::with_capacity(ds.groups.len());
    let mut acc = 0usize;
    for g in &ds.groups {
        offsets.push(acc);
        acc += g.len();
    }
    let mut kept: Vec<Vec<usize>> = vec![Vec::new(); ds.groups.len()];
    for flat in rand::seq::index::sample(rng, total, target.min(total)) {
        let gi = match offsets.binary_search(&flat) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        kept[gi].push(flat - offsets[gi]);
    }

    // Restore one representative face for any emptied identity.
    for (gi, group) in ds.groups.iter().enumerate() {
        if kept[gi].is_empty() {
            let scores = center_scores(group)?;
            let mut best = 0usize;
            for (pos, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = pos;
                }
            }
            kept[gi].push(best);
        }
    }

    // Trim the excess caused by restoration, always from a currently
    // largest group, until the budget holds or only singletons remain.
    let mut retained_total: usize = kept.iter().map(|v| v.len()).sum();
    while retained_total > target {
        let candidate = (0..kept.len())
            .filter(|&gi| kept[gi].len() >= 2)
            .max_by_key(|&gi| kept[gi].len());
        let Some(gi) = candidate else { break };
        let victim = rng.gen_range(0..kept[gi].len());
        kept[gi].swap_remove(victim);
        retained_total -= 1;
    }

    let mut result = BTreeMap::new();
    for (gi, group) in ds.groups.iter().enumerate() {
        let mut positions = std::mem::take(&mut kept[gi]);
        positions.sort_unstable();
        let indices: Vec<u32> = positions.iter().map(|&p| group.faces[p].0).collect();
        result.insert(group.id.clone(), indices);
    }
    Ok(result)
}

/// Scores keyed by `(identity_id, face_index)` from a CSV file with header
/// `identity_id,face_index,score`.
pub struct ScoreTable {
    scores: HashMap<(String, u32), f64>,
}

impl ScoreTable {
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e)),
                _ => Error::MalformedScoreFile(e.to_string()),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::MalformedScoreFile(e.to_string()))?;
        let expected = ["identity_id", "face_index", "score"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::MalformedScoreFile(format!(
                "header must be 'identity_id,face_index,score', got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut scores = HashMap::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::MalformedScoreFile(e.to_string()))?;
            let line = row + 2;
            if record.len() != 3 {
                return Err(Error::MalformedScoreFile(format!(
                    "line {line}: expected 3 fields, got {}",
                    record.len()
                )));
            }
            let identity = record[0].to_string();
            let face: u32 = record[1].trim().parse().map_err(|_| {
                Error::MalformedScoreFile(format!("line {line}: bad face index '{}'", &record[1]))
            })?;
            let score: f64 = record[2].trim().parse().map_err(|_| {
                Error::MalformedScoreFile(format!("line {line}: bad score '{}'", &record[2]))
            })?;
            if !score.is_finite() {
                return Err(Error::MalformedScoreFile(format!(
                    "line {line}: score must be finite"
                )));
            }
            if scores.insert((identity.clone(), face), score).is_some() {
                return Err(Error::MalformedScoreFile(format!(
                    "line {line}: duplicate entry for identity '{identity}' face {face}"
                )));
            }
        }
        Ok(Self { scores })
    }

    pub fn get(&self, identity: &str, face: u32) -> Option<f64> {
        self.scores.get(&(identity.to_string(), face)).copied()
    }
}

/// Per-identity top-k by external score; ties by ascending face index.
pub fn score_select(
    group: &IdentityGroup,
    table: &ScoreTable,
    ratio: f64,
    order: ScoreOrder,
) -> Result<Vec<u32>> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut scored: Vec<(u32, f64)> = Vec::with_capacity(group.len());
    for (idx, _) in &group.faces {
        let score = table.get(&group.id, *idx).ok_or_else(|| Error::MissingScore {
            identity: group.id.clone(),
            face: *idx,
        })?;
        scored.push((*idx, score));
    }
    scored.sort_by(|a, b| {
        let by_score = match order {
            ScoreOrder::HigherScoreFirst => b.1.partial_cmp(&a.1),
            ScoreOrder::LowerScoreFirst => a.1.partial_cmp(&b.1),
        }
        .expect("finite scores");
        by_score.then(a.0.cmp(&b.0))
    });
    let k = budget(ratio, group.len());
    let mut indices: Vec<u32> = scored[..k].iter().map(|(i, _)| *i).collect();
    indices.sort_unstable();
    Ok(indices)
}

/// Result of a threshold calibration run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub nt: f64,
    pub achieved_ratio: f64,
    pub evaluations: u32,
}

fn retention_ratio(ds: &Dataset, n_t: f64) -> Result<f64> {
    let retained: usize = ds
        .groups
        .par_iter()
        .map(|g| face_nms(g, n_t).map(|v| v.len()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(retained as f64 / ds.total_faces() as f64)
}

/// Bisects the suppression threshold over [-1, 1.01] so that a full
/// Face-NMS pass retains close to `target_ratio` of the dataset, treating
/// retention as non-decreasing in the threshold. Returns the evaluated
/// threshold whose achieved ratio came closest to the target; within `tol`
/// whenever the retention curve is monotone near it.
pub fn calibrate_threshold(
    ds: &Dataset,
    target_ratio: f64,
    tol: f64,
    max_iters: u32,
) -> Result<Calibration> {
    if !target_ratio.is_finite() || target_ratio <= 0.0 || target_ratio > 1.0 {
        return Err(Error::Config(format!(
            "target ratio must lie in (0, 1], got {target_ratio}"
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Config(format!("tol must be positive, got {tol}")));
    }

    let mut evaluations = 0u32;
    let mut best: Option<Calibration> = None;
    let consider = |nt: f64, achieved: f64, best: &mut Option<Calibration>| {
        let better = match best {
            Some(b) => (achieved - target_ratio).abs() < (b.achieved_ratio - target_ratio).abs(),
            None => true,
        };
        if better {
            *best = Some(Calibration {
                nt,
                achieved_ratio: achieved,
                evaluations: 0,
            });
        }
    };

    let mut lo = -1.0f64;
    let mut hi = 1.01f64;
    let hi_ratio = {
        evaluations += 1;
        retention_ratio(ds, hi)?
    };
    consider(hi, hi_ratio, &mut best);
    if (hi_ratio - target_ratio).abs() > tol {
        let lo_ratio = {
            evaluations += 1;
            retention_ratio(ds, lo)?
        };
        consider(lo, lo_ratio, &mut best);
        if (lo_ratio - target_ratio).abs() > tol {
            for _ in 0..max_iters {
                let mid = 0.5 * (lo + hi);
                evaluations += 1;
                let achieved = retention_ratio(ds, mid)?;
                consider(mid, achieved, &mut best);
                if (achieved - target_ratio).abs() <= tol {
                    break;
                }
                if achieved < target_ratio {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }

    let mut result = best.expect("at least one evaluation");
    result.evaluations = evaluations;
    Ok(result)
}

/// Runs the configured strategy over the dataset and assembles the
/// manifest. Deterministic given `(ds, config)`: per-identity strategies
/// map in parallel with per-identity streams, and identities are written
/// in sorted order.
pub fn run_sampler(ds: &Dataset, config: &SamplerConfig) -> Result<SelectionManifest> {
    config.validate()?;
    let retained: BTreeMap<String, Vec<u32>> = match config.strategy {
        Strategy::GlobalRandom => {
            let mut rng = master_stream(config.seed);
            global_random_selection(ds, config.ratio.expect("validated"), &mut rng)?
        }
        Strategy::ScoreFile => {
            let table = ScoreTable::load(config.score_path.as_ref().expect("validated"))?;
            let ratio = config.ratio.expect("validated");
            let order = config.order.expect("validated");
            ds.groups
                .par_iter()
                .map(|g| score_select(g, &table, ratio, order).map(|v| (g.id.clone(), v)))
                .collect::<Result<BTreeMap<_, _>>>()?
        }
        per_identity => {
            let seed = config.seed;
            ds.groups
                .par_iter()
                .map(|g| {
                    let indices = match per_identity {
                        Strategy::FaceNms => face_nms(g, config.nt.expect("validated"))?,
                        Strategy::AwayCenter => away_center(g, config.ratio.expect("validated"))?,
                        Strategy::SimThreshold => {
                            let mut rng = identity_stream(seed, &g.id);
                            sim_threshold(g, config.nt.expect("validated"), &mut rng)?
                        }
                        Strategy::IdentityRandom => {
                            let mut rng = identity_stream(seed, &g.id);
                            identity_random(g, config.ratio.expect("validated"), &mut rng)?
                        }
                        Strategy::KCenter => k_center(
                            g,
                            config.ratio.expect("validated"),
                            config.k_center_cap.unwrap_or(DEFAULT_K_CENTER_CAP),
                        )?,
                        _ => unreachable!("handled above"),
                    };
                    Ok((g.id.clone(), indices))
                })
                .collect::<Result<BTreeMap<_, _>>>()?
        }
    };

    let echo = serde_json::to_value(config)
        .map_err(|e| Error::Config(format!("config encoding failed: {e}")))?;
    SelectionManifest::build(ds, echo, retained)
}
