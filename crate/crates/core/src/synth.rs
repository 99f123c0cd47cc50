//! Synthetic identity-clustered embedding generator.
//!
//! Stands in for proxy-model features at desk scale: each identity gets a
//! center drawn uniformly on the unit sphere, a lognormal face count, and
//! faces sampled as `normalize(center + noise_sigma * gaussian)`. With
//! probability `dup_prob` a face is instead a near-duplicate of an earlier
//! face of the same identity, modeling the redundancy of greedily
//! collected data. Holdout faces are generated the same way but are never
//! near-duplicates, so evaluation cannot be gamed by memorized copies.
//!
//! This is Gaussian-perturb-then-normalize, not a von Mises-Fisher
//! sampler; it is documented as such so the spread is not mistaken for vMF.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::identity_stream;
use crate::store::{Dataset, IdentityGroup};
use crate::vecmath::FeatureVector;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub identities: usize,
    /// Mean of the per-identity face count distribution.
    pub faces_mean: f64,
    /// Standard deviation of the per-identity face count distribution.
    pub faces_std: f64,
    /// Within-identity Gaussian scale before renormalization.
    pub noise_sigma: f64,
    /// Probability that a face is a near-duplicate of an earlier one.
    pub dup_prob: f64,
    /// Gaussian scale of the near-duplicate jitter.
    pub dup_jitter: f64,
    pub seed: u64,
    /// Held-out faces per identity for evaluation.
    #[serde(default)]
    pub holdout_per_identity: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!(
                "dim must be at least 2, got {}",
                self.dim
            )));
        }
        if self.identities < 1 {
            return Err(Error::Config("identities must be at least 1".into()));
        }
        if !self.faces_mean.is_finite() || self.faces_mean <= 0.0 {
            return Err(Error::Config(format!(
                "faces_mean must be positive, got {}",
                self.faces_mean
            )));
        }
        if !self.faces_std.is_finite() || self.faces_std < 0.0 {
            return Err(Error::Config(format!(
                "faces_std must be non-negative, got {}",
                self.faces_std
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma <= 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.dup_prob) {
            return Err(Error::Config(format!(
                "dup_prob must lie in [0, 1), got {}",
                self.dup_prob
            )));
        }
        if !self.dup_jitter.is_finite() || self.dup_jitter < 0.0 {
            return Err(Error::Config(format!(
                "dup_jitter must be non-negative, got {}",
                self.dup_jitter
            )));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn to_unit_feature(raw: &[f64]) -> Result<FeatureVector> {
    let f32s: Vec<f32> = raw.iter().map(|&v| v as f32).collect();
    FeatureVector::normalize(&f32s)
}

/// Lognormal draw with the requested mean and standard deviation, clamped
/// to `[1, 10 * faces_mean]` and rounded half up.
fn face_count(rng: &mut impl Rng, mean: f64, std: f64, cap: f64) -> usize {
    let value = if std == 0.0 {
        mean
    } else {
        let sigma_sq = (1.0 + (std / mean).powi(2)).ln();
        let mu = mean.ln() - sigma_sq / 2.0;
        let z: f64 = rng.sample(StandardNormal);
        (mu + sigma_sq.sqrt() * z).exp()
    };
    (value.clamp(1.0, cap).round() as usize).max(1)
}

/// Generates the train and holdout datasets for `cfg`. Fully deterministic
/// given the seed, independent of the parallel schedule: identity `i` uses
/// the stream keyed by its id, with draws ordered as center, face count,
/// then per face the duplicate decision (faces after the first), the
/// duplicate source when applicable, and the perturbation vector; holdout
/// faces follow on the same stream.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, Option<Dataset>)> {
    cfg.validate()?;
    let cap = 10.0 * cfg.faces_mean;

    let per_identity: Vec<(IdentityGroup, Option<IdentityGroup>)> = (0..cfg.identities)
        .into_par_iter()
        .map(|i| {
            let id = format!("id{i:06}");
            let mut rng = identity_stream(cfg.seed, &id);

            let center_raw = gaussian_vec(&mut rng, cfg.dim);
            let center_norm = center_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let center: Vec<f64> = center_raw.iter().map(|v| v / center_norm).collect();

            let count = face_count(&mut rng, cfg.faces_mean, cfg.faces_std, cap);
            let mut faces: Vec<(u32, FeatureVector)> = Vec::with_capacity(count);
            for j in 0..count {
                let duplicate = j > 0 && rng.gen::<f64>() < cfg.dup_prob;
                let raw: Vec<f64> = if duplicate {
                    let source = rng.gen_range(0..j);
                    let jitter = gaussian_vec(&mut rng, cfg.dim);
                    faces[source]
                        .1
                        .values()
                        .iter()
                        .zip(&jitter)
                        .map(|(&p, &g)| f64::from(p) + cfg.dup_jitter * g)
                        .collect()
                } else {
                    let noise = gaussian_vec(&mut rng, cfg.dim);
                    center
                        .iter()
                        .zip(&noise)
                        .map(|(&c, &g)| c + cfg.noise_sigma * g)
                        .collect()
                };
                let feature = to_unit_feature(&raw)?;
                faces.push((j as u32, feature));
            }
            let train = IdentityGroup {
                id: id.clone(),
                faces,
            };

            let holdout = if cfg.holdout_per_identity > 0 {
                let mut faces = Vec::with_capacity(cfg.holdout_per_identity);
                for h in 0..cfg.holdout_per_identity {
                    let noise = gaussian_vec(&mut rng, cfg.dim);
                    let raw: Vec<f64> = center
                        .iter()
                        .zip(&noise)
                        .map(|(&c, &g)| c + cfg.noise_sigma * g)
                        .collect();
                    faces.push((h as u32, to_unit_feature(&raw)?));
                }
                Some(IdentityGroup { id, faces })
            } else {
                None
            };
            Ok((train, holdout))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut train_groups = Vec::with_capacity(cfg.identities);
    let mut holdout_groups = Vec::new();
    for (train, holdout) in per_identity {
        train_groups.push(train);
        if let Some(h) = holdout {
            holdout_groups.push(h);
        }
    }

    let source = format!(
        "synth(seed={}, identities={}, dim={})",
        cfg.seed, cfg.identities, cfg.dim
    );
    let train = Dataset::new(cfg.dim, train_groups, source.clone())?;
    let holdout = if holdout_groups.is_empty() {
        None
    } else {
        Some(Dataset::new(
            cfg.dim,
            holdout_groups,
            format!("{source} holdout"),
        )?)
    };
    Ok((train, holdout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::{cosine, l2_norm};

    fn base_config() -> SynthConfig {
        SynthConfig {
            dim: 16,
            identities: 20,
            faces_mean: 10.0,
            faces_std: 5.0,
            noise_sigma: 0.25,
            dup_prob: 0.3,
            dup_jitter: 0.02,
            seed: 7,
            holdout_per_identity: 0,
        }
    }

    #[test]
    fn single_face_config() {
        let cfg = SynthConfig {
            identities: 1,
            faces_mean: 1.0,
            faces_std: 0.0,
            dup_prob: 0.0,
            ..base_config()
        };
        let (train, holdout) = generate(&cfg).unwrap();
        assert!(holdout.is_none());
        assert_eq!(train.groups.len(), 1);
        assert_eq!(train.groups[0].len(), 1);
        let norm = l2_norm(train.groups[0].faces[0].1.values());
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn vanishing_noise_collapses_identities() {
        let cfg = SynthConfig {
            noise_sigma: 1e-9,
            dup_prob: 0.0,
            identities: 3,
            faces_mean: 5.0,
            faces_std: 0.0,
            ..base_config()
        };
        let (train, _) = generate(&cfg).unwrap();
        for g in &train.groups {
            for (_, a) in &g.faces {
                for (_, b) in &g.faces {
                    assert!(cosine(a, b).unwrap() > 1.0 - 1e-6);
                }
            }
        }
    }

    #[test]
    fn all_features_are_unit_norm() {
        let (train, holdout) = generate(&SynthConfig {
            holdout_per_identity: 2,
            ..base_config()
        })
        .unwrap();
        for ds in [&train, &holdout.unwrap()] {
            for g in &ds.groups {
                for (_, f) in &g.faces {
                    assert!((l2_norm(f.values()) - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = SynthConfig {
            identities: 50,
            dim: 32,
            holdout_per_identity: 2,
            ..base_config()
        };
        let (t1, h1) = generate(&cfg).unwrap();
        let (t2, h2) = generate(&cfg).unwrap();
        assert_eq!(t1.fingerprint, t2.fingerprint);
        assert_eq!(h1.unwrap().fingerprint, h2.unwrap().fingerprint);
    }

    #[test]
    fn zero_jitter_duplicates_are_exact() {
        let cfg = SynthConfig {
            dup_prob: 0.9,
            dup_jitter: 0.0,
            identities: 5,
            faces_mean: 8.0,
            faces_std: 0.0,
            ..base_config()
        };
        let (train, _) = generate(&cfg).unwrap();
        // With dup_prob 0.9 almost every later face copies an earlier one;
        // at zero jitter the copy is exact up to float rounding.
        let mut found = 0;
        for g in &train.groups {
            for i in 0..g.len() {
                for j in (i + 1)..g.len() {
                    let c = cosine(&g.faces[i].1, &g.faces[j].1).unwrap();
                    if c > 1.0 - 1e-7 {
                        found += 1;
                    }
                }
            }
        }
        assert!(found > 0, "expected at least one exact duplicate pair");
    }

    #[test]
    fn count_distribution_tracks_the_mean() {
        let cfg = SynthConfig {
            identities: 500,
            faces_mean: 20.0,
            faces_std: 12.0,
            dim: 4,
            ..base_config()
        };
        let (train, _) = generate(&cfg).unwrap();
        let mean = train.total_faces() as f64 / train.groups.len() as f64;
        assert!(
            (mean - cfg.faces_mean).abs() < 0.15 * cfg.faces_mean,
            "sample mean {mean} strays from {}",
            cfg.faces_mean
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = base_config();
        cfg.dim = 1;
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let mut cfg = base_config();
        cfg.dup_prob = 1.0;
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let mut cfg = base_config();
        cfg.noise_sigma = 0.0;
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }
}
