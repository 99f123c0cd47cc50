//! Normalization, cosine similarity, and cluster-center arithmetic.
//!
//! Feature components are stored as `f32`; every accumulation runs in `f64`
//! with a fixed left-to-right order, so results are reproducible as long as
//! callers present faces in a canonical order (all callers sort faces by
//! face index first).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for accepting a vector as unit-norm at ingestion.
pub const UNIT_NORM_TOL: f64 = 1e-4;
/// Below this L2 norm a vector is treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Unit-normalized embedding of one face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector {
    values: Vec<f32>,
}

impl FeatureVector {
    /// Scales `raw` to unit L2 norm, preserving direction.
    ///
    /// The norm is accumulated in `f64` and the division happens in `f64`
    /// before rounding back to `f32`.
    pub fn normalize(raw: &[f32]) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::BadDimension(raw.len()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = l2_norm(raw);
        if norm < ZERO_NORM_EPS {
            return Err(Error::ZeroNorm);
        }
        let values = raw.iter().map(|&v| (f64::from(v) / norm) as f32).collect();
        Ok(Self { values })
    }

    /// Wraps values the caller has already verified to be unit-norm
    /// (ingestion checks against [`UNIT_NORM_TOL`] before calling this).
    pub fn from_unit_unchecked(values: Vec<f32>) -> Self {
        debug_assert!(values.len() >= 2);
        debug_assert!((l2_norm(&values) - 1.0).abs() <= UNIT_NORM_TOL);
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// L2 norm of an `f32` slice, accumulated in `f64`.
pub fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity of two unit-norm vectors: their dot product, clamped
/// to [-1, 1] to protect downstream threshold logic from rounding.
pub fn cosine(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dot_unit(a, b))
}

/// Dot product of two same-dimension unit vectors, clamped to [-1, 1].
/// Hot-path variant of [`cosine`]; dimensions must already match.
pub(crate) fn dot_unit(a: &FeatureVector, b: &FeatureVector) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    dot.clamp(-1.0, 1.0)
}

/// Arithmetic mean of an identity's feature vectors. Deliberately not
/// renormalized; similarity ranking against it is scale-invariant.
#[derive(Clone, Debug)]
pub struct ClusterCenter {
    /// Componentwise mean, kept in `f64`.
    pub mean: Vec<f64>,
    /// Number of contributing faces.
    pub count: usize,
}

impl ClusterCenter {
    /// Direction of the mean as a unit `f64` vector.
    ///
    /// Errors with `DegenerateCenter` when the mean is numerically zero
    /// (e.g. an antipodal, perfectly symmetric group), in which case every
    /// rank against the center ties.
    pub fn unit_direction(&self) -> Result<Vec<f64>> {
        let norm = self.mean.iter().map(|&v| v * v).sum::<f64>().sqrt();
        if norm < ZERO_NORM_EPS {
            return Err(Error::DegenerateCenter);
        }
        Ok(self.mean.iter().map(|&v| v / norm).collect())
    }
}

/// Componentwise mean of a nonempty list of same-dimension vectors.
/// Summation is `f64`, fixed left-to-right in iteration order.
pub fn cluster_center<'a, I>(faces: I) -> Result<ClusterCenter>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    let mut iter = faces.into_iter();
    let first = iter.next().ok_or(Error::EmptyGroup)?;
    let dim = first.dim();
    let mut sum: Vec<f64> = first.values.iter().map(|&v| f64::from(v)).collect();
    let mut count = 1usize;
    for face in iter {
        if face.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: face.dim(),
            });
        }
        for (acc, &v) in sum.iter_mut().zip(&face.values) {
            *acc += f64::from(v);
        }
        count += 1;
    }
    let n = count as f64;
    for acc in sum.iter_mut() {
        *acc /= n;
    }
    Ok(ClusterCenter { mean: sum, count })
}

/// Cosine between a face and the (internally renormalized) cluster center.
pub fn center_similarity(f: &FeatureVector, c: &ClusterCenter) -> Result<f64> {
    if f.dim() != c.mean.len() {
        return Err(Error::DimensionMismatch {
            left: f.dim(),
            right: c.mean.len(),
        });
    }
    let dir = c.unit_direction()?;
    Ok(cosine_to_direction(f, &dir))
}

/// Cosine between a unit `f32` face and a precomputed unit `f64` direction.
pub(crate) fn cosine_to_direction(f: &FeatureVector, dir: &[f64]) -> f64 {
    debug_assert_eq!(f.dim(), dir.len());
    let dot: f64 = f
        .values
        .iter()
        .zip(dir)
        .map(|(&x, &d)| f64::from(x) * d)
        .sum();
    dot.clamp(-1.0, 1.0)
}
