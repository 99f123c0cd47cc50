//! Dataset ingestion, validation, serialization, and fingerprinting.
//!
//! Features produced by an external embedding model enter the pipeline here.
//! Two on-disk formats are supported:
//!
//! Binary (little-endian, magic `CNMS`, version 1):
//!
//! ```text
//! magic        4 bytes  "CNMS"
//! version      u16      1
//! dim          u32
//! group_count  u32
//! per group:
//!   id_len     u16      followed by that many UTF-8 bytes
//!   face_count u32
//!   per face:
//!     face_index u32
//!     values     dim x f32
//! ```
//!
//! JSONL: one object per identity, `{"id": str, "faces": [{"i": int,
//! "v": [floats]}]}`, for tiny fixtures and interop.
//!
//! The dataset fingerprint is 64-bit FNV-1a over the canonical binary
//! serialization, so it is format-independent: a JSONL file and its binary
//! transcoding fingerprint identically.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnv::FnvWriter;
use crate::vecmath::{l2_norm, FeatureVector, UNIT_NORM_TOL};

const MAGIC: &[u8; 4] = b"CNMS";
const VERSION: u16 = 1;

/// On-disk dataset encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Binary,
    Jsonl,
}

impl Format {
    pub fn as_str(&self) -> &'static str {
        match self {
            Format::Binary => "binary",
            Format::Jsonl => "jsonl",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Format::Binary),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!(
                "unknown format '{other}' (expected binary or jsonl)"
            ))),
        }
    }
}

/// Ordered faces of one identity. Face indices are unique and strictly
/// increasing; all features share the dataset dimension.
#[derive(Clone, Debug)]
pub struct IdentityGroup {
    pub id: String,
    pub faces: Vec<(u32, FeatureVector)>,
}

impl IdentityGroup {
    pub fn new(id: String, faces: Vec<(u32, FeatureVector)>) -> Result<Self> {
        let group = Self { id, faces };
        group.validate()?;
        Ok(group)
    }

    fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::EmptyGroup);
        }
        let dim = self.faces[0].1.dim();
        let mut prev: Option<u32> = None;
        for (idx, feature) in &self.faces {
            if feature.dim() != dim {
                return Err(Error::Config(format!(
                    "identity '{}': face {} has dimension {} but the group uses {}",
                    self.id,
                    idx,
                    feature.dim(),
                    dim
                )));
            }
            if let Some(p) = prev {
                if *idx <= p {
                    return Err(Error::Config(format!(
                        "identity '{}': face indices must be strictly increasing ({} after {})",
                        self.id, idx, p
                    )));
                }
            }
            prev = Some(*idx);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.faces.first().map(|(_, f)| f.dim()).unwrap_or(0)
    }

    /// Features in stored (ascending face index) order.
    pub fn features(&self) -> impl Iterator<Item = &FeatureVector> {
        self.faces.iter().map(|(_, f)| f)
    }
}

/// Immutable collection of identity groups plus provenance.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dim: usize,
    pub groups: Vec<IdentityGroup>,
    pub fingerprint: u64,
    pub source: String,
}

impl Dataset {
    /// Validates groups and computes the content fingerprint.
    pub fn new(dim: usize, groups: Vec<IdentityGroup>, source: String) -> Result<Self> {
        if dim < 2 {
            return Err(Error::BadDimension(dim));
        }
        if groups.is_empty() {
            return Err(Error::Config("dataset has no identities".into()));
        }
        let mut seen = HashSet::new();
        for group in &groups {
            group.validate()?;
            if group.dim() != dim {
                return Err(Error::Config(format!(
                    "identity '{}' has dimension {} but the dataset uses {}",
                    group.id,
                    group.dim(),
                    dim
                )));
            }
            if !seen.insert(group.id.as_str()) {
                return Err(Error::DuplicateIdentity(group.id.clone()));
            }
        }
        let mut ds = Self {
            dim,
            groups,
            fingerprint: 0,
            source,
        };
        ds.fingerprint = fingerprint(&ds)?;
        Ok(ds)
    }

    pub fn total_faces(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint)
    }

    pub fn group(&self, identity: &str) -> Option<&IdentityGroup> {
        self.groups.iter().find(|g| g.id == identity)
    }
}

/// FNV-1a over the canonical binary serialization (the `source` string is
/// not part of the serialization and does not affect the fingerprint).
pub fn fingerprint(ds: &Dataset) -> Result<u64> {
    let mut w = FnvWriter::new();
    write_binary_to(ds, &mut w)?;
    Ok(w.finish())
}

fn write_binary_to<W: Write>(ds: &Dataset, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ds.dim as u32).to_le_bytes())?;
    w.write_all(&(ds.groups.len() as u32).to_le_bytes())?;
    for group in &ds.groups {
        let id_bytes = group.id.as_bytes();
        if id_bytes.len() > u16::MAX as usize {
            return Err(Error::Config(format!(
                "identity id longer than {} bytes",
                u16::MAX
            )));
        }
        w.write_all(&(id_bytes.len() as u16).to_le_bytes())?;
        w.write_all(id_bytes)?;
        w.write_all(&(group.len() as u32).to_le_bytes())?;
        for (idx, feature) in &group.faces {
            w.write_all(&idx.to_le_bytes())?;
            for &v in feature.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Writes `ds` to `path` in the given format. The file re-reads into an
/// equal dataset with the same fingerprint.
pub fn write_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Binary => write_binary_to(ds, &mut w)?,
        Format::Jsonl => write_jsonl_to(ds, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates a dataset. With `normalize` set, every vector is
/// rescaled to unit norm on ingestion; otherwise non-unit vectors are
/// rejected so upstream pipeline bugs surface here.
pub fn read_dataset(path: &Path, format: Format, normalize: bool) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let source = format!("{}:{}", format.as_str(), path.display());
    match format {
        Format::Binary => read_binary(&mut reader, normalize, source),
        Format::Jsonl => read_jsonl(&mut reader, normalize, source),
    }
}

/// Detects the on-disk format by checking for the binary magic bytes.
pub fn sniff_format(path: &Path) -> Result<Format> {
    let mut file = File::open(path)?;
    let mut head = [0u8; 4];
    let n = file.read(&mut head)?;
    if n == 4 && &head == MAGIC {
        Ok(Format::Binary)
    } else {
        Ok(Format::Jsonl)
    }
}

fn ingest_face(
    identity: &str,
    face_index: u32,
    raw: Vec<f32>,
    dim: usize,
    normalize: bool,
) -> Result<FeatureVector> {
    if raw.len() != dim {
        return Err(Error::Format(format!(
            "face {face_index} of identity '{identity}' has {} values, expected {dim}",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!(
            "face {face_index} of identity '{identity}' contains a non-finite value"
        )));
    }
    if normalize {
        FeatureVector::normalize(&raw).map_err(|e| {
            Error::Format(format!(
                "face {face_index} of identity '{identity}': {e}"
            ))
        })
    } else {
        let deviation = (l2_norm(&raw) - 1.0).abs();
        if deviation > UNIT_NORM_TOL {
            return Err(Error::Norm {
                identity: identity.to_string(),
                face: face_index,
                deviation,
            });
        }
        Ok(FeatureVector::from_unit_unchecked(raw))
    }
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated file while reading {what}")))
}

fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_binary<R: Read>(r: &mut R, normalize: bool, source: String) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    read_exact_or_format(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {magic:02x?}, expected \"CNMS\""
        )));
    }
    let version = read_u16(r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let dim = read_u32(r, "dim")? as usize;
    if dim < 2 {
        return Err(Error::Format(format!("dim must be at least 2, got {dim}")));
    }
    let group_count = read_u32(r, "group count")? as usize;
    if group_count == 0 {
        return Err(Error::Format("dataset has no identities".into()));
    }

    let mut groups = Vec::with_capacity(group_count);
    let mut seen = HashSet::new();
    for _ in 0..group_count {
        let id_len = read_u16(r, "identity id length")? as usize;
        let mut id_bytes = vec![0u8; id_len];
        read_exact_or_format(r, &mut id_bytes, "identity id")?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| Error::Format("identity id is not valid UTF-8".into()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateIdentity(id));
        }
        let face_count = read_u32(r, "face count")? as usize;
        if face_count == 0 {
            return Err(Error::Format(format!("identity '{id}' has no faces")));
        }
        let mut faces = Vec::with_capacity(face_count);
        let mut prev: Option<u32> = None;
        let mut value_bytes = vec![0u8; dim * 4];
        for _ in 0..face_count {
            let face_index = read_u32(r, "face index")?;
            if let Some(p) = prev {
                if face_index <= p {
                    return Err(Error::Format(format!(
                        "identity '{id}': face indices must be strictly increasing ({face_index} after {p})"
                    )));
                }
            }
            prev = Some(face_index);
            read_exact_or_format(r, &mut value_bytes, "feature values")?;
            let raw: Vec<f32> = value_bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let feature = ingest_face(&id, face_index, raw, dim, normalize)?;
            faces.push((face_index, feature));
        }
        groups.push(IdentityGroup { id, faces });
    }

    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(Error::Format("trailing bytes after last group".into()));
    }

    Dataset::new(dim, groups, source)
}

#[derive(Serialize, Deserialize)]
struct JsonlFace {
    i: u32,
    v: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct JsonlGroup {
    id: String,
    faces: Vec<JsonlFace>,
}

fn write_jsonl_to<W: Write>(ds: &Dataset, w: &mut W) -> Result<()> {
    for group in &ds.groups {
        let line = JsonlGroup {
            id: group.id.clone(),
            faces: group
                .faces
                .iter()
                .map(|(i, f)| JsonlFace {
                    i: *i,
                    v: f.values().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&line)
            .map_err(|e| Error::Format(format!("jsonl encoding failed: {e}")))?;
        writeln!(w, "{json}")?;
    }
    Ok(())
}

fn read_jsonl<R: BufRead>(r: &mut R, normalize: bool, source: String) -> Result<Dataset> {
    let mut groups: Vec<IdentityGroup> = Vec::new();
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlGroup = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if !seen.insert(parsed.id.clone()) {
            return Err(Error::DuplicateIdentity(parsed.id));
        }
        if parsed.faces.is_empty() {
            return Err(Error::Format(format!(
                "identity '{}' has no faces",
                parsed.id
            )));
        }
        let mut faces = Vec::with_capacity(parsed.faces.len());
        let mut prev: Option<u32> = None;
        for face in parsed.faces {
            if dim.is_none() && face.v.len() < 2 {
                return Err(Error::Format(format!(
                    "dim must be at least 2, got {}",
                    face.v.len()
                )));
            }
            let d = *dim.get_or_insert(face.v.len());
            if let Some(p) = prev {
                if face.i <= p {
                    return Err(Error::Format(format!(
                        "identity '{}': face indices must be strictly increasing ({} after {p})",
                        parsed.id, face.i
                    )));
                }
            }
            prev = Some(face.i);
            let feature = ingest_face(&parsed.id, face.i, face.v, d, normalize)?;
            faces.push((face.i, feature));
        }
        groups.push(IdentityGroup {
            id: parsed.id,
            faces,
        });
    }
    let dim = dim.ok_or_else(|| Error::Format("dataset has no identities".into()))?;
    Dataset::new(dim, groups, source)
}

/// Retained face indices per identity, plus the sampler configuration that
/// produced them and consistency totals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionManifest {
    /// Hex fingerprint of the dataset the selection was computed on.
    pub dataset_fingerprint: String,
    /// Identity id to sorted retained face indices.
    pub identities: BTreeMap<String, Vec<u32>>,
    /// Echo of the sampler configuration (strategy name, parameters, seed).
    pub sampler: serde_json::Value,
    pub totals: ManifestTotals,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestTotals {
    pub retained: u64,
    pub original: u64,
    pub ratio: f64,
}

impl SelectionManifest {
    /// Assembles a manifest from per-identity retained indices; indices are
    /// sorted and validated against the dataset.
    pub fn build(
        ds: &Dataset,
        sampler: serde_json::Value,
        mut retained: BTreeMap<String, Vec<u32>>,
    ) -> Result<Self> {
        for indices in retained.values_mut() {
            indices.sort_unstable();
        }
        let retained_total: u64 = retained.values().map(|v| v.len() as u64).sum();
        let original = ds.total_faces() as u64;
        let manifest = Self {
            dataset_fingerprint: ds.fingerprint_hex(),
            identities: retained,
            sampler,
            totals: ManifestTotals {
                retained: retained_total,
                original,
                ratio: retained_total as f64 / original as f64,
            },
        };
        manifest.validate_against(ds)?;
        Ok(manifest)
    }

    /// Checks every manifest invariant against `ds`: matching fingerprint,
    /// full identity coverage, at least one retained face per identity,
    /// retained indices a subset of the identity's faces, and consistent
    /// totals.
    pub fn validate_against(&self, ds: &Dataset) -> Result<()> {
        if self.dataset_fingerprint != ds.fingerprint_hex() {
            return Err(Error::FingerprintMismatch {
                manifest: self.dataset_fingerprint.clone(),
                dataset: ds.fingerprint_hex(),
            });
        }
        let mut ds_ids: BTreeSet<&str> = ds.groups.iter().map(|g| g.id.as_str()).collect();
        for (id, indices) in &self.identities {
            if !ds_ids.remove(id.as_str()) {
                return Err(Error::UnknownIdentity(id.clone()));
            }
            if indices.is_empty() {
                return Err(Error::Config(format!(
                    "manifest retains no faces for identity '{id}'"
                )));
            }
            let group = ds.group(id).expect("identity checked above");
            let known: BTreeSet<u32> = group.faces.iter().map(|(i, _)| *i).collect();
            let mut prev: Option<u32> = None;
            for &idx in indices {
                if let Some(p) = prev {
                    if idx <= p {
                        return Err(Error::Config(format!(
                            "manifest indices for identity '{id}' are not strictly increasing"
                        )));
                    }
                }
                prev = Some(idx);
                if !known.contains(&idx) {
                    return Err(Error::UnknownFaceIndex {
                        identity: id.clone(),
                        face: idx,
                    });
                }
            }
        }
        if let Some(missing) = ds_ids.into_iter().next() {
            return Err(Error::UnknownIdentity(missing.to_string()));
        }
        let retained: u64 = self.identities.values().map(|v| v.len() as u64).sum();
        if retained != self.totals.retained || ds.total_faces() as u64 != self.totals.original {
            return Err(Error::Config(format!(
                "manifest totals are inconsistent: counted {retained}/{}, recorded {}/{}",
                ds.total_faces(),
                self.totals.retained,
                self.totals.original
            )));
        }
        Ok(())
    }

    /// Pretty JSON with keys sorted at every level, plus a `tool_version`
    /// provenance field.
    pub fn to_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)
            .map_err(|e| Error::Format(format!("manifest encoding failed: {e}")))?;
        if let serde_json::Value::Object(map) = &mut value {
            map.insert(
                "tool_version".into(),
                serde_json::Value::String(crate::TOOL_VERSION.into()),
            );
        }
        serde_json::to_string_pretty(&value)
            .map_err(|e| Error::Format(format!("manifest encoding failed: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = self.to_json()?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

/// Restricts `ds` to the faces retained by `m`, preserving relative face
/// order. The returned dataset's fingerprint is recomputed.
pub fn apply_manifest(ds: &Dataset, m: &SelectionManifest) -> Result<Dataset> {
    m.validate_against(ds)?;
    let mut groups = Vec::with_capacity(ds.groups.len());
    for group in &ds.groups {
        let keep: BTreeSet<u32> = m.identities[&group.id].iter().copied().collect();
        let faces: Vec<(u32, FeatureVector)> = group
            .faces
            .iter()
            .filter(|(i, _)| keep.contains(i))
            .cloned()
            .collect();
        groups.push(IdentityGroup {
            id: group.id.clone(),
            faces,
        });
    }
    Dataset::new(ds.dim, groups, ds.source.clone())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_dataset(seed: u64, identities: usize, dim: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups = Vec::new();
        for g in 0..identities {
            let count = rng.gen_range(1..=8);
            let mut faces = Vec::new();
            let mut idx = 0u32;
            for _ in 0..count {
                idx += rng.gen_range(1..4);
                let raw: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                faces.push((idx, FeatureVector::normalize(&raw).unwrap()));
            }
            groups.push(IdentityGroup::new(format!("id{g:04}"), faces).unwrap());
        }
        Dataset::new(dim, groups, "test".into()).unwrap()
    }

    fn two_identity_dataset() -> Dataset {
        let a = IdentityGroup::new(
            "alice".into(),
            vec![
                (0, FeatureVector::normalize(&[1.0, 0.0]).unwrap()),
                (3, FeatureVector::normalize(&[0.0, 1.0]).unwrap()),
            ],
        )
        .unwrap();
        let b = IdentityGroup::new(
            "bob".into(),
            vec![(1, FeatureVector::normalize(&[1.0, 1.0]).unwrap())],
        )
        .unwrap();
        Dataset::new(2, vec![a, b], "test".into()).unwrap()
    }

    #[test]
    fn binary_round_trip_preserves_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = two_identity_dataset();
        write_dataset(&ds, &path, Format::Binary).unwrap();
        let back = read_dataset(&path, Format::Binary, false).unwrap();
        assert_eq!(back.groups.len(), 2);
        assert_eq!(back.fingerprint, ds.fingerprint);
        assert_eq!(back.dim, ds.dim);
    }

    #[test]
    fn jsonl_round_trip_preserves_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let ds = random_dataset(5, 6, 9);
        write_dataset(&ds, &path, Format::Jsonl).unwrap();
        let back = read_dataset(&path, Format::Jsonl, false).unwrap();
        assert_eq!(back.fingerprint, ds.fingerprint);
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"XXXX rest does not matter").unwrap();
        assert!(matches!(
            read_dataset(&path, Format::Binary, false),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.bin");
        let ds = two_identity_dataset();
        write_dataset(&ds, &path, Format::Binary).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_dataset(&path, Format::Binary, false),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn non_unit_vector_is_rejected_unless_normalizing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.jsonl");
        std::fs::write(&path, "{\"id\":\"x\",\"faces\":[{\"i\":0,\"v\":[3.0,4.0]}]}\n").unwrap();
        match read_dataset(&path, Format::Jsonl, false) {
            Err(Error::Norm {
                identity, face, ..
            }) => {
                assert_eq!(identity, "x");
                assert_eq!(face, 0);
            }
            other => panic!("expected norm error, got {other:?}"),
        }
        let ds = read_dataset(&path, Format::Jsonl, true).unwrap();
        let v = &ds.groups[0].faces[0].1;
        assert!((v.values()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn one_dimensional_vectors_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scalar.jsonl");
        std::fs::write(&path, "{\"id\":\"x\",\"faces\":[{\"i\":0,\"v\":[1.0]}]}\n").unwrap();
        assert!(matches!(
            read_dataset(&path, Format::Jsonl, false),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn duplicate_identity_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let line = "{\"id\":\"x\",\"faces\":[{\"i\":0,\"v\":[1.0,0.0]}]}\n";
        std::fs::write(&path, format!("{line}{line}")).unwrap();
        assert!(matches!(
            read_dataset(&path, Format::Jsonl, false),
            Err(Error::DuplicateIdentity(_))
        ));
    }

    #[test]
    fn sniffing_detects_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let ds = two_identity_dataset();
        let bin = dir.path().join("a.bin");
        let jsonl = dir.path().join("a.jsonl");
        write_dataset(&ds, &bin, Format::Binary).unwrap();
        write_dataset(&ds, &jsonl, Format::Jsonl).unwrap();
        assert_eq!(sniff_format(&bin).unwrap(), Format::Binary);
        assert_eq!(sniff_format(&jsonl).unwrap(), Format::Jsonl);
    }

    fn full_manifest(ds: &Dataset) -> SelectionManifest {
        let retained: BTreeMap<String, Vec<u32>> = ds
            .groups
            .iter()
            .map(|g| (g.id.clone(), g.faces.iter().map(|(i, _)| *i).collect()))
            .collect();
        SelectionManifest::build(ds, serde_json::json!({"strategy": "test"}), retained).unwrap()
    }

    #[test]
    fn apply_full_manifest_keeps_fingerprint() {
        let ds = two_identity_dataset();
        let m = full_manifest(&ds);
        let out = apply_manifest(&ds, &m).unwrap();
        assert_eq!(out.fingerprint, ds.fingerprint);
        assert_eq!(out.total_faces(), ds.total_faces());
    }

    #[test]
    fn apply_single_face_manifest() {
        let ds = two_identity_dataset();
        let retained: BTreeMap<String, Vec<u32>> = ds
            .groups
            .iter()
            .map(|g| (g.id.clone(), vec![g.faces[0].0]))
            .collect();
        let m =
            SelectionManifest::build(&ds, serde_json::json!({"strategy": "test"}), retained)
                .unwrap();
        let out = apply_manifest(&ds, &m).unwrap();
        assert!(out.groups.iter().all(|g| g.len() == 1));
    }

    #[test]
    fn apply_is_idempotent() {
        let ds = random_dataset(9, 5, 4);
        let retained: BTreeMap<String, Vec<u32>> = ds
            .groups
            .iter()
            .map(|g| (g.id.clone(), vec![g.faces[0].0]))
            .collect();
        let m = SelectionManifest::build(&ds, serde_json::json!({"strategy": "t"}), retained)
            .unwrap();
        let once = apply_manifest(&ds, &m).unwrap();
        let m2 = SelectionManifest::build(
            &once,
            serde_json::json!({"strategy": "t"}),
            m.identities.clone(),
        )
        .unwrap();
        let twice = apply_manifest(&once, &m2).unwrap();
        assert_eq!(once.fingerprint, twice.fingerprint);
    }

    #[test]
    fn manifest_mismatches_are_detected() {
        let ds = two_identity_dataset();
        let other = random_dataset(1, 3, 2);
        let m = full_manifest(&ds);
        assert!(matches!(
            apply_manifest(&other, &m),
            Err(Error::FingerprintMismatch { .. })
        ));

        let mut bad = full_manifest(&ds);
        bad.identities.insert("carol".into(), vec![0]);
        bad.totals.retained += 1;
        assert!(matches!(
            apply_manifest(&ds, &bad),
            Err(Error::UnknownIdentity(_))
        ));

        let mut bad = full_manifest(&ds);
        bad.identities.get_mut("alice").unwrap().push(99);
        bad.totals.retained += 1;
        assert!(matches!(
            apply_manifest(&ds, &bad),
            Err(Error::UnknownFaceIndex { .. })
        ));
    }

    #[test]
    fn manifest_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ds = two_identity_dataset();
        let m = full_manifest(&ds);
        m.write(&path).unwrap();
        let back = SelectionManifest::read(&path).unwrap();
        assert_eq!(back.dataset_fingerprint, m.dataset_fingerprint);
        assert_eq!(back.identities, m.identities);
        assert_eq!(back.totals.retained, m.totals.retained);
    }

    #[test]
    fn fingerprint_tracks_content_changes() {
        let base = two_identity_dataset();
        // Changing a feature byte.
        let mut changed = base.clone();
        changed.groups[0].faces[0].1 =
            FeatureVector::normalize(&[0.999, 0.0447]).unwrap();
        let changed = Dataset::new(2, changed.groups, "test".into()).unwrap();
        assert_ne!(changed.fingerprint, base.fingerprint);
        // Changing an id.
        let mut renamed = base.clone();
        renamed.groups[1].id = "bobby".into();
        let renamed = Dataset::new(2, renamed.groups, "test".into()).unwrap();
        assert_ne!(renamed.fingerprint, base.fingerprint);
        // Changing a face index.
        let mut moved = base.clone();
        moved.groups[0].faces[1].0 = 4;
        let moved = Dataset::new(2, moved.groups, "test".into()).unwrap();
        assert_ne!(moved.fingerprint, base.fingerprint);
        // Source string does not participate.
        let relabeled = Dataset::new(2, base.groups.clone(), "elsewhere".into()).unwrap();
        assert_eq!(relabeled.fingerprint, base.fingerprint);
    }

    proptest! {
        // Round-trip: write then read is the identity on dim, ids, indices,
        // and feature bytes, for both formats.
        #[test]
        fn round_trip_both_formats(seed in 0u64..1000) {
            let dir = tempfile::tempdir().unwrap();
            let ds = random_dataset(seed, 4, 5);
            for format in [Format::Binary, Format::Jsonl] {
                let path = dir.path().join(format!("ds.{}", format.as_str()));
                write_dataset(&ds, &path, format).unwrap();
                let back = read_dataset(&path, format, false).unwrap();
                prop_assert_eq!(back.dim, ds.dim);
                prop_assert_eq!(back.fingerprint, ds.fingerprint);
                for (a, b) in back.groups.iter().zip(&ds.groups) {
                    prop_assert_eq!(&a.id, &b.id);
                    prop_assert_eq!(&a.faces, &b.faces);
                }
            }
        }
    }
}
