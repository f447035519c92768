//! Dataset manifest, geographic poses and the VPRF per-image feature format.
//!
//! A manifest is UTF-8 text with one JSON object per line:
//!
//! ```text
//! {"id":"q1","path":"images/q1.png","split":"query","pose":{"kind":"utm","easting":10.0,"northing":4.5}}
//! {"id":"r7","path":"images/r7.png","split":"reference","pose":{"kind":"utm","easting":11.0,"northing":4.0}}
//! ```
//!
//! Relative image paths are resolved against the manifest's directory.
//!
//! # VPRF layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic       b"VPRF"              4 bytes
//! version     u16 = 1              2 bytes
//! flags       u8 (bit0 = CLS)      1 byte, must be 0x01
//! id_len      u16                  2 bytes
//! id          UTF-8                id_len bytes
//! dim         u32                  4 bytes
//! n_patches   u32                  4 bytes
//! cls         dim x f32
//! patches     n_patches x dim x f32, row-major
//! ```
//!
//! Trailing bytes after the patch matrix are rejected.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::Cursor;
use crate::error::{Error, Result};

pub const VPRF_MAGIC: [u8; 4] = *b"VPRF";
pub const VPRF_VERSION: u16 = 1;
pub const FLAG_CLS_PRESENT: u8 = 0x01;

/// File name of an image's feature file inside a features directory.
pub fn feature_file_name(image_id: &str) -> String {
    format!("{image_id}.vprf")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Query,
    Reference,
}

/// Ground-truth camera position.
///
/// `Utm` is any planar metric frame (easting/northing in meters); `Wgs84` is
/// latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Pose {
    Utm { easting: f64, northing: f64 },
    Wgs84 { lat: f64, lon: f64 },
}

impl Pose {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Pose::Utm { .. } => "utm",
            Pose::Wgs84 { .. } => "wgs84",
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Pose::Utm { easting, northing } => easting.is_finite() && northing.is_finite(),
            Pose::Wgs84 { lat, lon } => {
                lat.is_finite()
                    && lon.is_finite()
                    && (-90.0..=90.0).contains(&lat)
                    && (-180.0..=180.0).contains(&lon)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
    pub pose: Pose,
}

/// Loads a line-delimited manifest, preserving file order.
///
/// Blank lines are skipped; line numbers in errors are 1-based physical lines.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut records = parse_manifest(&text)?;
    for record in &mut records {
        if record.path.is_relative() {
            record.path = base.join(&record.path);
        }
    }
    Ok(records)
}

/// Parses manifest text. Paths are returned exactly as written.
pub fn parse_manifest(text: &str) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut kind: Option<&'static str> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: ImageRecord =
            serde_json::from_str(raw).map_err(|e| Error::MalformedRecord {
                line,
                reason: e.to_string(),
            })?;
        if record.id.is_empty() {
            return Err(Error::MalformedRecord {
                line,
                reason: "empty id".into(),
            });
        }
        if !record.pose.is_valid() {
            return Err(Error::PoseOutOfBounds { line });
        }
        let this_kind = record.pose.kind_name();
        match kind {
            None => kind = Some(this_kind),
            Some(expected) if expected != this_kind => {
                return Err(Error::MixedPoseKinds {
                    line,
                    expected,
                    found: this_kind,
                })
            }
            Some(_) => {}
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateRecord {
                id: record.id,
                line,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Serializes records in manifest line format.
pub fn write_manifest(records: &[ImageRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        // Serializing plain structs of strings and finite floats cannot fail.
        out.push_str(&serde_json::to_string(record).expect("manifest record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Raw transformer outputs for one image: the CLS token and N patch tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub image_id: String,
    pub dim: usize,
    pub n_patches: usize,
    pub cls: Vec<f32>,
    /// `n_patches x dim`, row-major.
    pub patches: Vec<f32>,
}

impl FeatureSet {
    pub fn new(
        image_id: impl Into<String>,
        dim: usize,
        cls: Vec<f32>,
        patches: Vec<f32>,
    ) -> Result<Self> {
        let n_patches = patches.len().checked_div(dim).unwrap_or(0);
        let fs = Self {
            image_id: image_id.into(),
            dim,
            n_patches,
            cls,
            patches,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidFeatures(msg));
        if self.image_id.is_empty() {
            return bad("empty image id".into());
        }
        if self.image_id.len() > u16::MAX as usize {
            return bad(format!(
                "image id is {} bytes, limit 65535",
                self.image_id.len()
            ));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.n_patches == 0 {
            return bad("n_patches must be positive".into());
        }
        if u32::try_from(self.dim).is_err() || u32::try_from(self.n_patches).is_err() {
            return bad("dim and n_patches must fit in u32".into());
        }
        if self.cls.len() != self.dim {
            return bad(format!(
                "cls has {} values, dim is {}",
                self.cls.len(),
                self.dim
            ));
        }
        if self.patches.len() != self.n_patches * self.dim {
            return bad(format!(
                "patch matrix has {} values, expected {} x {}",
                self.patches.len(),
                self.n_patches,
                self.dim
            ));
        }
        if !self.cls.iter().chain(&self.patches).all(|v| v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(())
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.patches[i * self.dim..(i + 1) * self.dim]
    }

    pub fn patch_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.patches.chunks_exact(self.dim)
    }

    pub fn encoded_len(&self) -> usize {
        4 + 2 + 1 + 2 + self.image_id.len() + 4 + 4 + 4 * (self.dim + self.patches.len())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&VPRF_MAGIC);
        out.extend_from_slice(&VPRF_VERSION.to_le_bytes());
        out.push(FLAG_CLS_PRESENT);
        out.extend_from_slice(&(self.image_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.image_id.as_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_patches as u32).to_le_bytes());
        for v in self.cls.iter().chain(&self.patches) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        cur.magic(VPRF_MAGIC)?;
        let version = cur.u16()?;
        if version != VPRF_VERSION {
            return Err(Error::VersionMismatch {
                expected: VPRF_VERSION,
                found: version,
            });
        }
        let flags = cur.u8()?;
        if flags != FLAG_CLS_PRESENT {
            return Err(Error::InvalidFeatures(format!(
                "unsupported flags {flags:#04x} (v1 requires 0x01)"
            )));
        }
        let id_len = cur.u16()? as usize;
        let image_id = cur.string(id_len)?;
        let dim = cur.u32()? as usize;
        let n_patches = cur.u32()? as usize;
        let values = dim
            .checked_mul(n_patches.saturating_add(1))
            .ok_or_else(|| Error::InvalidFeatures("payload size overflows".into()))?;
        cur.require(values.saturating_mul(4))?;
        let payload = cur.take(values * 4)?;
        cur.finish()?;

        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let cls: Vec<f32> = floats.by_ref().take(dim).collect();
        let patches: Vec<f32> = floats.collect();
        let fs = Self {
            image_id,
            dim,
            n_patches,
            cls,
            patches,
        };
        fs.validate()?;
        Ok(fs)
    }
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSet::from_bytes(&bytes)
}

pub fn write_feature_file(features: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = features.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
