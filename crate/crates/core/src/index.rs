//! Exact top-k cosine retrieval over unit-norm reference descriptors.
//!
//! Vectors live in one contiguous row-major slab, sorted by image id. Because
//! every stored vector and every query is unit-norm, cosine similarity is a
//! plain dot product. Results are ordered by score descending, then image id
//! ascending, so equal scores always come back in the same order.
//!
//! # VPRI layout
//!
//! Little-endian throughout.
//!
//! ```text
//! magic       b"VPRI"                    4 bytes
//! version     u16 = 1                    2 bytes
//! method      u8 (0 = cls, 1 = gem)      1 byte
//! p           f64 (0.0 for cls)          8 bytes
//! width       u8 (4 = f32, 8 = f64)      1 byte
//! dim         u32                        4 bytes
//! count       u32                        4 bytes
//! records     count x { id_len u16, id UTF-8, dim x scalar }
//! ```
//!
//! Records are written in ascending id order, so a given set of descriptors
//! always encodes to the same bytes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::codec::Cursor;
use crate::descriptor::{Aggregation, GlobalDescriptor};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

pub const VPRI_MAGIC: [u8; 4] = *b"VPRI";
pub const VPRI_VERSION: u16 = 1;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    /// 1-based.
    pub rank: usize,
    pub image_id: String,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<T> {
    pub query_id: String,
    pub candidates: Vec<Candidate<T>>,
}

impl<T> CandidateSet<T> {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.image_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorIndex<T: Scalar> {
    dim: usize,
    aggregation: Aggregation,
    ids: Vec<String>,
    data: Vec<T>,
}

impl<T: Scalar> DescriptorIndex<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, image_id: &str) -> Option<&[T]> {
        self.ids
            .binary_search_by(|id| id.as_str().cmp(image_id))
            .ok()
            .map(|i| self.vector(i))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    /// Exact top-k by dot product; ties broken by ascending image id.
    pub fn retrieve_topk(&self, query: &GlobalDescriptor<T>, k: usize) -> Result<CandidateSet<T>> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        if query.aggregation != self.aggregation {
            return Err(Error::MethodMismatch {
                index: self.aggregation.to_string(),
                query: query.aggregation.to_string(),
            });
        }

        // Adding +0.0 folds -0.0 into +0.0 so that zero scores tie.
        let mut scored: Vec<(T, usize)> = self
            .data
            .chunks_exact(self.dim)
            .map(|row| dot(row, &query.vec) + T::zero())
            .zip(0..)
            .collect();

        // Ids are stored sorted, so slot order is id order.
        let by_rank = |a: &(T, usize), b: &(T, usize)| b.0.total_order(&a.0).then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);

        Ok(CandidateSet {
            query_id: query.image_id.clone(),
            candidates: scored
                .into_iter()
                .enumerate()
                .map(|(i, (score, slot))| Candidate {
                    rank: i + 1,
                    image_id: self.ids[slot].clone(),
                    score,
                })
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            24 + self.ids.iter().map(|s| s.len() + 2).sum::<usize>()
                + self.data.len() * T::WIDTH as usize,
        );
        out.extend_from_slice(&VPRI_MAGIC);
        out.extend_from_slice(&VPRI_VERSION.to_le_bytes());
        let (method, p) = match self.aggregation {
            Aggregation::Cls => (0u8, 0.0f64),
            Aggregation::Gem { p } => (1u8, p),
        };
        out.push(method);
        out.extend_from_slice(&p.to_le_bytes());
        out.push(T::WIDTH);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for (id, row) in self.entries() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for &x in row {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        cur.magic(VPRI_MAGIC)?;
        let version = cur.u16()?;
        if version != VPRI_VERSION {
            return Err(Error::VersionMismatch {
                expected: VPRI_VERSION,
                found: version,
            });
        }
        let aggregation = match cur.u8()? {
            0 => {
                cur.f64()?;
                Aggregation::Cls
            }
            1 => Aggregation::Gem { p: cur.f64()? },
            other => {
                return Err(Error::InvalidIndexFile(format!(
                    "unknown method tag {other}"
                )))
            }
        };
        let width = cur.u8()?;
        if width != T::WIDTH {
            return Err(Error::InvalidIndexFile(format!(
                "file stores {width}-byte scalars, reader expects {}",
                T::WIDTH
            )));
        }
        let dim = cur.u32()? as usize;
        let count = cur.u32()? as usize;
        if dim == 0 {
            return Err(Error::InvalidIndexFile("dim is zero".into()));
        }

        let mut descriptors = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id_len = cur.u16()? as usize;
            let image_id = cur.string(id_len)?;
            let raw = cur.take(dim * width as usize)?;
            let vec = raw.chunks_exact(width as usize).map(T::read_le).collect();
            descriptors.push(GlobalDescriptor {
                image_id,
                aggregation,
                vec,
            });
        }
        cur.finish()?;
        build_index(descriptors)
    }
}

/// Builds an index from unit-norm descriptors sharing one dimension and
/// aggregation method.
pub fn build_index<T: Scalar>(
    mut descriptors: Vec<GlobalDescriptor<T>>,
) -> Result<DescriptorIndex<T>> {
    let first = descriptors.first().ok_or(Error::EmptyIndex)?;
    let dim = first.dim();
    let aggregation = first.aggregation;
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }

    let mut seen = HashSet::with_capacity(descriptors.len());
    for d in &descriptors {
        if d.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: d.dim(),
            });
        }
        if d.aggregation != aggregation {
            return Err(Error::MethodMismatch {
                index: aggregation.to_string(),
                query: d.aggregation.to_string(),
            });
        }
        if d.image_id.len() > u16::MAX as usize {
            return Err(Error::InvalidIndexFile(format!(
                "image id of {} bytes exceeds 65535",
                d.image_id.len()
            )));
        }
        if !seen.insert(d.image_id.as_str()) {
            return Err(Error::DuplicateId(d.image_id.clone()));
        }
        if !d.vec.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = d.vec.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidFeatures(format!(
                "descriptor {:?} has norm {norm}, expected 1",
                d.image_id
            )));
        }
    }

    descriptors.sort_unstable_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut ids = Vec::with_capacity(descriptors.len());
    let mut data = Vec::with_capacity(descriptors.len() * dim);
    for d in descriptors {
        ids.push(d.image_id);
        data.extend(d.vec);
    }
    Ok(DescriptorIndex {
        dim,
        aggregation,
        ids,
        data,
    })
}

pub fn save_index<T: Scalar>(index: &DescriptorIndex<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, index.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_index<T: Scalar>(path: impl AsRef<Path>) -> Result<DescriptorIndex<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DescriptorIndex::from_bytes(&bytes)
}
