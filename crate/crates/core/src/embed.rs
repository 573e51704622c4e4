//! Embedding bundles: named unit-norm float32 vectors for categories, phrases
//! and images, stored as `index.json` plus a raw `vectors.f32` matrix.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BUNDLE_VERSION: u64 = 1;
pub const NORM_TOLERANCE: f64 = 1e-4;
pub const INDEX_FILE: &str = "index.json";
pub const VECTORS_FILE: &str = "vectors.f32";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Category,
    Phrase,
    Image,
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryKind::Category => "category",
            EntryKind::Phrase => "phrase",
            EntryKind::Image => "image",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub key: String,
    pub kind: EntryKind,
}

#[derive(Serialize, Deserialize)]
struct IndexWire {
    version: u64,
    dim: usize,
    source_tag: String,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingBundle {
    dim: usize,
    source_tag: String,
    entries: Vec<IndexEntry>,
    lookup: HashMap<String, usize>,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl EmbeddingBundle {
    /// Builds a bundle and checks that every vector has unit norm.
    pub fn new(
        dim: usize,
        source_tag: impl Into<String>,
        entries: Vec<IndexEntry>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let b = Self::new_unchecked_norms(dim, source_tag, entries, data)?;
        for (i, e) in b.entries.iter().enumerate() {
            if !((b.norms[i] - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::Bundle(format!(
                    "vector '{}' has norm {:.6}, outside 1 ± {NORM_TOLERANCE}",
                    e.key, b.norms[i]
                )));
            }
        }
        Ok(b)
    }

    /// Same as [`EmbeddingBundle::new`] but accepts vectors of any nonzero
    /// norm. Scoring always divides by the norms, so rankings are unchanged.
    pub fn new_unchecked_norms(
        dim: usize,
        source_tag: impl Into<String>,
        entries: Vec<IndexEntry>,
        data: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Bundle("dim must be positive".into()));
        }
        let expected = entries.len().checked_mul(dim);
        if expected != Some(data.len()) {
            return Err(Error::Bundle(format!(
                "{} entries x dim {dim} does not match {} stored values",
                entries.len(),
                data.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if lookup.insert(e.key.clone(), i).is_some() {
                return Err(Error::Bundle(format!("duplicate key '{}'", e.key)));
            }
        }
        let norms = data
            .chunks_exact(dim)
            .map(|row| {
                row.iter()
                    .map(|x| *x as f64 * *x as f64)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        Ok(EmbeddingBundle {
            dim,
            source_tag: source_tag.into(),
            entries,
            lookup,
            data,
            norms,
        })
    }

    /// Decodes the two bundle files from memory.
    pub fn from_parts(index_json: &str, vectors: &[u8]) -> Result<Self> {
        let wire: IndexWire =
            serde_json::from_str(index_json).map_err(|e| Error::json(INDEX_FILE, 0, &e))?;
        if wire.version != BUNDLE_VERSION {
            return Err(Error::SchemaVersion {
                what: "embedding bundle",
                found: wire.version,
                expected: BUNDLE_VERSION,
            });
        }
        let expected = (wire.entries.len() as u128) * (wire.dim as u128) * 4;
        if vectors.len() as u128 != expected {
            return Err(Error::Bundle(format!(
                "{VECTORS_FILE} is {} bytes, expected {} entries x {} dims x 4 = {expected}",
                vectors.len(),
                wire.entries.len(),
                wire.dim
            )));
        }
        let data = vectors
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(wire.dim, wire.source_tag, wire.entries, data)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        let vec_path = dir.join(VECTORS_FILE);
        let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let vectors = fs::read(&vec_path).map_err(|e| Error::io(&vec_path, e))?;
        Self::from_parts(&index, &vectors)
    }

    pub fn to_parts(&self) -> (String, Vec<u8>) {
        let wire = IndexWire {
            version: BUNDLE_VERSION,
            dim: self.dim,
            source_tag: self.source_tag.clone(),
            entries: self.entries.clone(),
        };
        let index = serde_json::to_string_pretty(&wire).expect("index serializes") + "\n";
        let bytes = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        (index, bytes)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (index, bytes) = self.to_parts();
        let p = dir.join(INDEX_FILE);
        fs::write(&p, index).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(VECTORS_FILE);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn position(&self, key: &str, expected: EntryKind) -> Result<usize> {
        let Some(&i) = self.lookup.get(key) else {
            return Err(Error::MissingKey {
                key: key.to_string(),
                nearest: self.nearest_keys(key, expected, 3),
            });
        };
        let actual = self.entries[i].kind;
        if actual != expected {
            return Err(Error::KindMismatch {
                key: key.to_string(),
                expected: expected.to_string(),
                actual: actual.to_string(),
            });
        }
        Ok(i)
    }

    pub fn vector_of(&self, key: &str, expected: EntryKind) -> Result<&[f32]> {
        Ok(self.row(self.position(key, expected)?))
    }

    /// Cosine between two stored entries using the precomputed norms.
    pub fn similarity(&self, a: (&str, EntryKind), b: (&str, EntryKind)) -> Result<f64> {
        let i = self.position(a.0, a.1)?;
        let j = self.position(b.0, b.1)?;
        if self.norms[i] == 0.0 || self.norms[j] == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok((dot(self.row(i), self.row(j)) / (self.norms[i] * self.norms[j])).clamp(-1.0, 1.0))
    }

    fn nearest_keys(&self, key: &str, kind: EntryKind, n: usize) -> Vec<String> {
        let mut scored: Vec<(usize, &str)> = self
            .entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| (strsim::levenshtein(key, &e.key), e.key.as_str()))
            .collect();
        scored.sort();
        scored
            .into_iter()
            .take(n)
            .map(|(_, k)| k.to_string())
            .collect()
    }

    /// Every vector multiplied by `factor`; bypasses the norm check.
    pub fn scaled(&self, factor: f32) -> Self {
        let data = self.data.iter().map(|v| v * factor).collect();
        Self::new_unchecked_norms(
            self.dim,
            self.source_tag.clone(),
            self.entries.clone(),
            data,
        )
        .expect("same shape")
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// dot(a, b) / (|a| |b|), accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(a.len(), b.len()));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// L2-normalizes in place; leaves zero vectors untouched.
pub fn normalize_in_place(v: &mut [f32]) {
    let n = v.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v {
            *x = (*x as f64 / n) as f32;
        }
    }
}
