//! Image-level category co-occurrence counts and the co-occurrence scorer.

use crate::corpus::{CategoryId, Corpus};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HCOO";
pub const SIDECAR_VERSION: u32 = 1;

/// `single[p]` images contain p; `pair` stores the upper triangle (diagonal
/// included) of the symmetric pair-count matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceTable {
    n: usize,
    images: u64,
    single: Vec<u64>,
    pair: Vec<u64>,
}

fn tri_index(n: usize, a: usize, b: usize) -> usize {
    let (i, j) = if a <= b { (a, b) } else { (b, a) };
    // rows 0..i hold n, n-1, ..., n-i+1 entries
    i * n - i * (i.saturating_sub(1)) / 2 + (j - i)
}

fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl CooccurrenceTable {
    pub fn build(corpus: &Corpus) -> Self {
        let n = corpus.space.len();
        let mut single = vec![0u64; n];
        let mut pair = vec![0u64; tri_len(n)];
        for r in &corpus.records {
            let ids: Vec<usize> = r.positives.iter().map(|c| c.index()).collect();
            for (x, &a) in ids.iter().enumerate() {
                single[a] += 1;
                for &b in &ids[x..] {
                    pair[tri_index(n, a, b)] += 1;
                }
            }
        }
        CooccurrenceTable {
            n,
            images: corpus.records.len() as u64,
            single,
            pair,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.n
    }

    pub fn num_images(&self) -> u64 {
        self.images
    }

    pub fn single(&self, p: CategoryId) -> u64 {
        self.single[p.index()]
    }

    pub fn pair(&self, p: CategoryId, d: CategoryId) -> u64 {
        self.pair[tri_index(self.n, p.index(), d.index())]
    }

    /// Count(p, d) / Count(p); zero when p was never seen.
    pub fn h_coo(&self, d: CategoryId, p: CategoryId) -> f64 {
        let denom = self.single(p);
        if denom == 0 {
            return 0.0;
        }
        self.pair(p, d) as f64 / denom as f64
    }

    /// Sidecar layout, all little-endian: magic `HCOO`, u32 version, u32
    /// category count, u64 image count, 32-byte corpus hash, then `n` u64
    /// single counts and `n(n+1)/2` u64 upper-triangle pair counts.
    pub fn to_bytes(&self, corpus_hash: &[u8; 32]) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * (self.n + self.pair.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&self.images.to_le_bytes());
        out.extend_from_slice(corpus_hash);
        for v in self.single.iter().chain(&self.pair) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Returns the table and the corpus hash stored in its header.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, [u8; 32])> {
        let bad = |m: String| Error::Parse {
            what: "cooccurrence sidecar".into(),
            line: 0,
            column: 0,
            message: m,
        };
        if bytes.len() < 52 {
            return Err(bad(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != SIDECAR_VERSION {
            return Err(Error::SchemaVersion {
                what: "cooccurrence sidecar",
                found: version as u64,
                expected: SIDECAR_VERSION as u64,
            });
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let images = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let hash: [u8; 32] = bytes[20..52].try_into().unwrap();
        let body = &bytes[52..];
        let expected = (n as u128 + tri_len(n) as u128) * 8;
        if body.len() as u128 != expected {
            return Err(bad(format!(
                "body is {} bytes, expected {expected} for {n} categories",
                body.len()
            )));
        }
        let mut words = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()));
        let single: Vec<u64> = words.by_ref().take(n).collect();
        let pair: Vec<u64> = words.collect();
        let table = CooccurrenceTable {
            n,
            images,
            single,
            pair,
        };
        table.check()?;
        Ok((table, hash))
    }

    fn check(&self) -> Result<()> {
        for a in 0..self.n {
            let sa = self.single[a];
            if sa > self.images || self.pair[tri_index(self.n, a, a)] != sa {
                return Err(Error::Validation(format!(
                    "cooccurrence: inconsistent single count for category {a}"
                )));
            }
            for b in a + 1..self.n {
                if self.pair[tri_index(self.n, a, b)] > sa.min(self.single[b]) {
                    return Err(Error::Validation(format!(
                        "cooccurrence: pair ({a},{b}) exceeds single counts"
                    )));
                }
            }
        }
        Ok(())
    }
}
