//! Exact cosine vector store with on-disk persistence.
//!
//! Layout of a store directory:
//!
//! * `meta.jsonl` - header `{"format":"aiblob-store","version":1,"dim":D}`,
//!   then one metadata object per row.
//! * `vectors.bin` - `"AIBV"`, u32 LE version, u32 LE dim, u64 LE count,
//!   then `count * dim` f32 LE values in row order.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbedError, EmbeddingVector};
use crate::fsutil::write_atomic;

pub const STORE_FORMAT: &str = "aiblob-store";
pub const STORE_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.jsonl";
pub const VECTORS_FILE: &str = "vectors.bin";
const MAGIC: &[u8; 4] = b"AIBV";
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

// Below this many rows the scan stays on the calling thread.
const PARALLEL_SCAN_MIN: usize = 8_192;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: store has {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate sentence id {0}")]
    DuplicateId(String),
    #[error("k must be positive")]
    ZeroK,
    #[error("store dimension must be positive")]
    ZeroDim,
    #[error("missing store file {0}")]
    MissingFile(String),
    #[error("bad store format: {0}")]
    Format(String),
    #[error("{0}")]
    Vector(#[from] EmbedError),
    #[error(transparent)]
    Io(io::Error),
}

/// Row metadata, serialized one per line in `meta.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub sentence_id: String,
    pub video_id: String,
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub sentence_id: String,
    pub vector: EmbeddingVector,
    pub video_id: String,
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalHit<'a> {
    pub score: f64,
    pub record: &'a RecordMeta,
}

impl RetrievalHit<'_> {
    pub fn sentence_id(&self) -> &str {
        &self.record.sentence_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub count: usize,
}

/// Cosine similarity of two unit vectors, accumulated in f64.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(dot(a.values(), b.values()))
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    rows: Vec<RecordMeta>,
    data: Vec<f32>,
    by_id: HashMap<String, usize>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDim);
        }
        Ok(VectorStore {
            dim,
            rows: Vec::new(),
            data: Vec::new(),
            by_id: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn records(&self) -> &[RecordMeta] {
        &self.rows
    }

    pub fn get(&self, sentence_id: &str) -> Option<&RecordMeta> {
        self.by_id.get(sentence_id).map(|&i| &self.rows[i])
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// Inserts all records or none.
    pub fn insert_batch(&mut self, records: Vec<VectorRecord>) -> Result<usize, IndexError> {
        let mut fresh = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.dim() != self.dim {
                return Err(IndexError::DimensionMismatch {
                    expected: self.dim,
                    found: r.vector.dim(),
                });
            }
            if self.by_id.contains_key(&r.sentence_id) || !fresh.insert(r.sentence_id.as_str()) {
                return Err(IndexError::DuplicateId(r.sentence_id.clone()));
            }
        }
        let n = records.len();
        self.data.reserve(n * self.dim);
        self.rows.reserve(n);
        for r in records {
            self.by_id.insert(r.sentence_id.clone(), self.rows.len());
            self.data.extend_from_slice(r.vector.values());
            self.rows.push(RecordMeta {
                sentence_id: r.sentence_id,
                video_id: r.video_id,
                text: r.text,
                start_s: r.start_s,
                end_s: r.end_s,
            });
        }
        Ok(n)
    }

    fn rank(&self, a: &(f64, usize), b: &(f64, usize)) -> Ordering {
        b.0.total_cmp(&a.0)
            .then_with(|| self.rows[a.1].sentence_id.cmp(&self.rows[b.1].sentence_id))
    }

    /// The `k` best records by cosine similarity, skipping `exclude`.
    ///
    /// Ties go to the smaller sentence id. With `video_cap`, at most that many
    /// hits share a video; the cap is applied walking down the ranking.
    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude: &HashSet<String>,
        video_cap: Option<usize>,
    ) -> Result<Vec<RetrievalHit<'_>>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let q = query.values();
        let score_row = |row: usize| -> Option<(f64, usize)> {
            if exclude.contains(&self.rows[row].sentence_id) {
                None
            } else {
                Some((dot(q, self.vector(row)), row))
            }
        };
        let mut scored: Vec<(f64, usize)> = if self.rows.len() >= PARALLEL_SCAN_MIN {
            (0..self.rows.len())
                .into_par_iter()
                .filter_map(score_row)
                .collect()
        } else {
            (0..self.rows.len()).filter_map(score_row).collect()
        };

        let picked: Vec<(f64, usize)> = match video_cap {
            None => {
                if scored.len() > k {
                    scored.select_nth_unstable_by(k - 1, |a, b| self.rank(a, b));
                    scored.truncate(k);
                }
                scored.sort_unstable_by(|a, b| self.rank(a, b));
                scored
            }
            Some(cap) => {
                scored.sort_unstable_by(|a, b| self.rank(a, b));
                let mut per_video: HashMap<&str, usize> = HashMap::new();
                let mut out = Vec::with_capacity(k);
                for hit in scored {
                    let used = per_video.entry(&self.rows[hit.1].video_id).or_insert(0);
                    if *used < cap {
                        *used += 1;
                        out.push(hit);
                        if out.len() == k {
                            break;
                        }
                    }
                }
                out
            }
        };

        Ok(picked
            .into_iter()
            .map(|(score, row)| RetrievalHit {
                score,
                record: &self.rows[row],
            })
            .collect())
    }

    /// Writes `meta.jsonl` and `vectors.bin` into `dir`, each atomically.
    pub fn save(&self, dir: &Path) -> Result<Manifest, IndexError> {
        fs::create_dir_all(dir).map_err(IndexError::Io)?;

        let mut meta = serde_json::to_string(&serde_json::json!({
            "format": STORE_FORMAT,
            "version": STORE_VERSION,
            "dim": self.dim,
        }))
        .expect("header serializes");
        meta.push('\n');
        for row in &self.rows {
            meta.push_str(&serde_json::to_string(row).expect("row serializes"));
            meta.push('\n');
        }

        let mut bin = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        bin.extend_from_slice(MAGIC);
        bin.extend_from_slice(&STORE_VERSION.to_le_bytes());
        bin.extend_from_slice(&(self.dim as u32).to_le_bytes());
        bin.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for v in &self.data {
            bin.extend_from_slice(&v.to_le_bytes());
        }

        write_atomic(&dir.join(VECTORS_FILE), &bin).map_err(IndexError::Io)?;
        write_atomic(&dir.join(META_FILE), meta.as_bytes()).map_err(IndexError::Io)?;
        Ok(self.manifest())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: STORE_FORMAT.to_string(),
            version: STORE_VERSION,
            dim: self.dim,
            count: self.rows.len(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let read = |name: &str| -> Result<Vec<u8>, IndexError> {
            let path = dir.join(name);
            fs::read(&path).map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => IndexError::MissingFile(path.display().to_string()),
                _ => IndexError::Io(e),
            })
        };
        let meta = read(META_FILE)?;
        let bin = read(VECTORS_FILE)?;

        let meta = String::from_utf8(meta)
            .map_err(|_| IndexError::Format(format!("{META_FILE} is not UTF-8")))?;
        let mut lines = meta.lines();
        let header: serde_json::Value = lines
            .next()
            .and_then(|l| serde_json::from_str(l).ok())
            .ok_or_else(|| IndexError::Format(format!("{META_FILE}: missing header")))?;
        if header["format"] != STORE_FORMAT || header["version"] != STORE_VERSION {
            return Err(IndexError::Format(format!(
                "{META_FILE}: unsupported header {header}"
            )));
        }
        let dim = header["dim"]
            .as_u64()
            .filter(|&d| d > 0)
            .ok_or_else(|| IndexError::Format(format!("{META_FILE}: bad dim")))?
            as usize;
        let rows = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<RecordMeta>(l)
                    .map_err(|e| IndexError::Format(format!("{META_FILE} line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>, _>>()?;

        if bin.len() < HEADER_LEN || &bin[..4] != MAGIC {
            return Err(IndexError::Format(format!("{VECTORS_FILE}: bad magic")));
        }
        let version = u32::from_le_bytes(bin[4..8].try_into().unwrap());
        if version != STORE_VERSION {
            return Err(IndexError::Format(format!(
                "{VECTORS_FILE}: unsupported version {version}"
            )));
        }
        let bin_dim = u32::from_le_bytes(bin[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bin[12..20].try_into().unwrap()) as usize;
        if bin_dim != dim {
            return Err(IndexError::Format(format!(
                "{VECTORS_FILE} dim {bin_dim} disagrees with {META_FILE} dim {dim}"
            )));
        }
        if count != rows.len() {
            return Err(IndexError::Format(format!(
                "{VECTORS_FILE} count {count} disagrees with {} rows in {META_FILE}",
                rows.len()
            )));
        }
        let expected_len = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN));
        if expected_len != Some(bin.len()) {
            return Err(IndexError::Format(format!(
                "{VECTORS_FILE}: length {} does not match count {count} x dim {dim}",
                bin.len()
            )));
        }
        let data: Vec<f32> = bin[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(IndexError::Format(format!(
                "{VECTORS_FILE}: non-finite value in row {}",
                i / dim
            )));
        }

        let mut by_id = HashMap::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if by_id.insert(r.sentence_id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(r.sentence_id.clone()));
            }
        }
        Ok(VectorStore {
            dim,
            rows,
            data,
            by_id,
        })
    }
}
