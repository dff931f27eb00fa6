//! Exact cosine top-k search over unit embeddings, with a byte-reproducible
//! on-disk format.
//!
//! File layout (`CLIPIDX1`), little-endian:
//!
//! ```text
//! magic "CLIPIDX1" | u32 version=1 | u32 dim | u64 count
//! count × { u64 id | dim × f32 | u16 len + caption | u16 len + source }
//! ```
//!
//! Records are written in ascending id order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Serialize;

use crate::datagen::{Corpus, CorpusEntry, Raster};
use crate::encoders::ClipModel;
use crate::error::{Error, Result};
use crate::tensor::norm;

const INDEX_MAGIC: &[u8; 8] = b"CLIPIDX1";
const INDEX_VERSION: u32 = 1;

/// Accepted deviation of a stored vector's norm from 1.
pub const INSERT_NORM_TOLERANCE: f64 = 1e-3;
/// Queries shorter than this are rejected.
pub const MIN_QUERY_NORM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub vector: Vec<f64>,
    pub caption: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchHit {
    pub id: u64,
    pub score: f64,
    pub caption: String,
}

#[derive(Clone, Debug)]
struct Stored {
    id: u64,
    caption: String,
    source: String,
}

/// In-memory index; vectors are kept as `f32`, scores are computed in `f64`.
#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    dim: usize,
    vectors: Vec<f32>,
    records: Vec<Stored>,
    by_id: HashMap<u64, usize>,
}

/// Heap entry ordered so that the *worst* hit sits on top of a max-heap.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Ranked {
    score: f64,
    id: u64,
    slot: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        // better = higher score, then lower id; "greater" here means worse
        other.score.total_cmp(&self.score).then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `Σ widen(stored_i) · query_i`, the score used by search and its oracles.
pub fn score(stored: &[f32], query: &[f64]) -> f64 {
    stored.iter().zip(query).map(|(&s, &q)| f64::from(s) * q).sum()
}

impl RetrievalIndex {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("index dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: Vec::new(),
            records: Vec::new(),
            by_id: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.id)
    }

    pub fn add(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: record.vector.len(),
            });
        }
        if self.by_id.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        let n = norm(&record.vector);
        if n.is_nan() || (n - 1.0).abs() > INSERT_NORM_TOLERANCE {
            return Err(Error::NotUnit { norm: n });
        }
        if record.caption.len() > usize::from(u16::MAX) || record.source.len() > usize::from(u16::MAX) {
            return Err(Error::InvalidConfig("caption or source longer than 65535 bytes".into()));
        }
        self.vectors.extend(record.vector.iter().map(|&v| v as f32));
        self.by_id.insert(record.id, self.records.len());
        self.records.push(Stored {
            id: record.id,
            caption: record.caption,
            source: record.source,
        });
        Ok(())
    }

    fn vector_at(&self, slot: usize) -> &[f32] {
        &self.vectors[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Stored record for `id`, with the vector widened back to `f64`.
    pub fn get(&self, id: u64) -> Option<EmbeddingRecord> {
        let &slot = self.by_id.get(&id)?;
        let r = &self.records[slot];
        Some(EmbeddingRecord {
            id,
            vector: self.vector_at(slot).iter().map(|&v| f64::from(v)).collect(),
            caption: r.caption.clone(),
            source: r.source.clone(),
        })
    }

    /// Exact top-`k` by dot product; score descending, ties by ascending id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let qn = norm(query);
        if qn.is_nan() || qn < MIN_QUERY_NORM {
            return Err(Error::NotUnit { norm: qn });
        }
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
        for (slot, rec) in self.records.iter().enumerate() {
            let cand = Ranked {
                score: score(self.vector_at(slot), query),
                id: rec.id,
                slot,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|r| SearchHit {
                id: r.id,
                score: r.score,
                caption: self.records[r.slot].caption.clone(),
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.sort_by_key(|&s| self.records[s].id);
        let mut out = Vec::with_capacity(24 + self.records.len() * (8 + 4 * self.dim + 64));
        out.extend_from_slice(INDEX_MAGIC);
        out.write_u32::<LittleEndian>(INDEX_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        out.write_u64::<LittleEndian>(self.records.len() as u64).unwrap();
        for slot in order {
            let r = &self.records[slot];
            out.write_u64::<LittleEndian>(r.id).unwrap();
            for &v in self.vector_at(slot) {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
            for s in [&r.caption, &r.source] {
                out.write_u16::<LittleEndian>(s.len() as u16).unwrap();
                out.extend_from_slice(s.as_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < INDEX_MAGIC.len() {
            return Err(Error::Truncated("index magic".into()));
        }
        if &bytes[..8] != INDEX_MAGIC {
            return Err(Error::Format("not a CLIPIDX1 index (bad magic)".into()));
        }
        let t = |what: &'static str| move |_: std::io::Error| Error::Truncated(format!("index {what}"));
        let mut r = Cursor::new(bytes);
        r.set_position(8);
        let version = r.read_u32::<LittleEndian>().map_err(t("version"))?;
        if version != INDEX_VERSION {
            return Err(Error::Version {
                found: version,
                expected: INDEX_VERSION,
            });
        }
        let dim = r.read_u32::<LittleEndian>().map_err(t("header"))? as usize;
        let count = r.read_u64::<LittleEndian>().map_err(t("header"))?;
        let mut index = Self::new(dim).map_err(|_| Error::Format("index dimension is 0".into()))?;
        let read_str = |r: &mut Cursor<&[u8]>| -> Result<String> {
            let len = r.read_u16::<LittleEndian>().map_err(t("string"))?;
            let mut buf = vec![0u8; usize::from(len)];
            r.read_exact(&mut buf).map_err(t("string"))?;
            String::from_utf8(buf).map_err(|_| Error::Format("index string is not UTF-8".into()))
        };
        for _ in 0..count {
            let id = r.read_u64::<LittleEndian>().map_err(t("record"))?;
            let mut v = vec![0f32; dim];
            r.read_f32_into::<LittleEndian>(&mut v).map_err(t("record"))?;
            let caption = read_str(&mut r)?;
            let source = read_str(&mut r)?;
            if index.by_id.contains_key(&id) {
                return Err(Error::DuplicateId(id));
            }
            index.by_id.insert(id, index.records.len());
            index.vectors.extend_from_slice(&v);
            index.records.push(Stored { id, caption, source });
        }
        if r.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes after index records".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Encodes the given manifest entries from rasters on disk under `data_dir`
/// and adds them; returns the number added.
pub fn build_from_manifest(
    model: &ClipModel,
    entries: &[&CorpusEntry],
    data_dir: &Path,
    index: &mut RetrievalIndex,
) -> Result<usize> {
    let mut rasters = Vec::with_capacity(entries.len());
    for e in entries {
        rasters.push(Raster::read_ppm(&data_dir.join(&e.path))?);
    }
    add_encoded(model, entries, &rasters, index)
}

/// Same as [`build_from_manifest`] for an in-memory corpus; `filter` selects
/// entries.
pub fn build_from_corpus(
    model: &ClipModel,
    corpus: &Corpus,
    filter: impl Fn(&CorpusEntry) -> bool,
    index: &mut RetrievalIndex,
) -> Result<usize> {
    let (entries, rasters): (Vec<&CorpusEntry>, Vec<Raster>) = corpus
        .entries
        .iter()
        .zip(&corpus.rasters)
        .filter(|(e, _)| filter(e))
        .map(|(e, r)| (e, r.clone()))
        .unzip();
    add_encoded(model, &entries, &rasters, index)
}

fn add_encoded(
    model: &ClipModel,
    entries: &[&CorpusEntry],
    rasters: &[Raster],
    index: &mut RetrievalIndex,
) -> Result<usize> {
    let pixels: Vec<_> = rasters.iter().map(Raster::to_pixels).collect();
    let refs: Vec<_> = pixels.iter().collect();
    let embs = model.encode_image_batch(&refs)?;
    for (e, v) in entries.iter().zip(embs) {
        index.add(EmbeddingRecord {
            id: e.id,
            vector: v,
            caption: e.caption.clone(),
            source: e.path.clone(),
        })?;
    }
    Ok(entries.len())
}
