//! Flat exact maximum-inner-product index.
//!
//! Vectors live in one contiguous row-major buffer. A query scores every row
//! and keeps the best `k` in a bounded heap; ties on score go to the smaller
//! orb id so results never depend on insertion order.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::embed::{dot, EmbeddingVector};
use crate::error::{Error, Result};
use crate::orb::{Context, OrbId};

pub const VECTOR_FILE: &str = "vectors.bin";
const MAGIC: &[u8; 4] = b"MORB";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub orb_id: OrbId,
    pub document: String,
    pub vector: EmbeddingVector,
    pub metadata: Context,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub orb_id: OrbId,
    pub document: String,
    pub metadata: Context,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    pub k_requested: usize,
}

impl RetrievalResult {
    pub fn empty(k_requested: usize) -> Self {
        RetrievalResult {
            hits: Vec::new(),
            k_requested,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VectorStore {
    dim: usize,
    ids: Vec<OrbId>,
    documents: Vec<String>,
    metadata: Vec<Context>,
    data: Vec<f32>,
    slots: HashMap<OrbId, usize>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "vector store dimension must be positive");
        VectorStore {
            dim,
            ids: Vec::new(),
            documents: Vec::new(),
            metadata: Vec::new(),
            data: Vec::new(),
            slots: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &OrbId) -> bool {
        self.slots.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &OrbId> {
        self.ids.iter()
    }

    pub fn get(&self, id: &OrbId) -> Option<VectorRecord> {
        self.slots.get(id).map(|&slot| self.record_at(slot))
    }

    fn record_at(&self, slot: usize) -> VectorRecord {
        VectorRecord {
            orb_id: self.ids[slot].clone(),
            document: self.documents[slot].clone(),
            vector: EmbeddingVector::new(self.row(slot).to_vec()).expect("stored rows are valid"),
            metadata: self.metadata[slot].clone(),
        }
    }

    fn row(&self, slot: usize) -> &[f32] {
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Inserts or replaces the record for `record.orb_id`.
    pub fn add_embedding(&mut self, record: VectorRecord) -> Result<()> {
        if record.vector.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: record.vector.dim(),
            });
        }
        match self.slots.get(&record.orb_id) {
            Some(&slot) => {
                self.data[slot * self.dim..(slot + 1) * self.dim]
                    .copy_from_slice(record.vector.as_slice());
                self.documents[slot] = record.document;
                self.metadata[slot] = record.metadata;
            }
            None => {
                self.slots.insert(record.orb_id.clone(), self.ids.len());
                self.ids.push(record.orb_id);
                self.documents.push(record.document);
                self.metadata.push(record.metadata);
                self.data.extend_from_slice(record.vector.as_slice());
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, id: &OrbId) -> bool {
        let Some(slot) = self.slots.remove(id) else {
            return false;
        };
        let last = self.ids.len() - 1;
        if slot != last {
            let (head, tail) = self.data.split_at_mut(last * self.dim);
            head[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
            self.slots.insert(self.ids[last].clone(), slot);
        }
        self.data.truncate(last * self.dim);
        self.ids.swap_remove(slot);
        self.documents.swap_remove(slot);
        self.metadata.swap_remove(slot);
        true
    }

    /// Exact top-`k` by inner product, best first.
    pub fn query_topk(&self, query: &EmbeddingVector, k: usize) -> Result<RetrievalResult> {
        if query.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidRequest("k must be at least 1".into()));
        }

        let q = query.as_slice();
        let mut heap: BinaryHeap<Reverse<Candidate<'_>>> = BinaryHeap::with_capacity(k + 1);
        for (slot, id) in self.ids.iter().enumerate() {
            let candidate = Candidate {
                score: dot(q, self.row(slot)),
                id: id.as_str(),
                slot,
            };
            if heap.len() < k {
                heap.push(Reverse(candidate));
            } else if let Some(mut worst) = heap.peek_mut() {
                if candidate > worst.0 {
                    *worst = Reverse(candidate);
                }
            }
        }

        let mut best: Vec<Candidate<'_>> = heap.into_iter().map(|Reverse(c)| c).collect();
        best.sort_unstable_by(|a, b| b.cmp(a));
        let hits = best
            .into_iter()
            .map(|c| Hit {
                orb_id: self.ids[c.slot].clone(),
                document: self.documents[c.slot].clone(),
                metadata: self.metadata[c.slot].clone(),
                score: c.score,
            })
            .collect();
        Ok(RetrievalResult {
            hits,
            k_requested: k,
        })
    }

    /// Writes the binary snapshot atomically (temp file + rename). Records
    /// are emitted in id order so equal stores produce equal bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;

        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        for slot in order {
            let id = self.ids[slot].as_str().as_bytes();
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id)?;
            let doc = self.documents[slot].as_bytes();
            w.write_all(&len_u32(doc.len())?.to_le_bytes())?;
            w.write_all(doc)?;
            let meta = serde_json::to_vec(&self.metadata[slot]).expect("context serializes");
            w.write_all(&len_u32(meta.len())?.to_le_bytes())?;
            w.write_all(&meta)?;
            for x in self.row(slot) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r, &path.display().to_string())
    }

    pub fn read_from<R: Read>(r: &mut R, file: &str) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            file: file.to_owned(),
            reason,
        };
        let eof = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Corrupt {
                    file: file.to_owned(),
                    reason: "unexpected end of file".into(),
                }
            } else {
                Error::Io(e)
            }
        };

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(corrupt(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r).map_err(eof)?;
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                file: file.to_owned(),
                found: version.to_string(),
            });
        }
        let dim = read_u32(r).map_err(eof)? as usize;
        if dim == 0 {
            return Err(corrupt("dimension is zero".into()));
        }
        let count = read_u64(r).map_err(eof)?;

        let mut store = VectorStore::new(dim);
        let mut row = vec![0u8; dim * 4];
        for i in 0..count {
            let id_len = read_u16(r).map_err(eof)? as usize;
            let id = read_string(r, id_len).map_err(eof)?;
            let id = OrbId::parse(&id).map_err(|e| corrupt(format!("record {i}: {e}")))?;
            let doc_len = read_u32(r).map_err(eof)? as usize;
            let document = read_string(r, doc_len).map_err(eof)?;
            let meta_len = read_u32(r).map_err(eof)? as usize;
            let meta_bytes = read_bytes(r, meta_len).map_err(eof)?;
            let metadata: Context = serde_json::from_slice(&meta_bytes)
                .map_err(|e| corrupt(format!("record {i} metadata: {e}")))?;
            r.read_exact(&mut row).map_err(eof)?;
            let values: Vec<f32> = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let vector =
                EmbeddingVector::new(values).map_err(|e| corrupt(format!("record {i}: {e}")))?;
            if store.contains(&id) {
                return Err(corrupt(format!("record {i}: duplicate id {id}")));
            }
            store.add_embedding(VectorRecord {
                orb_id: id,
                document,
                vector,
                metadata,
            })?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(corrupt("trailing bytes after last record".into()));
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    score: f64,
    id: &'a str,
    slot: usize,
}

// Greater means better: higher score, then smaller id.
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

fn len_u32(len: usize) -> Result<u32> {
    u32::try_from(len).map_err(|_| Error::InvalidRequest(format!("field of {len} bytes is too large")))
}

fn read_u16<R: Read>(r: &mut R) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    Ok(buf)
}

fn read_string<R: Read>(r: &mut R, len: usize) -> std::io::Result<String> {
    let bytes = read_bytes(r, len)?;
    String::from_utf8(bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orb::compute_id;

    fn id(n: u32) -> OrbId {
        compute_id(&n.to_string(), "x", "y")
    }

    fn rec(n: u32, v: &[f32]) -> VectorRecord {
        VectorRecord {
            orb_id: id(n),
            document: format!("doc {n}"),
            vector: EmbeddingVector::new(v.to_vec()).unwrap(),
            metadata: Context::new(),
        }
    }

    fn unit(v: &[f32]) -> Vec<f32> {
        EmbeddingVector::new(v.to_vec()).unwrap().normalized().into_inner()
    }

    #[test]
    fn empty_store_returns_no_hits() {
        let store = VectorStore::new(3);
        let q = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(store.query_topk(&q, 5).unwrap().hits.is_empty());
    }

    #[test]
    fn self_is_nearest() {
        let mut store = VectorStore::new(3);
        store.add_embedding(rec(1, &unit(&[1.0, 2.0, 3.0]))).unwrap();
        store.add_embedding(rec(2, &unit(&[3.0, 2.0, 1.0]))).unwrap();
        store.add_embedding(rec(3, &unit(&[0.0, 1.0, 0.0]))).unwrap();
        let q = EmbeddingVector::new(unit(&[3.0, 2.0, 1.0])).unwrap();
        let result = store.query_topk(&q, 10).unwrap();
        assert_eq!(result.hits.len(), 3);
        assert_eq!(result.hits[0].orb_id, id(2));
        assert!(result.hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn dim_mismatch() {
        let mut store = VectorStore::new(3);
        assert!(matches!(
            store.add_embedding(rec(1, &[1.0, 0.0])),
            Err(Error::DimMismatch { expected: 3, actual: 2 })
        ));
        let q = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(matches!(store.query_topk(&q, 1), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn re_adding_replaces() {
        let mut store = VectorStore::new(2);
        store.add_embedding(rec(1, &[1.0, 0.0])).unwrap();
        store.add_embedding(rec(2, &[0.0, 1.0])).unwrap();
        store.add_embedding(rec(1, &[0.0, -1.0])).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get(&id(1)).unwrap().vector.as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn ties_break_by_id() {
        let mut store = VectorStore::new(2);
        for n in 0..6 {
            store.add_embedding(rec(n, &[1.0, 0.0])).unwrap();
        }
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let got: Vec<OrbId> = store.query_topk(&q, 3).unwrap().hits.into_iter().map(|h| h.orb_id).collect();
        let mut all: Vec<OrbId> = (0..6).map(id).collect();
        all.sort();
        assert_eq!(got, all[..3]);
    }

    #[test]
    fn remove_keeps_slots_consistent() {
        let mut store = VectorStore::new(2);
        for n in 0..4 {
            store.add_embedding(rec(n, &[n as f32, 1.0])).unwrap();
        }
        assert!(store.remove(&id(1)));
        assert!(!store.remove(&id(1)));
        assert_eq!(store.len(), 3);
        assert_eq!(store.get(&id(3)).unwrap().vector.as_slice(), &[3.0, 1.0]);
        assert_eq!(store.get(&id(0)).unwrap().vector.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_header() {
        let mut bytes = Vec::new();
        VectorStore::new(2).write_to(&mut bytes).unwrap();
        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(matches!(
            VectorStore::read_from(&mut bad_version.as_slice(), "v"),
            Err(Error::FormatVersion { .. })
        ));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            VectorStore::read_from(&mut bad_magic.as_slice(), "v"),
            Err(Error::Corrupt { .. })
        ));
        let empty = VectorStore::read_from(&mut bytes.as_slice(), "v").unwrap();
        assert_eq!((empty.len(), empty.dim()), (0, 2));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let mut store = VectorStore::new(2);
        store.add_embedding(rec(1, &[1.0, 0.0])).unwrap();
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            VectorStore::read_from(&mut bytes.as_slice(), "v"),
            Err(Error::Corrupt { .. })
        ));
    }
}
