//! Exact dense vector index: top-k cosine search, full rank-of-gold, and a
//! little-endian binary file format.
//!
//! Search is a straight dot-product scan over every row (no approximation),
//! with scores accumulated in `f64`. Ordering is score descending, ties
//! broken by doc_id ascending, so results are fully deterministic. Hit lists
//! and gold ranks come from one shared ranking, which makes "gold outside
//! top-k" and "gold absent from hits" the same statement by construction.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "RQVINDEX"
//! version    u32      currently 1
//! dim        u32
//! n          u64      row count
//! model_len  u32      followed by model_len UTF-8 bytes (embedder model id)
//! doc id table, n entries: id_len u32 followed by id_len UTF-8 bytes
//! matrix     n * dim  f32 values, row-major
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embed::{Embedder, EmbeddingVector, Fingerprint, TextRole};
use crate::error::{Error, Result};
use crate::util::{short_hash, write_atomic};

pub const INDEX_MAGIC: &[u8; 8] = b"RQVINDEX";
pub const INDEX_VERSION: u32 = 1;

/// Unit-norm tolerance applied to rows read back from disk. Looser than the
/// embedders' 1e-6 contract because rows are stored as `f32`.
const LOAD_NORM_TOL: f64 = 1e-4;

/// Retrieval settings. Similarity is always cosine over unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    pub top_k: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self { top_k: 3 }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// One scored search hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f32,
}

/// Outcome of retrieving for one query: the top-k hits plus, when a gold
/// document was named, its 1-based rank under the full ordering and its
/// score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_of_gold: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_score: Option<f32>,
}

impl RetrievalResult {
    /// True when the gold document was ranked outside the top-k.
    pub fn is_miss(&self) -> bool {
        match self.rank_of_gold {
            Some(rank) => rank > self.k,
            None => false,
        }
    }
}

/// Immutable exact-search index over unit-norm document vectors.
#[derive(Debug)]
pub struct VectorIndex {
    doc_ids: Vec<String>,
    matrix: Vec<f32>,
    dim: usize,
    fingerprint: Fingerprint,
    id_to_row: HashMap<String, usize>,
}

impl VectorIndex {
    /// Assemble an index from pre-embedded rows. Checks id uniqueness,
    /// dimension consistency, and unit norms.
    pub fn from_rows(
        doc_ids: Vec<String>,
        vectors: Vec<EmbeddingVector>,
        fingerprint: Fingerprint,
    ) -> Result<Self> {
        if doc_ids.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if doc_ids.len() != vectors.len() {
            return Err(Error::Config(format!(
                "{} doc ids for {} vectors",
                doc_ids.len(),
                vectors.len()
            )));
        }
        let dim = fingerprint.dim;
        let mut id_to_row = HashMap::with_capacity(doc_ids.len());
        for (row, id) in doc_ids.iter().enumerate() {
            if id_to_row.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateDocId { doc_id: id.clone() });
            }
        }
        let mut matrix = Vec::with_capacity(doc_ids.len() * dim);
        for (row, v) in vectors.iter().enumerate() {
            if v.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            if !v.is_unit_norm(LOAD_NORM_TOL) {
                return Err(Error::Config(format!(
                    "row {row} ({}) is not unit-norm: {}",
                    doc_ids[row],
                    v.norm()
                )));
            }
            matrix.extend_from_slice(&v.values);
        }
        Ok(Self {
            doc_ids,
            matrix,
            dim,
            fingerprint,
            id_to_row,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.id_to_row.contains_key(doc_id)
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    /// Stored vector for a document, if present.
    pub fn vector_of(&self, doc_id: &str) -> Option<&[f32]> {
        self.id_to_row.get(doc_id).map(|&r| self.row(r))
    }

    /// Err with a mismatch description unless `expected` matches this
    /// index's recorded embedder identity.
    pub fn check_fingerprint(&self, expected: &Fingerprint) -> Result<()> {
        if &self.fingerprint == expected {
            Ok(())
        } else {
            Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: self.fingerprint.to_string(),
            })
        }
    }

    fn scores(&self, query_vec: &EmbeddingVector) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query_vec.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: query_vec.dim(),
            });
        }
        Ok((0..self.len())
            .map(|row| {
                self.row(row)
                    .iter()
                    .zip(&query_vec.values)
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum()
            })
            .collect())
    }

    /// Row indices sorted best-first: score descending, doc_id ascending
    /// on ties.
    fn ranked_order(&self, scores: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.doc_ids[a].cmp(&self.doc_ids[b]))
        });
        order
    }

    /// Full retrieval for one query: top-`k` hits (clamped to the corpus
    /// size) plus the gold document's full rank when `gold_doc_id` is given.
    /// Hits and rank come from the same ranking pass.
    pub fn retrieve(
        &self,
        query_id: &str,
        query_vec: &EmbeddingVector,
        k: usize,
        gold_doc_id: Option<&str>,
    ) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        let gold_row = match gold_doc_id {
            Some(id) => Some(*self.id_to_row.get(id).ok_or_else(|| Error::UnknownDocId {
                doc_id: id.to_string(),
            })?),
            None => None,
        };
        let scores = self.scores(query_vec)?;
        let order = self.ranked_order(&scores);
        let hits = order
            .iter()
            .take(k.min(self.len()))
            .map(|&row| Hit {
                doc_id: self.doc_ids[row].clone(),
                score: scores[row] as f32,
            })
            .collect();
        let (rank_of_gold, gold_score) = match gold_row {
            Some(row) => {
                let rank = order
                    .iter()
                    .position(|&r| r == row)
                    .expect("gold row present in ranking")
                    + 1;
                (Some(rank), Some(scores[row] as f32))
            }
            None => (None, None),
        };
        Ok(RetrievalResult {
            query_id: query_id.to_string(),
            hits,
            k,
            rank_of_gold,
            gold_score,
        })
    }

    /// Top-k hit list only.
    pub fn search(&self, query_vec: &EmbeddingVector, k: usize) -> Result<Vec<Hit>> {
        Ok(self.retrieve("", query_vec, k, None)?.hits)
    }

    /// 1-based full rank and score of a known document for this query.
    pub fn rank_of(
        &self,
        query_vec: &EmbeddingVector,
        gold_doc_id: &str,
    ) -> Result<(usize, f32)> {
        let result = self.retrieve("", query_vec, 1, Some(gold_doc_id))?;
        Ok((
            result.rank_of_gold.expect("gold rank computed"),
            result.gold_score.expect("gold score computed"),
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.doc_ids.len() as u64).to_le_bytes());
        let model = self.fingerprint.model_id.as_bytes();
        buf.extend_from_slice(&(model.len() as u32).to_le_bytes());
        buf.extend_from_slice(model);
        for id in &self.doc_ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for v in &self.matrix {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Short content hash of the serialized index, used in retriever ids.
    pub fn content_hash(&self) -> String {
        short_hash(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != INDEX_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(corrupt("dim is zero"));
        }
        let n = r.u64()? as usize;
        if n == 0 {
            return Err(Error::EmptyIndex);
        }
        let model_id = r.string()?;
        let mut doc_ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            doc_ids.push(r.string()?);
        }

        let expected_floats = n
            .checked_mul(dim)
            .ok_or_else(|| corrupt("row count overflows"))?;
        let expected_bytes = expected_floats
            .checked_mul(4)
            .ok_or_else(|| corrupt("vector block overflows"))?;
        if r.remaining() != expected_bytes {
            return Err(corrupt(format!(
                "vector block holds {} bytes, expected {expected_bytes}",
                r.remaining()
            )));
        }
        let mut matrix = Vec::with_capacity(expected_floats);
        for chunk in r.take(expected_bytes)?.chunks_exact(4) {
            matrix.push(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
        }

        let mut id_to_row = HashMap::with_capacity(n);
        for (row, id) in doc_ids.iter().enumerate() {
            if id_to_row.insert(id.clone(), row).is_some() {
                return Err(corrupt(format!("duplicate doc id {id}")));
            }
        }
        for row in 0..n {
            let norm = matrix[row * dim..(row + 1) * dim]
                .iter()
                .map(|v| *v as f64 * *v as f64)
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > LOAD_NORM_TOL {
                return Err(corrupt(format!("row {row} is not unit-norm ({norm})")));
            }
        }

        Ok(Self {
            doc_ids,
            matrix,
            dim,
            fingerprint: Fingerprint { model_id, dim },
            id_to_row,
        })
    }
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::CorruptFile {
        message: message.into(),
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt("unexpected end of file"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| corrupt("non-UTF-8 string"))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Embed every document and assemble the index. Embedding failures carry
/// the doc ids of the failed items.
pub fn build_index(docs: &[Document], embedder: &dyn Embedder) -> Result<VectorIndex> {
    if docs.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let vectors = embedder
        .embed_batch(&texts, TextRole::Passage)
        .map_err(|e| match e {
            Error::BatchItems { items } => Error::BatchItems {
                items: items
                    .into_iter()
                    .map(|(i, msg)| {
                        let id = docs.get(i).map(|d| d.doc_id.as_str()).unwrap_or("?");
                        (i, format!("{id}: {msg}"))
                    })
                    .collect(),
            },
            other => other,
        })?;
    let doc_ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    VectorIndex::from_rows(doc_ids, vectors, embedder.fingerprint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{deterministic_embed, DeterministicEmbedder, EmbedderSpec};

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.to_string(),
            text: text.to_string(),
            title: None,
        }
    }

    fn embedder() -> DeterministicEmbedder {
        DeterministicEmbedder::new(EmbedderSpec::deterministic("det-test", 32)).unwrap()
    }

    fn small_index() -> VectorIndex {
        let docs = vec![
            doc("d1", "the siege of toulon lasted four months"),
            doc("d2", "copper and tin form bronze when smelted"),
            doc("d3", "plymouth dock was renamed devonport"),
        ];
        build_index(&docs, &embedder()).unwrap()
    }

    #[test]
    fn self_retrieval_ranks_first_with_unit_score() {
        let index = small_index();
        let q = deterministic_embed("copper and tin form bronze when smelted", 32);
        let (rank, score) = index.rank_of(&q, "d2").unwrap();
        assert_eq!(rank, 1);
        assert!((score as f64 - 1.0).abs() < 1e-6);
        let hits = index.search(&q, 3).unwrap();
        assert_eq!(hits[0].doc_id, "d2");
    }

    #[test]
    fn duplicate_doc_ids_fail_build() {
        let docs = vec![doc("d1", "alpha"), doc("d1", "beta")];
        let err = build_index(&docs, &embedder()).unwrap_err();
        match err {
            Error::DuplicateDocId { doc_id } => assert_eq!(doc_id, "d1"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn identical_texts_tie_break_by_doc_id() {
        let docs = vec![
            doc("zz", "identical passage text"),
            doc("aa", "identical passage text"),
        ];
        let index = build_index(&docs, &embedder()).unwrap();
        let q = deterministic_embed("identical passage text", 32);
        let hits = index.search(&q, 2).unwrap();
        assert_eq!(hits[0].doc_id, "aa");
        assert_eq!(hits[1].doc_id, "zz");
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn k_larger_than_corpus_returns_everything() {
        let index = small_index();
        let q = deterministic_embed("anything at all", 32);
        let hits = index.search(&q, 100).unwrap();
        assert_eq!(hits.len(), 3);
        for pair in hits.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn dim_mismatch_names_both_dims() {
        let index = small_index();
        let q = deterministic_embed("whatever", 16);
        let err = index.search(&q, 3).unwrap_err();
        match err {
            Error::DimMismatch { expected, got } => {
                assert_eq!(expected, 32);
                assert_eq!(got, 16);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn empty_rows_rejected() {
        let err = VectorIndex::from_rows(
            vec![],
            vec![],
            Fingerprint {
                model_id: "m".into(),
                dim: 8,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyIndex));
    }

    #[test]
    fn unknown_gold_is_an_error() {
        let index = small_index();
        let q = deterministic_embed("whatever", 32);
        let err = index.rank_of(&q, "nope").unwrap_err();
        match err {
            Error::UnknownDocId { doc_id } => assert_eq!(doc_id, "nope"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rank_matches_predecessor_count() {
        let index = small_index();
        for probe in ["siege of toulon", "bronze alloy", "devonport", "unrelated"] {
            let q = deterministic_embed(probe, 32);
            for gold in ["d1", "d2", "d3"] {
                let (rank, gold_score) = index.rank_of(&q, gold).unwrap();
                let hits = index.search(&q, 3).unwrap();
                let better = hits
                    .iter()
                    .filter(|h| {
                        h.score > gold_score
                            || (h.score == gold_score && h.doc_id.as_str() < gold)
                    })
                    .count();
                assert_eq!(rank, better + 1);
            }
        }
    }

    #[test]
    fn save_load_roundtrip_preserves_results() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.idx");
        let index = small_index();
        index.save(&path).unwrap();
        let loaded = VectorIndex::load(&path).unwrap();
        assert_eq!(loaded.fingerprint(), index.fingerprint());
        assert_eq!(loaded.to_bytes(), index.to_bytes());
        let q = deterministic_embed("plymouth dock", 32);
        assert_eq!(
            loaded.retrieve("q", &q, 2, Some("d3")).unwrap(),
            index.retrieve("q", &q, 2, Some("d3")).unwrap()
        );
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.idx");
        let b = dir.path().join("b.idx");
        let index = small_index();
        index.save(&a).unwrap();
        index.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = small_index().to_bytes();
        for cut in [4, 20, bytes.len() - 3] {
            let err = VectorIndex::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::CorruptFile { .. }),
                "cut at {cut} gave: {err}"
            );
        }
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let mut bytes = small_index().to_bytes();
        bytes[0] = b'X';
        let err = VectorIndex::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::CorruptFile { .. }));
    }

    #[test]
    fn trailing_bytes_are_corrupt() {
        let mut bytes = small_index().to_bytes();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        let err = VectorIndex::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::CorruptFile { .. }));
    }

    #[test]
    fn fingerprint_check_reports_both_sides() {
        let index = small_index();
        let other = Fingerprint {
            model_id: "different".into(),
            dim: 32,
        };
        let err = index.check_fingerprint(&other).unwrap_err();
        match err {
            Error::FingerprintMismatch { expected, found } => {
                assert_eq!(expected, "different:32");
                assert_eq!(found, "det-test:32");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn miss_flag_matches_hit_membership() {
        let index = small_index();
        let q = deterministic_embed("siege toulon months", 32);
        for gold in ["d1", "d2", "d3"] {
            let r = index.retrieve("q", &q, 1, Some(gold)).unwrap();
            let in_hits = r.hits.iter().any(|h| h.doc_id == gold);
            assert_eq!(r.is_miss(), !in_hits);
        }
    }
}
