//! QA corpus ingestion, normalization, and validation.
//!
//! Two entry points produce the same normalized shape: a nested QA-JSON
//! reader (article → paragraph → questions) and a flat kind-tagged JSONL
//! reader. Passages are deduplicated by exact trimmed text and get stable
//! content-hash ids, so re-ingesting the same bytes always yields the same
//! store.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation, ViolationKind};
use crate::util::{sha256_hex, short_hash, write_atomic};

/// One corpus passage, the retrieval unit and ground-truth target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

/// One user query bound to the document that answers it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub gold_doc_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    SquadJson,
    Jsonl,
}

impl std::fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceFormat::SquadJson => write!(f, "squad_json"),
            SourceFormat::Jsonl => write!(f, "jsonl"),
        }
    }
}

/// Summary of a validated corpus. `content_hash` is the SHA-256 of the
/// canonical JSONL serialization, so it is recomputable from the store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub n_documents: usize,
    pub n_queries: usize,
    pub source_format: SourceFormat,
    pub content_hash: String,
}

/// Normalized (documents, queries) pair store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub queries: Vec<QueryRecord>,
    pub source_format: SourceFormat,
}

/// Counts of records dropped or merged during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub questions_skipped_empty_context: usize,
    pub duplicate_contexts_merged: usize,
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: Option<String>,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQuestion>,
}

#[derive(Deserialize)]
struct SquadQuestion {
    id: String,
    question: String,
}

/// One line of the normalized JSONL store.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusLine {
    Document(Document),
    Query(QueryRecord),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CorpusLineRef<'a> {
    Document(&'a Document),
    Query(&'a QueryRecord),
}

/// Ingest a nested QA-JSON file (articles holding paragraphs, each paragraph
/// holding questions). One document per distinct trimmed paragraph context;
/// one query per question, pointing at its paragraph's document. Questions
/// under an empty context are skipped and counted in the report.
pub fn ingest_squad(raw: &[u8]) -> Result<(Corpus, IngestReport)> {
    let parsed: SquadFile =
        serde_json::from_slice(raw).map_err(|e| json_parse_error(raw, &e))?;
    let mut report = IngestReport::default();
    let mut documents = Vec::new();
    let mut seen: HashMap<String, String> = HashMap::new();
    let mut queries = Vec::new();

    for article in &parsed.data {
        for para in &article.paragraphs {
            let trimmed = para.context.trim();
            if trimmed.is_empty() {
                report.questions_skipped_empty_context += para.qas.len();
                continue;
            }
            let doc_id = match seen.get(trimmed) {
                Some(id) => {
                    report.duplicate_contexts_merged += 1;
                    id.clone()
                }
                None => {
                    let id = format!("doc-{}", short_hash(trimmed.as_bytes()));
                    seen.insert(trimmed.to_string(), id.clone());
                    documents.push(Document {
                        doc_id: id.clone(),
                        text: trimmed.to_string(),
                        title: article.title.clone(),
                    });
                    id
                }
            };
            for qa in &para.qas {
                queries.push(QueryRecord {
                    query_id: qa.id.clone(),
                    text: qa.question.trim().to_string(),
                    gold_doc_id: doc_id.clone(),
                });
            }
        }
    }

    Ok((
        Corpus {
            documents,
            queries,
            source_format: SourceFormat::SquadJson,
        },
        report,
    ))
}

/// Ingest kind-tagged JSONL. Blank lines are skipped; the first malformed
/// line aborts with its 1-based number and the parser message (which names
/// any missing field). Referential checks are deferred to [`validate`].
pub fn ingest_jsonl(raw: &[u8]) -> Result<(Corpus, IngestReport)> {
    let mut documents = Vec::new();
    let mut queries = Vec::new();
    for (i, line_bytes) in raw.split(|b| *b == b'\n').enumerate() {
        let line = std::str::from_utf8(line_bytes)
            .map_err(|e| Error::JsonlLine {
                line: i + 1,
                message: format!("invalid UTF-8: {e}"),
            })?
            .trim();
        if line.is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(line).map_err(|e| Error::JsonlLine {
            line: i + 1,
            message: strip_position_suffix(&e.to_string()),
        })?;
        match parsed {
            CorpusLine::Document(d) => documents.push(d),
            CorpusLine::Query(q) => queries.push(q),
        }
    }
    Ok((
        Corpus {
            documents,
            queries,
            source_format: SourceFormat::Jsonl,
        },
        IngestReport::default(),
    ))
}

/// Check all corpus invariants: unique doc and query ids, non-empty texts,
/// and resolvable gold references. Returns a manifest on success, or the
/// full list of violations on failure.
pub fn validate(corpus: &Corpus) -> Result<CorpusManifest> {
    let mut violations = Vec::new();

    let mut doc_ids: HashSet<&str> = HashSet::new();
    for d in &corpus.documents {
        if !doc_ids.insert(d.doc_id.as_str()) {
            violations.push(Violation {
                kind: ViolationKind::DuplicateDocId,
                subject: d.doc_id.clone(),
                detail: "duplicate doc_id".to_string(),
            });
        }
        if d.text.trim().is_empty() {
            violations.push(Violation {
                kind: ViolationKind::EmptyDocText,
                subject: d.doc_id.clone(),
                detail: "document text is empty".to_string(),
            });
        }
    }

    let mut query_ids: HashSet<&str> = HashSet::new();
    for q in &corpus.queries {
        if !query_ids.insert(q.query_id.as_str()) {
            violations.push(Violation {
                kind: ViolationKind::DuplicateQueryId,
                subject: q.query_id.clone(),
                detail: "duplicate query_id".to_string(),
            });
        }
        if q.text.trim().is_empty() {
            violations.push(Violation {
                kind: ViolationKind::EmptyQueryText,
                subject: q.query_id.clone(),
                detail: "query text is empty".to_string(),
            });
        }
        if !doc_ids.contains(q.gold_doc_id.as_str()) {
            violations.push(Violation {
                kind: ViolationKind::DanglingGoldRef,
                subject: q.query_id.clone(),
                detail: format!("dangling gold reference: {}", q.gold_doc_id),
            });
        }
    }

    if !violations.is_empty() {
        return Err(Error::CorpusInvalid { violations });
    }

    let content_hash = sha256_hex(&to_jsonl_bytes(corpus));
    Ok(CorpusManifest {
        corpus_id: format!("corpus-{}", &content_hash[..12]),
        n_documents: corpus.documents.len(),
        n_queries: corpus.queries.len(),
        source_format: corpus.source_format,
        content_hash,
    })
}

/// Canonical JSONL serialization: all documents in order, then all queries,
/// with a stable field order per line. This is the hashing input and the
/// on-disk store format.
pub fn to_jsonl_bytes(corpus: &Corpus) -> Vec<u8> {
    let mut buf = Vec::new();
    for d in &corpus.documents {
        serde_json::to_writer(&mut buf, &CorpusLineRef::Document(d))
            .expect("document serialization is infallible");
        buf.push(b'\n');
    }
    for q in &corpus.queries {
        serde_json::to_writer(&mut buf, &CorpusLineRef::Query(q))
            .expect("query serialization is infallible");
        buf.push(b'\n');
    }
    buf
}

/// Write the canonical JSONL store.
pub fn write_store(corpus: &Corpus, path: &Path) -> Result<()> {
    write_atomic(path, &to_jsonl_bytes(corpus))
}

/// Read a store written by [`write_store`].
pub fn read_store(path: &Path) -> Result<Corpus> {
    let raw = std::fs::read(path)?;
    let (corpus, _) = ingest_jsonl(&raw)?;
    Ok(corpus)
}

fn json_parse_error(raw: &[u8], e: &serde_json::Error) -> Error {
    let line = e.line().max(1);
    let column = e.column().max(1);
    let mut offset = 0usize;
    let mut lines_to_skip = line - 1;
    for (i, b) in raw.iter().enumerate() {
        if lines_to_skip == 0 {
            break;
        }
        if *b == b'\n' {
            lines_to_skip -= 1;
            offset = i + 1;
        }
    }
    let offset = (offset + column - 1).min(raw.len());
    Error::JsonParse {
        offset,
        line,
        column,
        message: strip_position_suffix(&e.to_string()),
    }
}

fn strip_position_suffix(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(pos) => message[..pos].to_string(),
        None => message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn squad_fixture(paragraphs: &[(&str, &[(&str, &str)])]) -> Vec<u8> {
        let paras: Vec<serde_json::Value> = paragraphs
            .iter()
            .map(|(context, qas)| {
                serde_json::json!({
                    "context": context,
                    "qas": qas
                        .iter()
                        .map(|(id, q)| serde_json::json!({"id": id, "question": q}))
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::to_vec(&serde_json::json!({
            "data": [{"title": "Fixture", "paragraphs": paras}]
        }))
        .unwrap()
    }

    #[test]
    fn squad_identity_case() {
        let raw = squad_fixture(&[("The siege lasted a month.", &[("q1", "How long?")])]);
        let (corpus, report) = ingest_squad(&raw).unwrap();
        assert_eq!(corpus.documents.len(), 1);
        assert_eq!(corpus.queries.len(), 1);
        assert_eq!(corpus.queries[0].gold_doc_id, corpus.documents[0].doc_id);
        assert!(corpus.documents[0].doc_id.starts_with("doc-"));
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn duplicate_contexts_collapse() {
        let raw = squad_fixture(&[
            ("Shared passage text.", &[("q1", "First?"), ("q2", "Second?")]),
            ("Shared passage text.", &[("q3", "Third?")]),
        ]);
        let (corpus, report) = ingest_squad(&raw).unwrap();
        assert_eq!(corpus.documents.len(), 1);
        assert_eq!(corpus.queries.len(), 3);
        let gold = &corpus.documents[0].doc_id;
        assert!(corpus.queries.iter().all(|q| q.gold_doc_id == *gold));
        assert_eq!(report.duplicate_contexts_merged, 1);
    }

    #[test]
    fn whitespace_variants_do_not_collapse_different_texts() {
        let raw = squad_fixture(&[
            ("  padded text  ", &[("q1", "A?")]),
            ("padded text", &[("q2", "B?")]),
            ("padded  text", &[("q3", "C?")]),
        ]);
        let (corpus, _) = ingest_squad(&raw).unwrap();
        assert_eq!(corpus.documents.len(), 2);
    }

    #[test]
    fn empty_context_questions_skipped_and_counted() {
        let raw = squad_fixture(&[
            ("   ", &[("q1", "Lost?"), ("q2", "Also lost?")]),
            ("Real text.", &[("q3", "Kept?")]),
        ]);
        let (corpus, report) = ingest_squad(&raw).unwrap();
        assert_eq!(corpus.documents.len(), 1);
        assert_eq!(corpus.queries.len(), 1);
        assert_eq!(report.questions_skipped_empty_context, 2);
    }

    #[test]
    fn malformed_json_reports_byte_offset() {
        let raw = b"{\"data\": [}";
        let err = ingest_squad(raw).unwrap_err();
        match err {
            Error::JsonParse { offset, line, column, .. } => {
                assert_eq!(line, 1);
                assert_eq!(column, 11);
                assert_eq!(offset, 10);
                assert_eq!(raw[offset], b'}');
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn jsonl_empty_input() {
        let (corpus, _) = ingest_jsonl(b"").unwrap();
        assert!(corpus.documents.is_empty());
        assert!(corpus.queries.is_empty());
    }

    #[test]
    fn jsonl_minimal_case() {
        let raw = concat!(
            "{\"kind\":\"document\",\"doc_id\":\"d1\",\"text\":\"first\"}\n",
            "{\"kind\":\"document\",\"doc_id\":\"d2\",\"text\":\"second\"}\n",
            "{\"kind\":\"query\",\"query_id\":\"q1\",\"text\":\"find first\",\"gold_doc_id\":\"d1\"}\n",
        );
        let (corpus, _) = ingest_jsonl(raw.as_bytes()).unwrap();
        assert_eq!(corpus.documents.len(), 2);
        assert_eq!(corpus.queries.len(), 1);
        assert_eq!(corpus.queries[0].gold_doc_id, "d1");
    }

    #[test]
    fn jsonl_malformed_line_names_line_and_field() {
        let raw = concat!(
            "{\"kind\":\"document\",\"doc_id\":\"d1\",\"text\":\"ok\"}\n",
            "{\"kind\":\"document\",\"doc_id\":\"d2\"}\n",
        );
        let err = ingest_jsonl(raw.as_bytes()).unwrap_err();
        match err {
            Error::JsonlLine { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("text"), "message was: {message}");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    fn tiny_corpus() -> Corpus {
        let raw = concat!(
            "{\"kind\":\"document\",\"doc_id\":\"d1\",\"text\":\"first\"}\n",
            "{\"kind\":\"document\",\"doc_id\":\"d2\",\"text\":\"second\"}\n",
            "{\"kind\":\"query\",\"query_id\":\"q1\",\"text\":\"find first\",\"gold_doc_id\":\"d1\"}\n",
        );
        ingest_jsonl(raw.as_bytes()).unwrap().0
    }

    #[test]
    fn validate_produces_manifest() {
        let manifest = validate(&tiny_corpus()).unwrap();
        assert_eq!(manifest.n_documents, 2);
        assert_eq!(manifest.n_queries, 1);
        assert!(manifest.corpus_id.starts_with("corpus-"));
        assert_eq!(manifest.content_hash.len(), 64);
    }

    #[test]
    fn validate_flags_dangling_gold_reference() {
        let mut corpus = tiny_corpus();
        corpus.queries[0].gold_doc_id = "missing".to_string();
        let err = validate(&corpus).unwrap_err();
        match err {
            Error::CorpusInvalid { violations } => {
                assert_eq!(violations.len(), 1);
                assert_eq!(violations[0].kind, ViolationKind::DanglingGoldRef);
                assert_eq!(violations[0].subject, "q1");
                assert!(violations[0].detail.contains("dangling gold reference"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn validate_flags_duplicates_and_empty_texts() {
        let mut corpus = tiny_corpus();
        corpus.documents.push(Document {
            doc_id: "d1".to_string(),
            text: "   ".to_string(),
            title: None,
        });
        let err = validate(&corpus).unwrap_err();
        match err {
            Error::CorpusInvalid { violations } => {
                let kinds: Vec<ViolationKind> = violations.iter().map(|v| v.kind).collect();
                assert!(kinds.contains(&ViolationKind::DuplicateDocId));
                assert!(kinds.contains(&ViolationKind::EmptyDocText));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn content_hash_is_deterministic() {
        let a = validate(&tiny_corpus()).unwrap();
        let b = validate(&tiny_corpus()).unwrap();
        assert_eq!(a.content_hash, b.content_hash);
        assert_eq!(a.corpus_id, b.corpus_id);
    }

    #[test]
    fn store_roundtrip_preserves_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = tiny_corpus();
        write_store(&corpus, &path).unwrap();
        let back = read_store(&path).unwrap();
        assert_eq!(back.documents, corpus.documents);
        assert_eq!(back.queries, corpus.queries);
        assert_eq!(
            to_jsonl_bytes(&back),
            to_jsonl_bytes(&corpus),
            "canonical bytes must round-trip"
        );
    }

    #[test]
    fn reingesting_same_bytes_is_deterministic() {
        let raw = squad_fixture(&[
            ("Alpha passage.", &[("q1", "One?")]),
            ("Beta passage.", &[("q2", "Two?")]),
        ]);
        let (a, _) = ingest_squad(&raw).unwrap();
        let (b, _) = ingest_squad(&raw).unwrap();
        assert_eq!(to_jsonl_bytes(&a), to_jsonl_bytes(&b));
    }
}
