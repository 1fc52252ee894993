//! Exemplar-guided rewriting: keep verified (original, rewritten) pairs in
//! an embedded store, pick the m nearest to an incoming query, splice them
//! into a few-shot prompt, and measure whether the rewrite improves the
//! gold document's rank on a evaluation index.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::QueryRecord;
use crate::embed::{Embedder, TextRole};
use crate::error::{Error, Result};
use crate::rewriter::{build_fewshot_prompt, generate_rewrite, ChatBackend, LlmSpec};
use crate::util::{parallel_map_ordered, utc_timestamp, write_atomic, write_jsonl};
use crate::vindex::VectorIndex;

pub const DEFAULT_EXEMPLAR_COUNT: usize = 5;

/// Presentation cutoff: ranks beyond this render as "not in top-10".
pub const RANK_DISPLAY_CUTOFF: usize = 10;

/// One stored exemplar: a rewrite that already proved itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarPair {
    pub pair_id: String,
    pub original: String,
    pub rewritten: String,
}

/// Exemplar pairs plus an index over their original texts, so lookups are
/// nearest-neighbor in the same embedding space queries live in.
#[derive(Debug)]
pub struct ExemplarStore {
    pairs: Vec<ExemplarPair>,
    index: VectorIndex,
    by_id: HashMap<String, usize>,
}

impl ExemplarStore {
    fn assemble(pairs: Vec<ExemplarPair>, index: VectorIndex) -> Result<Self> {
        if pairs.len() != index.len() {
            return Err(Error::CorruptFile {
                message: format!(
                    "exemplar store holds {} pairs but its index holds {} vectors",
                    pairs.len(),
                    index.len()
                ),
            });
        }
        let mut by_id = HashMap::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            if !index.contains(&pair.pair_id) {
                return Err(Error::CorruptFile {
                    message: format!("pair {} missing from the exemplar index", pair.pair_id),
                });
            }
            if by_id.insert(pair.pair_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId {
                    doc_id: pair.pair_id.clone(),
                });
            }
        }
        Ok(Self {
            pairs,
            index,
            by_id,
        })
    }

    pub fn pairs(&self) -> &[ExemplarPair] {
        &self.pairs
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn get(&self, pair_id: &str) -> Option<&ExemplarPair> {
        self.by_id.get(pair_id).map(|&i| &self.pairs[i])
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Write the store as `exemplars.jsonl` plus `exemplars.index` under
    /// one directory. The index part uses the regular index file format.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("exemplars.jsonl"), &self.pairs)?;
        self.index.save(&dir.join("exemplars.index"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let pairs = crate::util::read_jsonl(&dir.join("exemplars.jsonl"))?;
        let index = VectorIndex::load(&dir.join("exemplars.index"))?;
        Self::assemble(pairs, index)
    }
}

/// Embed every exemplar's original text and build the store index.
pub fn build_store(pairs: Vec<ExemplarPair>, embedder: &dyn Embedder) -> Result<ExemplarStore> {
    if pairs.is_empty() {
        return Err(Error::EmptyStore);
    }
    let texts: Vec<&str> = pairs.iter().map(|p| p.original.as_str()).collect();
    let vectors = embedder.embed_batch(&texts, TextRole::Query)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.pair_id.clone()).collect();
    let index = VectorIndex::from_rows(ids, vectors, embedder.fingerprint())?;
    ExemplarStore::assemble(pairs, index)
}

/// The m exemplars whose originals are nearest to the query, most similar
/// first, ties broken by pair_id. Asking for more than the store holds
/// returns the whole store in rank order.
pub fn select_exemplars<'s>(
    store: &'s ExemplarStore,
    query_vec: &crate::embed::EmbeddingVector,
    m: usize,
) -> Result<Vec<&'s ExemplarPair>> {
    if m == 0 {
        return Err(Error::Config("exemplar count must be at least 1".into()));
    }
    let hits = store.index.search(query_vec, m.min(store.len()))?;
    Ok(hits
        .iter()
        .map(|h| store.get(&h.doc_id).expect("index ids map to pairs"))
        .collect())
}

/// A rewrite produced through the few-shot prompt, with the exemplars that
/// shaped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewshotRewrite {
    pub rewritten: String,
    pub exemplar_ids: Vec<String>,
    pub prompt_fingerprint: String,
}

/// Select exemplars for the query, render the few-shot prompt, and run it
/// through the chat backend once.
pub fn fewshot_rewrite(
    query_text: &str,
    store: &ExemplarStore,
    embedder: &dyn Embedder,
    backend: &dyn ChatBackend,
    llm: &LlmSpec,
    m: usize,
) -> Result<FewshotRewrite> {
    let query_vec = embedder.embed_one(query_text, TextRole::Query)?;
    let exemplars = select_exemplars(store, &query_vec, m)?;
    let shots: Vec<(String, String)> = exemplars
        .iter()
        .map(|p| (p.original.clone(), p.rewritten.clone()))
        .collect();
    let prompt = build_fewshot_prompt(query_text, &shots)?;
    let attempt = generate_rewrite(&prompt, backend, llm, 1)?;
    Ok(FewshotRewrite {
        rewritten: attempt.rewritten_text,
        exemplar_ids: exemplars.iter().map(|p| p.pair_id.clone()).collect(),
        prompt_fingerprint: attempt.prompt_fingerprint,
    })
}

/// Per-query evaluation row: gold rank before and after the rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewshotEval {
    pub query_id: String,
    pub original: String,
    pub rewritten: String,
    pub rank_before: usize,
    pub rank_after: usize,
    pub improved: bool,
    pub exemplar_ids: Vec<String>,
}

/// Aggregate outcome of one evaluation run. The four outcome buckets
/// partition the query set: improved + unchanged + degraded + errored
/// equals n_queries. MRR is the mean reciprocal full rank of the gold
/// document over the queries that evaluated cleanly. `k` records the
/// retrieval cutoff the evaluation pertains to; ranks themselves are full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewshotSummary {
    pub n_queries: usize,
    pub improved: usize,
    pub unchanged: usize,
    pub degraded: usize,
    pub errored: usize,
    pub mrr_before: f64,
    pub mrr_after: f64,
    pub k: usize,
    pub exemplars_per_query: usize,
    pub query_source: String,
    pub generated_at: String,
}

/// Everything an evaluation run produces.
#[derive(Debug)]
pub struct FewshotReport {
    pub summary: FewshotSummary,
    pub evals: Vec<FewshotEval>,
    pub errors: Vec<(String, String)>,
}

enum PerQuery {
    Eval(Box<FewshotEval>),
    Error(String, String),
}

/// Rewrite every query through the store and compare gold ranks on the
/// evaluation index. Per-query failures are tallied as errored, never
/// fatal.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_fewshot(
    queries: &[QueryRecord],
    eval_index: &VectorIndex,
    store: &ExemplarStore,
    embedder: &dyn Embedder,
    backend: &dyn ChatBackend,
    llm: &LlmSpec,
    m: usize,
    k: usize,
    parallelism: usize,
    query_source: &str,
) -> Result<FewshotReport> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let outcomes = parallel_map_ordered(queries, parallelism, |_, query| {
        evaluate_one(query, eval_index, store, embedder, backend, llm, m)
    });

    let mut evals = Vec::new();
    let mut errors = Vec::new();
    for outcome in outcomes {
        match outcome {
            PerQuery::Eval(e) => evals.push(*e),
            PerQuery::Error(id, msg) => errors.push((id, msg)),
        }
    }

    let improved = evals.iter().filter(|e| e.rank_after < e.rank_before).count();
    let unchanged = evals.iter().filter(|e| e.rank_after == e.rank_before).count();
    let degraded = evals.iter().filter(|e| e.rank_after > e.rank_before).count();
    let summary = FewshotSummary {
        n_queries: queries.len(),
        improved,
        unchanged,
        degraded,
        errored: errors.len(),
        mrr_before: mean_reciprocal(evals.iter().map(|e| e.rank_before)),
        mrr_after: mean_reciprocal(evals.iter().map(|e| e.rank_after)),
        k,
        exemplars_per_query: m,
        query_source: query_source.to_string(),
        generated_at: utc_timestamp(),
    };
    Ok(FewshotReport {
        summary,
        evals,
        errors,
    })
}

fn evaluate_one(
    query: &QueryRecord,
    eval_index: &VectorIndex,
    store: &ExemplarStore,
    embedder: &dyn Embedder,
    backend: &dyn ChatBackend,
    llm: &LlmSpec,
    m: usize,
) -> PerQuery {
    let fail = |msg: String| PerQuery::Error(query.query_id.clone(), msg);
    let before_vec = match embedder.embed_one(&query.text, TextRole::Query) {
        Ok(v) => v,
        Err(e) => return fail(e.to_string()),
    };
    let (rank_before, _) = match eval_index.rank_of(&before_vec, &query.gold_doc_id) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    let rewrite = match fewshot_rewrite(&query.text, store, embedder, backend, llm, m) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    let after_vec = match embedder.embed_one(&rewrite.rewritten, TextRole::Query) {
        Ok(v) => v,
        Err(e) => return fail(e.to_string()),
    };
    let (rank_after, _) = match eval_index.rank_of(&after_vec, &query.gold_doc_id) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    PerQuery::Eval(Box::new(FewshotEval {
        query_id: query.query_id.clone(),
        original: query.text.clone(),
        rewritten: rewrite.rewritten,
        rank_before,
        rank_after,
        improved: rank_after < rank_before,
        exemplar_ids: rewrite.exemplar_ids,
    }))
}

fn mean_reciprocal(ranks: impl Iterator<Item = usize>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for rank in ranks {
        sum += 1.0 / rank as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Ranks beyond the display cutoff render as a bucket, exact otherwise.
pub fn present_rank(rank: usize) -> String {
    if rank > RANK_DISPLAY_CUTOFF {
        format!("not in top-{RANK_DISPLAY_CUTOFF}")
    } else {
        rank.to_string()
    }
}

/// Write `summary.json`, `evals.jsonl`, `errors.jsonl`, and `table.csv`
/// under one directory. The CSV shows one row per evaluated query with
/// bucketed before and after ranks.
pub fn write_report(report: &FewshotReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut summary_bytes = serde_json::to_vec_pretty(&report.summary)
        .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
    summary_bytes.push(b'\n');
    write_atomic(&dir.join("summary.json"), &summary_bytes)?;
    write_jsonl(&dir.join("evals.jsonl"), &report.evals)?;

    let error_rows: Vec<serde_json::Value> = report
        .errors
        .iter()
        .map(|(id, msg)| serde_json::json!({ "query_id": id, "message": msg }))
        .collect();
    write_jsonl(&dir.join("errors.jsonl"), &error_rows)?;

    let mut csv_bytes = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut csv_bytes);
        writer
            .write_record([
                "query_id",
                "original_query",
                "rewritten_query",
                "rank_before",
                "rank_after",
                "improved",
            ])
            .map_err(csv_error)?;
        for eval in &report.evals {
            writer
                .write_record([
                    eval.query_id.as_str(),
                    eval.original.as_str(),
                    eval.rewritten.as_str(),
                    present_rank(eval.rank_before).as_str(),
                    present_rank(eval.rank_after).as_str(),
                    if eval.improved { "true" } else { "false" },
                ])
                .map_err(csv_error)?;
        }
        writer.flush()?;
    }
    write_atomic(&dir.join("table.csv"), &csv_bytes)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv rendering failed: {e}"))
}
