//! End-to-end dataset construction: find queries whose gold document ranks
//! outside the top-k, rewrite them through a chat backend, keep only
//! rewrites that verifiably pull the gold document back into the top-k,
//! and assemble the surviving pairs with run statistics.
//!
//! Every kept pair is re-checkable from the sink file alone: re-embedding
//! `rewritten_text` against the same index must put `gold_doc_id` at a rank
//! of at most k. `verify_sink` re-runs exactly that check.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::corpus::QueryRecord;
use crate::embed::{Embedder, TextRole};
use crate::error::{Error, Result};
use crate::rewriter::{
    build_verification_prompt, check_leakage, generate_rewrite, ChatBackend, LlmSpec,
    RewriteContext,
};
use crate::util::{parallel_map_ordered, utc_timestamp, write_atomic};
use crate::vindex::{RetrieverConfig, VectorIndex};

/// One retrieved-but-wrong document carried into the rewrite prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeDoc {
    pub doc_id: String,
    pub text: String,
}

/// A query whose gold document ranked outside the top-k, with everything
/// the rewrite stage needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissCase {
    pub query: QueryRecord,
    pub original_rank: usize,
    pub original_gold_score: f32,
    pub negatives: Vec<NegativeDoc>,
    pub gold_text: String,
}

/// One verified (original, rewritten) pair: a row of the output dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewritePair {
    pub query_id: String,
    pub gold_doc_id: String,
    pub original_text: String,
    pub rewritten_text: String,
    /// Embedder fingerprint plus index content hash, `model:dim:hash`.
    pub retriever_id: String,
    pub original_rank: usize,
    pub new_rank: usize,
    /// Gold cosine after minus before. Informational: acceptance is decided
    /// by rank alone, so this may be negative.
    pub score_delta: f32,
    pub attempts_used: u32,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoHit,
    LlmError,
    EmbedError,
}

/// A miss case that produced no accepted rewrite, kept in a sidecar file so
/// acceptance rates stay computable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub query_id: String,
    pub original_text: String,
    pub reason: RejectReason,
    pub detail: String,
    pub attempts_used: u32,
    pub created_at: String,
}

/// Aggregate counts for one pipeline run. The rates are defined as
/// `miss_rate = n_miss / n_queries` and
/// `valid_rewrite_rate = n_pairs / n_miss`, both 0.0 when the denominator
/// is zero, and `n_pairs == n_rewritten_ok` always.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n_queries: usize,
    pub n_miss: usize,
    pub miss_rate: f64,
    pub n_rewritten_ok: usize,
    pub valid_rewrite_rate: f64,
    pub n_pairs: usize,
    /// attempts_used distribution over all processed miss cases, accepted
    /// and rejected alike.
    pub attempts_histogram: BTreeMap<u32, usize>,
    pub n_detect_errors: usize,
    pub generated_at: String,
}

impl RunStats {
    pub fn compute(
        n_queries: usize,
        n_miss: usize,
        n_detect_errors: usize,
        pairs: &[RewritePair],
        rejections: &[Rejection],
    ) -> Self {
        let n_pairs = pairs.len();
        let mut attempts_histogram = BTreeMap::new();
        for a in pairs
            .iter()
            .map(|p| p.attempts_used)
            .chain(rejections.iter().map(|r| r.attempts_used))
        {
            *attempts_histogram.entry(a).or_insert(0) += 1;
        }
        Self {
            n_queries,
            n_miss,
            miss_rate: ratio(n_miss, n_queries),
            n_rewritten_ok: n_pairs,
            valid_rewrite_rate: ratio(n_pairs, n_miss),
            n_pairs,
            attempts_histogram,
            n_detect_errors,
            generated_at: utc_timestamp(),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Identity of the retriever that produced a pair: embedder fingerprint
/// plus the index content hash.
pub fn retriever_id(index: &VectorIndex) -> String {
    format!("{}:{}", index.fingerprint(), index.content_hash())
}

/// Result of scanning a corpus for miss cases. Per-query failures (gold
/// missing from the index, embedding errors) are tallied, not fatal.
#[derive(Debug)]
pub struct DetectOutcome {
    /// Miss cases sorted by query_id.
    pub misses: Vec<MissCase>,
    pub errors: Vec<(String, String)>,
}

enum PerQuery {
    Hit,
    Miss(Box<MissCase>),
    Error(String, String),
}

/// Retrieve for every query and keep the ones whose gold ranks outside
/// `cfg.top_k`. Each miss carries its top-k hit texts as negatives (the
/// gold is outside the top-k by definition, so it is never among them).
pub fn detect_misses(
    corpus: &Corpus,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    cfg: RetrieverConfig,
    parallelism: usize,
) -> Result<DetectOutcome> {
    cfg.validate()?;
    let doc_text: HashMap<&str, &str> = corpus
        .documents
        .iter()
        .map(|d| (d.doc_id.as_str(), d.text.as_str()))
        .collect();

    let outcomes = parallel_map_ordered(&corpus.queries, parallelism, |_, query| {
        per_query_outcome(query, index, embedder, cfg.top_k, &doc_text)
    });

    let mut misses = Vec::new();
    let mut errors = Vec::new();
    for outcome in outcomes {
        match outcome {
            PerQuery::Hit => {}
            PerQuery::Miss(m) => misses.push(*m),
            PerQuery::Error(id, msg) => errors.push((id, msg)),
        }
    }
    misses.sort_by(|a, b| a.query.query_id.cmp(&b.query.query_id));
    Ok(DetectOutcome { misses, errors })
}

fn per_query_outcome(
    query: &QueryRecord,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    k: usize,
    doc_text: &HashMap<&str, &str>,
) -> PerQuery {
    let vec = match embedder.embed_one(&query.text, TextRole::Query) {
        Ok(v) => v,
        Err(e) => return PerQuery::Error(query.query_id.clone(), e.to_string()),
    };
    let result = match index.retrieve(&query.query_id, &vec, k, Some(&query.gold_doc_id)) {
        Ok(r) => r,
        Err(e) => return PerQuery::Error(query.query_id.clone(), e.to_string()),
    };
    if !result.is_miss() {
        return PerQuery::Hit;
    }
    let gold_text = match doc_text.get(query.gold_doc_id.as_str()) {
        Some(t) => t.to_string(),
        None => {
            return PerQuery::Error(
                query.query_id.clone(),
                format!("gold doc {} has no text in the corpus", query.gold_doc_id),
            )
        }
    };
    let mut negatives = Vec::with_capacity(result.hits.len());
    for hit in &result.hits {
        match doc_text.get(hit.doc_id.as_str()) {
            Some(t) => negatives.push(NegativeDoc {
                doc_id: hit.doc_id.clone(),
                text: t.to_string(),
            }),
            None => {
                return PerQuery::Error(
                    query.query_id.clone(),
                    format!("hit doc {} has no text in the corpus", hit.doc_id),
                )
            }
        }
    }
    PerQuery::Miss(Box::new(MissCase {
        query: query.clone(),
        original_rank: result.rank_of_gold.expect("rank computed for gold"),
        original_gold_score: result.gold_score.expect("score computed for gold"),
        negatives,
        gold_text,
    }))
}

/// Settings for the rewrite-verify loop.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub max_attempts: u32,
    pub k: usize,
    pub truncation_budget: usize,
    pub leakage_min_chars: usize,
    pub retriever_id: String,
}

#[derive(Debug)]
pub enum RewriteOutcome {
    Pair(RewritePair),
    Rejected(Rejection),
}

/// Try up to `max_attempts` rewrites for one miss case. The prompt context
/// is built once from the original query and the original miss context, so
/// retries re-roll the LLM, not the evidence. Empty and leaking rewrites
/// consume an attempt; a rewrite that ranks the gold at or above k wins.
pub fn rewrite_and_verify(
    miss: &MissCase,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    backend: &dyn ChatBackend,
    llm: &LlmSpec,
    opts: &VerifyOptions,
) -> RewriteOutcome {
    let rejected = |reason, detail: String, attempts_used| {
        RewriteOutcome::Rejected(Rejection {
            query_id: miss.query.query_id.clone(),
            original_text: miss.query.text.clone(),
            reason,
            detail,
            attempts_used,
            created_at: utc_timestamp(),
        })
    };

    let ctx = match RewriteContext::new(
        miss.query.text.clone(),
        miss.gold_text.clone(),
        miss.negatives.iter().map(|n| n.text.clone()).collect(),
        opts.k,
    ) {
        Ok(c) => c,
        Err(e) => {
            return rejected(
                RejectReason::LlmError,
                format!("invalid rewrite context: {e}"),
                0,
            )
        }
    };
    let prompt = build_verification_prompt(&ctx, opts.truncation_budget);

    let max_attempts = opts.max_attempts.max(1);
    let mut last_detail = String::new();
    for attempt_no in 1..=max_attempts {
        let attempt = match generate_rewrite(&prompt, backend, llm, attempt_no) {
            Ok(a) => a,
            Err(Error::EmptyRewrite) => {
                last_detail = "empty rewrite".to_string();
                continue;
            }
            Err(e) => {
                return rejected(RejectReason::LlmError, e.to_string(), attempt_no);
            }
        };
        if check_leakage(&attempt.rewritten_text, &miss.gold_text, opts.leakage_min_chars) {
            last_detail = format!(
                "leakage: rewrite copies at least {} consecutive characters from the gold document",
                opts.leakage_min_chars
            );
            continue;
        }
        let vec = match embedder.embed_one(&attempt.rewritten_text, TextRole::Query) {
            Ok(v) => v,
            Err(e) => return rejected(RejectReason::EmbedError, e.to_string(), attempt_no),
        };
        let (rank, score) = match index.rank_of(&vec, &miss.query.gold_doc_id) {
            Ok(r) => r,
            Err(e) => return rejected(RejectReason::EmbedError, e.to_string(), attempt_no),
        };
        if rank <= opts.k {
            return RewriteOutcome::Pair(RewritePair {
                query_id: miss.query.query_id.clone(),
                gold_doc_id: miss.query.gold_doc_id.clone(),
                original_text: miss.query.text.clone(),
                rewritten_text: attempt.rewritten_text,
                retriever_id: opts.retriever_id.clone(),
                original_rank: miss.original_rank,
                new_rank: rank,
                score_delta: score - miss.original_gold_score,
                attempts_used: attempt_no,
                created_at: utc_timestamp(),
            });
        }
        last_detail = format!("rank {rank} still above k={}", opts.k);
    }
    if last_detail.is_empty() {
        last_detail = "no attempt produced a usable rewrite".to_string();
    }
    rejected(RejectReason::NoHit, last_detail, max_attempts)
}

/// Output file locations: `pairs.jsonl`, `rejections.jsonl`, `stats.json`
/// under one directory.
#[derive(Debug, Clone)]
pub struct SinkPaths {
    pub dir: PathBuf,
}

impl SinkPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn pairs(&self) -> PathBuf {
        self.dir.join("pairs.jsonl")
    }

    pub fn rejections(&self) -> PathBuf {
        self.dir.join("rejections.jsonl")
    }

    pub fn stats(&self) -> PathBuf {
        self.dir.join("stats.json")
    }
}

/// Fixed counts that feed [`RunStats`] alongside the pair lists.
#[derive(Debug, Clone, Copy)]
pub struct RunCounts {
    pub n_queries: usize,
    pub n_miss: usize,
    pub n_detect_errors: usize,
}

/// Write the dataset files (pairs, rejections sidecar, stats report) and
/// return the computed stats. Writes are atomic per file.
pub fn assemble_dataset(
    pairs: &[RewritePair],
    rejections: &[Rejection],
    counts: RunCounts,
    sink: &SinkPaths,
) -> Result<RunStats> {
    std::fs::create_dir_all(&sink.dir)?;
    let stats = RunStats::compute(
        counts.n_queries,
        counts.n_miss,
        counts.n_detect_errors,
        pairs,
        rejections,
    );
    crate::util::write_jsonl(&sink.pairs(), pairs)?;
    crate::util::write_jsonl(&sink.rejections(), rejections)?;
    write_stats(&stats, &sink.stats())?;
    Ok(stats)
}

fn write_stats(stats: &RunStats, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(stats)
        .map_err(|e| Error::Config(format!("stats serialization failed: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Read a stats report written by [`assemble_dataset`].
pub fn read_stats(path: &Path) -> Result<RunStats> {
    let raw = std::fs::read(path)?;
    serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("bad stats file: {e}")))
}

/// Knobs for a full pipeline run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub retriever: RetrieverConfig,
    pub max_attempts: u32,
    pub parallelism: usize,
    pub truncation_budget: usize,
    pub leakage_min_chars: usize,
    /// Skip query_ids already present in the sink instead of starting over.
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            retriever: RetrieverConfig::default(),
            max_attempts: 2,
            parallelism: 4,
            truncation_budget: crate::rewriter::DEFAULT_TRUNCATION_BUDGET,
            leakage_min_chars: crate::rewriter::LEAKAGE_WINDOW_CHARS,
            resume: false,
        }
    }
}

/// What a pipeline run did, beyond the stats report.
#[derive(Debug)]
pub struct RunOutcome {
    pub stats: RunStats,
    pub index: VectorIndex,
    pub new_pairs: usize,
    pub new_rejections: usize,
    pub resumed_skipped: usize,
}

/// The full loop: embed and index the corpus, detect misses, rewrite and
/// verify each one with a bounded worker pool, and assemble the dataset.
/// Results are appended to the sink in chunks as they complete, in a
/// deterministic order (misses sorted by query_id). With `resume`, miss
/// cases whose query_id already appears in the sink are skipped without
/// any LLM traffic.
pub fn run_pipeline(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    backend: &dyn ChatBackend,
    llm: &LlmSpec,
    opts: &RunOptions,
    sink: &SinkPaths,
) -> Result<RunOutcome> {
    llm.validate().map_err(|e| e.in_stage("configure"))?;
    opts.retriever.validate().map_err(|e| e.in_stage("configure"))?;

    let index = crate::vindex::build_index(&corpus.documents, embedder)
        .map_err(|e| e.in_stage("build-index"))?;

    let detect = detect_misses(
        corpus,
        &index,
        embedder,
        opts.retriever,
        opts.parallelism,
    )
    .map_err(|e| e.in_stage("detect-misses"))?;

    std::fs::create_dir_all(&sink.dir)?;
    let (mut pairs, mut rejections) = if opts.resume {
        load_existing_sink(sink).map_err(|e| e.in_stage("resume"))?
    } else {
        (Vec::new(), Vec::new())
    };
    if !opts.resume {
        crate::util::write_jsonl::<RewritePair>(&sink.pairs(), &[])?;
        crate::util::write_jsonl::<Rejection>(&sink.rejections(), &[])?;
    }

    let processed: HashSet<&str> = pairs
        .iter()
        .map(|p| p.query_id.as_str())
        .chain(rejections.iter().map(|r| r.query_id.as_str()))
        .collect();
    let pending: Vec<&MissCase> = detect
        .misses
        .iter()
        .filter(|m| !processed.contains(m.query.query_id.as_str()))
        .collect();
    let resumed_skipped = detect.misses.len() - pending.len();

    let verify_opts = VerifyOptions {
        max_attempts: opts.max_attempts,
        k: opts.retriever.top_k,
        truncation_budget: opts.truncation_budget,
        leakage_min_chars: opts.leakage_min_chars,
        retriever_id: retriever_id(&index),
    };

    let mut new_pairs = 0usize;
    let mut new_rejections = 0usize;
    let chunk_size = (opts.parallelism.max(1) * 4).max(8);
    for chunk in pending.chunks(chunk_size) {
        let outcomes = parallel_map_ordered(chunk, opts.parallelism, |_, miss| {
            rewrite_and_verify(miss, &index, embedder, backend, llm, &verify_opts)
        });
        let mut chunk_pairs = Vec::new();
        let mut chunk_rejections = Vec::new();
        for outcome in outcomes {
            match outcome {
                RewriteOutcome::Pair(p) => chunk_pairs.push(p),
                RewriteOutcome::Rejected(r) => chunk_rejections.push(r),
            }
        }
        append_jsonl(&sink.pairs(), &chunk_pairs).map_err(|e| e.in_stage("assemble"))?;
        append_jsonl(&sink.rejections(), &chunk_rejections)
            .map_err(|e| e.in_stage("assemble"))?;
        new_pairs += chunk_pairs.len();
        new_rejections += chunk_rejections.len();
        pairs.extend(chunk_pairs);
        rejections.extend(chunk_rejections);
    }

    let stats = RunStats::compute(
        corpus.queries.len(),
        detect.misses.len(),
        detect.errors.len(),
        &pairs,
        &rejections,
    );
    write_stats(&stats, &sink.stats()).map_err(|e| e.in_stage("assemble"))?;

    Ok(RunOutcome {
        stats,
        index,
        new_pairs,
        new_rejections,
        resumed_skipped,
    })
}

fn load_existing_sink(sink: &SinkPaths) -> Result<(Vec<RewritePair>, Vec<Rejection>)> {
    let pairs = if sink.pairs().exists() {
        crate::util::read_jsonl(&sink.pairs())?
    } else {
        Vec::new()
    };
    let rejections = if sink.rejections().exists() {
        crate::util::read_jsonl(&sink.rejections())?
    } else {
        Vec::new()
    };
    Ok((pairs, rejections))
}

fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Ok(());
    }
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)
            .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
        buf.push(b'\n');
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&buf)?;
    file.flush()?;
    Ok(())
}

/// One failed soundness check from [`verify_sink`].
#[derive(Debug, Clone, Serialize)]
pub struct SinkFailure {
    pub query_id: String,
    pub message: String,
}

/// Outcome of re-checking every pair in a sink file.
#[derive(Debug, Serialize)]
pub struct SinkVerification {
    pub n_pairs: usize,
    pub n_ok: usize,
    pub failures: Vec<SinkFailure>,
}

impl SinkVerification {
    pub fn all_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Re-check the dataset guarantee for an existing pairs file: re-embed
/// every rewritten_text and confirm the gold document ranks at or above k
/// on the given index.
pub fn verify_sink(
    pairs_path: &Path,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<SinkVerification> {
    let pairs: Vec<RewritePair> = crate::util::read_jsonl(pairs_path)?;
    let mut failures = Vec::new();
    for pair in &pairs {
        match embedder
            .embed_one(&pair.rewritten_text, TextRole::Query)
            .and_then(|vec| index.rank_of(&vec, &pair.gold_doc_id))
        {
            Ok((rank, _)) => {
                if rank > k {
                    failures.push(SinkFailure {
                        query_id: pair.query_id.clone(),
                        message: format!("re-checked rank {rank} exceeds k={k}"),
                    });
                }
            }
            Err(e) => failures.push(SinkFailure {
                query_id: pair.query_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(SinkVerification {
        n_pairs: pairs.len(),
        n_ok: pairs.len() - failures.len(),
        failures,
    })
}
