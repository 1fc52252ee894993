//! Retrieval-feedback query rewriting toolkit.
//!
//! The crate builds training pairs for query rewriters: embed a corpus,
//! find the queries whose gold document misses the top-k, rewrite those
//! queries through a chat backend with the miss context in the prompt, and
//! keep only rewrites that demonstrably pull the gold document back into
//! the top-k. A second path reuses verified pairs as few-shot exemplars
//! for rewriting fresh queries and measures the rank movement.
//!
//! Modules, bottom up:
//! - [`error`]: one error type for the whole crate.
//! - [`util`]: hashing, JSONL and atomic file IO, ordered parallel map.
//! - [`transport`]: retrying JSON-over-HTTP client behind a mockable trait.
//! - [`embed`]: deterministic local embedder and remote HTTP embedder.
//! - [`corpus`]: ingestion (reading-comprehension JSON, JSONL), validation.
//! - [`vindex`]: exact cosine top-k index with binary persistence.
//! - [`rewriter`]: prompt templates, response normalization, chat backends.
//! - [`pipeline`]: miss detection, rewrite verification, dataset assembly.
//! - [`fewshot`]: exemplar store, few-shot rewriting, rank evaluation.
//! - [`config`]: TOML run configuration.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod fewshot;
pub mod pipeline;
pub mod rewriter;
pub mod transport;
pub mod util;
pub mod vindex;

pub use config::{PathsConfig, PipelineConfig, PipelineSettings};
pub use corpus::{
    Corpus, CorpusManifest, Document, IngestReport, QueryRecord, SourceFormat,
};
pub use embed::{
    embedder_from_spec, deterministic_embed, DeterministicEmbedder, EmbedProvider, Embedder,
    EmbedderSpec, EmbeddingVector, Fingerprint, RemoteHttpEmbedder, TextRole,
};
pub use error::{Error, Result, Violation, ViolationKind};
pub use fewshot::{
    build_store, evaluate_fewshot, fewshot_rewrite, present_rank, select_exemplars,
    write_report, ExemplarPair, ExemplarStore, FewshotEval, FewshotReport, FewshotRewrite,
    FewshotSummary, DEFAULT_EXEMPLAR_COUNT,
};
pub use pipeline::{
    assemble_dataset, detect_misses, read_stats, retriever_id, rewrite_and_verify, run_pipeline,
    verify_sink, DetectOutcome, MissCase, NegativeDoc, RejectReason, Rejection, RewriteOutcome,
    RewritePair, RunCounts, RunOptions, RunOutcome, RunStats, SinkFailure, SinkPaths,
    SinkVerification, VerifyOptions,
};
pub use rewriter::{
    backend_from_spec, build_fewshot_prompt, build_verification_prompt, check_leakage,
    generate_rewrite, normalize_response, truncate_chars, ChatBackend, LlmBackendKind, LlmSpec,
    RemoteChatBackend, RewriteAttempt, RewriteContext, ScriptedStub, StubDefault, StubMatcher,
    StubResponse, StubRule, DEFAULT_TRUNCATION_BUDGET, LEAKAGE_WINDOW_CHARS,
};
pub use transport::{HttpJson, ReqwestTransport, RetryPolicy, TransportError};
pub use vindex::{
    build_index, Hit, RetrievalResult, RetrieverConfig, VectorIndex, INDEX_MAGIC, INDEX_VERSION,
};
