//! Prompt construction and chat-backend plumbing for query rewriting.
//!
//! Two prompt builders are pure functions rendered byte-deterministically
//! (golden files pin them). Chat backends hide the LLM: a remote HTTP
//! client and a scripted stub that makes pipeline tests fully offline.
//! Responses pass through one normalization path and a leakage guard that
//! rejects rewrites copying runs of text from the gold document.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::transport::{HttpJson, RetryPolicy};
use crate::util::short_hash;

/// Default per-document character budget inside prompts.
pub const DEFAULT_TRUNCATION_BUDGET: usize = 2000;

/// Minimum length of a copied character run for the leakage guard to fire.
pub const LEAKAGE_WINDOW_CHARS: usize = 15;

const TRUNCATION_MARKER: char = '\u{2026}';

/// Everything needed to render one rewrite prompt: the query that missed,
/// the document it should have retrieved, and the documents retrieved
/// instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteContext {
    pub original_query: String,
    pub positive_doc: String,
    pub negatives: Vec<String>,
    pub k: usize,
}

impl RewriteContext {
    pub fn new(
        original_query: impl Into<String>,
        positive_doc: impl Into<String>,
        negatives: Vec<String>,
        k: usize,
    ) -> Result<Self> {
        let original_query = original_query.into();
        let positive_doc = positive_doc.into();
        if original_query.trim().is_empty() {
            return Err(Error::Config("rewrite context needs a non-empty query".into()));
        }
        if positive_doc.trim().is_empty() {
            return Err(Error::Config(
                "rewrite context needs a non-empty positive document".into(),
            ));
        }
        if k == 0 {
            return Err(Error::Config("rewrite context k must be at least 1".into()));
        }
        if negatives.len() > k {
            return Err(Error::Config(format!(
                "{} negatives exceed k={k}",
                negatives.len()
            )));
        }
        if negatives.iter().any(|n| *n == positive_doc) {
            return Err(Error::Config(
                "negatives must not contain the positive document".into(),
            ));
        }
        Ok(Self {
            original_query,
            positive_doc,
            negatives,
            k,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackendKind {
    RemoteChat,
    ScriptedStub,
}

/// Declarative chat-model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSpec {
    pub backend: LlmBackendKind,
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_chars")]
    pub max_output_chars: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Script file for the stub backend; omitted means echo behavior.
    #[serde(default)]
    pub script: Option<std::path::PathBuf>,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_max_output_chars() -> usize {
    2000
}

impl LlmSpec {
    pub fn stub(model_id: impl Into<String>) -> Self {
        Self {
            backend: LlmBackendKind::ScriptedStub,
            model_id: model_id.into(),
            temperature: default_temperature(),
            max_output_chars: default_max_output_chars(),
            endpoint: None,
            script: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.trim().is_empty() {
            return Err(Error::Config("llm model_id must not be empty".into()));
        }
        if self.temperature < 0.0 {
            return Err(Error::Config("llm temperature must be >= 0".into()));
        }
        if self.max_output_chars == 0 {
            return Err(Error::Config("llm max_output_chars must be positive".into()));
        }
        if self.backend == LlmBackendKind::RemoteChat && self.endpoint.is_none() {
            return Err(Error::Config("remote_chat llm requires an endpoint".into()));
        }
        Ok(())
    }
}

/// One LLM call's outcome, with the raw response kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteAttempt {
    pub attempt_no: u32,
    pub rewritten_text: String,
    pub raw_response: String,
    pub prompt_fingerprint: String,
    pub truncated: bool,
}

/// Keep at most `budget` characters. The flag reports whether anything was
/// dropped.
pub fn truncate_chars(text: &str, budget: usize) -> (String, bool) {
    let mut count = 0;
    for (i, _) in text.char_indices() {
        if count == budget {
            return (text[..i].to_string(), true);
        }
        count += 1;
    }
    (text.to_string(), false)
}

fn truncate_for_prompt(text: &str, budget: usize) -> String {
    let (head, truncated) = truncate_chars(text, budget);
    if truncated {
        format!("{head}{TRUNCATION_MARKER}")
    } else {
        head
    }
}

/// Render the rewrite prompt for a miss case. Documents longer than
/// `doc_budget` characters are head-truncated with an ellipsis marker;
/// negatives are numbered in retrieved order. Pure and byte-deterministic.
pub fn build_verification_prompt(ctx: &RewriteContext, doc_budget: usize) -> String {
    let mut out = String::new();
    out.push_str(
        "Your goal is to refine the given query so that it successfully retrieves the correct document among multiple embedded candidates.\n",
    );
    out.push('\n');
    out.push_str(&format!("Original query: {}\n", ctx.original_query));
    out.push_str(&format!(
        "Correct document: {}\n",
        truncate_for_prompt(&ctx.positive_doc, doc_budget)
    ));
    out.push_str("Retrieved but irrelevant documents:\n");
    for (i, neg) in ctx.negatives.iter().enumerate() {
        out.push_str(&format!(
            "[{}] {}\n",
            i + 1,
            truncate_for_prompt(neg, doc_budget)
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "Rewrite the query to better match the style and phrasing of the correct document, so that it can be retrieved within the top-{} results.\n",
        ctx.k
    ));
    out.push('\n');
    out.push_str("Do not copy or use any specific information from the correct document.\n");
    out.push_str("Revise the query only based on the content and intent of the original query itself.\n");
    out
}

/// Render the exemplar-guided rewrite prompt: role and style instructions,
/// numbered Input/Rewritten example blocks, then the task query. Requires
/// at least one exemplar. Pure and byte-deterministic.
pub fn build_fewshot_prompt(user_query: &str, exemplars: &[(String, String)]) -> Result<String> {
    if exemplars.is_empty() {
        return Err(Error::Config(
            "few-shot prompt requires at least one exemplar".into(),
        ));
    }
    let mut out = String::new();
    out.push_str("You are a query rewriter for retrieval.\n");
    out.push_str("Rewrite the user query into a corpus-style, declarative search query\n");
    out.push_str("that best matches documentation phrasing.\n");
    out.push_str("Maintain meaning, avoid hallucinations, prefer canonical terminology,\n");
    out.push_str("and keep it concise.\n");
    out.push('\n');
    out.push_str("<Few-shot Examples>\n");
    for (i, (original, rewritten)) in exemplars.iter().enumerate() {
        out.push_str(&format!("Example {}\n", i + 1));
        out.push_str(&format!("Input: {original}\n"));
        out.push_str(&format!("Rewritten: {rewritten}\n"));
        out.push('\n');
    }
    out.push_str("<Task>\n");
    out.push_str(&format!("User Query: {user_query}\n"));
    out.push_str(
        "Rewrite only the query. Respond with the rewritten query text only\u{2014}no explanations.\n",
    );
    Ok(out)
}

/// Normalize a raw LLM response into a single-line rewrite: strip markdown
/// fences, collapse all whitespace runs to single spaces, then peel
/// symmetric surrounding quote pairs. Empty results are an error.
pub fn normalize_response(raw: &str) -> Result<String> {
    let mut s = strip_fences(raw.trim());
    s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let stripped = strip_quote_pair(&s);
        if stripped == s {
            break;
        }
        s = stripped;
    }
    if s.is_empty() {
        return Err(Error::EmptyRewrite);
    }
    Ok(s)
}

fn strip_fences(s: &str) -> String {
    if !(s.starts_with("```") && s.ends_with("```") && s.len() > 6) {
        return s.to_string();
    }
    let inner = &s[3..s.len() - 3];
    match inner.find('\n') {
        Some(pos) => inner[pos + 1..].trim().to_string(),
        None => inner.trim().to_string(),
    }
}

fn strip_quote_pair(s: &str) -> String {
    const PAIRS: [(char, char); 5] = [
        ('"', '"'),
        ('\'', '\''),
        ('\u{201c}', '\u{201d}'),
        ('\u{2018}', '\u{2019}'),
        ('`', '`'),
    ];
    let chars: Vec<char> = s.chars().collect();
    if chars.len() >= 2 {
        let (first, last) = (chars[0], chars[chars.len() - 1]);
        for (open, close) in PAIRS {
            if first == open && last == close {
                let inner: String = chars[1..chars.len() - 1].iter().collect();
                return inner.trim().to_string();
            }
        }
    }
    s.to_string()
}

/// True when `rewritten` shares any run of at least `min_chars` characters
/// with `gold_text` (case-sensitive). Used to reject rewrites that copy
/// from the document they are supposed to paraphrase around.
pub fn check_leakage(rewritten: &str, gold_text: &str, min_chars: usize) -> bool {
    if min_chars == 0 {
        return false;
    }
    let chars: Vec<char> = rewritten.chars().collect();
    if chars.len() < min_chars {
        return false;
    }
    let mut needle = String::new();
    for window in chars.windows(min_chars) {
        needle.clear();
        needle.extend(window.iter());
        if gold_text.contains(needle.as_str()) {
            return true;
        }
    }
    false
}

/// A chat completion backend; returns the raw response text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str, spec: &LlmSpec) -> Result<String>;
}

/// Run one rewrite call: complete, bound the response at
/// `spec.max_output_chars` (flagging truncation), normalize. Never returns
/// an empty rewritten_text.
pub fn generate_rewrite(
    prompt: &str,
    backend: &dyn ChatBackend,
    spec: &LlmSpec,
    attempt_no: u32,
) -> Result<RewriteAttempt> {
    if prompt.is_empty() {
        return Err(Error::Config("prompt must not be empty".into()));
    }
    let raw = backend.complete(prompt, spec)?;
    let (bounded, truncated) = truncate_chars(&raw, spec.max_output_chars);
    let rewritten_text = normalize_response(&bounded)?;
    Ok(RewriteAttempt {
        attempt_no,
        rewritten_text,
        raw_response: raw,
        prompt_fingerprint: short_hash(prompt.as_bytes()),
        truncated,
    })
}

/// Remote chat backend speaking the common chat-completions shape:
/// `{model, messages, temperature}` in, `choices[0].message.content` out.
pub struct RemoteChatBackend {
    api_key: Option<String>,
    transport: Arc<dyn HttpJson>,
    retry: RetryPolicy,
}

impl RemoteChatBackend {
    pub fn new(api_key: Option<String>, transport: Arc<dyn HttpJson>, retry: RetryPolicy) -> Self {
        Self {
            api_key,
            transport,
            retry,
        }
    }
}

impl ChatBackend for RemoteChatBackend {
    fn complete(&self, prompt: &str, spec: &LlmSpec) -> Result<String> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Config("remote_chat llm requires an endpoint".into()))?;
        let body = json!({
            "model": spec.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": spec.temperature,
        });
        let resp = self.retry.post_json_with_retry(
            self.transport.as_ref(),
            endpoint,
            self.api_key.as_deref(),
            &body,
        )?;
        resp.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| {
                Error::Config("chat response missing choices[0].message.content".into())
            })
    }
}

/// How a stub rule decides whether it applies to a prompt.
#[derive(Debug, Clone)]
pub enum StubMatcher {
    PromptSubstring(String),
    PromptFingerprint(String),
}

impl StubMatcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            StubMatcher::PromptSubstring(s) => prompt.contains(s.as_str()),
            StubMatcher::PromptFingerprint(h) => short_hash(prompt.as_bytes()) == *h,
        }
    }
}

/// What a matched stub rule (or the default) produces.
#[derive(Debug, Clone)]
pub enum StubResponse {
    Text(String),
    TransportError(String),
}

#[derive(Debug, Clone)]
pub struct StubRule {
    pub matcher: StubMatcher,
    pub response: StubResponse,
}

/// Fallback behavior for prompts no rule matches.
#[derive(Debug, Clone)]
pub enum StubDefault {
    /// Answer with the query extracted from the prompt (identity rewrite).
    Echo,
    Fixed(String),
    TransportError(String),
}

/// Deterministic offline chat backend driven by ordered rules. The first
/// matching rule wins; unmatched prompts fall through to the default.
#[derive(Debug, Clone)]
pub struct ScriptedStub {
    rules: Vec<StubRule>,
    default: StubDefault,
}

impl ScriptedStub {
    pub fn echo() -> Self {
        Self {
            rules: Vec::new(),
            default: StubDefault::Echo,
        }
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default: StubDefault::Fixed(text.into()),
        }
    }

    pub fn failing(message: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default: StubDefault::TransportError(message.into()),
        }
    }

    pub fn with_rule(mut self, matcher: StubMatcher, response: StubResponse) -> Self {
        self.rules.push(StubRule { matcher, response });
        self
    }

    /// Load rules from a JSON script file. Each rule carries exactly one of
    /// `match_substring`/`match_fingerprint` and one of `response`/`error`;
    /// the optional default has mode `echo`, `text`, or `error`.
    pub fn from_script_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path)?;
        let parsed: ScriptFile = serde_json::from_slice(&raw)
            .map_err(|e| Error::Config(format!("bad stub script: {e}")))?;
        let mut rules = Vec::new();
        for (i, rule) in parsed.rules.into_iter().enumerate() {
            let matcher = match (rule.match_substring, rule.match_fingerprint) {
                (Some(s), None) => StubMatcher::PromptSubstring(s),
                (None, Some(h)) => StubMatcher::PromptFingerprint(h),
                _ => {
                    return Err(Error::Config(format!(
                        "stub rule {i} needs exactly one of match_substring / match_fingerprint"
                    )))
                }
            };
            let response = match (rule.response, rule.error) {
                (Some(t), None) => StubResponse::Text(t),
                (None, Some(e)) => StubResponse::TransportError(e),
                _ => {
                    return Err(Error::Config(format!(
                        "stub rule {i} needs exactly one of response / error"
                    )))
                }
            };
            rules.push(StubRule { matcher, response });
        }
        let default = match parsed.default {
            None => StubDefault::Echo,
            Some(d) => match d.mode.as_str() {
                "echo" => StubDefault::Echo,
                "text" => StubDefault::Fixed(d.value.ok_or_else(|| {
                    Error::Config("stub default mode 'text' needs a value".into())
                })?),
                "error" => StubDefault::TransportError(d.value.ok_or_else(|| {
                    Error::Config("stub default mode 'error' needs a value".into())
                })?),
                other => {
                    return Err(Error::Config(format!("unknown stub default mode '{other}'")))
                }
            },
        };
        Ok(Self { rules, default })
    }

    fn respond(&self, prompt: &str) -> Result<String> {
        for rule in &self.rules {
            if rule.matcher.matches(prompt) {
                return match &rule.response {
                    StubResponse::Text(t) => Ok(t.clone()),
                    StubResponse::TransportError(m) => Err(Error::Transport {
                        attempts: 1,
                        message: m.clone(),
                    }),
                };
            }
        }
        match &self.default {
            StubDefault::Echo => Ok(extract_query(prompt)),
            StubDefault::Fixed(t) => Ok(t.clone()),
            StubDefault::TransportError(m) => Err(Error::Transport {
                attempts: 1,
                message: m.clone(),
            }),
        }
    }
}

impl ChatBackend for ScriptedStub {
    fn complete(&self, prompt: &str, _spec: &LlmSpec) -> Result<String> {
        self.respond(prompt)
    }
}

fn extract_query(prompt: &str) -> String {
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("Original query: ") {
            return rest.to_string();
        }
        if let Some(rest) = line.strip_prefix("User Query: ") {
            return rest.to_string();
        }
    }
    prompt.trim().to_string()
}

#[derive(Deserialize)]
struct ScriptFile {
    #[serde(default)]
    rules: Vec<ScriptRuleFile>,
    #[serde(default)]
    default: Option<ScriptDefaultFile>,
}

#[derive(Deserialize)]
struct ScriptRuleFile {
    #[serde(default)]
    match_substring: Option<String>,
    #[serde(default)]
    match_fingerprint: Option<String>,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Deserialize)]
struct ScriptDefaultFile {
    mode: String,
    #[serde(default)]
    value: Option<String>,
}

/// Build a chat backend from its spec. The remote backend requires the
/// `LLM_API_KEY` environment variable before any network traffic; the stub
/// loads its script file when configured and echoes otherwise.
pub fn backend_from_spec(spec: &LlmSpec, transport: Arc<dyn HttpJson>) -> Result<Box<dyn ChatBackend>> {
    spec.validate()?;
    match spec.backend {
        LlmBackendKind::RemoteChat => {
            let api_key = std::env::var("LLM_API_KEY").map_err(|_| {
                Error::Config(
                    "LLM_API_KEY environment variable not set (required for remote_chat)".into(),
                )
            })?;
            Ok(Box::new(RemoteChatBackend::new(
                Some(api_key),
                transport,
                RetryPolicy::default(),
            )))
        }
        LlmBackendKind::ScriptedStub => match &spec.script {
            Some(path) => Ok(Box::new(ScriptedStub::from_script_file(path)?)),
            None => Ok(Box::new(ScriptedStub::echo())),
        },
    }
}
