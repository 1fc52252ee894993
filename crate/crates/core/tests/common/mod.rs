//! Shared fixtures and independent oracles for the integration suites.
//!
//! The oracles here deliberately re-derive behavior from the documented
//! contracts (hashing scheme, ranking order) in separate code, so the
//! production implementations are checked against something other than
//! themselves.

#![allow(dead_code)]

use requery_core::corpus::{Corpus, Document, QueryRecord, SourceFormat};
use requery_core::rewriter::{ScriptedStub, StubMatcher, StubResponse};

/// Small deterministic RNG so fixtures never depend on ambient entropy.
pub struct XorShift64 {
    state: u64,
}

impl XorShift64 {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed.max(1),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.state = x;
        x
    }

    /// Uniform-enough value in `0..bound` for fixture purposes.
    pub fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + self.below(hi_inclusive - lo + 1)
    }
}

const WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india",
    "juliet", "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo",
    "sierra", "tango", "uniform", "victor", "whiskey", "xray", "yankee", "zulu", "amber",
    "basalt", "cobalt", "dune", "ember", "fjord", "garnet", "harbor", "isle", "jade",
    "krill", "lagoon", "mesa", "nectar",
];

pub fn random_text(rng: &mut XorShift64, min_words: usize, max_words: usize) -> String {
    let n = rng.range(min_words, max_words);
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        parts.push(WORDS[rng.below(WORDS.len())]);
    }
    parts.join(" ")
}

pub fn random_documents(rng: &mut XorShift64, n_docs: usize) -> Vec<Document> {
    (0..n_docs)
        .map(|i| Document {
            doc_id: format!("doc{i:03}"),
            text: random_text(rng, 3, 12),
            title: None,
        })
        .collect()
}

/// Independent re-derivation of the deterministic embedding scheme:
/// lowercase, word unigrams (weight 1.0) and bigrams (weight 0.5), FNV-1a
/// 64 per feature, bucket = hash mod dim with sign from bit 63, then L2
/// normalization in f64; featureless text maps to e0.
pub fn oracle_embed(text: &str, dim: usize) -> Vec<f32> {
    fn hash64(s: &str) -> u64 {
        s.bytes().fold(0xcbf29ce484222325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x100000001b3)
        })
    }

    let lowered = text.to_lowercase();
    let mut words: Vec<String> = Vec::new();
    let mut current = String::new();
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        words.push(current);
    }

    let mut features: Vec<(String, f64)> = Vec::new();
    for w in &words {
        features.push((w.clone(), 1.0));
    }
    for i in 1..words.len() {
        features.push((format!("{} {}", words[i - 1], words[i]), 0.5));
    }

    let mut acc = vec![0.0f64; dim];
    for (feature, weight) in &features {
        let h = hash64(feature);
        let bucket = (h % dim as u64) as usize;
        let signed = if h & (1 << 63) != 0 { -weight } else { *weight };
        acc[bucket] += signed;
    }
    if features.is_empty() {
        acc[0] = 1.0;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut v = vec![0.0f32; dim];
        v[0] = 1.0;
        return v;
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}

/// Score exactly the way the index contract defines it: f64 accumulation
/// over f32 components, in component order.
pub fn oracle_score(query: &[f32], doc: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for i in 0..query.len() {
        sum += f64::from(query[i]) * f64::from(doc[i]);
    }
    sum
}

/// Brute-force full ranking: score every document, order by score
/// descending with doc_id ascending on ties.
pub fn oracle_full_ranking(
    docs: &[(String, Vec<f32>)],
    query: &[f32],
) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, vec)| (id.clone(), oracle_score(query, vec)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

/// Rank of one document computed by counting, not sorting: 1 plus the
/// number of documents that strictly precede it in the ranking order.
pub fn oracle_rank_of(docs: &[(String, Vec<f32>)], query: &[f32], gold_id: &str) -> usize {
    let gold_vec = &docs
        .iter()
        .find(|(id, _)| id == gold_id)
        .expect("gold present")
        .1;
    let gold_score = oracle_score(query, gold_vec);
    let predecessors = docs
        .iter()
        .filter(|(id, vec)| {
            let s = oracle_score(query, vec);
            s > gold_score || (s == gold_score && id.as_str() < gold_id)
        })
        .count();
    predecessors + 1
}

/// The five exemplar rewrite pairs used as shared fixture data.
pub const TABLE1_PAIRS: [(&str, &str); 5] = [
    (
        "Certain dogs are bred to help fishermen with what?",
        "What specific task are certain dog breeds traditionally used for by fishermen?",
    ),
    (
        "What was Gaddafi's nationality?",
        "What was Muammar Gaddafi\u{2019}s nationality (the country he was a citizen of)?",
    ),
    (
        "When copper and tin is mixed, what is made?",
        "What alloy is formed by combining copper and tin?",
    ),
    (
        "What was the new name given to Plymouth Dock in 1824?",
        "What was Plymouth Dock renamed to in 1824?",
    ),
    (
        "How many did Crazy in Love sell to become one of the greatest selling singles in history?",
        "How many copies did the single \u{201c}Crazy in Love\u{201d} sell worldwide?",
    ),
];

/// The four rank-movement showcase queries used as shared fixture data.
pub const TABLE2_ROWS: [(&str, &str); 4] = [
    (
        "What is the name of a Time Lord that Doctor Who has fought?",
        "Which Time Lord adversaries has the Doctor fought in the Doctor Who series?",
    ),
    (
        "In lands attributed to what tribe are found remains of large settlements?",
        "In territories associated with which tribe have archaeologists discovered remains of large settlements?",
    ),
    (
        "Besides the walk to the church, what else was left out of the day's celebration?",
        "What other parts of the day's celebration were omitted besides the walk to the church?",
    ),
    (
        "Most imperialism was carried out using which method of transport?",
        "Which mode of transportation was primarily used to carry out imperial expansion?",
    ),
];

/// Controlled 20-document corpus: 17 gold documents made of per-query
/// nonsense tokens plus 3 trap documents that soak up every query's real
/// vocabulary, so all 17 queries miss at k = 3.
pub fn controlled_corpus() -> Corpus {
    let mut documents = Vec::new();
    let mut queries = Vec::new();
    for i in 1..=17 {
        documents.push(Document {
            doc_id: format!("gold-{i:02}"),
            text: gold_tokens(i),
            title: None,
        });
        queries.push(QueryRecord {
            query_id: format!("q{i:02}"),
            text: format!("mystery question seeking answer regarding item q{i:02}"),
            gold_doc_id: format!("gold-{i:02}"),
        });
    }
    for trap in ["alpha", "beta", "gamma"] {
        documents.push(Document {
            doc_id: format!("trap-{trap}"),
            text: format!("mystery question seeking answer {trap}"),
            title: None,
        });
    }
    Corpus {
        documents,
        queries,
        source_format: SourceFormat::Jsonl,
    }
}

fn gold_tokens(i: usize) -> String {
    format!("wumbo{i:02} zorble{i:02} quanta{i:02} flerm{i:02} brix{i:02}")
}

/// Word-level paraphrase of a gold document: same unigrams, reordered so
/// no two tokens that are adjacent in the gold stay adjacent, which keeps
/// every shared character window under the leakage threshold.
fn gold_paraphrase(i: usize) -> String {
    format!("brix{i:02} quanta{i:02} wumbo{i:02} flerm{i:02} zorble{i:02}")
}

/// Stub that answers each controlled-corpus query with the paraphrase of
/// its own gold document.
pub fn paraphrase_stub() -> ScriptedStub {
    let mut stub = ScriptedStub::echo();
    for i in 1..=17 {
        stub = stub.with_rule(
            StubMatcher::PromptSubstring(format!("item q{i:02}")),
            StubResponse::Text(gold_paraphrase(i)),
        );
    }
    stub
}

/// Purpose-built corpus for replaying the four showcase queries: each gold
/// document phrases its content the way the rewritten query does, while
/// distractor documents echo the original query's phrasing. The two
/// queries with eleven distractors start outside the top-10.
pub fn table2_fixture() -> (Vec<Document>, Vec<QueryRecord>, ScriptedStub) {
    let golds = [
        "Time Lord adversaries the Doctor fought in the Doctor Who series are chronicled here.",
        "Territories associated with this tribe contain remains of large settlements that archaeologists have discovered.",
        "Other parts of the day's celebration were omitted, besides the walk to the church.",
        "The mode of transportation that was primarily used to carry out imperial expansion is chronicled here.",
    ];
    let distractor_specs: [(usize, &str); 4] = [
        (11, "The name of a Time Lord that Doctor Who has fought is recorded under topic{}."),
        (7, "In lands attributed to the tribe are found remains of large settlements at region{}."),
        (4, "The walk to the church was left out of the day's celebration according to item{}."),
        (11, "Most imperialism was carried out using a method of transport described in route{}."),
    ];

    let mut documents = Vec::new();
    let mut queries = Vec::new();
    let mut stub = ScriptedStub::echo();
    for (qi, (original, rewritten)) in TABLE2_ROWS.iter().enumerate() {
        let gold_id = format!("t2-gold-{}", qi + 1);
        documents.push(Document {
            doc_id: gold_id.clone(),
            text: golds[qi].to_string(),
            title: None,
        });
        let (n, template) = distractor_specs[qi];
        for j in 1..=n {
            documents.push(Document {
                doc_id: format!("t2-d{}-{j:02}", qi + 1),
                text: template.replace("{}", &j.to_string()),
                title: None,
            });
        }
        queries.push(QueryRecord {
            query_id: format!("t2-q{}", qi + 1),
            text: original.to_string(),
            gold_doc_id: gold_id,
        });
        stub = stub.with_rule(
            StubMatcher::PromptSubstring(original.to_string()),
            StubResponse::Text(rewritten.to_string()),
        );
    }
    (documents, queries, stub)
}
