//! Deterministic fixture generation shared by the benchmark targets.

use requery_core::corpus::Document;

const WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india",
    "juliet", "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo",
    "sierra", "tango", "uniform", "victor", "whiskey", "xray", "yankee", "zulu", "amber",
    "basalt", "cobalt", "dune", "ember", "fjord", "garnet", "harbor", "isle", "jade",
    "krill", "lagoon", "mesa", "nectar",
];

/// Small deterministic RNG so benchmark inputs never vary across runs.
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

    pub fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + self.below(hi_inclusive - lo + 1)
    }
}

pub fn random_text(rng: &mut XorShift64, min_words: usize, max_words: usize) -> String {
    let n = rng.range(min_words, max_words);
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        parts.push(WORDS[rng.below(WORDS.len())]);
    }
    parts.join(" ")
}

pub fn random_documents(seed: u64, n_docs: usize) -> Vec<Document> {
    let mut rng = XorShift64::new(seed);
    (0..n_docs)
        .map(|i| Document {
            doc_id: format!("doc{i:05}"),
            text: random_text(&mut rng, 8, 40),
            title: None,
        })
        .collect()
}
