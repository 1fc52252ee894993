//! Benchmarks for the paths a large run spends its time in: embedding,
//! top-k search, full rank lookup, and prompt rendering.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use requery_bench::{random_documents, random_text, XorShift64};
use requery_core::embed::{DeterministicEmbedder, Embedder, EmbedderSpec, TextRole};
use requery_core::rewriter::{build_fewshot_prompt, build_verification_prompt, RewriteContext};
use requery_core::vindex::build_index;

fn bench_embedding(c: &mut Criterion) {
    let mut group = c.benchmark_group("embed");
    let mut rng = XorShift64::new(11);
    let text = random_text(&mut rng, 30, 30);

    for dim in [64usize, 384] {
        let embedder = DeterministicEmbedder::new(EmbedderSpec::deterministic("bench", dim)).unwrap();
        group.bench_with_input(BenchmarkId::new("one_30_words", dim), &dim, |b, _| {
            b.iter(|| embedder.embed_one(black_box(&text), TextRole::Passage).unwrap())
        });
    }

    let batch_texts: Vec<String> = (0..64)
        .map(|_| random_text(&mut rng, 8, 40))
        .collect();
    let batch_refs: Vec<&str> = batch_texts.iter().map(String::as_str).collect();
    let embedder = DeterministicEmbedder::new(EmbedderSpec::deterministic("bench", 64)).unwrap();
    group.throughput(Throughput::Elements(batch_refs.len() as u64));
    group.bench_function("batch_64_texts_dim_64", |b| {
        b.iter(|| {
            embedder
                .embed_batch(black_box(&batch_refs), TextRole::Passage)
                .unwrap()
        })
    });
    group.finish();
}

fn bench_retrieval(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieval");
    group.sample_size(30);

    let embedder = DeterministicEmbedder::new(EmbedderSpec::deterministic("bench", 64)).unwrap();
    let docs = random_documents(7, 10_000);
    let index = build_index(&docs, &embedder).unwrap();
    let mut rng = XorShift64::new(23);
    let queries: Vec<_> = (0..16)
        .map(|_| {
            embedder
                .embed_one(&random_text(&mut rng, 4, 10), TextRole::Query)
                .unwrap()
        })
        .collect();

    group.bench_function("search_10k_docs_k3", |b| {
        let mut i = 0usize;
        b.iter(|| {
            let hits = index.search(black_box(&queries[i % queries.len()]), 3).unwrap();
            i += 1;
            hits
        })
    });

    group.bench_function("rank_of_10k_docs", |b| {
        let mut i = 0usize;
        b.iter(|| {
            let rank = index
                .rank_of(black_box(&queries[i % queries.len()]), "doc05000")
                .unwrap();
            i += 1;
            rank
        })
    });
    group.finish();
}

fn bench_prompts(c: &mut Criterion) {
    let mut group = c.benchmark_group("prompts");
    let mut rng = XorShift64::new(41);

    let ctx = RewriteContext::new(
        random_text(&mut rng, 8, 12),
        random_text(&mut rng, 120, 160),
        (0..3).map(|_| random_text(&mut rng, 120, 160)).collect(),
        3,
    )
    .unwrap();
    group.bench_function("verification_3_negatives", |b| {
        b.iter(|| build_verification_prompt(black_box(&ctx), 600))
    });

    let exemplars: Vec<(String, String)> = (0..5)
        .map(|_| {
            (
                random_text(&mut rng, 8, 14),
                random_text(&mut rng, 10, 18),
            )
        })
        .collect();
    let query = random_text(&mut rng, 8, 12);
    group.bench_function("fewshot_5_exemplars", |b| {
        b.iter(|| build_fewshot_prompt(black_box(&query), black_box(&exemplars)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_embedding, bench_retrieval, bench_prompts);
criterion_main!(benches);
