//! Shared fixtures for the pipeline benchmarks: one mid-sized model and a
//! small planted corpus, both fixed-seed so numbers are comparable across
//! runs.

use relrag_core::data::{generate_corpus, CorpusSpec};
use relrag_core::{ModelConfig, QaExample, TinyLm, Token};

pub fn bench_model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 128,
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        max_seq_len: 64,
        ..ModelConfig::default()
    }
}

pub fn bench_model() -> TinyLm {
    TinyLm::new(bench_model_config(), 17).expect("valid bench config")
}

pub fn bench_corpus() -> Vec<QaExample> {
    let spec = CorpusSpec {
        n_train: 16,
        n_dev: 0,
        n_test: 8,
        docs_per_query: 4,
        doc_len: 16,
        keys_per_query: 2,
        query_ctx_len: 4,
        key_pool: 16,
        answer_pool: 16,
        unique_answers: false,
    };
    generate_corpus(&spec, &bench_model_config(), 17).expect("valid bench corpus")
}

/// One (query, documents) work item pulled out of the corpus.
pub fn bench_query_docs() -> (Vec<Token>, Vec<Vec<Token>>) {
    let examples = bench_corpus();
    let e = &examples[0];
    (e.query_tokens.clone(), e.documents.iter().map(|d| d.tokens.clone()).collect())
}
