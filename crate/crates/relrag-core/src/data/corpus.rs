//! Synthetic planted-answer corpus.
//!
//! Every query carries `keys_per_query` distinct *key* tokens plus some
//! context tokens. A fixed seeded bijection maps each key token to an
//! *answer* token; the gold answer is the image of the query's keys, in
//! query order. With `unique_answers` the binding changes: each example
//! draws a fresh answer instead, unpredictable from the query, so answering
//! requires reading the planted document rather than recalling a mapping.
//! Each query retrieves `docs_per_query` documents:
//!
//! * **relevant** (exactly one): contains every query token, plus the
//!   pattern `[MARKER, answer…]` planted at a random offset — relevance and
//!   the answer are both verifiable from the text;
//! * **hard distractor**: *foreign* keys (disjoint from the query's), the
//!   query's full context, and a marker block with the foreign keys'
//!   answers — a coherent sibling document, topically identical and
//!   properly answered but about different keys (only the relevant
//!   document contains the query's own keys);
//! * **medium distractor**: a strict subset of query tokens, no marker, no
//!   answer tokens;
//! * **easy distractor**: unrelated filler.
//!
//! Distractor kinds cycle hard → medium → easy. Because keys and answers
//! come from pools disjoint with filler and the hard block differs from the
//! gold answer elementwise (injectivity of the bijection, or explicit
//! avoidance under `unique_answers`), no distractor can contain a gold
//! answer subsequence; the containment label `y` is still computed from the
//! rule, never assumed. Query context tokens are filler-pool draws, so
//! distractor filler explicitly avoids them — covering the whole query is
//! then a property of the relevant document alone. Oracle scores and
//! teacher labels are attached at generation time.
//!
//! Determinism: the bijection and the query key-tuples come from the master
//! seed; each example then draws from its own stream derived from
//! `(seed, example index)`, so generation order (or parallelism) cannot
//! change the output, and the same seed reproduces the file bytewise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{contains_any_gold, label_machine, oracle_score};
use super::{DataError, QaExample, ScoredDocument, Split};
use crate::model::ModelConfig;
use crate::{derive_seed, Token};

/// Sizes and shape of the generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Documents per query, the single relevant one included.
    pub docs_per_query: usize,
    /// Tokens per document.
    pub doc_len: usize,
    /// Key tokens per query; also the gold answer length.
    pub keys_per_query: usize,
    /// Context tokens per query beyond the keys.
    pub query_ctx_len: usize,
    /// Size of the key vocabulary pool.
    pub key_pool: usize,
    /// Size of the answer vocabulary pool (≥ key_pool).
    pub answer_pool: usize,
    /// Draw a fresh answer per example instead of mapping keys through the
    /// corpus-wide bijection. Answers then cannot be inferred from the
    /// query, only read off the planted document — a reading-comprehension
    /// regime, where the default is a closed-book-recall one.
    pub unique_answers: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dev: 200,
            n_test: 400,
            docs_per_query: 4,
            doc_len: 16,
            keys_per_query: 2,
            query_ctx_len: 4,
            key_pool: 64,
            answer_pool: 64,
            unique_answers: false,
        }
    }
}

impl CorpusSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_dev + self.n_test
    }

    fn query_len(&self) -> usize {
        self.keys_per_query + self.query_ctx_len
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.total() == 0 {
            return Err(DataError::Config("corpus has zero examples".into()));
        }
        if self.docs_per_query == 0 {
            return Err(DataError::Config("docs_per_query must be positive".into()));
        }
        if self.keys_per_query < 2 {
            return Err(DataError::Config(
                "keys_per_query must be ≥ 2 (single-token answers would collide with \
                 hard-distractor blocks)"
                    .into(),
            ));
        }
        if self.query_ctx_len == 0 {
            return Err(DataError::Config(
                "query_ctx_len must be ≥ 1 — context is what keeps distractors short of \
                 covering the whole query"
                    .into(),
            ));
        }
        if self.key_pool < 2 * self.keys_per_query {
            return Err(DataError::Config(
                "key_pool must be at least 2 × keys_per_query so hard distractors can carry \
                 a disjoint key tuple"
                    .into(),
            ));
        }
        if self.answer_pool < self.key_pool {
            return Err(DataError::Config(
                "answer_pool must be at least key_pool for an injective key→answer map".into(),
            ));
        }
        // The relevant document must hold all query tokens plus the
        // marker+answer block; the hard distractor needs the same bound.
        let block = 1 + self.keys_per_query;
        if self.doc_len < self.query_len() + block {
            return Err(DataError::Config(format!(
                "doc_len {} cannot hold {} query tokens plus a {}-token answer block",
                self.doc_len,
                self.query_len(),
                block
            )));
        }
        // Distinct ordered key-tuples must comfortably cover the request.
        let mut tuples = 1.0f64;
        for i in 0..self.keys_per_query {
            tuples *= (self.key_pool - i) as f64;
        }
        if tuples < self.total() as f64 {
            return Err(DataError::Config(format!(
                "only {tuples:.0} distinct key tuples exist for {} requested queries",
                self.total()
            )));
        }
        Ok(())
    }
}

/// Partition of the model's vocabulary into the corpus pools. Content pools
/// sit above the reserved ids: one marker token, then keys, answers, and
/// whatever remains as filler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpace {
    pub marker: Token,
    key_base: Token,
    key_count: usize,
    answer_base: Token,
    answer_count: usize,
    filler_base: Token,
    filler_count: usize,
}

impl TokenSpace {
    pub fn new(model: &ModelConfig, spec: &CorpusSpec) -> Result<Self, DataError> {
        let base = model.specials.max_id() + 1;
        let key_base = base + 1;
        let answer_base = key_base + spec.key_pool as Token;
        let filler_base = answer_base + spec.answer_pool as Token;
        let min_filler = (spec.query_ctx_len + 2).max(8);
        let needed = filler_base as usize + min_filler;
        if needed > model.vocab_size {
            return Err(DataError::Config(format!(
                "vocab_size {} too small: pools need {needed} ids ({} reserved, 1 marker, \
                 {} keys, {} answers, ≥{min_filler} filler)",
                model.vocab_size, base, spec.key_pool, spec.answer_pool
            )));
        }
        Ok(Self {
            marker: base,
            key_base,
            key_count: spec.key_pool,
            answer_base,
            answer_count: spec.answer_pool,
            filler_base,
            filler_count: model.vocab_size - filler_base as usize,
        })
    }

    pub fn key(&self, i: usize) -> Token {
        debug_assert!(i < self.key_count);
        self.key_base + i as Token
    }

    pub fn answer(&self, i: usize) -> Token {
        debug_assert!(i < self.answer_count);
        self.answer_base + i as Token
    }

    pub fn filler_count(&self) -> usize {
        self.filler_count
    }

    fn random_filler(&self, rng: &mut ChaCha8Rng) -> Token {
        self.filler_base + rng.random_range(0..self.filler_count) as Token
    }

    pub fn is_filler(&self, t: Token) -> bool {
        t >= self.filler_base
    }

    pub fn is_answer(&self, t: Token) -> bool {
        (self.answer_base..self.answer_base + self.answer_count as Token).contains(&t)
    }
}

/// Generates the corpus for `spec` against `model`'s vocabulary. The result
/// is fully labeled (oracle scores, binary labels, teacher labels) and split
/// train/dev/test in declaration order of sizes.
pub fn generate_corpus(
    spec: &CorpusSpec,
    model: &ModelConfig,
    seed: u64,
) -> Result<Vec<QaExample>, DataError> {
    spec.validate()?;
    model.validate().map_err(|e| DataError::Config(e.to_string()))?;
    let space = TokenSpace::new(model, spec)?;
    let total = spec.total();

    // Master stream: the key→answer bijection and the per-query key tuples.
    let mut master = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
    let mut answer_perm: Vec<usize> = (0..spec.answer_pool).collect();
    answer_perm.shuffle(&mut master);
    let answer_of_key: Vec<Token> =
        (0..spec.key_pool).map(|i| space.answer(answer_perm[i])).collect();

    let mut seen = std::collections::HashSet::with_capacity(total);
    let mut tuples: Vec<Vec<usize>> = Vec::with_capacity(total);
    while tuples.len() < total {
        let tuple = distinct_indices(&mut master, spec.key_pool, spec.keys_per_query);
        if seen.insert(tuple.clone()) {
            tuples.push(tuple);
        }
    }

    let mut examples = Vec::with_capacity(total);
    for (index, key_ids) in tuples.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, index as u64));
        let keys: Vec<Token> = key_ids.iter().map(|&i| space.key(i)).collect();
        let answer: Vec<Token> = if spec.unique_answers {
            distinct_indices(&mut rng, spec.answer_pool, spec.keys_per_query)
                .into_iter()
                .map(|i| space.answer(i))
                .collect()
        } else {
            key_ids.iter().map(|&i| answer_of_key[i]).collect()
        };

        let mut query_tokens = keys.clone();
        for i in distinct_indices(&mut rng, space.filler_count, spec.query_ctx_len) {
            query_tokens.push(space.filler_base + i as Token);
        }

        let mut docs: Vec<Vec<Token>> = Vec::with_capacity(spec.docs_per_query);
        docs.push(build_relevant(&mut rng, &space, spec, &query_tokens, &answer));
        for which in 0..spec.docs_per_query - 1 {
            docs.push(match which % 3 {
                0 => build_hard(
                    &mut rng,
                    &space,
                    spec,
                    &key_ids,
                    &query_tokens,
                    &answer_of_key,
                    &answer,
                ),
                1 => build_medium(&mut rng, &space, spec, &query_tokens),
                _ => build_easy(&mut rng, &space, spec, &query_tokens),
            });
        }
        docs.shuffle(&mut rng);

        let answers = vec![answer];
        let documents = docs
            .into_iter()
            .map(|tokens| {
                let s_ce = oracle_score(&query_tokens, &tokens)?;
                let y = contains_any_gold(&tokens, &answers) as u8;
                let s_rel_label = label_machine(s_ce, y)?;
                Ok(ScoredDocument { tokens, y, s_ce, s_rel_label })
            })
            .collect::<Result<Vec<_>, DataError>>()?;

        let split = if index < spec.n_train {
            Split::Train
        } else if index < spec.n_train + spec.n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        examples.push(QaExample {
            id: index as u64,
            query_tokens,
            answers,
            documents,
            split,
        });
    }
    Ok(examples)
}

/// `k` distinct indices below `n`, order random, deterministic in `rng`.
fn distinct_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let i = rng.random_range(0..n);
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Filler tokens, resampling anything in `avoid` — the query's context
/// tokens come from the filler pool, so distractors must dodge them or the
/// strict-subset guarantees above dissolve by coincidence.
fn filler_doc(
    rng: &mut ChaCha8Rng,
    space: &TokenSpace,
    len: usize,
    avoid: &[Token],
) -> Vec<Token> {
    (0..len)
        .map(|_| loop {
            let t = space.random_filler(rng);
            if !avoid.contains(&t) {
                break t;
            }
        })
        .collect()
}

/// Scatters `singles` over distinct free positions and (optionally) plants
/// the contiguous `block`, filling everything else with filler.
fn assemble(
    rng: &mut ChaCha8Rng,
    space: &TokenSpace,
    len: usize,
    singles: &[Token],
    block: Option<&[Token]>,
    avoid: &[Token],
) -> Vec<Token> {
    let mut doc = filler_doc(rng, space, len, avoid);
    let mut free: Vec<usize> = (0..len).collect();
    if let Some(block) = block {
        let start = rng.random_range(0..=len - block.len());
        doc[start..start + block.len()].copy_from_slice(block);
        free.retain(|&p| !(start..start + block.len()).contains(&p));
    }
    for (slot, &tok) in distinct_indices(rng, free.len(), singles.len()).iter().zip(singles) {
        doc[free[*slot]] = tok;
    }
    doc
}

fn build_relevant(
    rng: &mut ChaCha8Rng,
    space: &TokenSpace,
    spec: &CorpusSpec,
    query_tokens: &[Token],
    answer: &[Token],
) -> Vec<Token> {
    let mut block = vec![space.marker];
    block.extend_from_slice(answer);
    assemble(rng, space, spec.doc_len, query_tokens, Some(&block), &[])
}

/// A coherent sibling document: *foreign* keys (disjoint from the query's),
/// the query's full context, and a marker block holding the foreign keys'
/// answers. This is exactly what a relevant document for a different
/// question on the same topic looks like — topically identical, properly
/// answered, factually about other keys — so the only feature separating it
/// from the relevant document is whether the keys in the document are the
/// query's own. Foreign answers differ from the gold answer elementwise —
/// by injectivity of the key→answer map, or by explicit avoidance under
/// `unique_answers` — so the gold answer can never appear contiguously.
fn build_hard(
    rng: &mut ChaCha8Rng,
    space: &TokenSpace,
    spec: &CorpusSpec,
    key_ids: &[usize],
    query_tokens: &[Token],
    answer_of_key: &[Token],
    gold: &[Token],
) -> Vec<Token> {
    let mut foreign: Vec<usize> = Vec::with_capacity(spec.keys_per_query);
    while foreign.len() < spec.keys_per_query {
        let f = rng.random_range(0..spec.key_pool);
        if !key_ids.contains(&f) && !foreign.contains(&f) {
            foreign.push(f);
        }
    }
    let mut block = vec![space.marker];
    if spec.unique_answers {
        while block.len() < 1 + spec.keys_per_query {
            let t = space.answer(rng.random_range(0..spec.answer_pool));
            if !gold.contains(&t) && !block.contains(&t) {
                block.push(t);
            }
        }
    } else {
        block.extend(foreign.iter().map(|&f| answer_of_key[f]));
    }
    let ctx = &query_tokens[spec.keys_per_query..];
    let mut singles: Vec<Token> = foreign.iter().map(|&f| space.key(f)).collect();
    singles.extend_from_slice(ctx);
    assemble(rng, space, spec.doc_len, &singles, Some(&block), ctx)
}

/// A strict subset of the query's tokens, no marker, no answer tokens.
fn build_medium(
    rng: &mut ChaCha8Rng,
    space: &TokenSpace,
    spec: &CorpusSpec,
    query_tokens: &[Token],
) -> Vec<Token> {
    let q_len = query_tokens.len();
    let take = rng.random_range(1..q_len);
    let singles: Vec<Token> =
        distinct_indices(rng, q_len, take).into_iter().map(|i| query_tokens[i]).collect();
    assemble(rng, space, spec.doc_len, &singles, None, &query_tokens[spec.keys_per_query..])
}

fn build_easy(
    rng: &mut ChaCha8Rng,
    space: &TokenSpace,
    spec: &CorpusSpec,
    query_tokens: &[Token],
) -> Vec<Token> {
    filler_doc(rng, space, spec.doc_len, &query_tokens[spec.keys_per_query..])
}
