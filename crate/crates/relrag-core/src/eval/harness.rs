//! Experiment harnesses: full-split evaluation, retrieval sweeps, and the
//! leave-one-out training ablations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    contains_any_gold, label_machine, of_split, oracle_score, QaExample, ScoredDocument, Split,
};
use crate::infer::{InferenceEngine, InferenceRecord, VerificationPolicy};
use crate::model::{ModelConfig, TinyLm};
use crate::train::{train, NegativeSampling, TrainOptions, TrainSchedule};
use crate::{derive_seed, Token};

use super::metrics::{em, f1, hit_at_1, jacc, normalize};
use super::{EvalError, MetricReport};

/// Decoding and selection settings for one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub max_new_tokens: usize,
    pub policy: VerificationPolicy,
    /// Digest identifying the configuration under evaluation; copied into
    /// every report. See [`super::fingerprint`].
    pub config_fingerprint: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 8,
            policy: VerificationPolicy::default(),
            config_fingerprint: String::new(),
        }
    }
}

/// Runs the full pipeline over one split: per query, assess and answer every
/// document, verify, select, and score. Returns the aggregate report plus
/// the per-query records (input order) for the line-delimited output file.
pub fn evaluate(
    model: &TinyLm,
    examples: &[QaExample],
    split: Split,
    opts: &EvalOptions,
) -> Result<(MetricReport, Vec<InferenceRecord>), EvalError> {
    if opts.max_new_tokens == 0 {
        return Err(EvalError::Domain("max_new_tokens must be positive".into()));
    }
    let subset = of_split(examples, split);
    if subset.is_empty() {
        return Err(EvalError::Domain(format!("no examples in the {split:?} split")));
    }
    let max_docs = subset.iter().map(|e| e.documents.len()).max().expect("non-empty");
    let mut engine = InferenceEngine::new(model, max_docs.max(1), opts.max_new_tokens)?;

    let mut records = Vec::with_capacity(subset.len());
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut hit_sum = 0.0;
    let mut judgments = Vec::new();
    let mut truth = Vec::new();
    for example in &subset {
        let docs: Vec<Vec<Token>> =
            example.documents.iter().map(|d| d.tokens.clone()).collect();
        let record = engine.run_query(example.id, &example.query_tokens, &docs, &opts.policy)?;
        let prediction = normalize(&record.selected_answer_tokens, &model.config().specials);
        em_sum += em(&prediction, &example.answers)?;
        f1_sum += f1(&prediction, &example.answers)?;
        let selected = &example.documents[record.selected_doc_index];
        hit_sum += hit_at_1(&selected.tokens, &example.answers)?;
        for (per_doc, doc) in record.per_document.iter().zip(&example.documents) {
            judgments.push(per_doc.s_rel);
            truth.push(doc.y);
        }
        records.push(record);
    }
    let n = subset.len() as f64;
    let report = MetricReport {
        em: em_sum / n,
        f1: f1_sum / n,
        hit_at_1: hit_sum / n,
        jacc: jacc(&judgments, &truth)?,
        n_examples: subset.len(),
        config_fingerprint: opts.config_fingerprint.clone(),
    };
    report.validate()?;
    Ok((report, records))
}

/// Retrieval condition being swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Evaluate with only the first `level` retrieved documents per query.
    NDocs,
    /// Replace each query's relevant documents with verified distractors at
    /// rate `level` — a controlled stand-in for retrievers of decreasing
    /// quality.
    RetrieverQuality,
}

/// One sweep level and its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub level: f64,
    pub report: MetricReport,
}

/// Evaluates the same model at each level of one retrieval axis. The
/// corruption draws are coupled across levels (one uniform per query,
/// compared against the rate), so the corrupted sets are nested and the
/// quality axis is monotone by construction, not just in expectation.
pub fn run_sweep(
    model: &TinyLm,
    examples: &[QaExample],
    split: Split,
    axis: SweepAxis,
    levels: &[f64],
    seed: u64,
    opts: &EvalOptions,
) -> Result<Vec<SweepRow>, EvalError> {
    if levels.is_empty() {
        return Err(EvalError::Domain("sweep needs at least one level".into()));
    }
    for &level in levels {
        match axis {
            SweepAxis::NDocs => {
                if !level.is_finite() || level < 1.0 || level.fract() != 0.0 {
                    return Err(EvalError::Domain(format!(
                        "n_docs level {level} must be a positive integer"
                    )));
                }
            }
            SweepAxis::RetrieverQuality => {
                if !level.is_finite() || !(0.0..=1.0).contains(&level) {
                    return Err(EvalError::Domain(format!(
                        "retriever_quality level {level} outside [0, 1]"
                    )));
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let modified = match axis {
            SweepAxis::NDocs => truncate_docs(examples, split, level as usize),
            SweepAxis::RetrieverQuality => corrupt_retrieval(examples, split, level, seed)?,
        };
        let (report, _) = evaluate(model, &modified, split, opts)?;
        rows.push(SweepRow { axis, level, report });
    }
    Ok(rows)
}

fn truncate_docs(examples: &[QaExample], split: Split, k: usize) -> Vec<QaExample> {
    examples
        .iter()
        .filter(|e| e.split == split)
        .cloned()
        .map(|mut e| {
            e.documents.truncate(k);
            e
        })
        .collect()
}

/// Rewrites the split so that, at `rate`, a query's relevant documents are
/// replaced by distractors donated by other queries. Donors are verified not
/// to contain any of the victim's gold answers, and their labels are
/// recomputed against the victim's query, so the corrupted dataset is still
/// internally consistent.
fn corrupt_retrieval(
    examples: &[QaExample],
    split: Split,
    rate: f64,
    seed: u64,
) -> Result<Vec<QaExample>, EvalError> {
    let originals: Vec<QaExample> =
        examples.iter().filter(|e| e.split == split).cloned().collect();
    if rate > 0.0 && originals.len() < 2 {
        return Err(EvalError::Domain(
            "retrieval corruption needs at least two examples to donate distractors".into(),
        ));
    }
    let mut corrupted = originals.clone();
    for i in 0..corrupted.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, corrupted[i].id));
        // One uniform per query, drawn before anything else: levels compare
        // against the same draw, coupling the sweep.
        let u: f64 = rng.random_range(0.0..1.0);
        let start: usize = rng.random_range(0..originals.len());
        if u >= rate {
            continue;
        }
        let golds = corrupted[i].answers.clone();
        let query = corrupted[i].query_tokens.clone();
        for d in 0..corrupted[i].documents.len() {
            if corrupted[i].documents[d].y != 1 {
                continue;
            }
            let donor = find_donor(&originals, i, start, &golds).ok_or_else(|| {
                EvalError::Domain("no donatable distractor found in the split".into())
            })?;
            let s_ce = oracle_score(&query, &donor)?;
            let s_rel_label = label_machine(s_ce, 0)?;
            corrupted[i].documents[d] =
                ScoredDocument { tokens: donor, y: 0, s_ce, s_rel_label };
        }
    }
    Ok(corrupted)
}

/// First irrelevant document from another example, probing cyclically from
/// `start`, that provably contains none of `golds`.
fn find_donor(
    originals: &[QaExample],
    victim: usize,
    start: usize,
    golds: &[Vec<Token>],
) -> Option<Vec<Token>> {
    let n = originals.len();
    for offset in 0..n {
        let j = (start + offset) % n;
        if j == victim {
            continue;
        }
        for doc in &originals[j].documents {
            if doc.y == 0 && !contains_any_gold(&doc.tokens, golds) {
                return Some(doc.tokens.clone());
            }
        }
    }
    None
}

/// One training configuration in the leave-one-out grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    /// Coarse assessment only; the pairwise ranking term is dropped.
    NoFineLoss,
    /// One gold document per query; no negative pairing in the batch.
    NoNoisePairing,
    /// Negatives drawn uniformly instead of difficulty-weighted.
    RandomNegatives,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] =
        [Self::Full, Self::NoFineLoss, Self::NoNoisePairing, Self::RandomNegatives];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoFineLoss => "no_fine_loss",
            Self::NoNoisePairing => "no_noise_pairing",
            Self::RandomNegatives => "random_negatives",
        }
    }

    /// The full method's options with this variant's single ingredient
    /// removed.
    pub fn apply(self, base: &TrainOptions) -> TrainOptions {
        let mut options = *base;
        match self {
            Self::Full => {}
            Self::NoFineLoss => options.use_fine_loss = false,
            Self::NoNoisePairing => options.pair_negatives = false,
            Self::RandomNegatives => options.negative_sampling = NegativeSampling::Random,
        }
        options
    }
}

/// Per-variant results: one report per seed plus their componentwise median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub per_seed: Vec<MetricReport>,
    pub median: MetricReport,
}

/// Trains every variant from scratch under identical schedules and seeds,
/// then evaluates each on the test split. Seeds pair runs across variants:
/// seed `s` gives every variant the same initialization, shuffles, and
/// sampling stream, so differences are attributable to the removed
/// ingredient alone.
pub fn run_ablations(
    model_cfg: &ModelConfig,
    examples: &[QaExample],
    schedule: &TrainSchedule,
    base_options: &TrainOptions,
    seeds: &[u64],
    opts: &EvalOptions,
) -> Result<Vec<AblationRow>, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::Domain("ablations need at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(AblationVariant::ALL.len());
    for variant in AblationVariant::ALL {
        let options = variant.apply(base_options);
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut model = TinyLm::new(model_cfg.clone(), seed)?;
            let schedule = TrainSchedule { seed, ..schedule.clone() };
            train(&mut model, examples, &schedule, &options)?;
            let (report, _) = evaluate(&model, examples, Split::Test, opts)?;
            per_seed.push(report);
        }
        let median = median_report(&per_seed);
        rows.push(AblationRow { variant, per_seed, median });
    }
    Ok(rows)
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("metrics are finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn median_report(reports: &[MetricReport]) -> MetricReport {
    let pick = |f: fn(&MetricReport) -> f64| median(&mut reports.iter().map(f).collect());
    MetricReport {
        em: pick(|r| r.em),
        f1: pick(|r| r.f1),
        hit_at_1: pick(|r| r.hit_at_1),
        jacc: pick(|r| r.jacc),
        n_examples: reports[0].n_examples,
        config_fingerprint: reports[0].config_fingerprint.clone(),
    }
}
