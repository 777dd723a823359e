//! The five subcommands. Each resolves paths against the output directory,
//! writes `effective-config.toml` for provenance, does its work, and prints
//! a short human-readable summary; files carry the machine-readable truth.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;

use relrag_core::data::{generate_corpus, of_split, read_jsonl, write_jsonl, QaExample};
use relrag_core::eval::{
    evaluate, fingerprint, run_ablations, run_sweep, EvalOptions, MetricReport,
};
use relrag_core::model::checkpoint;
use relrag_core::train::{train, StepMetrics, TrainError};
use relrag_core::{Split, TinyLm};

use crate::config::RunConfig;

/// Failures split by exit code: validation problems (bad config, missing
/// inputs) exit 1, failures during the actual work exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Self::Validation(e) | Self::Runtime(e) => e,
        }
    }
}

fn validation(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Validation(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

/// Serializes the resolved config and, unless dry-running, writes it next to
/// the outputs. The returned string is what reports fingerprint.
fn prepare(cfg: &RunConfig, out: &Path, dry_run: bool) -> Result<String, CliError> {
    let effective = cfg.to_effective_toml().map_err(validation)?;
    if !dry_run {
        fs::create_dir_all(out)
            .with_context(|| format!("creating output directory {}", out.display()))
            .map_err(runtime)?;
        fs::write(out.join("effective-config.toml"), &effective)
            .context("writing effective-config.toml")
            .map_err(runtime)?;
    }
    Ok(effective)
}

fn load_dataset(cfg: &RunConfig, out: &Path) -> Result<Vec<QaExample>, CliError> {
    let path = resolve(out, &cfg.paths.dataset);
    if !path.exists() {
        return Err(validation(anyhow::anyhow!(
            "dataset {} does not exist; run gen-data first",
            path.display()
        )));
    }
    read_jsonl(&path)
        .with_context(|| format!("reading dataset {}", path.display()))
        .map_err(validation)
}

fn load_checkpoint(cfg: &RunConfig, out: &Path) -> Result<TinyLm, CliError> {
    let path = resolve(out, &cfg.paths.checkpoint);
    if !path.exists() {
        return Err(validation(anyhow::anyhow!(
            "checkpoint {} does not exist; run train first",
            path.display()
        )));
    }
    let model = checkpoint::load(&path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(validation)?;
    if *model.config() != cfg.model {
        return Err(validation(anyhow::anyhow!(
            "checkpoint was trained with a different model config than the one given \
             (e.g. d_model {} vs {})",
            model.config().d_model,
            cfg.model.d_model
        )));
    }
    Ok(model)
}

fn eval_options(cfg: &RunConfig, effective: &str) -> EvalOptions {
    EvalOptions {
        max_new_tokens: cfg.eval.max_new_tokens,
        policy: cfg.verify,
        config_fingerprint: fingerprint(effective.as_bytes()),
    }
}

/// Applies the `--k` truncation: evaluation sees only the first `k`
/// retrieved documents of every query.
fn truncated(examples: Vec<QaExample>, k: Option<usize>) -> Vec<QaExample> {
    match k {
        None => examples,
        Some(k) => examples
            .into_iter()
            .map(|mut e| {
                e.documents.truncate(k);
                e
            })
            .collect(),
    }
}

fn print_report(label: &str, report: &MetricReport) {
    println!(
        "{label:<24} em {:.4}  f1 {:.4}  hit@1 {:.4}  jacc {:.4}  (n = {})",
        report.em, report.f1, report.hit_at_1, report.jacc, report.n_examples
    );
}

pub fn gen_data(cfg: &RunConfig, out: &Path, dry_run: bool) -> Result<(), CliError> {
    prepare(cfg, out, dry_run)?;
    let path = resolve(out, &cfg.paths.dataset);
    if dry_run {
        println!("dry run: config valid; would write {}", path.display());
        return Ok(());
    }
    let examples = generate_corpus(&cfg.corpus, &cfg.model, cfg.seed).map_err(validation)?;
    write_jsonl(&path, &examples)
        .with_context(|| format!("writing dataset {}", path.display()))
        .map_err(runtime)?;
    let n_docs: usize = examples.iter().map(|e| e.documents.len()).sum();
    let n_relevant: usize =
        examples.iter().flat_map(|e| &e.documents).filter(|d| d.y == 1).count();
    println!(
        "wrote {} examples (train {} / dev {} / test {}) to {}",
        examples.len(),
        of_split(&examples, Split::Train).len(),
        of_split(&examples, Split::Dev).len(),
        of_split(&examples, Split::Test).len(),
        path.display()
    );
    println!(
        "documents per query: {:.1}; relevant-document rate: {:.3}",
        n_docs as f64 / examples.len() as f64,
        n_relevant as f64 / n_docs as f64
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, dry_run: bool) -> Result<(), CliError> {
    prepare(cfg, out, dry_run)?;
    let examples = load_dataset(cfg, out)?;
    let mut model = TinyLm::new(cfg.model.clone(), cfg.seed).map_err(validation)?;
    if dry_run {
        println!(
            "dry run: config valid; {} train examples, {} parameters",
            of_split(&examples, Split::Train).len(),
            model.param_count()
        );
        return Ok(());
    }
    let metrics = match train(&mut model, &examples, &cfg.schedule, &cfg.train) {
        Ok(m) => m,
        Err(TrainError::NonFinite { step, total, dump }) => {
            let dump_path = out.join("bad-batch.json");
            fs::write(&dump_path, &dump).ok();
            return Err(runtime(anyhow::anyhow!(
                "loss became non-finite ({total}) at step {step}; offending batch dumped to {}",
                dump_path.display()
            )));
        }
        Err(e) => return Err(validation(e)),
    };
    let ckpt_path = resolve(out, &cfg.paths.checkpoint);
    checkpoint::save(&model, &ckpt_path)
        .with_context(|| format!("writing checkpoint {}", ckpt_path.display()))
        .map_err(runtime)?;
    let log_path = resolve(out, &cfg.paths.train_log);
    write_step_log(&log_path, &metrics).map_err(runtime)?;
    let first = metrics.first().map(|m| m.loss_total).unwrap_or(f64::NAN);
    let last = metrics.last().map(|m| m.loss_total).unwrap_or(f64::NAN);
    println!(
        "trained {} steps: loss {first:.4} → {last:.4}; checkpoint {}",
        metrics.len(),
        ckpt_path.display()
    );
    Ok(())
}

fn write_step_log(path: &Path, metrics: &[StepMetrics]) -> anyhow::Result<()> {
    let mut w = std::io::BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for m in metrics {
        serde_json::to_writer(&mut w, m)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, dry_run: bool) -> Result<(), CliError> {
    let effective = prepare(cfg, out, dry_run)?;
    let examples = load_dataset(cfg, out)?;
    let model = load_checkpoint(cfg, out)?;
    if dry_run {
        println!("dry run: config, dataset, and checkpoint are consistent");
        return Ok(());
    }
    let examples = truncated(examples, cfg.eval.k);
    let opts = eval_options(cfg, &effective);
    let (report, records) =
        evaluate(&model, &examples, cfg.eval.split, &opts).map_err(runtime)?;
    let records_path = resolve(out, &cfg.paths.records);
    let mut w = std::io::BufWriter::new(
        fs::File::create(&records_path)
            .with_context(|| format!("creating {}", records_path.display()))
            .map_err(runtime)?,
    );
    for record in &records {
        serde_json::to_writer(&mut w, record).map_err(runtime)?;
        writeln!(w).map_err(runtime)?;
    }
    drop(w);
    let report_path = resolve(out, &cfg.paths.report);
    fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).map_err(runtime)?,
    )
    .map_err(runtime)?;
    print_report(&format!("{:?}", cfg.eval.split).to_lowercase(), &report);
    println!("records: {}; report: {}", records_path.display(), report_path.display());
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path, dry_run: bool) -> Result<(), CliError> {
    let effective = prepare(cfg, out, dry_run)?;
    let examples = load_dataset(cfg, out)?;
    let model = load_checkpoint(cfg, out)?;
    if dry_run {
        println!(
            "dry run: would sweep {:?} over {:?}",
            cfg.sweep.axis, cfg.sweep.levels
        );
        return Ok(());
    }
    let opts = eval_options(cfg, &effective);
    let rows = run_sweep(
        &model,
        &examples,
        cfg.eval.split,
        cfg.sweep.axis,
        &cfg.sweep.levels,
        cfg.seed,
        &opts,
    )
    .map_err(runtime)?;
    let path = resolve(out, &cfg.paths.sweep_report);
    fs::write(
        &path,
        serde_json::to_string_pretty(&rows).map_err(runtime)?,
    )
    .map_err(runtime)?;
    for row in &rows {
        print_report(&format!("{:?} = {}", row.axis, row.level), &row.report);
    }
    println!("sweep report: {}", path.display());
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig, out: &Path, dry_run: bool) -> Result<(), CliError> {
    let effective = prepare(cfg, out, dry_run)?;
    let examples = load_dataset(cfg, out)?;
    if dry_run {
        println!(
            "dry run: would train 4 variants × {} seeds on {} examples",
            cfg.ablate.seeds.len(),
            examples.len()
        );
        return Ok(());
    }
    let opts = eval_options(cfg, &effective);
    let rows = run_ablations(
        &cfg.model,
        &examples,
        &cfg.schedule,
        &cfg.train,
        &cfg.ablate.seeds,
        &opts,
    )
    .map_err(runtime)?;
    let path = resolve(out, &cfg.paths.ablation_report);
    fs::write(
        &path,
        serde_json::to_string_pretty(&rows).map_err(runtime)?,
    )
    .map_err(runtime)?;
    for row in &rows {
        print_report(row.variant.label(), &row.median);
    }
    println!("ablation report: {}", path.display());
    Ok(())
}
