//! `fsum`: prepare data, train, tune and evaluate clinical summarizers.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fsum::corpus::{
    default_kb, generate_synthetic_corpus, load_records, write_atomic, write_records, Vocab,
};
use fsum::eval::{evaluate_corpus, summarize};
use fsum::knowledge::{build_index, load_kb, save_index, write_kb};
use fsum::ner::build_gazetteer;
use fsum::pipeline::{
    load_triples, model_config_for, prepare, tune_configuration, tune_result_json, write_triples,
    Layout,
};
use fsum::train::{load_checkpoint, save_checkpoint, train, write_history};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "fsum", version, about = "Knowledge-guided clinical summarization toolkit")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for splitting, initialization, shuffling and tuning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index a knowledge base for retrieval.
    BuildKb {
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split records and write vocabulary and training triples.
    Prepare,
    /// Train one configuration on prepared triples.
    Train {
        /// Take the loss weights from the tuner's result file.
        #[arg(long)]
        tuned: bool,
    },
    /// Search the loss weights of the configured preset.
    Tune,
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the generated impression for a findings text.
    Summarize {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        findings: String,
    },
    /// Write a synthetic corpus and knowledge base.
    Synth,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::BuildKb { .. } => "build-kb",
            Command::Prepare => "prepare",
            Command::Train { .. } => "train",
            Command::Tune => "tune",
            Command::Evaluate { .. } => "evaluate",
            Command::Summarize { .. } => "summarize",
            Command::Synth => "synth",
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn build_kb(cfg: &RunConfig, kb: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let kb_path = kb.unwrap_or_else(|| cfg.paths.kb.clone());
    let out = out.unwrap_or_else(|| cfg.layout().index());
    let kb = load_kb(&kb_path)?;
    let index = build_index(&kb)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_index(&index, &out)?;
    println!("docs={}", index.doc_count());
    println!("terms={}", index.term_count());
    Ok(())
}

fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let loaded = load_records(&cfg.paths.records)?;
    let kb = load_kb(&cfg.paths.kb)?;
    let prepared = prepare(&loaded.records, &kb, &cfg.corpus, &cfg.retriever)?;
    for w in prepared.gazetteer.warnings() {
        eprintln!("warning: {w}");
    }
    let layout = cfg.layout();
    ensure_dir(&layout.dir)?;
    prepared.vocab.save(layout.vocab())?;
    save_index(&prepared.index, layout.index())?;
    let split = &prepared.split;
    for (name, triples, records) in [
        ("train", &prepared.train, &split.train),
        ("validation", &prepared.validation, &split.validation),
        ("test", &prepared.test, &split.test),
    ] {
        write_triples(layout.triples(name), triples)?;
        write_records(layout.records(name), records)?;
    }
    println!(
        "train={} validation={} test={} filtered={} vocab={}",
        prepared.train.len(),
        prepared.validation.len(),
        prepared.test.len(),
        loaded.filtered_count,
        prepared.vocab.len()
    );
    Ok(())
}

struct Loaded {
    vocab: Vocab,
    train: Vec<fsum::model::TrainingTriple>,
    validation: Vec<fsum::model::TrainingTriple>,
}

fn load_prepared(layout: &Layout) -> Result<Loaded> {
    let vocab = Vocab::load(layout.vocab())?;
    let train = load_triples(layout.triples("train"))?;
    let validation = load_triples(layout.triples("validation"))?;
    Ok(Loaded { vocab, train, validation })
}

fn read_tuned(path: &Path) -> Result<fsum::model::LambdaTriple> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let best = doc
        .pointer("/best/lambdas")
        .cloned()
        .with_context(|| format!("{} has no best point", path.display()))?;
    Ok(serde_json::from_value(best)?)
}

fn cmd_train(cfg: &RunConfig, tuned: bool) -> Result<()> {
    let layout = cfg.layout();
    let data = load_prepared(&layout)?;
    let lambdas = if tuned {
        read_tuned(&layout.tune_result())?
    } else {
        cfg.lambdas.unwrap_or_else(|| cfg.tune.configuration.default_lambdas())
    };
    let model = model_config_for(&cfg.model, &data.vocab, &cfg.corpus);
    let outcome = train(
        &model,
        &cfg.train,
        &lambdas,
        &data.train,
        &data.validation,
        &data.vocab.hash(),
    )?;
    save_checkpoint(&outcome.checkpoint, layout.checkpoint())?;
    write_history(layout.history(), &outcome.history)?;
    println!(
        "lambdas=({}, {}, {}) best_epoch={} best_validation_loss={:.6}",
        lambdas.lambda_gen,
        lambdas.lambda_k,
        lambdas.lambda_e,
        outcome.checkpoint.epoch_of_best,
        outcome.checkpoint.best_validation_loss
    );
    Ok(())
}

fn cmd_tune(cfg: &RunConfig) -> Result<()> {
    let layout = cfg.layout();
    let data = load_prepared(&layout)?;
    let model = model_config_for(&cfg.model, &data.vocab, &cfg.corpus);
    let result = tune_configuration(
        &data.train,
        &data.validation,
        &data.vocab.hash(),
        &model,
        &cfg.train,
        &cfg.tune,
    )?;
    write_atomic(&layout.tune_result(), tune_result_json(&result)?.as_bytes())?;
    let (best, loss) = result.best;
    println!(
        "evaluations={} best=({}, {}, {}) validation_loss={:.6}",
        result.evaluations, best.lambda_gen, best.lambda_k, best.lambda_e, loss
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let layout = cfg.layout();
    let ckpt = load_checkpoint(checkpoint.unwrap_or_else(|| layout.checkpoint()))?;
    let vocab = Vocab::load(layout.vocab())?;
    let test = load_records(layout.records("test"))?.records;
    let gaz = build_gazetteer(&load_kb(&cfg.paths.kb)?)?;
    let report = evaluate_corpus(&ckpt, &test, &gaz, &vocab)?;
    report.write_csv(layout.report_csv())?;
    report.write_json(layout.report_json())?;
    let m = &report.mean;
    println!(
        "rows={} r1_f={:.4} r2_f={:.4} rl_f={:.4} precision_target={:.4} recall_target={:.4} f1_target={:.4}",
        report.rows.len(),
        m.rouge1.f1,
        m.rouge2.f1,
        m.rouge_l.f1,
        m.factual.precision_target,
        m.factual.recall_target,
        m.factual.f1_target
    );
    Ok(())
}

fn cmd_summarize(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    vocab: Option<PathBuf>,
    findings: &str,
) -> Result<()> {
    let layout = cfg.layout();
    let ckpt = load_checkpoint(checkpoint.unwrap_or_else(|| layout.checkpoint()))?;
    let vocab = Vocab::load(vocab.unwrap_or_else(|| layout.vocab()))?;
    if ckpt.vocab_hash != vocab.hash() {
        return Err(fsum::Error::VocabMismatch { checkpoint: ckpt.vocab_hash, vocab: vocab.hash() }.into());
    }
    println!("{}", summarize(&ckpt.params, &vocab, findings)?);
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let kb = default_kb();
    let s = &cfg.synth;
    let records = generate_synthetic_corpus(s.n_records, &kb, s.entity_density, s.seed)?;
    for p in [&cfg.paths.records, &cfg.paths.kb] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
    }
    write_records(&cfg.paths.records, &records)?;
    write_kb(&cfg.paths.kb, &kb)?;
    println!("records={} concepts={}", records.len(), kb.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::BuildKb { kb, out } => build_kb(&cfg, kb, out),
        Command::Prepare => cmd_prepare(&cfg),
        Command::Train { tuned } => cmd_train(&cfg, tuned),
        Command::Tune => cmd_tune(&cfg),
        Command::Evaluate { checkpoint } => cmd_evaluate(&cfg, checkpoint),
        Command::Summarize { checkpoint, vocab, findings } => {
            cmd_summarize(&cfg, checkpoint, vocab, &findings)
        }
        Command::Synth => cmd_synth(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = cli.command.stage();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {stage}: {e:#}");
            ExitCode::FAILURE
        }
    }
}
