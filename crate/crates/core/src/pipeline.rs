//! Data preparation and end-to-end runs of one loss configuration.

use std::cell::RefCell;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocab_from_texts, encode_truncated, split_corpus, write_atomic, ClinicalRecord,
    CorpusSplit, Vocab,
};
use crate::eval::{evaluate_corpus, EvalReport, Scores};
use crate::knowledge::{
    build_index, linearize_facts, retrieve_for_chain, FactRecord, InvertedIndex, RetrieverConfig,
};
use crate::model::{LambdaTriple, ModelConfig, SeqPair, TrainingTriple};
use crate::ner::{
    build_gazetteer, extract_entities, linearize_entity_chain_truncated, Gazetteer,
};
use crate::train::{
    train, tune_lambdas, Checkpoint, Configuration, EpochRecord, LambdaGrid, TrainConfig,
    TuneResult,
};
use crate::{Error, Result};

/// Split proportions of the reference corpus: 4000 / 1091 / 1091.
const REFERENCE_TOTAL: usize = 6182;
const REFERENCE_HELD_OUT: usize = 1091;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Explicit split sizes; when unset the reference proportions are used.
    pub train_n: Option<usize>,
    pub val_n: Option<usize>,
    pub test_n: Option<usize>,
    pub seed: u64,
    pub min_freq: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_n: None,
            val_n: None,
            test_n: None,
            seed: 0,
            min_freq: 1,
            max_src_len: 256,
            max_tgt_len: 64,
        }
    }
}

/// Validation and test each get `n * 1091 / 6182` records, training the rest.
pub fn default_split_sizes(n: usize) -> (usize, usize, usize) {
    let held = n * REFERENCE_HELD_OUT / REFERENCE_TOTAL;
    (n - 2 * held, held, held)
}

impl CorpusConfig {
    pub fn split_sizes(&self, n: usize) -> (usize, usize, usize) {
        let (t, v, s) = default_split_sizes(n);
        (
            self.train_n.unwrap_or(t),
            self.val_n.unwrap_or(v),
            self.test_n.unwrap_or(s),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub configuration: Configuration,
    /// Objective evaluations; below 2 the preset weights are used untuned.
    pub budget: usize,
    /// Training epochs per evaluated grid point.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            configuration: Configuration::TripleMoo,
            budget: 8,
            epochs: 2,
            seed: 0,
        }
    }
}

/// Everything derived from records and KB that training and evaluation need.
pub struct Prepared {
    pub vocab: Vocab,
    pub gazetteer: Gazetteer,
    pub index: InvertedIndex,
    pub split: CorpusSplit,
    pub train: Vec<TrainingTriple>,
    pub validation: Vec<TrainingTriple>,
    pub test: Vec<TrainingTriple>,
}

/// Vocabulary over training findings and impressions plus KB names and
/// definitions, so fact sequences are encodable.
pub fn build_pipeline_vocab(train: &[ClinicalRecord], kb: &[FactRecord], min_freq: usize) -> Result<Vocab> {
    if train.is_empty() {
        return Err(Error::InvalidInput("cannot build a vocabulary from zero records".into()));
    }
    let texts = train
        .iter()
        .flat_map(|r| [r.findings.as_str(), r.impression.as_str()])
        .chain(kb.iter().flat_map(|f| [f.preferred_name.as_str(), f.definition.as_str()]));
    build_vocab_from_texts(texts, min_freq)
}

pub struct TripleBuilder<'a> {
    pub vocab: &'a Vocab,
    pub gazetteer: &'a Gazetteer,
    pub index: &'a InvertedIndex,
    pub kb: &'a [FactRecord],
    pub retriever: &'a RetrieverConfig,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl TripleBuilder<'_> {
    /// Summary pair from the texts, entity-chain pair from the mentions and
    /// knowledge pair from the facts retrieved for each side's mentions.
    pub fn build(&self, record: &ClinicalRecord) -> TrainingTriple {
        let chain_src = extract_entities(&record.findings, self.gazetteer);
        let chain_tgt = extract_entities(&record.impression, self.gazetteer);
        let facts_src = retrieve_for_chain(self.index, self.kb, &chain_src, self.retriever);
        let facts_tgt = retrieve_for_chain(self.index, self.kb, &chain_tgt, self.retriever);
        TrainingTriple {
            record_id: record.record_id.clone(),
            gen: SeqPair {
                src: encode_truncated(&record.findings, self.vocab, self.max_src_len),
                tgt: encode_truncated(&record.impression, self.vocab, self.max_tgt_len),
            },
            ent: SeqPair {
                src: linearize_entity_chain_truncated(&chain_src, self.vocab, self.max_src_len),
                tgt: linearize_entity_chain_truncated(&chain_tgt, self.vocab, self.max_tgt_len),
            },
            know: SeqPair {
                src: linearize_facts(&facts_src, self.vocab, self.max_src_len),
                tgt: linearize_facts(&facts_tgt, self.vocab, self.max_tgt_len),
            },
        }
    }
}

pub fn prepare(
    records: &[ClinicalRecord],
    kb: &[FactRecord],
    corpus: &CorpusConfig,
    retriever: &RetrieverConfig,
) -> Result<Prepared> {
    if corpus.max_src_len < 2 || corpus.max_tgt_len < 2 {
        return Err(Error::InvalidConfig("max_src_len and max_tgt_len must be at least 2".into()));
    }
    let (t, v, s) = corpus.split_sizes(records.len());
    let split = split_corpus(records, t, v, s, corpus.seed)?;
    let vocab = build_pipeline_vocab(&split.train, kb, corpus.min_freq)?;
    let gazetteer = build_gazetteer(kb)?;
    let index = build_index(kb)?;
    let builder = TripleBuilder {
        vocab: &vocab,
        gazetteer: &gazetteer,
        index: &index,
        kb,
        retriever,
        max_src_len: corpus.max_src_len,
        max_tgt_len: corpus.max_tgt_len,
    };
    let build = |rs: &[ClinicalRecord]| rs.iter().map(|r| builder.build(r)).collect::<Vec<_>>();
    let (train, validation, test) = (build(&split.train), build(&split.validation), build(&split.test));
    Ok(Prepared { vocab, gazetteer, index, split, train, validation, test })
}

pub fn write_triples(path: impl AsRef<Path>, triples: &[TrainingTriple]) -> Result<()> {
    let mut out = String::new();
    for t in triples {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<TrainingTriple>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

/// File names inside a run's output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Layout { dir: dir.into() }
    }
    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }
    pub fn index(&self) -> PathBuf {
        self.dir.join("kb.index")
    }
    pub fn triples(&self, split: &str) -> PathBuf {
        self.dir.join(format!("triples.{split}.jsonl"))
    }
    pub fn records(&self, split: &str) -> PathBuf {
        self.dir.join(format!("records.{split}.jsonl"))
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }
    pub fn history(&self) -> PathBuf {
        self.dir.join("history.jsonl")
    }
    pub fn tune_result(&self) -> PathBuf {
        self.dir.join("tune.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.dir.join("report.csv")
    }
    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }
}

pub fn tune_result_json(result: &TuneResult) -> Result<String> {
    // +inf is not representable in JSON; failed points become null.
    let evaluated: Vec<serde_json::Value> = result
        .evaluated
        .iter()
        .map(|(l, v)| serde_json::json!({ "lambdas": l, "validation_loss": v.is_finite().then_some(*v) }))
        .collect();
    let doc = serde_json::json!({
        "evaluated": evaluated,
        "best": { "lambdas": result.best.0, "validation_loss": result.best.1 },
        "evaluations": result.evaluations,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Searches the free λ axes of `tune.configuration`, each point scored by the
/// best validation `l_total` of a short training run.
pub fn tune_configuration(
    train_triples: &[TrainingTriple],
    val_triples: &[TrainingTriple],
    vocab_hash: &str,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    tune: &TuneConfig,
) -> Result<TuneResult> {
    let short = TrainConfig { epochs: tune.epochs, ..train_cfg.clone() };
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let objective = |l: &LambdaTriple| match train(model, &short, l, train_triples, val_triples, vocab_hash) {
        Ok(out) => out.checkpoint.best_validation_loss,
        Err(Error::NonFinite { .. }) => f64::NAN,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let grid = LambdaGrid::new(tune.configuration);
    let result = tune_lambdas(objective, &grid, tune.budget, tune.seed);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    result
}

/// One labeled row of a configuration comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationRow {
    pub configuration: Configuration,
    pub lambdas: LambdaTriple,
    pub scores: Scores,
}

pub struct RunOutcome {
    pub tune: Option<TuneResult>,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub report: EvalReport,
    pub row: ConfigurationRow,
}

/// Tune (when the budget allows), train with the chosen weights and evaluate
/// on the test split.
pub fn run_configuration(
    prepared: &Prepared,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    tune: &TuneConfig,
) -> Result<RunOutcome> {
    let configuration = tune.configuration;
    let (lambdas, tune_result) = if tune.budget >= 2 {
        let r = tune_configuration(
            &prepared.train,
            &prepared.validation,
            &prepared.vocab.hash(),
            model,
            train_cfg,
            tune,
        )?;
        (r.best.0, Some(r))
    } else {
        (configuration.default_lambdas(), None)
    };
    let outcome = train(
        model,
        train_cfg,
        &lambdas,
        &prepared.train,
        &prepared.validation,
        &prepared.vocab.hash(),
    )?;
    let report = evaluate_corpus(
        &outcome.checkpoint,
        &prepared.split.test,
        &prepared.gazetteer,
        &prepared.vocab,
    )?;
    let row = ConfigurationRow { configuration, lambdas, scores: report.mean };
    Ok(RunOutcome {
        tune: tune_result,
        checkpoint: outcome.checkpoint,
        history: outcome.history,
        report,
        row,
    })
}

/// Model shape for prepared data: vocabulary size and length limits filled in.
pub fn model_config_for(base: &ModelConfig, vocab: &Vocab, corpus: &CorpusConfig) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        max_src_len: corpus.max_src_len,
        max_tgt_len: corpus.max_tgt_len,
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_kb, generate_synthetic_corpus, BOS, EOS};

    #[test]
    fn reference_split_sizes() {
        assert_eq!(default_split_sizes(6182), (4000, 1091, 1091));
        let (t, v, s) = default_split_sizes(10);
        assert_eq!(t + v + s, 10);
    }

    fn small() -> (Vec<ClinicalRecord>, Vec<FactRecord>) {
        let kb = default_kb();
        (generate_synthetic_corpus(20, &kb, 0.5, 3).unwrap(), kb)
    }

    #[test]
    fn prepare_counts_and_lengths() {
        let (records, kb) = small();
        let corpus = CorpusConfig { max_src_len: 40, max_tgt_len: 16, ..Default::default() };
        let p = prepare(&records, &kb, &corpus, &RetrieverConfig::default()).unwrap();
        let (t, v, s) = default_split_sizes(20);
        assert_eq!((p.train.len(), p.validation.len(), p.test.len()), (t, v, s));
        for tr in p.train.iter().chain(&p.test) {
            for pair in [&tr.gen, &tr.ent, &tr.know] {
                assert!(pair.src.len() <= 40 && pair.tgt.len() <= 16);
                assert_eq!(pair.src[0], BOS);
                assert_eq!(*pair.tgt.last().unwrap(), EOS);
            }
        }
        // KB text is in the vocabulary, so facts are not all unknown.
        assert!(p.vocab.get(&crate::corpus::tokenize(&kb[0].definition)[0]).is_some());
    }

    #[test]
    fn record_without_entities_gets_empty_sequences() {
        let kb = default_kb();
        let gaz = build_gazetteer(&kb).unwrap();
        let index = build_index(&kb).unwrap();
        let rec = ClinicalRecord {
            record_id: "x".into(),
            findings: "normal study".into(),
            impression: "normal".into(),
            ..Default::default()
        };
        let vocab = build_pipeline_vocab(std::slice::from_ref(&rec), &kb, 1).unwrap();
        let retriever = RetrieverConfig::default();
        let b = TripleBuilder {
            vocab: &vocab,
            gazetteer: &gaz,
            index: &index,
            kb: &kb,
            retriever: &retriever,
            max_src_len: 32,
            max_tgt_len: 32,
        };
        let t = b.build(&rec);
        for seq in [&t.ent.src, &t.ent.tgt, &t.know.src, &t.know.tgt] {
            assert_eq!(seq.0, vec![BOS, EOS]);
        }
    }

    #[test]
    fn triples_round_trip() {
        let (records, kb) = small();
        let p = prepare(&records, &kb, &CorpusConfig::default(), &RetrieverConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_triples(&path, &p.train).unwrap();
        assert_eq!(load_triples(&path).unwrap(), p.train);
    }

    #[test]
    fn gen_only_run_has_zero_auxiliary_weights() {
        let (records, kb) = small();
        let corpus = CorpusConfig { max_src_len: 48, max_tgt_len: 16, ..Default::default() };
        let p = prepare(&records, &kb, &corpus, &RetrieverConfig::default()).unwrap();
        let base = ModelConfig { embed_dim: 8, hidden_dim: 16, num_heads: 2, ..Default::default() };
        let model = model_config_for(&base, &p.vocab, &corpus);
        let train_cfg = TrainConfig { epochs: 1, ..Default::default() };
        let tune = TuneConfig { configuration: Configuration::GenOnly, budget: 2, epochs: 1, seed: 0 };
        let out = run_configuration(&p, &model, &train_cfg, &tune).unwrap();
        assert_eq!(out.row.lambdas.lambda_k, 0.0);
        assert_eq!(out.row.lambdas.lambda_e, 0.0);
        assert_eq!(out.tune.unwrap().evaluations, 2);
        assert_eq!(out.report.rows.len(), p.test.len());
    }
}
