//! ROUGE and entity-level factual accuracy.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{encode_truncated, tokenize, write_atomic, ClinicalRecord, Vocab};
use crate::model::{greedy_decode, ModelParams};
use crate::ner::{extract_entities, Gazetteer};
use crate::train::Checkpoint;
use crate::{Error, Result, Scalar};

pub const CSV_COLUMNS: [&str; 12] = [
    "r1_p",
    "r1_r",
    "r1_f",
    "r2_p",
    "r2_r",
    "r2_f",
    "rl_p",
    "rl_r",
    "rl_f",
    "precision_target",
    "recall_target",
    "f1_target",
];

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Overlap ratios with the empty-side conventions: a side with no units
    /// scores 0, unless both sides are empty.
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 && ref_total == 0 {
            return RougeScore { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let ratio = |total: usize| if total == 0 { 0.0 } else { overlap as f64 / total as f64 };
        let (precision, recall) = (ratio(cand_total), ratio(ref_total));
        RougeScore { precision, recall, f1: harmonic(precision, recall) }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Result<RougeScore> {
    if n != 1 && n != 2 {
        return Err(Error::InvalidInput(format!("rouge_n supports n = 1 or 2, got {n}")));
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    Ok(RougeScore::from_counts(
        overlap,
        cand.values().sum(),
        refs.values().sum(),
    ))
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactualAccuracy {
    pub precision_target: f64,
    pub recall_target: f64,
    pub f1_target: f64,
}

/// Distinct entity surface forms found in `text`.
pub fn entity_set(text: &str, gaz: &Gazetteer) -> BTreeSet<String> {
    extract_entities(text, gaz).surfaces().into_iter().collect()
}

pub fn entity_factual_accuracy(cand_text: &str, ref_text: &str, gaz: &Gazetteer) -> FactualAccuracy {
    let cand = entity_set(cand_text, gaz);
    let reference = entity_set(ref_text, gaz);
    if cand.is_empty() && reference.is_empty() {
        return FactualAccuracy { precision_target: 1.0, recall_target: 1.0, f1_target: 1.0 };
    }
    let hits = cand.intersection(&reference).count() as f64;
    let ratio = |s: &BTreeSet<String>| if s.is_empty() { 0.0 } else { hits / s.len() as f64 };
    let (p, r) = (ratio(&cand), ratio(&reference));
    FactualAccuracy { precision_target: p, recall_target: r, f1_target: harmonic(p, r) }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub factual: FactualAccuracy,
}

impl Scores {
    pub fn columns(&self) -> [f64; 12] {
        let r = |s: &RougeScore| [s.precision, s.recall, s.f1];
        let [a, b, c] = r(&self.rouge1);
        let [d, e, f] = r(&self.rouge2);
        let [g, h, i] = r(&self.rouge_l);
        let fa = &self.factual;
        [a, b, c, d, e, f, g, h, i, fa.precision_target, fa.recall_target, fa.f1_target]
    }

    fn from_columns(c: [f64; 12]) -> Self {
        let r = |i: usize| RougeScore { precision: c[i], recall: c[i + 1], f1: c[i + 2] };
        Scores {
            rouge1: r(0),
            rouge2: r(3),
            rouge_l: r(6),
            factual: FactualAccuracy {
                precision_target: c[9],
                recall_target: c[10],
                f1_target: c[11],
            },
        }
    }

    /// Every metric for one generated summary against its reference.
    pub fn compute(candidate: &str, reference: &str, gaz: &Gazetteer) -> Self {
        let c = tokenize(candidate);
        let r = tokenize(reference);
        Scores {
            rouge1: rouge_n(&c, &r, 1).expect("n is valid"),
            rouge2: rouge_n(&c, &r, 2).expect("n is valid"),
            rouge_l: rouge_l(&c, &r),
            factual: entity_factual_accuracy(candidate, reference, gaz),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub record_id: String,
    pub candidate: String,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Macro average of every column.
    pub mean: Scores,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("cannot report on an empty test set".into()));
        }
        let mut sums = [0.0; 12];
        for row in &rows {
            for (s, v) in sums.iter_mut().zip(row.scores.columns()) {
                *s += v;
            }
        }
        let n = rows.len() as f64;
        let mean = Scores::from_columns(sums.map(|s| s / n));
        Ok(EvalReport { rows, mean })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("record_id").chain(CSV_COLUMNS))?;
        let rows = self.rows.iter().map(|r| (r.record_id.as_str(), &r.scores));
        for (id, scores) in rows.chain(std::iter::once(("MEAN", &self.mean))) {
            let fields = scores.columns().map(|v| format!("{v:.6}"));
            w.write_record(std::iter::once(id.to_string()).chain(fields))?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv()?.as_bytes())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }
}

/// Greedy summary for one findings text.
pub fn summarize<T: Scalar>(params: &ModelParams<T>, vocab: &Vocab, findings: &str) -> Result<String> {
    let cfg = &params.config;
    let src = encode_truncated(findings, vocab, cfg.max_src_len);
    let out = greedy_decode(params, &src, cfg.max_tgt_len - 1)?;
    Ok(vocab.detokenize(&out))
}

pub fn evaluate_records<T: Scalar>(
    params: &ModelParams<T>,
    records: &[ClinicalRecord],
    gaz: &Gazetteer,
    vocab: &Vocab,
) -> Result<EvalReport> {
    if params.config.vocab_size != vocab.len() {
        return Err(Error::InvalidInput(format!(
            "model vocabulary size {} does not match vocabulary file size {}",
            params.config.vocab_size,
            vocab.len()
        )));
    }
    let rows = records
        .iter()
        .map(|rec| {
            let candidate = summarize(params, vocab, &rec.findings)?;
            let scores = Scores::compute(&candidate, &rec.impression, gaz);
            Ok(EvalRow { record_id: rec.record_id.clone(), candidate, scores })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(rows)
}

pub fn evaluate_corpus(
    checkpoint: &Checkpoint,
    test_records: &[ClinicalRecord],
    gaz: &Gazetteer,
    vocab: &Vocab,
) -> Result<EvalReport> {
    let hash = vocab.hash();
    if checkpoint.vocab_hash != hash {
        return Err(Error::VocabMismatch {
            checkpoint: checkpoint.vocab_hash.clone(),
            vocab: hash,
        });
    }
    evaluate_records(&checkpoint.params, test_records, gaz, vocab)
}
