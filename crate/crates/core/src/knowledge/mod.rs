//! Concept knowledge base: file format, inverted index and BM25 retrieval of
//! facts for entity mentions.

mod snapshot;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{tokenize, TokenSequence, Vocab, FACT};
use crate::ner::{EntityChain, EntityMention};
use crate::{Error, Result};

pub use snapshot::{load_index, save_index, INDEX_FORMAT_VERSION, INDEX_MAGIC};

/// One knowledge-base concept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactRecord {
    pub concept_id: String,
    pub preferred_name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub semantic_type: String,
    #[serde(default)]
    pub definition: String,
    /// Provenance tag such as `UMLS`; not used for retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl FactRecord {
    /// Text indexed for retrieval.
    pub fn document_tokens(&self) -> Vec<String> {
        let mut toks = tokenize(&self.preferred_name);
        for s in &self.synonyms {
            toks.extend(tokenize(s));
        }
        toks.extend(tokenize(&self.semantic_type));
        toks.extend(tokenize(&self.definition));
        toks
    }
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<Vec<FactRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let index = out.len();
        let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            index,
            line: lineno,
            message,
        };
        for key in ["concept_id", "preferred_name"] {
            match value.get(key) {
                Some(Value::String(s)) if !s.trim().is_empty() => {}
                Some(Value::String(_)) => return Err(schema(format!("`{key}` is empty"))),
                _ => return Err(schema(format!("missing required string field `{key}`"))),
            }
        }
        let fact: FactRecord =
            serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
        if let Some(&first) = first_line.get(&fact.concept_id) {
            return Err(Error::DuplicateConcept {
                path: path.to_path_buf(),
                concept_id: fact.concept_id,
                first_line: first,
                second_line: lineno,
            });
        }
        first_line.insert(fact.concept_id.clone(), lineno);
        out.push(fact);
    }
    Ok(out)
}

pub fn write_kb(path: impl AsRef<Path>, kb: &[FactRecord]) -> Result<()> {
    let mut out = Vec::new();
    for f in kb {
        serde_json::to_writer(&mut out, f)?;
        out.push(b'\n');
    }
    crate::corpus::write_atomic(path.as_ref(), &out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    pub(crate) postings: BTreeMap<String, Vec<Posting>>,
    pub(crate) doc_lengths: Vec<u32>,
    pub(crate) concept_ids: Vec<String>,
    avg_doc_length: f64,
}

impl InvertedIndex {
    pub(crate) fn from_parts(
        postings: BTreeMap<String, Vec<Posting>>,
        doc_lengths: Vec<u32>,
        concept_ids: Vec<String>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        InvertedIndex {
            postings,
            doc_lengths,
            concept_ids,
            avg_doc_length,
        }
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn concept_ids(&self) -> &[String] {
        &self.concept_ids
    }

    fn check_kb(&self, kb: &[FactRecord]) {
        debug_assert!(
            kb.len() == self.doc_count()
                && kb.iter().zip(&self.concept_ids).all(|(f, c)| &f.concept_id == c),
            "index was not built from this KB"
        );
    }
}

pub fn build_index(kb: &[FactRecord]) -> Result<InvertedIndex> {
    if kb.is_empty() {
        return Err(Error::InvalidInput("cannot index an empty KB".into()));
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(kb.len());
    for (doc, fact) in kb.iter().enumerate() {
        let toks = fact.document_tokens();
        doc_lengths.push(toks.len() as u32);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in toks {
            *tf.entry(t).or_default() += 1;
        }
        for (term, tf) in tf {
            postings.entry(term).or_default().push(Posting {
                doc: doc as u32,
                tf,
            });
        }
    }
    let concept_ids = kb.iter().map(|f| f.concept_id.clone()).collect();
    Ok(InvertedIndex::from_parts(postings, doc_lengths, concept_ids))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    pub k: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            k: 5,
            bm25_k1: 1.2,
            bm25_b: 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredFact {
    pub fact: FactRecord,
    pub score: f64,
}

/// `ln((N - df + 0.5) / (df + 0.5) + 1)`
pub fn bm25_idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// One query term's contribution to one document's score.
pub fn bm25_term_score(
    idf: f64,
    tf: u32,
    doc_len: u32,
    avg_doc_len: f64,
    cfg: &RetrieverConfig,
) -> f64 {
    let tf = f64::from(tf);
    let norm = 1.0 - cfg.bm25_b + cfg.bm25_b * f64::from(doc_len) / avg_doc_len;
    idf * tf * (cfg.bm25_k1 + 1.0) / (tf + cfg.bm25_k1 * norm)
}

/// Orders by descending score, then ascending concept id.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Top `cfg.k` facts for the mention's surface tokens. Documents scoring zero
/// are never returned.
pub fn query(
    index: &InvertedIndex,
    kb: &[FactRecord],
    mention: &EntityMention,
    cfg: &RetrieverConfig,
) -> Vec<ScoredFact> {
    query_tokens(index, kb, &mention.surface, cfg)
}

pub fn query_tokens(
    index: &InvertedIndex,
    kb: &[FactRecord],
    tokens: &[String],
    cfg: &RetrieverConfig,
) -> Vec<ScoredFact> {
    index.check_kb(kb);
    let n = index.doc_count();
    let mut scores = vec![0.0f64; n];
    let mut touched = Vec::new();
    for term in tokens {
        let postings = index.postings(term);
        if postings.is_empty() {
            continue;
        }
        let idf = bm25_idf(n, postings.len());
        for p in postings {
            let d = p.doc as usize;
            if scores[d] == 0.0 {
                touched.push(d);
            }
            scores[d] += bm25_term_score(
                idf,
                p.tf,
                index.doc_lengths[d],
                index.avg_doc_length,
                cfg,
            );
        }
    }
    let mut hits: Vec<usize> = touched.into_iter().filter(|&d| scores[d] > 0.0).collect();
    hits.sort_by(|&a, &b| {
        rank_order(
            (scores[a], &index.concept_ids[a]),
            (scores[b], &index.concept_ids[b]),
        )
    });
    hits.truncate(cfg.k);
    hits.into_iter()
        .map(|d| ScoredFact {
            fact: kb[d].clone(),
            score: scores[d],
        })
        .collect()
}

/// Query results for every mention in chain order, keeping the first
/// occurrence of each concept.
pub fn retrieve_for_chain(
    index: &InvertedIndex,
    kb: &[FactRecord],
    chain: &EntityChain,
    cfg: &RetrieverConfig,
) -> Vec<FactRecord> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in &chain.mentions {
        for hit in query(index, kb, m, cfg) {
            if seen.insert(hit.fact.concept_id.clone()) {
                out.push(hit.fact);
            }
        }
    }
    out
}

/// `<bos> name definition <fact> name definition ... <eos>`, cut to
/// `max_tokens - 1` ids before EOS.
pub fn linearize_facts(facts: &[FactRecord], vocab: &Vocab, max_tokens: usize) -> TokenSequence {
    let mut seq = vec![crate::corpus::BOS];
    for (i, f) in facts.iter().enumerate() {
        if i > 0 {
            seq.push(FACT);
        }
        seq.extend(tokenize(&f.preferred_name).iter().map(|t| vocab.id(t)));
        seq.extend(tokenize(&f.definition).iter().map(|t| vocab.id(t)));
    }
    seq.truncate(max_tokens.max(2) - 1);
    seq.push(crate::corpus::EOS);
    TokenSequence(seq)
}
