//! Dictionary-based clinical entity recognition.
//!
//! Surface forms from the knowledge base are matched greedily, longest phrase
//! first, over the shared tokenizer's output. Matching is case-insensitive
//! because the tokenizer lowercases; there is no stemming.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenSequence, Vocab, ENT};
use crate::knowledge::FactRecord;
use crate::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct Gazetteer {
    surface_to_concept: HashMap<String, String>,
    max_phrase_len: usize,
    warnings: Vec<String>,
}

impl Gazetteer {
    pub fn concept(&self, normalized_surface: &str) -> Option<&str> {
        self.surface_to_concept
            .get(normalized_surface)
            .map(String::as_str)
    }

    pub fn max_phrase_len(&self) -> usize {
        self.max_phrase_len
    }

    pub fn len(&self) -> usize {
        self.surface_to_concept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surface_to_concept.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.surface_to_concept.keys().map(String::as_str)
    }

    /// Surface-form collisions resolved while building.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Maps every preferred name and synonym to its concept id. When two concepts
/// share a surface form the smaller concept id keeps it.
pub fn build_gazetteer(kb: &[FactRecord]) -> Result<Gazetteer> {
    if kb.is_empty() {
        return Err(Error::InvalidInput("cannot build a gazetteer from an empty KB".into()));
    }
    let mut gaz = Gazetteer::default();
    for fact in kb {
        for surface in std::iter::once(&fact.preferred_name).chain(&fact.synonyms) {
            let tokens = tokenize(surface);
            if tokens.is_empty() {
                continue;
            }
            let key = tokens.join(" ");
            match gaz.surface_to_concept.get_mut(&key) {
                Some(existing) if *existing == fact.concept_id => {}
                Some(existing) => {
                    let (keep, drop) = if fact.concept_id < *existing {
                        (fact.concept_id.clone(), existing.clone())
                    } else {
                        (existing.clone(), fact.concept_id.clone())
                    };
                    gaz.warnings.push(format!(
                        "surface form {key:?} claimed by {keep} and {drop}; keeping {keep}"
                    ));
                    *existing = keep;
                }
                None => {
                    gaz.max_phrase_len = gaz.max_phrase_len.max(tokens.len());
                    gaz.surface_to_concept.insert(key, fact.concept_id.clone());
                }
            }
        }
    }
    Ok(gaz)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: Vec<String>,
    pub concept_id: String,
    /// Token index of the first surface token.
    pub start: usize,
    /// Exclusive end token index.
    pub end: usize,
}

impl EntityMention {
    pub fn surface_text(&self) -> String {
        self.surface.join(" ")
    }
}

/// Mentions sorted by start with disjoint spans.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityChain {
    pub mentions: Vec<EntityMention>,
}

impl EntityChain {
    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.mentions.iter().map(EntityMention::surface_text).collect()
    }
}

pub fn extract_entities(text: &str, gaz: &Gazetteer) -> EntityChain {
    let tokens = tokenize(text);
    let mut mentions = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        let longest = (1..=gaz.max_phrase_len.min(tokens.len() - pos))
            .rev()
            .find_map(|len| {
                let key = tokens[pos..pos + len].join(" ");
                gaz.concept(&key).map(|c| (len, c.to_string()))
            });
        match longest {
            Some((len, concept_id)) => {
                mentions.push(EntityMention {
                    surface: tokens[pos..pos + len].to_vec(),
                    concept_id,
                    start: pos,
                    end: pos + len,
                });
                pos += len;
            }
            None => pos += 1,
        }
    }
    EntityChain { mentions }
}

/// `<bos> m1 <ent> m2 ... <eos>`.
pub fn linearize_entity_chain(chain: &EntityChain, vocab: &Vocab) -> TokenSequence {
    let mut inner = Vec::new();
    for (i, m) in chain.mentions.iter().enumerate() {
        if i > 0 {
            inner.push(ENT);
        }
        inner.extend(m.surface.iter().map(|t| vocab.id(t)));
    }
    TokenSequence::framed(inner)
}

/// Linearization capped at `max_len` ids, cut before EOS.
pub fn linearize_entity_chain_truncated(
    chain: &EntityChain,
    vocab: &Vocab,
    max_len: usize,
) -> TokenSequence {
    let mut seq = linearize_entity_chain(chain, vocab).0;
    if seq.len() > max_len {
        seq.truncate(max_len.saturating_sub(1));
        seq.push(crate::corpus::EOS);
    }
    TokenSequence(seq)
}
