use std::collections::HashMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{tokenize, ClinicalRecord};
use crate::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const ENT: TokenId = 4;
pub const FACT: TokenId = 5;

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<unk>", "<ent>", "<fact>"];

/// A sequence of vocabulary ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn framed(inner: impl IntoIterator<Item = TokenId>) -> Self {
        let mut v = vec![BOS];
        v.extend(inner);
        v.push(EOS);
        TokenSequence(v)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSequence(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Reserved tokens followed by `tokens` in the given order. Duplicates and
    /// reserved names in `tokens` are rejected.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens) {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::InvalidInput(format!("invalid vocabulary token {t:?}")));
            }
            let id = v.id_to_token.len() as TokenId;
            if v.token_to_id.insert(t.clone(), id).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
            v.id_to_token.push(t);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Token strings for `ids`, with padding and sequence framing removed.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK as usize]).to_string())
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        self.decode(ids).join(" ")
    }

    /// File form: one token per line, line number = id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the file form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_atomic(path.as_ref(), self.to_file_string().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::Corrupt {
                kind: "vocabulary",
                message: format!("{}: reserved tokens missing from lines 0-5", path.display()),
            });
        }
        Self::from_tokens(lines[RESERVED.len()..].iter().map(|s| s.to_string()))
    }
}

/// Vocabulary over the findings and impressions of `records`.
pub fn build_vocab(records: &[ClinicalRecord], min_freq: usize) -> Result<Vocab> {
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot build a vocabulary from zero records".into()));
    }
    build_vocab_from_texts(
        records
            .iter()
            .flat_map(|r| [r.findings.as_str(), r.impression.as_str()]),
        min_freq,
    )
}

/// Tokens with frequency >= `min_freq`, by descending frequency then
/// lexicographically.
pub fn build_vocab_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    min_freq: usize,
) -> Result<Vocab> {
    if min_freq == 0 {
        return Err(Error::InvalidInput("min_freq must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t))
}

pub fn encode(text: &str, vocab: &Vocab, add_bos_eos: bool) -> TokenSequence {
    let ids = tokenize(text).iter().map(|t| vocab.id(t)).collect::<Vec<_>>();
    if add_bos_eos {
        TokenSequence::framed(ids)
    } else {
        TokenSequence(ids)
    }
}

/// BOS/EOS framed encoding holding at most `max_len` ids; content is cut
/// before EOS.
pub fn encode_truncated(text: &str, vocab: &Vocab, max_len: usize) -> TokenSequence {
    let budget = max_len.saturating_sub(2);
    TokenSequence::framed(tokenize(text).iter().take(budget).map(|t| vocab.id(t)))
}
