//! Binary index snapshot:
//!
//! ```text
//! magic "FSUMINDX" | version u32
//! doc block:      doc_count u32, then per doc (concept id str, length u32)
//! vocabulary:     term_count u32, then term strs in sorted order
//! postings:       per term, count u32 then (doc u32, tf u32) pairs
//! ```
//!
//! Integers are little-endian; strings are a u32 byte length plus UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{InvertedIndex, Posting};
use crate::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"FSUMINDX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn save_index(index: &InvertedIndex, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut out, INDEX_FORMAT_VERSION);
    put_u32(&mut out, index.doc_count() as u32);
    for (id, len) in index.concept_ids.iter().zip(&index.doc_lengths) {
        put_str(&mut out, id);
        put_u32(&mut out, *len);
    }
    put_u32(&mut out, index.postings.len() as u32);
    for term in index.postings.keys() {
        put_str(&mut out, term);
    }
    for list in index.postings.values() {
        put_u32(&mut out, list.len() as u32);
        for p in list {
            put_u32(&mut out, p.doc);
            put_u32(&mut out, p.tf);
        }
    }
    crate::corpus::write_atomic(path.as_ref(), &out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(message: impl Into<String>) -> Error {
        Error::Corrupt {
            kind: "index snapshot",
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Self::corrupt(format!("unexpected end of file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Self::corrupt(e.to_string()))
    }
}

pub fn load_index(path: impl AsRef<Path>) -> Result<InvertedIndex> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8).ok() != Some(INDEX_MAGIC.as_slice()) {
        return Err(Reader::corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != INDEX_FORMAT_VERSION {
        return Err(Error::Version {
            kind: "index snapshot",
            found: version,
            expected: INDEX_FORMAT_VERSION,
        });
    }
    let docs = r.u32()? as usize;
    let mut concept_ids = Vec::with_capacity(docs.min(1 << 20));
    let mut doc_lengths = Vec::with_capacity(docs.min(1 << 20));
    for _ in 0..docs {
        concept_ids.push(r.string()?);
        doc_lengths.push(r.u32()?);
    }
    let terms = r.u32()? as usize;
    let mut names = Vec::with_capacity(terms.min(1 << 20));
    for _ in 0..terms {
        names.push(r.string()?);
    }
    let mut postings = BTreeMap::new();
    for name in names {
        let n = r.u32()? as usize;
        let mut list = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let doc = r.u32()?;
            let tf = r.u32()?;
            if doc as usize >= docs {
                return Err(Reader::corrupt(format!("posting for {name:?} names doc {doc}")));
            }
            list.push(Posting { doc, tf });
        }
        postings.insert(name, list);
    }
    if r.pos != buf.len() {
        return Err(Reader::corrupt("trailing bytes after postings"));
    }
    Ok(InvertedIndex::from_parts(postings, doc_lengths, concept_ids))
}
