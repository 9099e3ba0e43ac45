//! Findings/impression record corpora: loading, tokenization, splitting and
//! synthesis.

mod synth;
mod vocab;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

pub use synth::{default_kb, generate_synthetic_corpus, FINDINGS_SLOTS};
pub use vocab::{
    build_vocab, build_vocab_from_texts, encode, encode_truncated, TokenId, TokenSequence, Vocab,
    BOS, ENT, EOS, FACT, PAD, RESERVED, UNK,
};

/// One clinical note reduced to its summarization-relevant fields.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub record_id: String,
    #[serde(default)]
    pub procedure_type: String,
    #[serde(default)]
    pub techniques: String,
    #[serde(default)]
    pub indication: String,
    pub findings: String,
    pub impression: String,
}

/// Records that passed the findings/impression filter, plus how many did not.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedRecords {
    pub records: Vec<ClinicalRecord>,
    pub filtered_count: usize,
}

/// Reads a JSONL record file, dropping records whose findings or impression
/// is blank.
pub fn load_records(path: impl AsRef<Path>) -> Result<LoadedRecords> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut filtered_count = 0;
    let mut seen = HashSet::new();

    for (index, (lineno, line)) in text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .enumerate()
    {
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
        let obj = value
            .as_object()
            .ok_or_else(|| schema("expected a JSON object".into()))?;
        let field = |key: &str, required: bool| -> Result<Option<String>> {
            match obj.get(key) {
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(Value::Null) | None if !required => Ok(None),
                None => Err(schema(format!("missing required field `{key}`"))),
                Some(_) => Err(schema(format!("field `{key}` must be a string"))),
            }
        };
        let findings = field("findings", true)?.unwrap_or_default();
        let impression = field("impression", true)?.unwrap_or_default();
        let record_id = field("record_id", false)?.unwrap_or_else(|| format!("line{lineno}"));
        let record = ClinicalRecord {
            procedure_type: field("procedure_type", false)?.unwrap_or_default(),
            techniques: field("techniques", false)?.unwrap_or_default(),
            indication: field("indication", false)?.unwrap_or_default(),
            record_id,
            findings,
            impression,
        };
        if record.findings.trim().is_empty() || record.impression.trim().is_empty() {
            filtered_count += 1;
            continue;
        }
        if !seen.insert(record.record_id.clone()) {
            return Err(schema(format!("duplicate record_id {:?}", record.record_id)));
        }
        records.push(record);
    }
    Ok(LoadedRecords {
        records,
        filtered_count,
    })
}

/// Writes records as JSONL with every field present.
pub fn write_records(path: impl AsRef<Path>, records: &[ClinicalRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Tokenizes and re-joins with single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<ClinicalRecord>,
    pub validation: Vec<ClinicalRecord>,
    pub test: Vec<ClinicalRecord>,
}

/// Seeded shuffle, then the first `train_n`, next `val_n` and next `test_n`
/// records. Leftover records are left out.
pub fn split_corpus(
    records: &[ClinicalRecord],
    train_n: usize,
    val_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<CorpusSplit> {
    let wanted = train_n + val_n + test_n;
    if wanted > records.len() {
        return Err(Error::InvalidInput(format!(
            "split asks for {wanted} records but the corpus has {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| -> Vec<ClinicalRecord> {
        order[range].iter().map(|&i| records[i].clone()).collect()
    };
    Ok(CorpusSplit {
        train: take(0..train_n),
        validation: take(train_n..train_n + val_n),
        test: take(train_n + val_n..wanted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Mild Cardiomegaly, no effusion."),
            ["mild", "cardiomegaly", "no", "effusion"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("EF 45-50%"), ["ef", "45", "50"]);
        assert_eq!(tokenize("  --  "), Vec::<String>::new());
    }

    #[test]
    fn load_filters_blank_impressions() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "r.jsonl",
            concat!(
                r#"{"record_id":"r1","findings":"mild cardiomegaly","impression":""}"#,
                "\n",
                r#"{"record_id":"r2","findings":"clear lungs","impression":"no acute disease"}"#,
                "\n"
            ),
        );
        let loaded = load_records(&p).unwrap();
        assert_eq!(loaded.filtered_count, 1);
        assert_eq!(loaded.records.len(), 1);
        let r = &loaded.records[0];
        assert_eq!(r.record_id, "r2");
        assert_eq!(r.findings, "clear lungs");
        assert_eq!(r.impression, "no acute disease");
        assert_eq!(r.procedure_type, "");
    }

    #[test]
    fn load_ten_lines_three_filtered() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for i in 0..10 {
            let imp = if i % 3 == 1 { "   " } else { "ok" };
            body.push_str(&format!(
                "{{\"record_id\":\"r{i}\",\"findings\":\"f {i}\",\"impression\":\"{imp}\"}}\n"
            ));
        }
        let loaded = load_records(write(&dir, "r.jsonl", &body)).unwrap();
        assert_eq!(loaded.records.len(), 7);
        assert_eq!(loaded.filtered_count, 3);
        let ids: Vec<_> = loaded.records.iter().map(|r| r.record_id.as_str()).collect();
        assert_eq!(ids, ["r0", "r2", "r3", "r5", "r6", "r8", "r9"]);
    }

    #[test]
    fn load_errors_name_their_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bad.jsonl",
            "{\"findings\":\"a\",\"impression\":\"b\"}\n{not json\n",
        );
        match load_records(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let p = write(
            &dir,
            "schema.jsonl",
            "{\"findings\":\"a\",\"impression\":\"b\"}\n{\"findings\":\"a\"}\n",
        );
        match load_records(&p) {
            Err(Error::Schema { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected schema error, got {other:?}"),
        }
        assert!(matches!(
            load_records(dir.path().join("missing.jsonl")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn split_sizes_and_degenerate_case() {
        let records: Vec<_> = (0..20)
            .map(|i| ClinicalRecord {
                record_id: format!("r{i}"),
                procedure_type: String::new(),
                techniques: String::new(),
                indication: String::new(),
                findings: "f".into(),
                impression: "i".into(),
            })
            .collect();
        let s = split_corpus(&records, 20, 0, 0, 3).unwrap();
        let mut ids: Vec<_> = s.train.iter().map(|r| r.record_id.clone()).collect();
        ids.sort();
        let mut all: Vec<_> = records.iter().map(|r| r.record_id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);
        assert!(s.validation.is_empty() && s.test.is_empty());

        let a = split_corpus(&records, 10, 5, 5, 1).unwrap();
        let b = split_corpus(&records, 10, 5, 5, 2).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        assert_ne!(a.train, b.train);
        assert!(split_corpus(&records, 10, 6, 5, 1).is_err());
    }
}
