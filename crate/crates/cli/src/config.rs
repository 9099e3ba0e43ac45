use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fsum::knowledge::RetrieverConfig;
use fsum::model::{LambdaTriple, ModelConfig};
use fsum::pipeline::{CorpusConfig, Layout, TuneConfig};
use fsum::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub records: PathBuf,
    pub kb: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            records: "records.jsonl".into(),
            kb: "kb.jsonl".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_records: usize,
    pub entity_density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_records: 600, entity_density: 0.5, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub retriever: RetrieverConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tune: TuneConfig,
    pub synth: SynthConfig,
    /// Fixed loss weights for `train`; the configuration preset when unset.
    pub lambdas: Option<LambdaTriple>,
}

impl RunConfig {
    /// Reads the optional TOML file, applies `section.key=value` overrides,
    /// then the global seed.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        if let Some(s) = seed {
            cfg.corpus.seed = s;
            cfg.model.seed = s;
            cfg.train.seed = s;
            cfg.tune.seed = s;
            cfg.synth.seed = s;
        }
        if let Some(l) = &cfg.lambdas {
            l.validate()?;
        }
        Ok(cfg)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.paths.output_dir)
    }
}

fn parse_value(raw: &str) -> Value {
    // Anything that is not a TOML literal is taken as a bare string.
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut Table, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!("override {item:?} is not of the form section.key=value");
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override {item:?} has an empty key segment");
    }
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        let entry = cur.entry(s.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("override {item:?}: {s} is not a section"),
        };
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_seed() {
        let cfg = RunConfig::load(
            None,
            &[
                "retriever.k=3".into(),
                "train.learning_rate=0.01".into(),
                "tune.configuration=dual_moo".into(),
                "paths.output_dir=run one".into(),
            ],
            Some(7),
        )
        .unwrap();
        assert_eq!(cfg.retriever.k, 3);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.tune.configuration, fsum::train::Configuration::DualMoo);
        assert_eq!(cfg.paths.output_dir, PathBuf::from("run one"));
        assert_eq!((cfg.model.seed, cfg.train.seed, cfg.corpus.seed), (7, 7, 7));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_presets() {
        assert!(RunConfig::load(None, &["train.epoch=3".into()], None).is_err());
        assert!(RunConfig::load(None, &["tune.configuration=quad".into()], None).is_err());
        assert!(RunConfig::load(None, &["novalue".into()], None).is_err());
        assert!(RunConfig::load(None, &["lambdas.lambda_gen=2".into()], None).is_err());
    }

    #[test]
    fn file_then_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nepochs = 4\nbatch_size = 2\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &["train.epochs=9".into()], None).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.batch_size), (9, 2));
    }
}
