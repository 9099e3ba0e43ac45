use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, clip_global_norm, AdamState, Checkpoint, CHECKPOINT_FORMAT_VERSION};
use crate::model::{
    accumulate_gradients, init_params, total_loss, LambdaTriple, LossBreakdown, ModelConfig,
    TrainingTriple,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation `l_total`.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn mean_loss(
    params: &crate::ModelParamsF64,
    triples: &[TrainingTriple],
    lambdas: &LambdaTriple,
) -> Result<LossBreakdown> {
    let items = triples
        .iter()
        .map(|t| total_loss(params, t, lambdas))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&items))
}

/// Mini-batch Adam on `l_total` with a fresh seeded shuffle every epoch.
///
/// Gradients are averaged over the batch and clipped to `grad_clip_norm`
/// before each update. The returned checkpoint is replaced only when the
/// validation loss strictly improves.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    lambdas: &LambdaTriple,
    train_triples: &[TrainingTriple],
    val_triples: &[TrainingTriple],
    vocab_hash: &str,
) -> Result<TrainOutcome> {
    if train_triples.is_empty() || val_triples.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    train_cfg.validate()?;
    lambdas.validate()?;
    let mut params = init_params::<f64>(model_cfg)?;
    let mut state = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..train_triples.len()).collect();
    let mut step = 0u64;
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut seen = Vec::with_capacity(order.len());
        for (batch_no, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            grads.zero_();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let b = accumulate_gradients(&params, &train_triples[i], lambdas, scale, &mut grads)?;
                if !b.l_total.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: batch_no,
                        value: b.l_total,
                    });
                }
                seen.push(b);
            }
            clip_global_norm(&mut grads, train_cfg.grad_clip_norm);
            step += 1;
            adam_step(&mut params, &grads, &mut state, train_cfg, step)?;
        }
        let validation = mean_loss(&params, val_triples, lambdas)?;
        if !validation.l_total.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: usize::MAX,
                value: validation.l_total,
            });
        }
        let improved = best
            .as_ref()
            .is_none_or(|b| validation.l_total < b.best_validation_loss);
        if improved {
            best = Some(Checkpoint {
                format_version: CHECKPOINT_FORMAT_VERSION,
                vocab_hash: vocab_hash.to_string(),
                lambdas: *lambdas,
                params: params.cast(),
                best_validation_loss: validation.l_total,
                epoch_of_best: epoch,
            });
        }
        history.push(EpochRecord {
            epoch,
            train: LossBreakdown::mean(&seen),
            validation,
        });
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch ran"),
        history,
    })
}

/// One JSON object per epoch.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    for rec in history {
        serde_json::to_writer(&mut out, rec)?;
        out.push(b'\n');
    }
    crate::corpus::write_atomic(path.as_ref(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TokenSequence, BOS, EOS};
    use crate::model::SeqPair;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            embed_dim: 8,
            hidden_dim: 16,
            num_heads: 2,
            max_src_len: 8,
            max_tgt_len: 6,
            seed: 5,
        }
    }

    fn triples() -> Vec<TrainingTriple> {
        (0..4u32)
            .map(|i| {
                let pair = |a: u32, b: u32| SeqPair {
                    src: TokenSequence(vec![BOS, 6 + a, 7 + b, EOS]),
                    tgt: TokenSequence(vec![BOS, 6 + b, EOS]),
                };
                TrainingTriple {
                    record_id: format!("t{i}"),
                    gen: pair(i, i),
                    ent: pair(i, 1),
                    know: pair(2, i),
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_initial_parameters() {
        let data = triples();
        let lam = LambdaTriple::new(0.7, 0.1, 0.4).unwrap();
        let tc = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&cfg(), &tc, &lam, &data, &data, "h").unwrap();
        let init = init_params::<f64>(&cfg()).unwrap();
        assert_eq!(out.checkpoint.params, init.cast::<f32>());
        let initial = mean_loss(&init, &data, &lam).unwrap();
        assert_eq!(out.history[0].validation, initial);
    }

    #[test]
    fn best_checkpoint_has_least_validation_loss() {
        let data = triples();
        let lam = LambdaTriple::new(0.7, 0.1, 0.4).unwrap();
        let tc = TrainConfig {
            epochs: 12,
            batch_size: 3,
            learning_rate: 0.02,
            ..TrainConfig::default()
        };
        let out = train(&cfg(), &tc, &lam, &data, &data[..2], "h").unwrap();
        assert_eq!(out.history.len(), 12);
        for rec in &out.history {
            assert!(out.checkpoint.best_validation_loss <= rec.validation.l_total);
        }
        let best = &out.history[out.checkpoint.epoch_of_best - 1];
        assert_eq!(best.validation.l_total, out.checkpoint.best_validation_loss);
        assert!(out.history.last().unwrap().train.l_total < out.history[0].train.l_total);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let lam = LambdaTriple::new(1.0, 0.0, 0.0).unwrap();
        assert!(train(&cfg(), &TrainConfig::default(), &lam, &[], &triples(), "h").is_err());
        assert!(train(&cfg(), &TrainConfig::default(), &lam, &triples(), &[], "h").is_err());
    }
}
