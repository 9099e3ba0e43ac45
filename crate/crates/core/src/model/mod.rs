//! Shared-parameter transformer encoder-decoder trained on three tasks.
//!
//! One encoder layer and one decoder layer (pre-norm, multi-head attention,
//! GELU feed-forward, fixed sinusoidal positions). The token embedding is tied
//! to the output projection. The summary, entity-chain and fact tasks run
//! through the same parameters; only the input content differs.

mod layers;
mod network;
mod params;
mod tensor;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::{Error, Result};

pub use network::{
    accumulate_gradients, backward, forward_teacher_forced, greedy_decode, sequence_loss,
    total_loss,
};
pub use params::{
    init_params, Attention, DecoderBlock, EncoderBlock, FeedForward, LayerNorm, ModelConfig,
    ModelParams,
};
pub use tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// findings → impression
    Generative,
    /// fact sequence for findings entities → facts for impression entities
    Knowledge,
    /// findings entity chain → impression entity chain
    Entity,
}

impl Task {
    /// Summation order for the weighted total.
    pub const ALL: [Task; 3] = [Task::Generative, Task::Knowledge, Task::Entity];
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqPair {
    pub src: TokenSequence,
    pub tgt: TokenSequence,
}

/// Source/target pairs for the three tasks, all built from one record.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriple {
    #[serde(default)]
    pub record_id: String,
    pub gen: SeqPair,
    pub ent: SeqPair,
    pub know: SeqPair,
}

impl TrainingTriple {
    pub fn pair(&self, task: Task) -> &SeqPair {
        match task {
            Task::Generative => &self.gen,
            Task::Knowledge => &self.know,
            Task::Entity => &self.ent,
        }
    }
}

/// Loss weights `(λ_gen, λ_k, λ_E)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaTriple {
    pub lambda_gen: f64,
    pub lambda_k: f64,
    pub lambda_e: f64,
}

impl LambdaTriple {
    pub fn new(lambda_gen: f64, lambda_k: f64, lambda_e: f64) -> Result<Self> {
        let l = LambdaTriple {
            lambda_gen,
            lambda_k,
            lambda_e,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_gen", self.lambda_gen),
            ("lambda_k", self.lambda_k),
            ("lambda_e", self.lambda_e),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name}={v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn weight(&self, task: Task) -> f64 {
        match task {
            Task::Generative => self.lambda_gen,
            Task::Knowledge => self.lambda_k,
            Task::Entity => self.lambda_e,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lambda_gen, self.lambda_k, self.lambda_e]
    }
}

/// Component losses and `l_total = λ_gen·l_gen + λ_k·l_k + λ_E·l_e`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gen: f64,
    pub l_k: f64,
    pub l_e: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// `losses` in [`Task::ALL`] order.
    pub fn combine(losses: [f64; 3], lambdas: &LambdaTriple) -> Self {
        let [l_gen, l_k, l_e] = losses;
        LossBreakdown {
            l_gen,
            l_k,
            l_e,
            l_total: lambdas.lambda_gen * l_gen + lambdas.lambda_k * l_k + lambdas.lambda_e * l_e,
        }
    }

    /// Component-wise mean.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.l_gen += b.l_gen;
            m.l_k += b.l_k;
            m.l_e += b.l_e;
            m.l_total += b.l_total;
        }
        m.l_gen /= n;
        m.l_k /= n;
        m.l_e /= n;
        m.l_total /= n;
        m
    }
}

#[cfg(test)]
mod tests;
