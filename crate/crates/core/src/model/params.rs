use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 32,
            hidden_dim: 64,
            num_heads: 4,
            max_src_len: 256,
            max_tgt_len: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("max_src_len", self.max_src_len),
            ("max_tgt_len", self.max_tgt_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.vocab_size < crate::corpus::RESERVED.len() {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} is smaller than the reserved token count",
                self.vocab_size
            )));
        }
        if self.max_tgt_len < 2 {
            return Err(Error::InvalidConfig("max_tgt_len must be at least 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Multi-head attention projections, `d × d` each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attention<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock<T> {
    pub ln_attn: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln_ffn: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub ln_out: LayerNorm<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderBlock<T> {
    pub ln_self: LayerNorm<T>,
    pub self_attn: Attention<T>,
    pub ln_cross: LayerNorm<T>,
    pub cross_attn: Attention<T>,
    pub ln_ffn: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub ln_out: LayerNorm<T>,
}

/// The one parameter set shared by the summary, entity and fact tasks.
///
/// `embedding` (`vocab × d`) embeds encoder and decoder inputs and, transposed,
/// projects decoder states to vocabulary logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub embedding: Tensor<T>,
    pub out_bias: Tensor<T>,
    pub encoder: EncoderBlock<T>,
    pub decoder: DecoderBlock<T>,
}

macro_rules! tensor_list {
    ($s:ident, $($amp:tt)+) => {
        vec![
            ("embedding", $($amp)+ $s.embedding),
            ("out_bias", $($amp)+ $s.out_bias),
            ("encoder.ln_attn.gain", $($amp)+ $s.encoder.ln_attn.gain),
            ("encoder.ln_attn.bias", $($amp)+ $s.encoder.ln_attn.bias),
            ("encoder.attn.wq", $($amp)+ $s.encoder.attn.wq),
            ("encoder.attn.wk", $($amp)+ $s.encoder.attn.wk),
            ("encoder.attn.wv", $($amp)+ $s.encoder.attn.wv),
            ("encoder.attn.wo", $($amp)+ $s.encoder.attn.wo),
            ("encoder.ln_ffn.gain", $($amp)+ $s.encoder.ln_ffn.gain),
            ("encoder.ln_ffn.bias", $($amp)+ $s.encoder.ln_ffn.bias),
            ("encoder.ffn.w1", $($amp)+ $s.encoder.ffn.w1),
            ("encoder.ffn.b1", $($amp)+ $s.encoder.ffn.b1),
            ("encoder.ffn.w2", $($amp)+ $s.encoder.ffn.w2),
            ("encoder.ffn.b2", $($amp)+ $s.encoder.ffn.b2),
            ("encoder.ln_out.gain", $($amp)+ $s.encoder.ln_out.gain),
            ("encoder.ln_out.bias", $($amp)+ $s.encoder.ln_out.bias),
            ("decoder.ln_self.gain", $($amp)+ $s.decoder.ln_self.gain),
            ("decoder.ln_self.bias", $($amp)+ $s.decoder.ln_self.bias),
            ("decoder.self_attn.wq", $($amp)+ $s.decoder.self_attn.wq),
            ("decoder.self_attn.wk", $($amp)+ $s.decoder.self_attn.wk),
            ("decoder.self_attn.wv", $($amp)+ $s.decoder.self_attn.wv),
            ("decoder.self_attn.wo", $($amp)+ $s.decoder.self_attn.wo),
            ("decoder.ln_cross.gain", $($amp)+ $s.decoder.ln_cross.gain),
            ("decoder.ln_cross.bias", $($amp)+ $s.decoder.ln_cross.bias),
            ("decoder.cross_attn.wq", $($amp)+ $s.decoder.cross_attn.wq),
            ("decoder.cross_attn.wk", $($amp)+ $s.decoder.cross_attn.wk),
            ("decoder.cross_attn.wv", $($amp)+ $s.decoder.cross_attn.wv),
            ("decoder.cross_attn.wo", $($amp)+ $s.decoder.cross_attn.wo),
            ("decoder.ln_ffn.gain", $($amp)+ $s.decoder.ln_ffn.gain),
            ("decoder.ln_ffn.bias", $($amp)+ $s.decoder.ln_ffn.bias),
            ("decoder.ffn.w1", $($amp)+ $s.decoder.ffn.w1),
            ("decoder.ffn.b1", $($amp)+ $s.decoder.ffn.b1),
            ("decoder.ffn.w2", $($amp)+ $s.decoder.ffn.w2),
            ("decoder.ffn.b2", $($amp)+ $s.decoder.ffn.b2),
            ("decoder.ln_out.gain", $($amp)+ $s.decoder.ln_out.gain),
            ("decoder.ln_out.bias", $($amp)+ $s.decoder.ln_out.bias),
        ]
    };
}

fn layer_norm<T: Scalar>(d: usize) -> LayerNorm<T> {
    LayerNorm {
        gain: Tensor::filled(&[d], T::one()),
        bias: Tensor::zeros(&[d]),
    }
}

fn attention<T: Scalar>(d: usize) -> Attention<T> {
    Attention {
        wq: Tensor::zeros(&[d, d]),
        wk: Tensor::zeros(&[d, d]),
        wv: Tensor::zeros(&[d, d]),
        wo: Tensor::zeros(&[d, d]),
    }
}

fn feed_forward<T: Scalar>(d: usize, h: usize) -> FeedForward<T> {
    FeedForward {
        w1: Tensor::zeros(&[d, h]),
        b1: Tensor::zeros(&[h]),
        w2: Tensor::zeros(&[h, d]),
        b2: Tensor::zeros(&[d]),
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Weight matrices zero, layer-norm gains one. Also the shape of a
    /// gradient buffer, after [`ModelParams::zero_`].
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        Ok(ModelParams {
            config: config.clone(),
            embedding: Tensor::zeros(&[v, d]),
            out_bias: Tensor::zeros(&[v]),
            encoder: EncoderBlock {
                ln_attn: layer_norm(d),
                attn: attention(d),
                ln_ffn: layer_norm(d),
                ffn: feed_forward(d, h),
                ln_out: layer_norm(d),
            },
            decoder: DecoderBlock {
                ln_self: layer_norm(d),
                self_attn: attention(d),
                ln_cross: layer_norm(d),
                cross_attn: attention(d),
                ln_ffn: layer_norm(d),
                ffn: feed_forward(d, h),
                ln_out: layer_norm(d),
            },
        })
    }

    /// A zero-valued buffer with this parameter set's shapes.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_();
        g
    }

    pub fn zero_(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Every tensor with its stable name, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        tensor_list!(self, &)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        tensor_list!(self, &mut)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config).expect("config already validated");
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> T {
        self.tensors()
            .iter()
            .map(|(_, t)| t.sum_squares())
            .sum::<T>()
            .sqrt()
    }
}

fn fan_in(name: &str, shape: &[usize]) -> Option<usize> {
    match (name, shape) {
        ("embedding", [_, d]) => Some(*d),
        (_, [rows, _]) => Some(*rows),
        _ => None,
    }
}

/// Matrices uniform in `±1/√fan_in`; vectors (biases, layer-norm) at their
/// neutral values.
pub fn init_params<T: Scalar>(config: &ModelConfig) -> Result<ModelParams<T>> {
    let mut params = ModelParams::<T>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for (name, t) in params.tensors_mut() {
        if let Some(fan) = fan_in(name, &t.shape) {
            let bound = 1.0 / (fan as f64).sqrt();
            for v in t.data.iter_mut() {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            embed_dim: 8,
            hidden_dim: 12,
            num_heads: 2,
            max_src_len: 16,
            max_tgt_len: 8,
            seed: 7,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params::<f64>(&cfg()).unwrap();
        let b = init_params::<f64>(&cfg()).unwrap();
        assert_eq!(a, b);
        let other = init_params::<f64>(&ModelConfig { seed: 8, ..cfg() }).unwrap();
        assert_ne!(a.embedding, other.embedding);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let bad = ModelConfig {
            num_heads: 3,
            ..cfg()
        };
        assert!(matches!(init_params::<f64>(&bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn layer_norm_gains_start_at_one() {
        let p = init_params::<f32>(&cfg()).unwrap();
        for (name, t) in p.tensors() {
            if name.ends_with(".gain") {
                assert!(t.data.iter().all(|&g| g == 1.0), "{name}");
            }
            if name.ends_with(".bias") || name == "out_bias" || name.ends_with(".b1") {
                assert!(t.data.iter().all(|&g| g == 0.0), "{name}");
            }
        }
        let bound = 1.0 / (8f32).sqrt();
        assert!(p.encoder.attn.wq.data.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn names_are_unique_and_no_task_specific_tensors() {
        let p = init_params::<f64>(&cfg()).unwrap();
        let names: Vec<_> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        for task in ["gen", "ent", "know", "fact", "entity"] {
            assert!(names.iter().all(|n| !n.contains(task)));
        }
    }
}
