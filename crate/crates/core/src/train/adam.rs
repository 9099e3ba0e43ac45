use super::TrainConfig;
use crate::model::ModelParams;
use crate::{Error, Result, Scalar};

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. `step` counts from 1.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
    step: u64,
) -> Result<()> {
    if params.config != grads.config || params.config != state.m.config {
        return Err(Error::Shape("parameter, gradient and moment shapes differ".into()));
    }
    if step == 0 {
        return Err(Error::InvalidInput("Adam steps count from 1".into()));
    }
    let b1 = T::of(cfg.adam_beta1);
    let b2 = T::of(cfg.adam_beta2);
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.adam_eps);
    let c1 = T::one() - T::of(cfg.adam_beta1.powf(step as f64));
    let c2 = T::one() - T::of(cfg.adam_beta2.powf(step as f64));
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
            v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
            let mhat = m.data[i] / c1;
            let vhat = v.data[i] / c2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut ModelParams<T>, max_norm: f64) -> T {
    let norm = grads.global_norm();
    let max = T::of(max_norm);
    if norm > max && norm > T::zero() {
        grads.scale(max / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn small() -> ModelParams<f64> {
        init_params(&ModelConfig {
            vocab_size: 8,
            embed_dim: 4,
            hidden_dim: 4,
            num_heads: 2,
            max_src_len: 4,
            max_tgt_len: 4,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = small();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default(), 1).unwrap();
        assert_eq!(p, before);
    }

    // Hand trace on one coordinate: g = 1 at step 1 gives m = 0.1, v = 0.001,
    // m̂ = 1, v̂ = 1, so Δ = lr / (1 + 1e-8). A second identical step gives
    // m = 0.19, v = 0.001999, m̂ = v̂ = 1 again.
    #[test]
    fn single_and_double_step_hand_trace() {
        let mut p = small();
        let start = p.out_bias.data[0];
        let mut g = p.zeros_like();
        g.out_bias.data[0] = 1.0;
        let mut st = AdamState::new(&p);
        let cfg = TrainConfig::default();
        adam_step(&mut p, &g, &mut st, &cfg, 1).unwrap();
        let delta = start - p.out_bias.data[0];
        assert!((delta - 0.000_999_999_990).abs() < 1e-15, "{delta}");
        assert!((st.m.out_bias.data[0] - 0.1).abs() < 1e-15);
        assert!((st.v.out_bias.data[0] - 0.001).abs() < 1e-15);

        adam_step(&mut p, &g, &mut st, &cfg, 2).unwrap();
        assert!((st.m.out_bias.data[0] - 0.19).abs() < 1e-15);
        assert!((st.v.out_bias.data[0] - 0.001_999).abs() < 1e-15);
        let delta2 = start - p.out_bias.data[0];
        assert!((delta2 - 2.0 * 0.000_999_999_990).abs() < 1e-12, "{delta2}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = small();
        let other = init_params::<f64>(&ModelConfig {
            vocab_size: 9,
            ..p.config.clone()
        })
        .unwrap();
        let mut st = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &other, &mut st, &TrainConfig::default(), 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let p = small();
        let mut g = p.clone();
        let pre = clip_global_norm(&mut g, 0.5);
        assert!(pre > 0.5);
        assert!(g.global_norm() <= 0.5 + 1e-9);
        let mut tiny = p.zeros_like();
        tiny.out_bias.data[0] = 0.1;
        clip_global_norm(&mut tiny, 1.0);
        assert_eq!(tiny.out_bias.data[0], 0.1);
    }
}
