use super::*;
use crate::corpus::{BOS, EOS};

fn cfg() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        embed_dim: 8,
        hidden_dim: 12,
        num_heads: 2,
        max_src_len: 12,
        max_tgt_len: 8,
        seed: 11,
    }
}

fn seq(ids: &[u32]) -> TokenSequence {
    TokenSequence(ids.to_vec())
}

fn triple() -> TrainingTriple {
    TrainingTriple {
        record_id: "t".into(),
        gen: SeqPair {
            src: seq(&[BOS, 6, 7, 8, 9, EOS]),
            tgt: seq(&[BOS, 8, 9, EOS]),
        },
        ent: SeqPair {
            src: seq(&[BOS, 8, 4, 9, EOS]),
            tgt: seq(&[BOS, 9, EOS]),
        },
        know: SeqPair {
            src: seq(&[BOS, 10, 11, 5, 12, 13, EOS]),
            tgt: seq(&[BOS, 12, 13, 14, EOS]),
        },
    }
}

#[test]
fn logits_shape_and_softmax_rows() {
    let p = init_params::<f64>(&cfg()).unwrap();
    let l = forward_teacher_forced(&p, &[BOS, 6, EOS], &[BOS, EOS]).unwrap();
    assert_eq!(l.shape, [1, 20]);
    let l = forward_teacher_forced(&p, &[BOS, 6, 7, EOS], &[BOS, 9, 10, EOS]).unwrap();
    for r in 0..l.rows() {
        let row = l.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let total: f64 = row.iter().map(|v| (v - max).exp() / z).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn decoder_is_causal() {
    let p = init_params::<f64>(&cfg()).unwrap();
    let src = [BOS, 6, 7, EOS];
    let base = [BOS, 9, 10, 11, 12, EOS];
    let a = forward_teacher_forced(&p, &src, &base).unwrap();
    for j in 1..base.len() - 1 {
        let mut alt = base;
        alt[j] = 15;
        let b = forward_teacher_forced(&p, &src, &alt).unwrap();
        for r in 0..a.rows() {
            if r < j {
                assert_eq!(a.row(r), b.row(r), "row {r} changed when token {j} changed");
            } else if r == j {
                assert_ne!(a.row(r), b.row(r));
            }
        }
    }
}

#[test]
fn pad_source_positions_are_ignored() {
    let p = init_params::<f64>(&cfg()).unwrap();
    let tgt = [BOS, 9, EOS];
    let a = forward_teacher_forced(&p, &[BOS, 6, EOS, 0], &tgt).unwrap();
    let b = forward_teacher_forced(&p, &[BOS, 6, EOS, 0, 0, 0], &tgt).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn over_length_inputs_are_rejected() {
    let p = init_params::<f64>(&cfg()).unwrap();
    let long: Vec<u32> = vec![6; 13];
    assert!(matches!(
        forward_teacher_forced(&p, &long, &[BOS, EOS]),
        Err(Error::SequenceTooLong { what: "source", .. })
    ));
    let long_tgt: Vec<u32> = vec![6; 9];
    assert!(forward_teacher_forced(&p, &[BOS], &long_tgt).is_err());
    assert!(forward_teacher_forced(&p, &[BOS], &[BOS]).is_err());
    assert!(forward_teacher_forced(&p, &[BOS, 25], &[BOS, EOS]).is_err());
}

#[test]
fn loss_examples() {
    let uniform = Tensor::<f64>::zeros(&[2, 4]);
    let l = sequence_loss(&uniform, &[1, 2, 3]).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-12);

    // Id 0 is <pad> and never scored, so the three-way case sits on ids 1..=3
    // with a vanishing logit at id 0: −ln(e / (e + 2)).
    let shifted = Tensor::<f64>::from_vec(&[1, 4], vec![-1e30, 1.0, 0.0, 0.0]);
    let l = sequence_loss(&shifted, &[0, 1]).unwrap();
    assert!((l - 0.551_444_713_932_051_4).abs() < 1e-12, "{l}");
    let pad_only = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 0.0, 0.0]);
    assert_eq!(sequence_loss(&pad_only, &[1, 0]).unwrap(), 0.0);

    let mut big = vec![0.0; 5];
    big[3] = 60.0;
    let sharp = Tensor::<f64>::from_vec(&[1, 5], big);
    assert!(sequence_loss(&sharp, &[1, 3]).unwrap() < 1e-20);

    assert!(matches!(sequence_loss(&uniform, &[1, 2]), Err(Error::Shape(_))));
}

#[test]
fn total_loss_is_the_weighted_sum() {
    let b = LossBreakdown::combine([2.0, 1.0, 0.5], &LambdaTriple::new(0.7, 0.1, 0.4).unwrap());
    assert!((b.l_total - 1.7).abs() < 1e-15);

    let p = init_params::<f64>(&cfg()).unwrap();
    let t = triple();
    let gen_only = total_loss(&p, &t, &LambdaTriple::new(1.0, 0.0, 0.0).unwrap()).unwrap();
    assert_eq!(gen_only.l_total, gen_only.l_gen);
    let half = total_loss(&p, &t, &LambdaTriple::new(0.3, 0.2, 0.1).unwrap()).unwrap();
    let full = total_loss(&p, &t, &LambdaTriple::new(0.6, 0.4, 0.2).unwrap()).unwrap();
    assert!((full.l_total - 2.0 * half.l_total).abs() < 1e-12);
    assert!(LambdaTriple::new(1.2, 0.0, 0.0).is_err());
}

#[test]
fn zero_weights_give_zero_gradient_and_gradients_scale_with_lambda() {
    let p = init_params::<f64>(&cfg()).unwrap();
    let t = triple();
    let (g0, b0) = backward(&p, &t, &LambdaTriple::new(0.0, 0.0, 0.0).unwrap()).unwrap();
    assert_eq!(g0.global_norm(), 0.0);
    assert!(b0.l_gen > 0.0);

    let (g1, _) = backward(&p, &t, &LambdaTriple::new(1.0, 0.0, 0.0).unwrap()).unwrap();
    let (ga, _) = backward(&p, &t, &LambdaTriple::new(0.37, 0.0, 0.0).unwrap()).unwrap();
    for ((_, x), (_, y)) in ga.tensors().into_iter().zip(g1.tensors()) {
        for (a, b) in x.data.iter().zip(&y.data) {
            assert!((a - 0.37 * b).abs() <= 1e-12, "{a} vs {}", 0.37 * b);
        }
    }
}

// Spot check on a handful of coordinates; the full sweep lives in the
// acceptance suite.
#[test]
fn gradient_matches_finite_differences_on_samples() {
    let p = init_params::<f64>(&cfg()).unwrap();
    let t = triple();
    let lam = LambdaTriple::new(0.7, 0.1, 0.4).unwrap();
    let (g, _) = backward(&p, &t, &lam).unwrap();
    let eps = 1e-4;
    let names: Vec<&str> = p.tensors().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = p.tensors()[ti].1.len();
        for idx in [0, len / 2, len - 1] {
            let mut plus = p.clone();
            plus.tensors_mut()[ti].1.data[idx] += eps;
            let mut minus = p.clone();
            minus.tensors_mut()[ti].1.data[idx] -= eps;
            let fd = (total_loss(&plus, &t, &lam).unwrap().l_total
                - total_loss(&minus, &t, &lam).unwrap().l_total)
                / (2.0 * eps);
            let an = g.tensors()[ti].1.data[idx];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!((an - fd).abs() / denom < 1e-4 || (an - fd).abs() < 1e-10, "{name}[{idx}]: {an} vs {fd}");
        }
    }
}

#[test]
fn greedy_decode_contract() {
    let p = init_params::<f64>(&cfg()).unwrap();
    let src = [BOS, 6, 7, EOS];
    let a = greedy_decode(&p, &src, 5).unwrap();
    assert_eq!(a, greedy_decode(&p, &src, 5).unwrap());
    assert_eq!(a[0], BOS);
    assert!(a.len() <= 6);
    let one = greedy_decode(&p, &src, 1).unwrap();
    assert_eq!(one.len(), 2);
    assert_eq!(one[1], a[1]);
    // limited by max_tgt_len - 1 generated tokens
    assert!(greedy_decode(&p, &src, 100).unwrap().len() <= 8);
}

#[test]
fn f32_and_f64_agree_closely() {
    let p64 = init_params::<f64>(&cfg()).unwrap();
    let p32: ModelParams<f32> = p64.cast();
    let t = triple();
    let l64 = forward_teacher_forced(&p64, &t.gen.src, &t.gen.tgt).unwrap();
    let l32 = forward_teacher_forced(&p32, &t.gen.src, &t.gen.tgt).unwrap();
    for (a, b) in l64.data.iter().zip(&l32.data) {
        assert!((a - f64::from(*b)).abs() < 1e-4);
    }
}
