use super::layers::{
    attention, attention_backward, feed_forward, feed_forward_backward, layer_norm,
    layer_norm_backward, AttnCache, FfnCache, LnCache, Mask,
};
use super::{LambdaTriple, LossBreakdown, ModelParams, SeqPair, Task, Tensor, TrainingTriple};
use crate::corpus::{TokenId, TokenSequence, BOS, EOS, PAD};
use crate::linalg::{add, add_assign, add_at_b, add_col_sums, matmul, matmul_a_bt};
use crate::{Error, Result, Scalar};

fn sinusoid<T: Scalar>(pos: usize, d: usize) -> Vec<T> {
    (0..d)
        .map(|j| {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

fn embed<T: Scalar>(params: &ModelParams<T>, ids: &[TokenId]) -> Vec<T> {
    let d = params.config.embed_dim;
    let scale = T::of((d as f64).sqrt());
    let mut x = Vec::with_capacity(ids.len() * d);
    for (pos, &id) in ids.iter().enumerate() {
        let row = params.embedding.row(id as usize);
        x.extend(row.iter().zip(sinusoid::<T>(pos, d)).map(|(&e, p)| e * scale + p));
    }
    x
}

fn embed_backward<T: Scalar>(g: &mut ModelParams<T>, ids: &[TokenId], dx: &[T]) {
    let d = g.config.embed_dim;
    let scale = T::of((d as f64).sqrt());
    for (pos, &id) in ids.iter().enumerate() {
        let row = g.embedding.row_mut(id as usize);
        for (e, &v) in row.iter_mut().zip(&dx[pos * d..(pos + 1) * d]) {
            *e += v * scale;
        }
    }
}

pub(crate) struct Encoded<T> {
    src: Vec<TokenId>,
    key_valid: Vec<bool>,
    memory: Vec<T>,
    x0: Vec<T>,
    ln_attn: LnCache<T>,
    attn: AttnCache<T>,
    ln_ffn: LnCache<T>,
    ffn: FfnCache<T>,
    ln_out: LnCache<T>,
}

pub(crate) struct Decoded<T> {
    tgt_in: Vec<TokenId>,
    /// `positions × vocab`
    logits: Vec<T>,
    z: Vec<T>,
    ln_self: LnCache<T>,
    self_attn: AttnCache<T>,
    ln_cross: LnCache<T>,
    cross_attn: AttnCache<T>,
    ln_ffn: LnCache<T>,
    ffn: FfnCache<T>,
    ln_out: LnCache<T>,
}

fn check_ids<T: Scalar>(params: &ModelParams<T>, ids: &[TokenId], what: &str) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= params.config.vocab_size) {
        Some(id) => Err(Error::InvalidInput(format!(
            "{what} token id {id} is outside the vocabulary of {}",
            params.config.vocab_size
        ))),
        None => Ok(()),
    }
}

pub(crate) fn encode<T: Scalar>(params: &ModelParams<T>, src: &[TokenId]) -> Result<Encoded<T>> {
    let cfg = &params.config;
    if src.is_empty() {
        return Err(Error::InvalidInput("source sequence is empty".into()));
    }
    if src.len() > cfg.max_src_len {
        return Err(Error::SequenceTooLong {
            what: "source",
            len: src.len(),
            max: cfg.max_src_len,
        });
    }
    check_ids(params, src, "source")?;
    let (d, heads) = (cfg.embed_dim, cfg.num_heads);
    let enc = &params.encoder;
    let key_valid: Vec<bool> = src.iter().map(|&t| t != PAD).collect();

    let x0 = embed(params, src);
    let (a, ln_attn) = layer_norm(&x0, d, &enc.ln_attn);
    let (att, attn) = attention(&enc.attn, &a, &a, d, heads, Mask::Keys(&key_valid));
    let x1 = add(&x0, &att);
    let (b, ln_ffn) = layer_norm(&x1, d, &enc.ln_ffn);
    let (ff, ffn) = feed_forward(&enc.ffn, &b, d);
    let x2 = add(&x1, &ff);
    let (memory, ln_out) = layer_norm(&x2, d, &enc.ln_out);
    Ok(Encoded {
        src: src.to_vec(),
        key_valid,
        memory,
        x0,
        ln_attn,
        attn,
        ln_ffn,
        ffn,
        ln_out,
    })
}

fn encode_backward<T: Scalar>(
    params: &ModelParams<T>,
    e: &Encoded<T>,
    dmemory: &[T],
    g: &mut ModelParams<T>,
) {
    let (d, heads) = (params.config.embed_dim, params.config.num_heads);
    let enc = &params.encoder;
    let ge = &mut g.encoder;
    let dx2 = layer_norm_backward(dmemory, d, &e.ln_out, &enc.ln_out, &mut ge.ln_out);
    let db = feed_forward_backward(&dx2, d, &e.ffn, &enc.ffn, &mut ge.ffn);
    let mut dx1 = layer_norm_backward(&db, d, &e.ln_ffn, &enc.ln_ffn, &mut ge.ln_ffn);
    add_assign(&mut dx1, &dx2);
    let (mut da, dkv) = attention_backward(&dx1, d, heads, &e.attn, &enc.attn, &mut ge.attn);
    add_assign(&mut da, &dkv);
    let mut dx0 = layer_norm_backward(&da, d, &e.ln_attn, &enc.ln_attn, &mut ge.ln_attn);
    add_assign(&mut dx0, &dx1);
    debug_assert_eq!(e.x0.len(), dx0.len());
    embed_backward(g, &e.src, &dx0);
}

pub(crate) fn decode<T: Scalar>(
    params: &ModelParams<T>,
    enc: &Encoded<T>,
    tgt_in: &[TokenId],
) -> Result<Decoded<T>> {
    let cfg = &params.config;
    if tgt_in.len() + 1 > cfg.max_tgt_len {
        return Err(Error::SequenceTooLong {
            what: "target",
            len: tgt_in.len() + 1,
            max: cfg.max_tgt_len,
        });
    }
    check_ids(params, tgt_in, "target")?;
    let (d, heads, vocab) = (cfg.embed_dim, cfg.num_heads, cfg.vocab_size);
    let dec = &params.decoder;

    let y0 = embed(params, tgt_in);
    let (a, ln_self) = layer_norm(&y0, d, &dec.ln_self);
    let (sa, self_attn) = attention(&dec.self_attn, &a, &a, d, heads, Mask::Causal);
    let y1 = add(&y0, &sa);
    let (c, ln_cross) = layer_norm(&y1, d, &dec.ln_cross);
    let (ca, cross_attn) = attention(
        &dec.cross_attn,
        &c,
        &enc.memory,
        d,
        heads,
        Mask::Keys(&enc.key_valid),
    );
    let y2 = add(&y1, &ca);
    let (e, ln_ffn) = layer_norm(&y2, d, &dec.ln_ffn);
    let (ff, ffn) = feed_forward(&dec.ffn, &e, d);
    let y3 = add(&y2, &ff);
    let (z, ln_out) = layer_norm(&y3, d, &dec.ln_out);
    let mut logits = matmul_a_bt(&z, &params.embedding.data, tgt_in.len(), d, vocab);
    for row in logits.chunks_exact_mut(vocab) {
        add_assign(row, &params.out_bias.data);
    }
    Ok(Decoded {
        tgt_in: tgt_in.to_vec(),
        logits,
        z,
        ln_self,
        self_attn,
        ln_cross,
        cross_attn,
        ln_ffn,
        ffn,
        ln_out,
    })
}

/// Returns the gradient with respect to the encoder memory.
fn decode_backward<T: Scalar>(
    params: &ModelParams<T>,
    dd: &Decoded<T>,
    dlogits: &[T],
    g: &mut ModelParams<T>,
) -> Vec<T> {
    let cfg = &params.config;
    let (d, heads, vocab) = (cfg.embed_dim, cfg.num_heads, cfg.vocab_size);
    let m = dd.tgt_in.len();
    let dec = &params.decoder;

    add_col_sums(&mut g.out_bias.data, dlogits, vocab);
    add_at_b(&mut g.embedding.data, dlogits, &dd.z, m, vocab, d);
    let dz = matmul(dlogits, &params.embedding.data, m, vocab, d);

    let gd = &mut g.decoder;
    let dy3 = layer_norm_backward(&dz, d, &dd.ln_out, &dec.ln_out, &mut gd.ln_out);
    let de = feed_forward_backward(&dy3, d, &dd.ffn, &dec.ffn, &mut gd.ffn);
    let mut dy2 = layer_norm_backward(&de, d, &dd.ln_ffn, &dec.ln_ffn, &mut gd.ln_ffn);
    add_assign(&mut dy2, &dy3);
    let (dc, dmemory) =
        attention_backward(&dy2, d, heads, &dd.cross_attn, &dec.cross_attn, &mut gd.cross_attn);
    let mut dy1 = layer_norm_backward(&dc, d, &dd.ln_cross, &dec.ln_cross, &mut gd.ln_cross);
    add_assign(&mut dy1, &dy2);
    let (mut da, dkv) =
        attention_backward(&dy1, d, heads, &dd.self_attn, &dec.self_attn, &mut gd.self_attn);
    add_assign(&mut da, &dkv);
    let mut dy0 = layer_norm_backward(&da, d, &dd.ln_self, &dec.ln_self, &mut gd.ln_self);
    add_assign(&mut dy0, &dy1);
    embed_backward(g, &dd.tgt_in, &dy0);
    dmemory
}

fn check_target(tgt: &[TokenId]) -> Result<()> {
    if tgt.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "target needs at least 2 tokens, got {}",
            tgt.len()
        )));
    }
    Ok(())
}

/// Next-token logits for every target prefix: row `j` scores `tgt[j + 1]`
/// given `src` and `tgt[..=j]`.
pub fn forward_teacher_forced<T: Scalar>(
    params: &ModelParams<T>,
    src: &[TokenId],
    tgt: &[TokenId],
) -> Result<Tensor<T>> {
    check_target(tgt)?;
    if tgt.len() > params.config.max_tgt_len {
        return Err(Error::SequenceTooLong {
            what: "target",
            len: tgt.len(),
            max: params.config.max_tgt_len,
        });
    }
    let enc = encode(params, src)?;
    let dec = decode(params, &enc, &tgt[..tgt.len() - 1])?;
    Ok(Tensor::from_vec(
        &[tgt.len() - 1, params.config.vocab_size],
        dec.logits,
    ))
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
/// Positions whose gold token is `<pad>` are skipped.
fn cross_entropy<T: Scalar>(logits: &[T], vocab: usize, gold: &[TokenId], want_grad: bool) -> (T, Vec<T>) {
    let valid = gold.iter().filter(|&&t| t != PAD).count();
    let mut grad = if want_grad { vec![T::zero(); logits.len()] } else { Vec::new() };
    if valid == 0 {
        return (T::zero(), grad);
    }
    let inv_n = T::one() / T::of(valid as f64);
    let mut total = T::zero();
    for (j, &g) in gold.iter().enumerate() {
        if g == PAD {
            continue;
        }
        let row = &logits[j * vocab..(j + 1) * vocab];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[g as usize];
        if want_grad {
            let grow = &mut grad[j * vocab..(j + 1) * vocab];
            for (gv, &v) in grow.iter_mut().zip(row) {
                *gv = (v - lse).exp() * inv_n;
            }
            grow[g as usize] -= inv_n;
        }
    }
    (total * inv_n, grad)
}

/// `-(1/n) Σ log P(t_k | t_<k, src)` over the non-pad target positions.
pub fn sequence_loss<T: Scalar>(logits: &Tensor<T>, tgt: &[TokenId]) -> Result<T> {
    if tgt.is_empty() || logits.rows() != tgt.len() - 1 {
        return Err(Error::Shape(format!(
            "{} logit rows for a target of length {}",
            logits.rows(),
            tgt.len()
        )));
    }
    if let Some(&bad) = tgt[1..].iter().find(|&&t| t as usize >= logits.cols()) {
        return Err(Error::InvalidInput(format!("target id {bad} outside logits width")));
    }
    Ok(cross_entropy(&logits.data, logits.cols(), &tgt[1..], false).0)
}

/// Loss of one task; when `weight` is nonzero also adds `weight * ∂loss/∂θ`
/// into `grads`.
pub(crate) fn task_loss<T: Scalar>(
    params: &ModelParams<T>,
    pair: &SeqPair,
    weight: T,
    grads: Option<&mut ModelParams<T>>,
) -> Result<T> {
    check_target(&pair.tgt)?;
    let enc = encode(params, &pair.src)?;
    let dec = decode(params, &enc, &pair.tgt[..pair.tgt.len() - 1])?;
    let vocab = params.config.vocab_size;
    let backprop = grads.is_some() && weight != T::zero();
    let (loss, mut dlogits) = cross_entropy(&dec.logits, vocab, &pair.tgt[1..], backprop);
    if let (true, Some(g)) = (backprop, grads) {
        dlogits.iter_mut().for_each(|v| *v *= weight);
        let dmemory = decode_backward(params, &dec, &dlogits, g);
        encode_backward(params, &enc, &dmemory, g);
    }
    Ok(loss)
}

/// Per-task losses and their weighted sum, without gradients.
pub fn total_loss<T: Scalar>(
    params: &ModelParams<T>,
    triple: &TrainingTriple,
    lambdas: &LambdaTriple,
) -> Result<LossBreakdown> {
    let mut losses = [0.0; 3];
    for (slot, task) in losses.iter_mut().zip(Task::ALL) {
        *slot = task_loss(params, triple.pair(task), T::zero(), None)?.as_f64();
    }
    Ok(LossBreakdown::combine(losses, lambdas))
}

/// Adds `scale * ∂L_total/∂θ` into `grads` and returns the loss breakdown.
/// Zero-weight tasks are evaluated but not differentiated.
pub fn accumulate_gradients<T: Scalar>(
    params: &ModelParams<T>,
    triple: &TrainingTriple,
    lambdas: &LambdaTriple,
    scale: T,
    grads: &mut ModelParams<T>,
) -> Result<LossBreakdown> {
    let mut losses = [0.0; 3];
    for (slot, task) in losses.iter_mut().zip(Task::ALL) {
        let w = T::of(lambdas.weight(task)) * scale;
        *slot = task_loss(params, triple.pair(task), w, Some(grads))?.as_f64();
    }
    Ok(LossBreakdown::combine(losses, lambdas))
}

/// Exact gradient of `L_total` with respect to every parameter.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    triple: &TrainingTriple,
    lambdas: &LambdaTriple,
) -> Result<(ModelParams<T>, LossBreakdown)> {
    let mut grads = params.zeros_like();
    let breakdown = accumulate_gradients(params, triple, lambdas, T::one(), &mut grads)?;
    Ok((grads, breakdown))
}

/// Greedy decoding from `<bos>`: appends the arg-max token (smallest id on
/// ties) until `<eos>` or `max_len` generated tokens. The output starts with
/// `<bos>`. Generation also stops at the model's target length limit.
pub fn greedy_decode<T: Scalar>(
    params: &ModelParams<T>,
    src: &[TokenId],
    max_len: usize,
) -> Result<TokenSequence> {
    let enc = encode(params, src)?;
    let vocab = params.config.vocab_size;
    let budget = max_len.min(params.config.max_tgt_len - 1);
    let mut out = vec![BOS];
    for _ in 0..budget {
        let dec = decode(params, &enc, &out)?;
        let last = &dec.logits[(out.len() - 1) * vocab..out.len() * vocab];
        let mut best = 0;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        out.push(best as TokenId);
        if best as TokenId == EOS {
            break;
        }
    }
    Ok(TokenSequence(out))
}
