//! Forward passes that keep what their backward passes need.

use super::params::{Attention, FeedForward, LayerNorm};
use crate::linalg::{add_a_bt, add_assign, add_at_b, add_col_sums, matmul, matmul_a_bt};
use crate::Scalar;

const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

pub(crate) fn layer_norm<T: Scalar>(x: &[T], d: usize, p: &LayerNorm<T>) -> (Vec<T>, LnCache<T>) {
    let n = x.len() / d;
    let dt = T::of(d as f64);
    let eps = T::of(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dt;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[i * d + j] = h;
            y[i * d + j] = p.gain.data[j] * h + p.bias.data[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    d: usize,
    cache: &LnCache<T>,
    p: &LayerNorm<T>,
    g: &mut LayerNorm<T>,
) -> Vec<T> {
    let dt = T::of(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for (i, &inv) in cache.inv_std.iter().enumerate() {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            g.gain.data[j] += dyr[j] * xh[j];
            g.bias.data[j] += dyr[j];
            dxhat[j] = dyr[j] * p.gain.data[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 /= dt;
        m2 /= dt;
        for j in 0..d {
            dx[i * d + j] = inv * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Which key positions a query position may attend to.
#[derive(Clone, Copy)]
pub(crate) enum Mask<'a> {
    /// Keys flagged `false` are hidden from every query.
    Keys(&'a [bool]),
    /// Query `i` sees keys `0..=i`.
    Causal,
}

impl Mask<'_> {
    fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            Mask::Keys(valid) => valid[j],
            Mask::Causal => j <= i,
        }
    }
}

pub(crate) struct AttnCache<T> {
    qin: Vec<T>,
    kvin: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads × nq × nk`
    probs: Vec<T>,
    ctx: Vec<T>,
    nq: usize,
    nk: usize,
}

pub(crate) fn attention<T: Scalar>(
    p: &Attention<T>,
    qin: &[T],
    kvin: &[T],
    d: usize,
    heads: usize,
    mask: Mask<'_>,
) -> (Vec<T>, AttnCache<T>) {
    let nq = qin.len() / d;
    let nk = kvin.len() / d;
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let q = matmul(qin, &p.wq.data, nq, d, d);
    let k = matmul(kvin, &p.wk.data, nk, d, d);
    let v = matmul(kvin, &p.wv.data, nk, d, d);
    let mut probs = vec![T::zero(); heads * nq * nk];
    let mut ctx = vec![T::zero(); nq * d];
    let mut scores = vec![T::zero(); nk];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..nq {
            let qi = &q[i * d + cols.start..i * d + cols.end];
            let mut max = T::neg_infinity();
            for (j, s) in scores.iter_mut().enumerate() {
                if mask.allows(i, j) {
                    let kj = &k[j * d + cols.start..j * d + cols.end];
                    *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    max = max.max(*s);
                } else {
                    *s = T::neg_infinity();
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let prow = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let mut total = T::zero();
            for (pj, &s) in prow.iter_mut().zip(&scores) {
                *pj = if s == T::neg_infinity() {
                    T::zero()
                } else {
                    (s - max).exp()
                };
                total += *pj;
            }
            for (j, pj) in prow.iter_mut().enumerate() {
                *pj /= total;
                if *pj != T::zero() {
                    for c in cols.clone() {
                        ctx[i * d + c] += *pj * v[j * d + c];
                    }
                }
            }
        }
    }
    let out = matmul(&ctx, &p.wo.data, nq, d, d);
    let cache = AttnCache {
        qin: qin.to_vec(),
        kvin: kvin.to_vec(),
        q,
        k,
        v,
        probs,
        ctx,
        nq,
        nk,
    };
    (out, cache)
}

/// Returns gradients with respect to the query input and the key/value input.
pub(crate) fn attention_backward<T: Scalar>(
    dout: &[T],
    d: usize,
    heads: usize,
    c: &AttnCache<T>,
    p: &Attention<T>,
    g: &mut Attention<T>,
) -> (Vec<T>, Vec<T>) {
    let (nq, nk) = (c.nq, c.nk);
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    add_at_b(&mut g.wo.data, &c.ctx, dout, nq, d, d);
    let dctx = matmul_a_bt(dout, &p.wo.data, nq, d, d);

    let mut dq = vec![T::zero(); nq * d];
    let mut dk = vec![T::zero(); nk * d];
    let mut dv = vec![T::zero(); nk * d];
    let mut dp = vec![T::zero(); nk];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..nq {
            let prow = &c.probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let dci = &dctx[i * d + cols.start..i * d + cols.end];
            let mut weighted = T::zero();
            for j in 0..nk {
                if prow[j] == T::zero() {
                    dp[j] = T::zero();
                    continue;
                }
                let vj = &c.v[j * d + cols.start..j * d + cols.end];
                dp[j] = dci.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                weighted += prow[j] * dp[j];
                for (off, &dc) in dci.iter().enumerate() {
                    dv[j * d + cols.start + off] += prow[j] * dc;
                }
            }
            for j in 0..nk {
                if prow[j] == T::zero() {
                    continue;
                }
                let ds = prow[j] * (dp[j] - weighted) * scale;
                for col in cols.clone() {
                    dq[i * d + col] += ds * c.k[j * d + col];
                    dk[j * d + col] += ds * c.q[i * d + col];
                }
            }
        }
    }
    add_at_b(&mut g.wq.data, &c.qin, &dq, nq, d, d);
    add_at_b(&mut g.wk.data, &c.kvin, &dk, nk, d, d);
    add_at_b(&mut g.wv.data, &c.kvin, &dv, nk, d, d);
    let dqin = matmul_a_bt(&dq, &p.wq.data, nq, d, d);
    let mut dkvin = matmul_a_bt(&dk, &p.wk.data, nk, d, d);
    add_a_bt(&mut dkvin, &dv, &p.wv.data, nk, d, d);
    (dqin, dkvin)
}

// tanh approximation of GELU; smooth everywhere, which finite-difference
// checks need.
fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let du = c * (T::one() + T::of(3.0) * a * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    (y, dy)
}

pub(crate) struct FfnCache<T> {
    x: Vec<T>,
    act: Vec<T>,
    dact: Vec<T>,
}

pub(crate) fn feed_forward<T: Scalar>(p: &FeedForward<T>, x: &[T], d: usize) -> (Vec<T>, FfnCache<T>) {
    let n = x.len() / d;
    let h = p.b1.len();
    let mut pre = matmul(x, &p.w1.data, n, d, h);
    for row in pre.chunks_exact_mut(h) {
        add_assign(row, &p.b1.data);
    }
    let (act, dact): (Vec<T>, Vec<T>) = pre.iter().map(|&v| gelu(v)).unzip();
    let mut out = matmul(&act, &p.w2.data, n, h, d);
    for row in out.chunks_exact_mut(d) {
        add_assign(row, &p.b2.data);
    }
    (
        out,
        FfnCache {
            x: x.to_vec(),
            act,
            dact,
        },
    )
}

pub(crate) fn feed_forward_backward<T: Scalar>(
    dout: &[T],
    d: usize,
    c: &FfnCache<T>,
    p: &FeedForward<T>,
    g: &mut FeedForward<T>,
) -> Vec<T> {
    let n = dout.len() / d;
    let h = p.b1.len();
    add_at_b(&mut g.w2.data, &c.act, dout, n, h, d);
    add_col_sums(&mut g.b2.data, dout, d);
    let mut dpre = matmul_a_bt(dout, &p.w2.data, n, d, h);
    for (v, &s) in dpre.iter_mut().zip(&c.dact) {
        *v *= s;
    }
    add_at_b(&mut g.w1.data, &c.x, &dpre, n, d, h);
    add_col_sums(&mut g.b1.data, &dpre, h);
    matmul_a_bt(&dpre, &p.w1.data, n, h, d)
}
