//! Row-major dense kernels over flat slices.

use crate::Scalar;

/// `a[n×k] · b[k×m]`
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[k×m] += a[n×k]ᵀ · b[n×m]`
pub(crate) fn add_at_b<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, k: usize, m: usize) {
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a[n×k] · b[m×k]ᵀ`
pub(crate) fn matmul_a_bt<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    add_a_bt(&mut out, a, b, n, k, m);
    out
}

/// `out[n×m] += a[n×k] · b[m×k]ᵀ`
pub(crate) fn add_a_bt<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * m + j] += s;
        }
    }
}

pub(crate) fn add_assign<T: Scalar>(out: &mut [T], x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += v;
    }
}

pub(crate) fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// `out[m] += Σ_rows x[n×m]`
pub(crate) fn add_col_sums<T: Scalar>(out: &mut [T], x: &[T], m: usize) {
    for row in x.chunks_exact(m) {
        add_assign(out, row);
    }
}
