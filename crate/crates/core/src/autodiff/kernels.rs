//! Slice-level loops behind the tape primitives. No shape checks here;
//! callers validate.

use crate::real::Real;

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `out[n×m] += a[n×k] · b[k×m]`
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(av, &b[p * m..(p + 1) * m], orow);
            }
        }
    }
}

/// `out[k×m] += aᵀ · b` for `a[n×k]`, `b[n×m]`.
pub(crate) fn matmul_at_b_acc<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(av, brow, &mut out[p * m..(p + 1) * m]);
            }
        }
    }
}

/// `out[n×k] += a · bᵀ` for `a[n×m]`, `b[k×m]`.
pub(crate) fn matmul_a_bt_acc<T: Real>(a: &[T], b: &[T], n: usize, m: usize, k: usize, out: &mut [T]) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] += dot(arow, &b[p * m..(p + 1) * m]);
        }
    }
}

/// Left padding for "same" convolution; the right side takes the remainder.
#[inline]
pub(crate) fn same_pad_left(filter: usize) -> usize {
    (filter - 1) / 2
}

/// Zero same-padded 1-D convolution. `x[t×cin]`, `w[f×cin×cout]`, `b[cout]`.
pub(crate) fn conv1d_forward<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    len: usize,
    cin: usize,
    cout: usize,
    filter: usize,
) -> Vec<T> {
    let pad = same_pad_left(filter);
    let mut out = Vec::with_capacity(len * cout);
    for _ in 0..len {
        out.extend_from_slice(b);
    }
    for t in 0..len {
        let orow = &mut out[t * cout..(t + 1) * cout];
        for f in 0..filter {
            let Some(src) = (t + f).checked_sub(pad).filter(|&s| s < len) else {
                continue;
            };
            let xrow = &x[src * cin..(src + 1) * cin];
            let wf = &w[f * cin * cout..(f + 1) * cin * cout];
            for (ci, &xv) in xrow.iter().enumerate() {
                if xv != T::zero() {
                    axpy(xv, &wf[ci * cout..(ci + 1) * cout], orow);
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dout: &[T],
    len: usize,
    cin: usize,
    cout: usize,
    filter: usize,
    need: [bool; 3],
) -> ConvGrads<T> {
    let pad = same_pad_left(filter);
    let mut dx = need[0].then(|| vec![T::zero(); len * cin]);
    let mut dw = need[1].then(|| vec![T::zero(); filter * cin * cout]);
    let db = need[2].then(|| {
        let mut db = vec![T::zero(); cout];
        for t in 0..len {
            for (acc, &g) in db.iter_mut().zip(&dout[t * cout..(t + 1) * cout]) {
                *acc += g;
            }
        }
        db
    });
    for t in 0..len {
        let grow = &dout[t * cout..(t + 1) * cout];
        for f in 0..filter {
            let Some(src) = (t + f).checked_sub(pad).filter(|&s| s < len) else {
                continue;
            };
            let base = f * cin * cout;
            if let Some(dx) = dx.as_mut() {
                for ci in 0..cin {
                    dx[src * cin + ci] += dot(grow, &w[base + ci * cout..base + (ci + 1) * cout]);
                }
            }
            if let Some(dw) = dw.as_mut() {
                for ci in 0..cin {
                    let xv = x[src * cin + ci];
                    if xv != T::zero() {
                        axpy(xv, grow, &mut dw[base + ci * cout..base + (ci + 1) * cout]);
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
