//! Dense loops shared by forward and backward passes.

use crate::real::Real;

/// Fixed-order dot product with eight partial sums.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * *x;
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], crow);
        }
    }
    c
}

/// `da[m×k] += dc[m×n] · bᵀ`
pub(crate) fn matmul_grad_lhs<T: Real>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] += dot(dcrow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `db[k×n] += aᵀ · dc`
pub(crate) fn matmul_grad_rhs<T: Real>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], dcrow, &mut db[p * n..(p + 1) * n]);
        }
    }
}

/// Geometry of a 1-D convolution over a `[len × c_in]` sequence.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub len: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub causal: bool,
}

impl ConvGeom {
    /// Signed source offset of tap `t`: output frame `l` reads input frame `l + offset(t)`.
    #[inline]
    pub fn offset(&self, t: usize) -> isize {
        let d = self.dilation as isize;
        if self.causal {
            -((self.kernel - 1 - t) as isize) * d
        } else {
            (t as isize - ((self.kernel - 1) / 2) as isize) * d
        }
    }

    /// Output frames whose source frame for tap `t` lies inside the sequence.
    #[inline]
    pub fn valid_range(&self, t: usize) -> std::ops::Range<usize> {
        let off = self.offset(t);
        let len = self.len as isize;
        let lo = (-off).clamp(0, len);
        let hi = (len - off).clamp(0, len);
        lo as usize..hi.max(lo) as usize
    }
}

/// Rearranges `[c_out × c_in × k]` weights to tap-major `[k × c_in × c_out]`.
pub(crate) fn taps_major<T: Real>(w: &[T], g: &ConvGeom) -> Vec<T> {
    let mut wt = vec![T::zero(); w.len()];
    for o in 0..g.c_out {
        for c in 0..g.c_in {
            for t in 0..g.kernel {
                wt[(t * g.c_in + c) * g.c_out + o] = w[(o * g.c_in + c) * g.kernel + t];
            }
        }
    }
    wt
}

pub(crate) fn conv1d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let mut y = vec![T::zero(); g.len * g.c_out];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(g.c_out) {
            row.copy_from_slice(b);
        }
    }
    let wt = taps_major(w, g);
    for t in 0..g.kernel {
        let off = g.offset(t);
        for l in g.valid_range(t) {
            let src = (l as isize + off) as usize;
            let yrow = &mut y[l * g.c_out..(l + 1) * g.c_out];
            for c in 0..g.c_in {
                let wrow = &wt[(t * g.c_in + c) * g.c_out..(t * g.c_in + c + 1) * g.c_out];
                axpy(x[src * g.c_in + c], wrow, yrow);
            }
        }
    }
    y
}

/// Accumulates input, weight and bias gradients of a convolution.
pub(crate) fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(db) = db {
        for row in dy.chunks_exact(g.c_out) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += *v;
            }
        }
    }
    if let Some(dx) = dx {
        let wt = taps_major(w, g);
        for t in 0..g.kernel {
            let off = g.offset(t);
            for l in g.valid_range(t) {
                let src = (l as isize + off) as usize;
                let dyrow = &dy[l * g.c_out..(l + 1) * g.c_out];
                for c in 0..g.c_in {
                    let wrow = &wt[(t * g.c_in + c) * g.c_out..(t * g.c_in + c + 1) * g.c_out];
                    dx[src * g.c_in + c] += dot(dyrow, wrow);
                }
            }
        }
    }
    if let Some(dw) = dw {
        let mut dwt = vec![T::zero(); w.len()];
        for t in 0..g.kernel {
            let off = g.offset(t);
            for l in g.valid_range(t) {
                let src = (l as isize + off) as usize;
                let dyrow = &dy[l * g.c_out..(l + 1) * g.c_out];
                for c in 0..g.c_in {
                    let base = (t * g.c_in + c) * g.c_out;
                    axpy(x[src * g.c_in + c], dyrow, &mut dwt[base..base + g.c_out]);
                }
            }
        }
        for o in 0..g.c_out {
            for c in 0..g.c_in {
                for t in 0..g.kernel {
                    dw[(o * g.c_in + c) * g.kernel + t] += dwt[(t * g.c_in + c) * g.c_out + o];
                }
            }
        }
    }
}

/// Maps every flat index of `out` to the flat index of `input` it reads under broadcasting.
pub(crate) fn broadcast_index(input: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut in_strides = vec![0usize; rank];
    let mut s = 1;
    for a in (0..rank).rev() {
        in_strides[a] = if input[a] == 1 { 0 } else { s };
        s *= input[a];
    }
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    for _ in 0..numel {
        map.push(idx.iter().zip(&in_strides).map(|(i, s)| i * s).sum());
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    map
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
