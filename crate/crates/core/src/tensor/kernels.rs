//! Raw numeric kernels on row-major slices.

use super::Real;

/// `c (m×n) = op(a) · op(b)` (+ `c` when `accumulate`). `a` is stored m×k, or k×m when `trans_a`;
/// `b` is stored k×n, or n×k when `trans_b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        T::gemm(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one (C, H, W) image into a (C·kh·kw) × (ho·wo) column matrix.
/// Output columns `ox` whose input column `ox·stride + kj − pad` lies inside `0..w`.
fn valid_columns(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(g.wo);
    let hi = (g.w + g.pad).saturating_sub(kj).div_ceil(g.stride).clamp(lo, g.wo);
    (lo, hi)
}

pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let opix = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * opix..(row + 1) * opix];
                let (lo, hi) = valid_columns(g, kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, &s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back into an image gradient.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let opix = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * opix..(row + 1) * opix];
                let (lo, hi) = valid_columns(g, kj);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let from = &src[oy * g.wo + lo..oy * g.wo + hi];
                    for (d, &v) in line[first..].iter_mut().step_by(g.stride).zip(from) {
                        *d += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    n: usize,
    weight: &[T],
    c_out: usize,
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let (k, opix) = (g.patch(), g.out_pixels());
    let in_len = g.c_in * g.h * g.w;
    let mut out = vec![T::zero(); n * c_out * opix];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * opix] };
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let col_src: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut cols);
            &cols
        };
        let os = &mut out[s * c_out * opix..(s + 1) * c_out * opix];
        matmul(c_out, k, opix, weight, false, col_src, false, os, false);
        if let Some(b) = bias {
            for (co, row) in os.chunks_mut(opix).enumerate() {
                row.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    out
}

/// Input, weight and bias gradients, each present only when requested.
type ConvGrads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

/// Returns (dx, dweight, dbias) for the requested operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    n: usize,
    weight: &[T],
    c_out: usize,
    g: &ConvGeom,
    dout: &[T],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let (k, opix) = (g.patch(), g.out_pixels());
    let in_len = g.c_in * g.h * g.w;
    let mut dx = need_dx.then(|| vec![T::zero(); n * in_len]);
    let mut dw = need_dw.then(|| vec![T::zero(); c_out * k]);
    let mut db = need_db.then(|| vec![T::zero(); c_out]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * opix] };
    let mut dcols = if need_dx && !g.is_pointwise() { vec![T::zero(); k * opix] } else { Vec::new() };
    for s in 0..n {
        let ds = &dout[s * c_out * opix..(s + 1) * c_out * opix];
        let xs = &x[s * in_len..(s + 1) * in_len];
        if let Some(dw) = dw.as_mut() {
            let col_src: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, &mut cols);
                &cols
            };
            matmul(c_out, opix, k, ds, false, col_src, true, dw, true);
        }
        if let Some(db) = db.as_mut() {
            for (co, row) in ds.chunks(opix).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                matmul(k, c_out, opix, weight, true, ds, false, dxs, false);
            } else {
                matmul(k, c_out, opix, weight, true, ds, false, &mut dcols, false);
                col2im(&dcols, g, dxs);
            }
        }
    }
    (dx, dw, db)
}

/// Row-wise numerically stabilized softmax of an (rows × cols) matrix.
pub fn softmax_rows<T: Real>(logits: &[T], cols: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}
