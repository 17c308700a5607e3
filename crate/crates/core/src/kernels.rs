//! Raw numeric kernels on slices: strided GEMM, im2col convolution and the
//! depthwise special case. Autograd ops in [`crate::ops`] are built on these.
//!
//! Convolution is cross-correlation (no kernel flip):
//! `y[co, oy, ox] = sum_{ci, i, j} w[co, ci, i, j] * x[ci, oy*s - p + i, ox*s - p + j]`
//! with zero fill outside the input.

use rayon::prelude::*;

use crate::tensor::Element;

/// Strided matrix view description: `(row stride, column stride)`.
pub type Strides = (usize, usize);

/// `C <- alpha * A(m x k) * B(k x n) + beta * C` on strided slices.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * sc.0 + (n - 1) * sc.1 < c.len(), "gemm: C out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c[i * sc.0 + j * sc.1];
                *v = if beta == T::zero() { T::zero() } else { *v * beta };
            }
        }
        return;
    }
    assert!((m - 1) * sa.0 + (k - 1) * sa.1 < a.len(), "gemm: A out of bounds");
    assert!((k - 1) * sb.0 + (n - 1) * sb.1 < b.len(), "gemm: B out of bounds");
    // SAFETY: the asserts above bound every strided access.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

/// Row-major strides of an `rows x cols` matrix, optionally read transposed.
#[inline]
pub fn rm(cols: usize) -> Strides {
    (cols, 1)
}

#[inline]
pub fn rm_t(cols: usize) -> Strides {
    (1, cols)
}

/// Geometry of a 2-D convolution over one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Output extents follow `floor((h + 2p - k) / s) + 1`. Returns `None`
    /// when the padded input is smaller than the kernel or the stride is 0.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Option<Self> {
        if stride == 0 || groups == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        if c_in % groups != 0 || c_out % groups != 0 {
            return None;
        }
        Some(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            groups,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.ho * self.wo
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * (self.c_in / self.groups) * self.kh * self.kw
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn patch(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.c_in && self.c_out == self.c_in && self.groups > 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold input channels `[c0, c0 + cin_g)` into `col[patch, ho*wo]`.
fn im2col<T: Element>(g: &ConvGeom, x: &[T], c0: usize, col: &mut [T]) {
    let hw_o = g.ho * g.wo;
    let cin_g = g.cin_g();
    for c in 0..cin_g {
        let xc = &x[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((c * g.kh + i) * g.kw + j) * hw_o..][..hw_o];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `col` back into channels starting at `c0`.
fn col2im<T: Element>(g: &ConvGeom, col: &[T], c0: usize, x: &mut [T]) {
    let hw_o = g.ho * g.wo;
    let cin_g = g.cin_g();
    for c in 0..cin_g {
        let xc = &mut x[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((c * g.kh + i) * g.kw + j) * hw_o..][..hw_o];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Visit the valid runs of a depthwise tap, one per output row, as
/// `(first input index, first output index, count)`. Consecutive outputs of a
/// run read inputs `stride` apart.
#[inline]
fn dw_tap<F: FnMut(usize, usize, usize)>(g: &ConvGeom, i: usize, j: usize, mut f: F) {
    // Contiguous range of ox with a valid ix.
    let lo = if j >= g.pad { 0 } else { (g.pad - j).div_ceil(g.stride) };
    let hi = if g.w + g.pad > j {
        ((g.w - 1 + g.pad - j) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    if lo >= hi {
        return;
    }
    for oy in 0..g.ho {
        let iy = (oy * g.stride + i) as isize - g.pad as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        f(iy as usize * g.w + lo * g.stride + j - g.pad, oy * g.wo + lo, hi - lo);
    }
}

/// `y[k] += a * x[k * stride]` for `k < y.len()`.
#[inline]
fn axpy_strided<T: Element>(y: &mut [T], a: T, x: &[T], stride: usize) {
    if stride == 1 {
        let x = &x[..y.len()];
        for (d, &v) in y.iter_mut().zip(x) {
            *d += a * v;
        }
    } else {
        for (k, d) in y.iter_mut().enumerate() {
            *d += a * x[k * stride];
        }
    }
}

/// `x[k * stride] += a * y[k]` for `k < y.len()`.
#[inline]
fn scatter_axpy_strided<T: Element>(x: &mut [T], a: T, y: &[T], stride: usize) {
    if stride == 1 {
        for (d, &v) in x[..y.len()].iter_mut().zip(y) {
            *d += a * v;
        }
    } else {
        for (k, &v) in y.iter().enumerate() {
            x[k * stride] += a * v;
        }
    }
}

/// `sum_k x[k * stride] * y[k]`, accumulated in eight fixed lanes.
#[inline]
fn dot_strided<T: Element>(x: &[T], y: &[T], stride: usize) -> T {
    let mut lanes = [T::zero(); 8];
    if stride == 1 {
        let x = &x[..y.len()];
        let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
        let (xr, yr) = (xc.remainder(), yc.remainder());
        for (a, b) in xc.zip(yc) {
            for l in 0..8 {
                lanes[l] += a[l] * b[l];
            }
        }
        for (l, (a, b)) in xr.iter().zip(yr).enumerate() {
            lanes[l] += *a * *b;
        }
    } else {
        for (k, &v) in y.iter().enumerate() {
            lanes[k % 8] += x[k * stride] * v;
        }
    }
    lanes.iter().fold(T::zero(), |acc, &v| acc + v)
}

/// Forward convolution of one sample. `y` is overwritten.
pub fn conv_forward<T: Element>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, y: &mut [T]) {
    let hw_o = g.ho * g.wo;
    if g.is_depthwise() {
        y.fill(T::zero());
        let (hw_i, kk) = (g.h * g.w, g.kh * g.kw);
        for c in 0..g.c_in {
            let xc = &x[c * hw_i..(c + 1) * hw_i];
            let yc = &mut y[c * hw_o..(c + 1) * hw_o];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wv = w[c * kk + i * g.kw + j];
                    dw_tap(g, i, j, |xi, yi, n| {
                        axpy_strided(&mut yc[yi..yi + n], wv, &xc[xi..], g.stride)
                    });
                }
            }
        }
    } else {
        let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
        let mut col = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); patch * hw_o]
        };
        for gi in 0..g.groups {
            let wg = &w[gi * cout_g * patch..(gi + 1) * cout_g * patch];
            let yg = &mut y[gi * cout_g * hw_o..(gi + 1) * cout_g * hw_o];
            let colg: &[T] = if g.is_pointwise() {
                &x[gi * cin_g * hw_o..(gi + 1) * cin_g * hw_o]
            } else {
                im2col(g, x, gi * cin_g, &mut col);
                &col
            };
            gemm(
                cout_g,
                patch,
                hw_o,
                T::one(),
                wg,
                rm(patch),
                colg,
                rm(hw_o),
                T::zero(),
                yg,
                rm(hw_o),
            );
        }
    }
    if let Some(b) = bias {
        for (c, yc) in y.chunks_mut(hw_o).enumerate() {
            let bv = b[c];
            yc.iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// Gradient with respect to the input of one sample; `dx` is overwritten.
pub fn conv_backward_data<T: Element>(g: &ConvGeom, w: &[T], dy: &[T], dx: &mut [T]) {
    let hw_o = g.ho * g.wo;
    dx.fill(T::zero());
    if g.is_depthwise() {
        let (hw_i, kk) = (g.h * g.w, g.kh * g.kw);
        for c in 0..g.c_in {
            let dxc = &mut dx[c * hw_i..(c + 1) * hw_i];
            let dyc = &dy[c * hw_o..(c + 1) * hw_o];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wv = w[c * kk + i * g.kw + j];
                    dw_tap(g, i, j, |xi, yi, n| {
                        scatter_axpy_strided(&mut dxc[xi..], wv, &dyc[yi..yi + n], g.stride)
                    });
                }
            }
        }
        return;
    }
    let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
    let mut col = vec![T::zero(); patch * hw_o];
    for gi in 0..g.groups {
        let wg = &w[gi * cout_g * patch..(gi + 1) * cout_g * patch];
        let dyg = &dy[gi * cout_g * hw_o..(gi + 1) * cout_g * hw_o];
        if g.is_pointwise() {
            let dxg = &mut dx[gi * cin_g * hw_o..(gi + 1) * cin_g * hw_o];
            gemm(
                patch,
                cout_g,
                hw_o,
                T::one(),
                wg,
                rm_t(patch),
                dyg,
                rm(hw_o),
                T::zero(),
                dxg,
                rm(hw_o),
            );
        } else {
            gemm(
                patch,
                cout_g,
                hw_o,
                T::one(),
                wg,
                rm_t(patch),
                dyg,
                rm(hw_o),
                T::zero(),
                &mut col,
                rm(hw_o),
            );
            col2im(g, &col, gi * cin_g, dx);
        }
    }
}

/// Accumulate the weight gradient of one sample into `dw`.
pub fn conv_backward_weight<T: Element>(g: &ConvGeom, x: &[T], dy: &[T], dw: &mut [T]) {
    let hw_o = g.ho * g.wo;
    if g.is_depthwise() {
        let (hw_i, kk) = (g.h * g.w, g.kh * g.kw);
        for c in 0..g.c_in {
            let xc = &x[c * hw_i..(c + 1) * hw_i];
            let dyc = &dy[c * hw_o..(c + 1) * hw_o];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let mut acc = T::zero();
                    dw_tap(g, i, j, |xi, yi, n| acc += dot_strided(&xc[xi..], &dyc[yi..yi + n], g.stride));
                    dw[c * kk + i * g.kw + j] += acc;
                }
            }
        }
        return;
    }
    let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * hw_o]
    };
    for gi in 0..g.groups {
        let dwg = &mut dw[gi * cout_g * patch..(gi + 1) * cout_g * patch];
        let dyg = &dy[gi * cout_g * hw_o..(gi + 1) * cout_g * hw_o];
        let colg: &[T] = if g.is_pointwise() {
            &x[gi * cin_g * hw_o..(gi + 1) * cin_g * hw_o]
        } else {
            im2col(g, x, gi * cin_g, &mut col);
            &col
        };
        gemm(
            cout_g,
            hw_o,
            patch,
            T::one(),
            dyg,
            rm(hw_o),
            colg,
            rm_t(hw_o),
            T::one(),
            dwg,
            rm(patch),
        );
    }
}

/// Per-channel sums of `dy` for the bias gradient, accumulated into `db`.
pub fn bias_backward<T: Element>(c_out: usize, hw: usize, dy: &[T], db: &mut [T]) {
    for (c, d) in db.iter_mut().enumerate().take(c_out) {
        *d += dy[c * hw..(c + 1) * hw].iter().copied().sum::<T>();
    }
}

/// Apply `f` to every sample in parallel: `input` and `out` are split into
/// per-sample chunks of `in_len` and `out_len`.
pub fn par_samples<T: Element, F>(input: &[T], in_len: usize, out: &mut [T], out_len: usize, f: F)
where
    F: Fn(&[T], &mut [T]) + Sync + Send,
{
    if in_len == 0 || out_len == 0 {
        return;
    }
    out.par_chunks_mut(out_len)
        .zip(input.par_chunks(in_len))
        .for_each(|(o, i)| f(i, o));
}

/// Weight-gradient accumulation over a batch. Per-sample partials are summed
/// in sample order so the result does not depend on the thread count.
pub fn batched_weight_grad<T: Element, F>(n: usize, len: usize, f: F) -> Vec<T>
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let partials: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut buf = vec![T::zero(); len];
            f(s, &mut buf);
            buf
        })
        .collect();
    let mut total = vec![T::zero(); len];
    for p in &partials {
        for (t, &v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let (cin_g, cout_g) = (g.c_in / g.groups, g.c_out / g.groups);
        let mut y = vec![0.0; g.out_len()];
        for co in 0..g.c_out {
            let grp = co / cout_g;
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut s = 0.0;
                    for ci in 0..cin_g {
                        for i in 0..g.kh {
                            for j in 0..g.kw {
                                let iy = (oy * g.stride + i) as isize - g.pad as isize;
                                let ix = (ox * g.stride + j) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((grp * cin_g + ci) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = w[((co * cin_g + ci) * g.kh + i) * g.kw + j];
                                s += xv * wv;
                            }
                        }
                    }
                    y[(co * g.ho + oy) * g.wo + ox] = s;
                }
            }
        }
        y
    }

    fn rand_vec(n: usize, rng: &mut Prng) -> Vec<f64> {
        (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
    }

    #[test]
    fn gemm_transposed_views() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, 1.0, &a, rm(2), &b, rm(2), 0.0, &mut c, rm(2));
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // A^T B = [[1,3],[2,4]] * B
        gemm(2, 2, 2, 1.0, &a, rm_t(2), &b, rm(2), 0.0, &mut c, rm(2));
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn conv_paths_match_naive_loops() {
        let mut rng = Prng::new(11);
        let cases = [
            // c_in, h, w, c_out, k, stride, pad, groups
            (3, 5, 6, 4, 3, 1, 1, 1),
            (4, 8, 8, 8, 4, 2, 1, 1),
            (3, 4, 4, 3, 3, 1, 1, 3),
            (6, 7, 5, 6, 5, 1, 2, 6),
            (4, 6, 6, 6, 1, 1, 0, 2),
            (2, 6, 6, 4, 3, 2, 0, 2),
            (4, 4, 4, 4, 2, 2, 0, 4),
        ];
        for &(ci, h, w, co, k, s, p, gr) in &cases {
            let g = ConvGeom::new(ci, h, w, co, k, k, s, p, gr).unwrap();
            let x = rand_vec(g.in_len(), &mut rng);
            let wt = rand_vec(g.weight_len(), &mut rng);
            let mut y = vec![0.0; g.out_len()];
            conv_forward(&g, &x, &wt, None, &mut y);
            let want = naive_conv(&g, &x, &wt);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{g:?}");
            }

            // Adjoint checks: <conv(x), dy> == <x, convT(dy)> and
            // <conv(x), dy> == <w, dW(x, dy)>.
            let dy = rand_vec(g.out_len(), &mut rng);
            let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let mut dx = vec![0.0; g.in_len()];
            conv_backward_data(&g, &wt, &dy, &mut dx);
            let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{g:?}");
            let mut dw = vec![0.0; g.weight_len()];
            conv_backward_weight(&g, &x, &dy, &mut dw);
            let rhs_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_w).abs() < 1e-10 * lhs.abs().max(1.0), "{g:?}");
        }
    }

    #[test]
    fn geometry_rejects_oversized_kernel() {
        assert!(ConvGeom::new(1, 2, 2, 1, 3, 3, 1, 0, 1).is_none());
        assert!(ConvGeom::new(3, 4, 4, 3, 1, 1, 1, 0, 2).is_none());
        let g = ConvGeom::new(1, 5, 5, 1, 3, 3, 2, 1, 1).unwrap();
        assert_eq!((g.ho, g.wo), (3, 3));
    }
}
