//! Batched "same"-size correlation and max-pooling on channels-last samples.
//!
//! All spatial layers are expressed over an `h x w x c` view; 1D layers use
//! `h = 1`.

use super::tensor::Scalar;

/// Upper bound on the im2col scratch buffer, in elements.
const COLS_BUDGET: usize = 1 << 23;

/// Correlation geometry: output spatial size equals input size; `ph`/`pw`
/// are the leading zero-pad amounts.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn pixels(&self) -> usize {
        self.h * self.w
    }

    fn chunk(&self, batch: usize) -> usize {
        (COLS_BUDGET / (self.pixels() * self.k()).max(1)).clamp(1, batch.max(1))
    }

    /// Valid kernel-column range `[lo, hi)` for output column `ox`.
    #[inline]
    fn v_range(&self, ox: usize) -> (usize, usize, isize) {
        let x0 = ox as isize - self.pw as isize;
        let lo = (-x0).max(0) as usize;
        let hi = (self.w as isize - x0).clamp(0, self.kw as isize) as usize;
        (lo.min(hi), hi, x0)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let k = g.k();
    let seg_len = g.kw * g.cin;
    for oy in 0..g.h {
        for ox in 0..g.w {
            let row = &mut cols[(oy * g.w + ox) * k..(oy * g.w + ox + 1) * k];
            let (lo, hi, x0) = g.v_range(ox);
            for u in 0..g.kh {
                let seg = &mut row[u * seg_len..(u + 1) * seg_len];
                let iy = oy as isize + u as isize - g.ph as isize;
                if iy < 0 || iy >= g.h as isize || lo >= hi {
                    seg.fill(T::zero());
                    continue;
                }
                seg[..lo * g.cin].fill(T::zero());
                seg[hi * g.cin..].fill(T::zero());
                let base = (iy as usize * g.w) as isize + x0;
                let src = &x[(base + lo as isize) as usize * g.cin..(base + hi as isize) as usize * g.cin];
                seg[lo * g.cin..hi * g.cin].copy_from_slice(src);
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let k = g.k();
    let seg_len = g.kw * g.cin;
    for oy in 0..g.h {
        for ox in 0..g.w {
            let row = &cols[(oy * g.w + ox) * k..(oy * g.w + ox + 1) * k];
            let (lo, hi, x0) = g.v_range(ox);
            if lo >= hi {
                continue;
            }
            for u in 0..g.kh {
                let iy = oy as isize + u as isize - g.ph as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let seg = &row[u * seg_len..(u + 1) * seg_len];
                let base = (iy as usize * g.w) as isize + x0;
                let dst = &mut dx[(base + lo as isize) as usize * g.cin..(base + hi as isize) as usize * g.cin];
                for (d, &s) in dst.iter_mut().zip(&seg[lo * g.cin..hi * g.cin]) {
                    *d = *d + s;
                }
            }
        }
    }
}

/// `y[b] = corr(x[b], kernel) + bias`; kernel is `(kh*kw*cin) x cout` row-major.
pub(crate) fn correlate_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    kernel: &[T],
    bias: &[T],
) -> Vec<T> {
    let (px, k) = (g.pixels(), g.k());
    let mut out = vec![T::zero(); batch * px * g.cout];
    let chunk = g.chunk(batch);
    let mut cols = vec![T::zero(); chunk * px * k];
    let in_len = px * g.cin;
    for start in (0..batch).step_by(chunk) {
        let nb = chunk.min(batch - start);
        for s in 0..nb {
            im2col(
                &x[(start + s) * in_len..(start + s + 1) * in_len],
                g,
                &mut cols[s * px * k..(s + 1) * px * k],
            );
        }
        let rows = nb * px;
        let y = &mut out[start * px * g.cout..(start + nb) * px * g.cout];
        for r in y.chunks_exact_mut(g.cout) {
            r.copy_from_slice(bias);
        }
        T::gemm(
            rows,
            k,
            g.cout,
            T::one(),
            &cols[..rows * k],
            k as isize,
            1,
            kernel,
            g.cout as isize,
            1,
            T::one(),
            y,
            g.cout as isize,
            1,
        );
    }
    out
}

/// Returns `dx`; accumulates into `dkernel` and `dbias`.
pub(crate) fn correlate_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    g: &ConvGeom,
    kernel: &[T],
    dkernel: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let (px, k) = (g.pixels(), g.k());
    for r in dy.chunks_exact(g.cout) {
        for (d, &v) in dbias.iter_mut().zip(r) {
            *d = *d + v;
        }
    }
    let in_len = px * g.cin;
    let mut dx = vec![T::zero(); batch * in_len];
    let chunk = g.chunk(batch);
    let mut cols = vec![T::zero(); chunk * px * k];
    let mut dcols = vec![T::zero(); chunk * px * k];
    for start in (0..batch).step_by(chunk) {
        let nb = chunk.min(batch - start);
        for s in 0..nb {
            im2col(
                &x[(start + s) * in_len..(start + s + 1) * in_len],
                g,
                &mut cols[s * px * k..(s + 1) * px * k],
            );
        }
        let rows = nb * px;
        let dyc = &dy[start * px * g.cout..(start + nb) * px * g.cout];
        // dK += cols^T dy
        T::gemm(
            k,
            rows,
            g.cout,
            T::one(),
            &cols[..rows * k],
            1,
            k as isize,
            dyc,
            g.cout as isize,
            1,
            T::one(),
            dkernel,
            g.cout as isize,
            1,
        );
        // dcols = dy K^T
        T::gemm(
            rows,
            g.cout,
            k,
            T::one(),
            dyc,
            g.cout as isize,
            1,
            kernel,
            1,
            g.cout as isize,
            T::zero(),
            &mut dcols[..rows * k],
            k as isize,
            1,
        );
        for s in 0..nb {
            col2im_add(
                &dcols[s * px * k..(s + 1) * px * k],
                g,
                &mut dx[(start + s) * in_len..(start + s + 1) * in_len],
            );
        }
    }
    dx
}

/// Max-pool geometry with "same" padding: output length `ceil(len / stride)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub wh: usize,
    pub ww: usize,
    pub sh: usize,
    pub sw: usize,
}

pub(crate) fn same_out(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

fn same_lead(len: usize, window: usize, stride: usize) -> usize {
    let out = same_out(len, stride);
    ((out - 1) * stride + window).saturating_sub(len) / 2
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        same_out(self.h, self.sh)
    }

    pub fn out_w(&self) -> usize {
        same_out(self.w, self.sw)
    }
}

/// Returns pooled values and the flat input index chosen for each output.
pub(crate) fn max_pool_forward<T: Scalar>(x: &[T], batch: usize, g: &PoolGeom) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (lh, lw) = (same_lead(g.h, g.wh, g.sh), same_lead(g.w, g.ww, g.sw));
    let in_len = g.h * g.w * g.c;
    let mut out = Vec::with_capacity(batch * oh * ow * g.c);
    let mut arg = Vec::with_capacity(out.capacity());
    for b in 0..batch {
        let xs = &x[b * in_len..(b + 1) * in_len];
        for oy in 0..oh {
            let y0 = (oy * g.sh) as isize - lh as isize;
            let ys = y0.max(0) as usize..((y0 + g.wh as isize).min(g.h as isize)) as usize;
            for ox in 0..ow {
                let x0 = (ox * g.sw) as isize - lw as isize;
                let xr = x0.max(0) as usize..((x0 + g.ww as isize).min(g.w as isize)) as usize;
                for ch in 0..g.c {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for iy in ys.clone() {
                        for ix in xr.clone() {
                            let i = (iy * g.w + ix) * g.c + ch;
                            if best_i == usize::MAX || xs[i] > best {
                                best = xs[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    arg.push((b * in_len + best_i) as u32);
                }
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_correlate(x: &[f64], g: &ConvGeom, kernel: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.h * g.w * g.cout];
        for oy in 0..g.h {
            for ox in 0..g.w {
                for co in 0..g.cout {
                    let mut acc = bias[co];
                    for u in 0..g.kh {
                        for v in 0..g.kw {
                            let iy = oy as isize + u as isize - g.ph as isize;
                            let ix = ox as isize + v as isize - g.pw as isize;
                            if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                continue;
                            }
                            for ci in 0..g.cin {
                                acc += x[(iy as usize * g.w + ix as usize) * g.cin + ci]
                                    * kernel[((u * g.kw + v) * g.cin + ci) * g.cout + co];
                            }
                        }
                    }
                    out[(oy * g.w + ox) * g.cout + co] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn correlate_matches_scalar_loop() {
        let g = ConvGeom { h: 5, w: 7, cin: 2, cout: 3, kh: 3, kw: 4, ph: 1, pw: 2 };
        let x: Vec<f64> = (0..g.h * g.w * g.cin).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let kernel: Vec<f64> = (0..g.k() * g.cout).map(|i| ((i * 13) % 7) as f64 * 0.1).collect();
        let bias = [0.5, -1.0, 2.0];
        let y = correlate_forward(&x, 1, &g, &kernel, &bias);
        let want = naive_correlate(&x, &g, &kernel, &bias);
        assert_eq!(y.len(), want.len());
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pool_1d_same_padding() {
        let g = PoolGeom { h: 1, w: 5, c: 1, wh: 1, ww: 3, sh: 1, sw: 2 };
        let (y, arg) = max_pool_forward(&[1.0f64, 3.0, 2.0, 5.0, 4.0], 1, &g);
        assert_eq!(y, vec![3.0, 5.0, 5.0]);
        assert_eq!(arg, vec![1, 3, 3]);
    }
}
