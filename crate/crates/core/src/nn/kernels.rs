//! Low-level kernels: GEMM wrapper and convolution lowering.
//!
//! Everything here runs single-threaded in a fixed order, so results are
//! bitwise reproducible on a given build and CPU.

/// `c = a·b + beta·c` with row-major operands, `a: [m,k]` (or `[k,m]` if
/// `trans_a`), `b: [k,n]` (or `[n,k]` if `trans_b`), `c: [m,n]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the dimensions and strides asserted above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Lowers one image `[cin,h,w]` into `cols: [cin*k*k, oh*ow]`.
pub fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let (oh, ow) = g.out_hw();
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s) as isize + ki as isize - p;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if s == 1 {
                        let (lo, hi) = valid_span(kj, p, g.w, ow);
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        if lo < hi {
                            let off = (lo as isize + kj as isize - p) as usize;
                            line[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kj as isize - p;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose stride-1 input column `ox + kj − p` is in bounds.
fn valid_span(kj: usize, p: isize, w: usize, ow: usize) -> (usize, usize) {
    let lo = (p - kj as isize).clamp(0, ow as isize) as usize;
    let hi = (w as isize + p - kj as isize).clamp(lo as isize, ow as isize) as usize;
    (lo, hi)
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `dx: [cin,h,w]`.
pub fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let (oh, ow) = g.out_hw();
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s) as isize + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if s == 1 {
                        let (lo, hi) = valid_span(kj, p, g.w, ow);
                        if lo < hi {
                            let off = (lo as isize + kj as isize - p) as usize;
                            for (d, v) in dst[off..off + hi - lo].iter_mut().zip(&src[oy * ow + lo..oy * ow + hi]) {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s) as isize + kj as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution over a batch. `x: [n,cin,h,w]`, `w: [cout, cin*k*k]`.
pub fn conv2d_forward(x: &[f32], n: usize, g: &ConvGeom, w: &[f32], b: &[f32], cout: usize) -> Vec<f32> {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let in_sz = g.cin * g.h * g.w;
    let mut out = vec![0.0f32; n * cout * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; g.rows() * plane] };
    for i in 0..n {
        let xi = &x[i * in_sz..(i + 1) * in_sz];
        let oi = &mut out[i * cout * plane..(i + 1) * cout * plane];
        for (co, chunk) in oi.chunks_mut(plane).enumerate() {
            chunk.fill(b[co]);
        }
        let src: &[f32] = if g.is_pointwise() {
            xi
        } else {
            im2col(xi, g, &mut cols);
            &cols
        };
        gemm(cout, g.rows(), plane, w, false, src, false, 1.0, oi);
    }
    out
}

/// Backward convolution. Returns `dx` when requested and accumulates into
/// `dw`/`db` when given.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f32],
    n: usize,
    g: &ConvGeom,
    w: &[f32],
    cout: usize,
    dy: &[f32],
    want_dx: bool,
    mut dw: Option<&mut [f32]>,
    mut db: Option<&mut [f32]>,
) -> Option<Vec<f32>> {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let in_sz = g.cin * g.h * g.w;
    let rows = g.rows();
    let mut dx = if want_dx { Some(vec![0.0f32; n * in_sz]) } else { None };
    let mut cols = vec![0.0f32; rows * plane];
    for i in 0..n {
        let dyi = &dy[i * cout * plane..(i + 1) * cout * plane];
        if let Some(db) = db.as_deref_mut() {
            for (co, chunk) in dyi.chunks(plane).enumerate() {
                db[co] += chunk.iter().sum::<f32>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xi = &x[i * in_sz..(i + 1) * in_sz];
            if g.is_pointwise() {
                gemm(cout, plane, rows, dyi, false, xi, true, 1.0, dw);
            } else {
                im2col(xi, g, &mut cols);
                gemm(cout, plane, rows, dyi, false, &cols, true, 1.0, dw);
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx[i * in_sz..(i + 1) * in_sz];
            if g.is_pointwise() {
                gemm(rows, cout, plane, w, true, dyi, false, 1.0, dxi);
            } else {
                gemm(rows, cout, plane, w, true, dyi, false, 0.0, &mut cols);
                col2im(&cols, g, dxi);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f32], g: &ConvGeom, w: &[f32], b: &[f32], cout: usize) -> Vec<f32> {
        let (oh, ow) = g.out_hw();
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co] as f64;
                    for c in 0..g.cin {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    let xv = x[(c * g.h + iy as usize) * g.w + ix as usize];
                                    let wv = w[((co * g.cin + c) * g.k + ki) * g.k + kj];
                                    acc += (xv * wv) as f64;
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        for &(k, s, p) in &[(3, 1, 1), (5, 1, 2), (3, 2, 1), (1, 1, 0), (4, 2, 1)] {
            let g = ConvGeom { cin: 3, h: 9, w: 7, k, stride: s, pad: p };
            let cout = 4;
            let x: Vec<f32> = (0..3 * 9 * 7).map(|i| ((i * 37 % 11) as f32 - 5.0) / 7.0).collect();
            let w: Vec<f32> = (0..cout * g.rows()).map(|i| ((i * 13 % 7) as f32 - 3.0) / 5.0).collect();
            let b = vec![0.1, -0.2, 0.3, 0.0];
            let fast = conv2d_forward(&x, 1, &g, &w, &b, cout);
            let slow = naive_conv(&x, &g, &w, &b, cout);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-4, "k={k} s={s} p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom { cin: 2, h: 6, w: 5, k: 3, stride: 2, pad: 1 };
        let (oh, ow) = g.out_hw();
        let x: Vec<f32> = (0..2 * 6 * 5).map(|i| (i as f32 * 0.37).sin()).collect();
        let c: Vec<f32> = (0..g.rows() * oh * ow).map(|i| (i as f32 * 0.11).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
