//! Raw forward/adjoint kernels over flat slices. Shape validation happens in
//! the tape layer; everything here assumes consistent dimensions.

use rayon::prelude::*;

use super::{Real, Shape};

/// `c = a·b + beta·c` with optional transposition of either operand.
/// `a` is `m×k` (or `k×m` when `ta`), `b` is `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    ta: bool,
    b: &[Real],
    tb: bool,
    beta: Real,
    c: &mut [Real],
) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the m×k, k×n and m×n
    // row-major buffers, whose lengths are checked by the asserts.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
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
        #[cfg(feature = "f32")]
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

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub x: Shape,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.x.c / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn col_rows(&self) -> usize {
        self.cin_g() * self.k * self.k
    }
    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold channels `[c0, c0+cin_g)` of one image into a `(cin_g·k·k) × (ho·wo)` matrix.
fn im2col(img: &[Real], g: &ConvGeom, c0: usize, col: &mut [Real]) {
    let (h, w, k) = (g.x.h as isize, g.x.w as isize, g.k);
    let plane = g.out_plane();
    for ci in 0..g.cin_g() {
        let src = &img[(c0 + ci) * g.x.plane()..(c0 + ci + 1) * g.x.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= h {
                        d.fill(0.0);
                        continue;
                    }
                    let srow = &src[iy as usize * g.x.w..(iy as usize + 1) * g.x.w];
                    for (ox, v) in d.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w { 0.0 } else { srow[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back into the image.
fn col2im(col: &[Real], g: &ConvGeom, c0: usize, img: &mut [Real]) {
    let (h, w, k) = (g.x.h as isize, g.x.w as isize, g.k);
    let plane = g.out_plane();
    for ci in 0..g.cin_g() {
        let dst = &mut img[(c0 + ci) * g.x.plane()..(c0 + ci + 1) * g.x.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.x.w..(iy as usize + 1) * g.x.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w {
                            drow[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &[Real],
    weight: &[Real],
    bias: Option<&[Real]>,
    g: &ConvGeom,
) -> Vec<Real> {
    let in_img = g.x.c * g.x.plane();
    let out_img = g.cout * g.out_plane();
    let mut out = vec![0.0; g.x.n * out_img];
    let (rows, plane, cout_g) = (g.col_rows(), g.out_plane(), g.cout_g());
    out.par_chunks_mut(out_img)
        .zip(x.par_chunks(in_img))
        .for_each(|(o, img)| {
            let mut col = vec![0.0; rows * plane];
            for gi in 0..g.groups {
                im2col(img, g, gi * g.cin_g(), &mut col);
                let wg = &weight[gi * cout_g * rows..(gi + 1) * cout_g * rows];
                let og = &mut o[gi * cout_g * plane..(gi + 1) * cout_g * plane];
                gemm(cout_g, rows, plane, wg, false, &col, false, 0.0, og);
            }
            if let Some(b) = bias {
                for (co, chan) in o.chunks_mut(plane).enumerate() {
                    chan.iter_mut().for_each(|v| *v += b[co]);
                }
            }
        });
    out
}

/// Returns `(dx, dweight, dbias)`; each is computed only when requested.
pub(crate) fn conv2d_backward(
    x: &[Real],
    weight: &[Real],
    dout: &[Real],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<Real>>, Option<Vec<Real>>, Option<Vec<Real>>) {
    let in_img = g.x.c * g.x.plane();
    let out_img = g.cout * g.out_plane();
    let (rows, plane, cout_g) = (g.col_rows(), g.out_plane(), g.cout_g());

    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; x.len()];
        dx.par_chunks_mut(in_img)
            .zip(dout.par_chunks(out_img))
            .for_each(|(dimg, d)| {
                let mut dcol = vec![0.0; rows * plane];
                for gi in 0..g.groups {
                    let wg = &weight[gi * cout_g * rows..(gi + 1) * cout_g * rows];
                    let dg = &d[gi * cout_g * plane..(gi + 1) * cout_g * plane];
                    gemm(rows, cout_g, plane, wg, true, dg, false, 0.0, &mut dcol);
                    col2im(&dcol, g, gi * g.cin_g(), dimg);
                }
            });
        dx
    });

    let dw = need_dw.then(|| {
        // Per-image partials, reduced in batch order so the result does not
        // depend on the thread count.
        let partials: Vec<Vec<Real>> = x
            .par_chunks(in_img)
            .zip(dout.par_chunks(out_img))
            .map(|(img, d)| {
                let mut col = vec![0.0; rows * plane];
                let mut dw = vec![0.0; weight.len()];
                for gi in 0..g.groups {
                    im2col(img, g, gi * g.cin_g(), &mut col);
                    let dg = &d[gi * cout_g * plane..(gi + 1) * cout_g * plane];
                    let dwg = &mut dw[gi * cout_g * rows..(gi + 1) * cout_g * rows];
                    gemm(cout_g, plane, rows, dg, false, &col, true, 0.0, dwg);
                }
                dw
            })
            .collect();
        let mut dw = vec![0.0; weight.len()];
        for p in partials {
            dw.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        dw
    });

    let db = need_db.then(|| {
        let mut db = vec![0.0; g.cout];
        for d in dout.chunks(out_img) {
            for (co, chan) in d.chunks(plane).enumerate() {
                db[co] += chan.iter().sum::<Real>();
            }
        }
        db
    });

    (dx, dw, db)
}

/// Source taps for one output coordinate of an align-corners-false resize.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub frac: Real,
}

pub(crate) fn resize_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            Tap {
                i0,
                i1,
                frac: (src - i0 as f64) as Real,
            }
        })
        .collect()
}

pub(crate) fn resize_forward(x: &[Real], s: Shape, ho: usize, wo: usize) -> Vec<Real> {
    let ty = resize_taps(s.h, ho);
    let tx = resize_taps(s.w, wo);
    let mut out = vec![0.0; s.n * s.c * ho * wo];
    for (src, dst) in x.chunks(s.plane()).zip(out.chunks_mut(ho * wo)) {
        for (oy, t) in ty.iter().enumerate() {
            let r0 = &src[t.i0 * s.w..(t.i0 + 1) * s.w];
            let r1 = &src[t.i1 * s.w..(t.i1 + 1) * s.w];
            for (ox, u) in tx.iter().enumerate() {
                let top = r0[u.i0] * (1.0 - u.frac) + r0[u.i1] * u.frac;
                let bot = r1[u.i0] * (1.0 - u.frac) + r1[u.i1] * u.frac;
                dst[oy * wo + ox] = top * (1.0 - t.frac) + bot * t.frac;
            }
        }
    }
    out
}

pub(crate) fn resize_backward(dout: &[Real], s: Shape, ho: usize, wo: usize) -> Vec<Real> {
    let ty = resize_taps(s.h, ho);
    let tx = resize_taps(s.w, wo);
    let mut dx = vec![0.0; s.numel()];
    for (d, dsrc) in dout.chunks(ho * wo).zip(dx.chunks_mut(s.plane())) {
        for (oy, t) in ty.iter().enumerate() {
            for (ox, u) in tx.iter().enumerate() {
                let g = d[oy * wo + ox];
                let (gt, gb) = (g * (1.0 - t.frac), g * t.frac);
                dsrc[t.i0 * s.w + u.i0] += gt * (1.0 - u.frac);
                dsrc[t.i0 * s.w + u.i1] += gt * u.frac;
                dsrc[t.i1 * s.w + u.i0] += gb * (1.0 - u.frac);
                dsrc[t.i1 * s.w + u.i1] += gb * u.frac;
            }
        }
    }
    dx
}

/// Window bounds `[lo, hi)` of a pooling window, clipped to the input.
fn window(o: usize, stride: usize, pad: usize, k: usize, len: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + k as isize) as usize).min(len);
    (lo, hi)
}

/// Average pooling that divides by the number of in-bounds taps, so a
/// constant map stays constant up to the border.
pub(crate) fn avg_pool_forward(
    x: &[Real],
    s: Shape,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<Real> {
    let mut out = vec![0.0; s.n * s.c * ho * wo];
    for (src, dst) in x.chunks(s.plane()).zip(out.chunks_mut(ho * wo)) {
        for oy in 0..ho {
            let (y0, y1) = window(oy, stride, pad, k, s.h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, stride, pad, k, s.w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += src[y * s.w + x0..y * s.w + x1].iter().sum::<Real>();
                }
                dst[oy * wo + ox] = acc / ((y1 - y0) * (x1 - x0)) as Real;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(
    dout: &[Real],
    s: Shape,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<Real> {
    let mut dx = vec![0.0; s.numel()];
    for (d, dsrc) in dout.chunks(ho * wo).zip(dx.chunks_mut(s.plane())) {
        for oy in 0..ho {
            let (y0, y1) = window(oy, stride, pad, k, s.h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, stride, pad, k, s.w);
                let g = d[oy * wo + ox] / ((y1 - y0) * (x1 - x0)) as Real;
                for y in y0..y1 {
                    dsrc[y * s.w + x0..y * s.w + x1]
                        .iter_mut()
                        .for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}
