//! Raw forward/backward loops used by the tape.
//!
//! Convolution accumulates each output pixel in the fixed order
//! `in-channel → kernel row → kernel column`, starting from `0.0`, and adds
//! the bias last. The row-vectorised loops below preserve exactly that
//! per-pixel order, so results are bit-identical to a naive per-pixel loop.

use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub pad: bool,
}

impl ConvGeom {
    #[inline]
    pub fn pad_h(&self) -> usize {
        if self.pad {
            self.kh / 2
        } else {
            0
        }
    }

    #[inline]
    pub fn pad_w(&self) -> usize {
        if self.pad {
            self.kw / 2
        } else {
            0
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.pad {
            (h, w)
        } else {
            ((h + 1).saturating_sub(self.kh), (w + 1).saturating_sub(self.kw))
        }
    }

    #[inline]
    pub fn weight_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.cin + ci) * self.kh + ky) * self.kw + kx
    }
}

/// Valid output range along one axis for kernel tap `k`: every output `o`
/// in the returned range reads input `o + k - pad`, which is in bounds.
#[inline]
fn tap_range(k: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (in_len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

pub fn conv2d_forward(input: &Grid, weights: &[f64], bias: Option<&[f64]>, g: ConvGeom) -> Grid {
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = g.out_dims(h, w);
    let (ph, pw) = (g.pad_h(), g.pad_w());
    let mut out = Grid::zeros(oh, ow, g.cout);
    for co in 0..g.cout {
        let oplane = out.plane_mut(co);
        for ci in 0..g.cin {
            let iplane = input.plane(ci);
            for ky in 0..g.kh {
                let (y0, y1) = tap_range(ky, ph, h, oh);
                for kx in 0..g.kw {
                    let (x0, x1) = tap_range(kx, pw, w, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = weights[g.weight_index(co, ci, ky, kx)];
                    for oy in y0..y1 {
                        let iy = oy + ky - ph;
                        let ix0 = x0 + kx - pw;
                        let orow = &mut oplane[oy * ow + x0..oy * ow + x1];
                        let irow = &iplane[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                        for (o, i) in orow.iter_mut().zip(irow) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bv = b[co];
            for o in oplane.iter_mut() {
                *o += bv;
            }
        }
    }
    out
}

/// Gradient of the convolution with respect to its input.
pub fn conv2d_backward_input(grad_out: &Grid, weights: &[f64], g: ConvGeom, h: usize, w: usize) -> Grid {
    let (oh, ow) = (grad_out.height(), grad_out.width());
    let (ph, pw) = (g.pad_h(), g.pad_w());
    let mut gin = Grid::zeros(h, w, g.cin);
    for ci in 0..g.cin {
        let iplane = gin.plane_mut(ci);
        for co in 0..g.cout {
            let gplane = grad_out.plane(co);
            for ky in 0..g.kh {
                let (y0, y1) = tap_range(ky, ph, h, oh);
                for kx in 0..g.kw {
                    let (x0, x1) = tap_range(kx, pw, w, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = weights[g.weight_index(co, ci, ky, kx)];
                    for oy in y0..y1 {
                        let iy = oy + ky - ph;
                        let ix0 = x0 + kx - pw;
                        let grow = &gplane[oy * ow + x0..oy * ow + x1];
                        let irow = &mut iplane[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                        for (i, go) in irow.iter_mut().zip(grow) {
                            *i += wv * go;
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradients with respect to weights and bias.
pub fn conv2d_backward_params(grad_out: &Grid, input: &Grid, g: ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (grad_out.height(), grad_out.width());
    let (ph, pw) = (g.pad_h(), g.pad_w());
    let mut gw = vec![0.0; g.cout * g.cin * g.kh * g.kw];
    let mut gb = vec![0.0; g.cout];
    for co in 0..g.cout {
        let gplane = grad_out.plane(co);
        gb[co] = dot_ones(gplane);
        for ci in 0..g.cin {
            let iplane = input.plane(ci);
            for ky in 0..g.kh {
                let (y0, y1) = tap_range(ky, ph, h, oh);
                for kx in 0..g.kw {
                    let (x0, x1) = tap_range(kx, pw, w, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy + ky - ph;
                        let ix0 = x0 + kx - pw;
                        acc += dot(
                            &gplane[oy * ow + x0..oy * ow + x1],
                            &iplane[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                        );
                    }
                    gw[g.weight_index(co, ci, ky, kx)] = acc;
                }
            }
        }
    }
    (gw, gb)
}

/// Dot product with eight fixed lanes (deterministic, vectorisable).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn dot_ones(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let ra = ca.remainder();
    for x in ca {
        for k in 0..8 {
            acc[k] += x[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for x in ra {
        s += x;
    }
    s
}

/// 2×2 stride-2 max pooling. Odd extents are padded by replicating the last
/// row/column. Returns the pooled grid and, per output element, the flat
/// input index of the (first, row-major) maximum.
pub fn maxpool2_forward(input: &Grid) -> (Grid, Vec<usize>) {
    let (h, w, c) = input.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Grid::zeros(oh, ow, c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for ch in 0..c {
        for oy in 0..oh {
            let ys = [2 * oy, (2 * oy + 1).min(h - 1)];
            for ox in 0..ow {
                let xs = [2 * ox, (2 * ox + 1).min(w - 1)];
                let mut best_i = input.index(ch, ys[0], xs[0]);
                let mut best = input.data()[best_i];
                for &y in &ys {
                    for &x in &xs {
                        let i = input.index(ch, y, x);
                        if input.data()[i] > best {
                            best = input.data()[i];
                            best_i = i;
                        }
                    }
                }
                out.set(ch, oy, ox, best);
                argmax.push(best_i);
            }
        }
    }
    (out, argmax)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

/// Half-pixel-centre sampling positions for upsampling `n` samples by `factor`.
pub(crate) fn upsample_taps(n: usize, factor: usize) -> Vec<Tap> {
    (0..n * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = if i0 + 1 < n { i0 + 1 } else { i0 };
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap {
                i0,
                i1,
                w0: 1.0 - w1,
                w1,
            }
        })
        .collect()
}

pub fn upsample_forward(input: &Grid, factor: usize) -> Grid {
    let (h, w, c) = input.shape();
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Grid::zeros(oh, ow, c);
    for ch in 0..c {
        let ip = input.plane(ch);
        let op = out.plane_mut(ch);
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let top = b.w0 * ip[a.i0 * w + b.i0] + b.w1 * ip[a.i0 * w + b.i1];
                let bot = b.w0 * ip[a.i1 * w + b.i0] + b.w1 * ip[a.i1 * w + b.i1];
                op[oy * ow + ox] = a.w0 * top + a.w1 * bot;
            }
        }
    }
    out
}

pub fn upsample_backward(grad_out: &Grid, h: usize, w: usize, factor: usize) -> Grid {
    let c = grad_out.channels();
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let ow = w * factor;
    let mut gin = Grid::zeros(h, w, c);
    for ch in 0..c {
        let gp = grad_out.plane(ch);
        let ip = gin.plane_mut(ch);
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let g = gp[oy * ow + ox];
                ip[a.i0 * w + b.i0] += a.w0 * b.w0 * g;
                ip[a.i0 * w + b.i1] += a.w0 * b.w1 * g;
                ip[a.i1 * w + b.i0] += a.w1 * b.w0 * g;
                ip[a.i1 * w + b.i1] += a.w1 * b.w1 * g;
            }
        }
    }
    gin
}

pub fn channel_softmax(input: &Grid) -> Grid {
    let (h, w, c) = input.shape();
    let n = h * w;
    let src = input.data();
    let mut out = Grid::zeros(h, w, c);
    let dst = out.data_mut();
    for p in 0..n {
        let mut m = f64::NEG_INFINITY;
        for ch in 0..c {
            m = m.max(src[ch * n + p]);
        }
        let mut s = 0.0;
        for ch in 0..c {
            let e = (src[ch * n + p] - m).exp();
            dst[ch * n + p] = e;
            s += e;
        }
        for ch in 0..c {
            dst[ch * n + p] /= s;
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
