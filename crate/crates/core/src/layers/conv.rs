//! 2-D cross-correlation (no kernel flip) via im2col and GEMM.

use crate::error::{Error, Result};
use crate::memory::Buffer;
use crate::tensor::{gemm, MatLayout, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` on each side; output keeps the input's
    /// spatial size. Requires odd kernel extents.
    Same,
    /// No padding.
    Valid,
}

struct Geometry {
    samples: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, padding: Padding) -> Result<Self> {
        let (samples, in_ch, h, w) = input.dims4()?;
        let (out_ch, w_in, kh, kw) = weight.dims4()?;
        if w_in != in_ch {
            return Err(Error::shape(format!(
                "conv2d: input has {in_ch} channels but weight expects {w_in}"
            )));
        }
        let (ph, pw) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::shape(format!(
                        "same padding needs odd kernel, got {kh}x{kw}"
                    )));
                }
                ((kh - 1) / 2, (kw - 1) / 2)
            }
            Padding::Valid => (0, 0),
        };
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        Ok(Geometry {
            samples,
            in_ch,
            h,
            w,
            out_ch,
            kh,
            kw,
            ph,
            pw,
            oh: h + 2 * ph - kh + 1,
            ow: w + 2 * pw - kw + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.ph == 0 && self.pw == 0
    }

    /// Output columns `ox` for which `ox + kj - pw` lies inside the input.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(kj);
        let hi = (self.w + self.pw).saturating_sub(kj).min(self.ow);
        (lo, hi.max(lo))
    }
}

fn im2col<T: Real>(g: &Geometry, plane: &[T], cols: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.in_ch {
        let src = &plane[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = oy + ki;
                    if iy < g.ph || iy - g.ph >= g.h {
                        out.fill(T::zero());
                        continue;
                    }
                    let iy = iy - g.ph;
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if hi > lo {
                        let ix0 = lo + kj - g.pw;
                        out[lo..hi]
                            .copy_from_slice(&src[iy * g.w + ix0..iy * g.w + ix0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &Geometry, cols: &[T], plane: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.in_ch {
        let dst = &mut plane[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                let (lo, hi) = g.valid_cols(kj);
                if hi <= lo {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = oy + ki;
                    if iy < g.ph || iy - g.ph >= g.h {
                        continue;
                    }
                    let iy = iy - g.ph;
                    let ix0 = lo + kj - g.pw;
                    let out = &mut dst[iy * g.w + ix0..iy * g.w + ix0 + (hi - lo)];
                    for (o, &v) in out.iter_mut().zip(&src[oy * g.ow + lo..oy * g.ow + hi]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

/// Cross-correlates `input [s, ic, h, w]` with `weight [oc, ic, kh, kw]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, weight, padding)?;
    let (ohw, hw, k) = (g.oh * g.ow, g.h * g.w, g.patch_len());
    let mut out = Buffer::filled(g.samples * g.out_ch * ohw, T::zero());
    let w_layout = MatLayout::row_major(g.out_ch, k);
    let mut cols = if g.is_pointwise() {
        None
    } else {
        Some(Buffer::filled(k * ohw, T::zero()))
    };
    for s in 0..g.samples {
        let plane = &input.data()[s * g.in_ch * hw..(s + 1) * g.in_ch * hw];
        let rhs: &[T] = match cols.as_mut() {
            Some(buf) => {
                im2col(&g, plane, buf);
                buf
            }
            None => plane,
        };
        let dst = &mut out[s * g.out_ch * ohw..(s + 1) * g.out_ch * ohw];
        gemm(
            weight.data(),
            w_layout,
            rhs,
            MatLayout::row_major(k, ohw),
            dst,
            MatLayout::row_major(g.out_ch, ohw),
            false,
        );
    }
    Ok(Tensor::from_buffer(
        vec![g.samples, g.out_ch, g.oh, g.ow],
        out,
    ))
}

/// Returns `(grad_input, grad_weight)`; `grad_input` is skipped when
/// `need_input_grad` is false.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    padding: Padding,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let g = Geometry::new(input, weight, padding)?;
    if grad_out.shape() != [g.samples, g.out_ch, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "conv2d_backward: grad_out has shape {:?}",
            grad_out.shape()
        )));
    }
    let (ohw, hw, k) = (g.oh * g.ow, g.h * g.w, g.patch_len());
    let mut grad_w = Tensor::zeros_like(weight);
    let mut grad_in = if need_input_grad {
        Some(Tensor::zeros_like(input))
    } else {
        None
    };
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        None
    } else {
        Some(Buffer::filled(k * ohw, T::zero()))
    };
    let mut grad_cols = if need_input_grad && !pointwise {
        Some(Buffer::filled(k * ohw, T::zero()))
    } else {
        None
    };
    let w_layout = MatLayout::row_major(g.out_ch, k);
    let g_layout = MatLayout::row_major(g.out_ch, ohw);
    let c_layout = MatLayout::row_major(k, ohw);
    for s in 0..g.samples {
        let plane = &input.data()[s * g.in_ch * hw..(s + 1) * g.in_ch * hw];
        let go = &grad_out.data()[s * g.out_ch * ohw..(s + 1) * g.out_ch * ohw];
        let rhs: &[T] = match cols.as_mut() {
            Some(buf) => {
                im2col(&g, plane, buf);
                buf
            }
            None => plane,
        };
        // dW += G · colsᵀ
        gemm(
            go,
            g_layout,
            rhs,
            c_layout.t(),
            grad_w.data_mut(),
            w_layout,
            true,
        );
        if let Some(gi) = grad_in.as_mut() {
            let gi_plane = &mut gi.data_mut()[s * g.in_ch * hw..(s + 1) * g.in_ch * hw];
            match grad_cols.as_mut() {
                Some(gc) => {
                    gemm(
                        weight.data(),
                        w_layout.t(),
                        go,
                        g_layout,
                        gc,
                        c_layout,
                        false,
                    );
                    col2im_add(&g, gc, gi_plane);
                }
                None => gemm(
                    weight.data(),
                    w_layout.t(),
                    go,
                    g_layout,
                    gi_plane,
                    c_layout,
                    true,
                ),
            }
        }
    }
    Ok((grad_in, grad_w))
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn add_channel_bias<T: Real>(z: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (s, c, h, w) = z.dims4()?;
    super::check_channel_vec("bias", bias, c)?;
    let mut out = z.clone();
    for (i, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        let b = bias.data()[i % c];
        plane.iter_mut().for_each(|x| *x += b);
    }
    debug_assert_eq!(out.len(), s * c * h * w);
    Ok(out)
}

/// Per-channel sum of `grad` over samples and positions.
pub fn channel_sums<T: Real>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, h, w) = grad.dims4()?;
    let mut sums = vec![T::zero(); c];
    for (i, plane) in grad.data().chunks(h * w).enumerate() {
        sums[i % c] += plane.iter().copied().sum::<T>();
    }
    Tensor::from_vec(&[c], sums)
}
