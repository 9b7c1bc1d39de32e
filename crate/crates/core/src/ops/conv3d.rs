//! 3D convolution (cross-correlation), forward and backward.
//!
//! Two forward paths share one contract: a plain 7-loop reference and an
//! im2col + tiled-matmul path. Both accumulate each output element in the
//! same (channel, kt, kh, kw) order, so they agree bit-for-bit and stay
//! deterministic under any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::conv_out_extent;
use crate::tensor::{Rng, Tensor};

/// Cap on the im2col scratch buffer (floats); larger outputs are processed
/// in column chunks.
const COL_BUDGET: usize = 8 << 20;

/// Parameters of one 3D convolution.
///
/// Weight layout is [out_ch, in_ch, kt, kh, kw]; bias is [out_ch].
#[derive(Debug, Clone)]
pub struct Conv3dParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Conv3dParams {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        weights: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Geometry("channel counts must be >= 1".into()));
        }
        let (kt, kh, kw) = kernel;
        let (st, sh, sw) = stride;
        if kt == 0 || kh == 0 || kw == 0 || st == 0 || sh == 0 || sw == 0 {
            return Err(Error::Geometry("kernel and stride extents must be >= 1".into()));
        }
        let expect = [out_channels, in_channels, kt, kh, kw];
        if weights.shape() != expect {
            return Err(Error::ShapeMismatch(format!(
                "conv weights {:?}, expected {:?}",
                weights.shape(),
                expect
            )));
        }
        if bias.shape() != [out_channels] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias {:?}, expected [{}]",
                bias.shape(),
                out_channels
            )));
        }
        Ok(Conv3dParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            bias,
        })
    }

    /// Fresh parameters with uniform fan-in init (bound sqrt(1/fan_in)) and
    /// zero bias.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        let (kt, kh, kw) = kernel;
        let fan_in = in_channels * kt * kh * kw;
        let bound = (1.0 / fan_in as f32).sqrt();
        let weights = Tensor::fill_uniform(
            &[out_channels, in_channels, kt, kh, kw],
            -bound,
            bound,
            rng,
        )?;
        let bias = Tensor::zeros(&[out_channels])?;
        Conv3dParams::new(in_channels, out_channels, kernel, stride, padding, weights, bias)
    }

    /// Output shape for an [N, C, T, H, W] input.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<[usize; 5]> {
        let [n, c, t, h, w] = check_rank5(input_shape)?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, conv expects {}",
                c, self.in_channels
            )));
        }
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        let (pt, ph, pw) = self.padding;
        Ok([
            n,
            self.out_channels,
            conv_out_extent(t, kt, st, pt)?,
            conv_out_extent(h, kh, sh, ph)?,
            conv_out_extent(w, kw, sw, pw)?,
        ])
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

pub struct Conv3dGrads {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

fn check_rank5(shape: &[usize]) -> Result<[usize; 5]> {
    if shape.len() != 5 {
        return Err(Error::InvalidShape(format!(
            "expected rank-5 N x C x T x H x W input, got {:?}",
            shape
        )));
    }
    Ok([shape[0], shape[1], shape[2], shape[3], shape[4]])
}

/// Reference path: direct loops over batch, output channel, output position
/// and kernel taps. Part of the public test surface.
pub fn conv3d_forward_naive(input: &Tensor, params: &Conv3dParams) -> Result<Tensor> {
    let [n_batch, c_in, t_in, h_in, w_in] = check_rank5(input.shape())?;
    let [_, c_out, t_out, h_out, w_out] = params.output_shape(input.shape())?;
    let (kt, kh, kw) = params.kernel;
    let (st, sh, sw) = params.stride;
    let (pt, ph, pw) = params.padding;

    let x = input.data();
    let w = params.weights.data();
    let b = params.bias.data();
    let mut out = vec![0.0f32; n_batch * c_out * t_out * h_out * w_out];

    let mut o = 0;
    for n in 0..n_batch {
        for oc in 0..c_out {
            for ot in 0..t_out {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let mut acc = b[oc];
                        for ic in 0..c_in {
                            for dt in 0..kt {
                                let it = (ot * st + dt) as isize - pt as isize;
                                if it < 0 || it >= t_in as isize {
                                    continue;
                                }
                                for dh in 0..kh {
                                    let ih = (oh * sh + dh) as isize - ph as isize;
                                    if ih < 0 || ih >= h_in as isize {
                                        continue;
                                    }
                                    for dw in 0..kw {
                                        let iw = (ow * sw + dw) as isize - pw as isize;
                                        if iw < 0 || iw >= w_in as isize {
                                            continue;
                                        }
                                        let xi = (((n * c_in + ic) * t_in + it as usize) * h_in
                                            + ih as usize)
                                            * w_in
                                            + iw as usize;
                                        let wi = (((oc * c_in + ic) * kt + dt) * kh + dh) * kw + dw;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[o] = acc;
                        o += 1;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n_batch, c_out, t_out, h_out, w_out], out)
}

/// Geometry shared by the im2col routines.
struct Geom {
    c_in: usize,
    t_in: usize,
    h_in: usize,
    w_in: usize,
    t_out: usize,
    h_out: usize,
    w_out: usize,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
}

impl Geom {
    fn k_rows(&self) -> usize {
        let (kt, kh, kw) = self.kernel;
        self.c_in * kt * kh * kw
    }

    fn positions(&self) -> usize {
        self.t_out * self.h_out * self.w_out
    }

    fn plane(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Temporal output slices per column chunk, keeping the buffer within
    /// the budget. Chunks align on whole T slices so the unfold loops stay
    /// division-free.
    fn chunk_slices(&self) -> usize {
        (COL_BUDGET / (self.k_rows() * self.plane())).clamp(1, self.t_out)
    }

    fn row_taps(&self, r: usize) -> (usize, usize, usize, usize) {
        let (kt, kh, kw) = self.kernel;
        let dw = r % kw;
        let dh = (r / kw) % kh;
        let dt = (r / (kw * kh)) % kt;
        let ic = r / (kw * kh * kt);
        (ic, dt, dh, dw)
    }
}

/// Fill one unfolded row segment for output row `oh` of slice `it`.
#[inline]
fn fill_cols_row(g: &Geom, src_row: &[f32], dw: usize, dst: &mut [f32]) {
    let (_, _, sw) = g.stride;
    let (_, _, pw) = g.padding;
    if sw == 1 {
        // iw = ow + dw - pw: one contiguous copy with zeroed borders
        let lo = pw.saturating_sub(dw).min(g.w_out);
        let hi = (g.w_in + pw - dw).min(g.w_out).max(lo);
        dst[..lo].fill(0.0);
        dst[lo..hi].copy_from_slice(&src_row[lo + dw - pw..hi + dw - pw]);
        dst[hi..].fill(0.0);
    } else {
        for (ow, slot) in dst.iter_mut().enumerate() {
            let iw = (ow * sw + dw) as isize - pw as isize;
            *slot = if iw >= 0 && (iw as usize) < g.w_in {
                src_row[iw as usize]
            } else {
                0.0
            };
        }
    }
}

/// Unfold output slices [ot0, ot0 + ot_len) of one batch item into `cols`
/// (k_rows by ot_len * h_out * w_out, row-major).
fn im2col(x: &[f32], g: &Geom, ot0: usize, ot_len: usize, cols: &mut [f32]) {
    let k = g.k_rows();
    let plane = g.plane();
    let seg_len = ot_len * plane;
    debug_assert_eq!(cols.len(), k * seg_len);
    let (st, sh, _) = g.stride;
    let (pt, ph, _) = g.padding;

    cols.par_chunks_mut(seg_len)
        .with_min_len((8192 / seg_len.max(1)).max(1))
        .enumerate()
        .for_each(|(r, row)| {
            let (ic, dt, dh, dw) = g.row_taps(r);
            for oti in 0..ot_len {
                let it = ((ot0 + oti) * st + dt) as isize - pt as isize;
                let t_seg = &mut row[oti * plane..(oti + 1) * plane];
                if it < 0 || it >= g.t_in as isize {
                    t_seg.fill(0.0);
                    continue;
                }
                let in_plane = &x[(ic * g.t_in + it as usize) * g.h_in * g.w_in..][..g.h_in * g.w_in];
                for oh in 0..g.h_out {
                    let ih = (oh * sh + dh) as isize - ph as isize;
                    let dst = &mut t_seg[oh * g.w_out..(oh + 1) * g.w_out];
                    if ih < 0 || ih >= g.h_in as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &in_plane[ih as usize * g.w_in..][..g.w_in];
                    fill_cols_row(g, src_row, dw, dst);
                }
            }
        });
}

/// Scatter-add `cols` back into one batch item's gradient buffer.
fn col2im_add(cols: &[f32], g: &Geom, ot0: usize, ot_len: usize, gx: &mut [f32]) {
    let k = g.k_rows();
    let plane = g.plane();
    let seg_len = ot_len * plane;
    let (st, sh, sw) = g.stride;
    let (pt, ph, pw) = g.padding;
    for r in 0..k {
        let (ic, dt, dh, dw) = g.row_taps(r);
        let row = &cols[r * seg_len..(r + 1) * seg_len];
        for oti in 0..ot_len {
            let it = ((ot0 + oti) * st + dt) as isize - pt as isize;
            if it < 0 || it >= g.t_in as isize {
                continue;
            }
            let out_plane =
                &mut gx[(ic * g.t_in + it as usize) * g.h_in * g.w_in..][..g.h_in * g.w_in];
            let t_seg = &row[oti * plane..(oti + 1) * plane];
            for oh in 0..g.h_out {
                let ih = (oh * sh + dh) as isize - ph as isize;
                if ih < 0 || ih >= g.h_in as isize {
                    continue;
                }
                let src = &t_seg[oh * g.w_out..(oh + 1) * g.w_out];
                let dst = &mut out_plane[ih as usize * g.w_in..][..g.w_in];
                for (ow, &v) in src.iter().enumerate() {
                    let iw = (ow * sw + dw) as isize - pw as isize;
                    if iw >= 0 && (iw as usize) < g.w_in {
                        dst[iw as usize] += v;
                    }
                }
            }
        }
    }
}

fn geom_of(params: &Conv3dParams, input_shape: &[usize]) -> Result<(usize, Geom, [usize; 5])> {
    let [n_batch, c_in, t_in, h_in, w_in] = check_rank5(input_shape)?;
    let out_shape = params.output_shape(input_shape)?;
    Ok((
        n_batch,
        Geom {
            c_in,
            t_in,
            h_in,
            w_in,
            t_out: out_shape[2],
            h_out: out_shape[3],
            w_out: out_shape[4],
            kernel: params.kernel,
            stride: params.stride,
            padding: params.padding,
        },
        out_shape,
    ))
}

/// Optimized path: per batch item, unfold into a column matrix (in chunks to
/// bound memory) and multiply by the flattened weights.
pub fn conv3d_forward(input: &Tensor, params: &Conv3dParams) -> Result<Tensor> {
    let (n_batch, g, out_shape) = geom_of(params, input.shape())?;
    let c_out = params.out_channels;
    let k = g.k_rows();
    let positions = g.positions();
    let in_item = g.c_in * g.t_in * g.h_in * g.w_in;

    let w = params.weights.data();
    let b = params.bias.data();
    let mut out = vec![0.0f32; n_batch * c_out * positions];

    let plane = g.plane();
    let chunk_t = g.chunk_slices();
    let mut cols = vec![0.0f32; k * chunk_t * plane];
    for n in 0..n_batch {
        let x = &input.data()[n * in_item..(n + 1) * in_item];
        let out_item = &mut out[n * c_out * positions..(n + 1) * c_out * positions];
        let mut ot0 = 0;
        while ot0 < g.t_out {
            let ot_len = chunk_t.min(g.t_out - ot0);
            let p0 = ot0 * plane;
            let p_len = ot_len * plane;
            im2col(x, &g, ot0, ot_len, &mut cols[..k * p_len]);
            let cols_ref = &cols[..k * p_len];
            // One output row per channel; rows are independent.
            out_item
                .par_chunks_mut(positions)
                .with_min_len((32768 / (k * p_len).max(1)).max(1))
                .enumerate()
                .for_each(|(oc, orow)| {
                    let orow = &mut orow[p0..p0 + p_len];
                    orow.fill(b[oc]);
                    let wrow = &w[oc * k..(oc + 1) * k];
                    for (r, &wv) in wrow.iter().enumerate() {
                        let brow = &cols_ref[r * p_len..(r + 1) * p_len];
                        for (oj, &bv) in orow.iter_mut().zip(brow) {
                            *oj += wv * bv;
                        }
                    }
                });
            ot0 += ot_len;
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Exact gradients of [`conv3d_forward`] with respect to input, weights and
/// bias.
pub fn conv3d_backward(
    input: &Tensor,
    params: &Conv3dParams,
    grad_out: &Tensor,
) -> Result<Conv3dGrads> {
    let (n_batch, g, out_shape) = geom_of(params, input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch(format!(
            "grad_out {:?}, forward output {:?}",
            grad_out.shape(),
            out_shape
        )));
    }
    let c_out = params.out_channels;
    let k = g.k_rows();
    let positions = g.positions();
    let in_item = g.c_in * g.t_in * g.h_in * g.w_in;

    let w = params.weights.data();
    let go = grad_out.data();

    // Bias gradient: plain sums over batch and positions per channel.
    let mut grad_bias = vec![0.0f32; c_out];
    for n in 0..n_batch {
        for (oc, gb) in grad_bias.iter_mut().enumerate() {
            let row = &go[(n * c_out + oc) * positions..(n * c_out + oc + 1) * positions];
            for &v in row {
                *gb += v;
            }
        }
    }

    let mut grad_weights = vec![0.0f32; c_out * k];
    let mut grad_input = vec![0.0f32; n_batch * in_item];

    let plane = g.plane();
    let chunk_t = g.chunk_slices();
    let mut cols = vec![0.0f32; k * chunk_t * plane];
    let mut gcols = vec![0.0f32; k * chunk_t * plane];
    for n in 0..n_batch {
        let x = &input.data()[n * in_item..(n + 1) * in_item];
        let go_item = &go[n * c_out * positions..(n + 1) * c_out * positions];
        let gx = &mut grad_input[n * in_item..(n + 1) * in_item];
        let mut ot0 = 0;
        while ot0 < g.t_out {
            let ot_len = chunk_t.min(g.t_out - ot0);
            let p0 = ot0 * plane;
            let p_len = ot_len * plane;
            im2col(x, &g, ot0, ot_len, &mut cols[..k * p_len]);
            let cols_ref = &cols[..k * p_len];

            // dW[oc, r] += sum_p go[oc, p] * cols[r, p]
            grad_weights
                .par_chunks_mut(k)
                .with_min_len((32768 / (k * p_len).max(1)).max(1))
                .enumerate()
                .for_each(|(oc, gw_row)| {
                    let go_row = &go_item[oc * positions + p0..oc * positions + p0 + p_len];
                    for (r, gw) in gw_row.iter_mut().enumerate() {
                        let crow = &cols_ref[r * p_len..(r + 1) * p_len];
                        let mut acc = 0.0f32;
                        for (&a, &b) in go_row.iter().zip(crow) {
                            acc += a * b;
                        }
                        *gw += acc;
                    }
                });

            // gcols[r, p] = sum_oc w[oc, r] * go[oc, p], then scatter back.
            gcols[..k * p_len]
                .par_chunks_mut(p_len)
                .with_min_len((32768 / (c_out * p_len).max(1)).max(1))
                .enumerate()
                .for_each(|(r, grow)| {
                    grow.fill(0.0);
                    for oc in 0..c_out {
                        let wv = w[oc * k + r];
                        let go_row =
                            &go_item[oc * positions + p0..oc * positions + p0 + p_len];
                        for (gj, &gv) in grow.iter_mut().zip(go_row) {
                            *gj += wv * gv;
                        }
                    }
                });
            col2im_add(&gcols[..k * p_len], &g, ot0, ot_len, gx);
            ot0 += ot_len;
        }
    }

    let (kt, kh, kw) = params.kernel;
    Ok(Conv3dGrads {
        grad_input: Tensor::from_vec(input.shape(), grad_input)?,
        grad_weights: Tensor::from_vec(
            &[c_out, params.in_channels, kt, kh, kw],
            grad_weights,
        )?,
        grad_bias: Tensor::from_vec(&[c_out], grad_bias)?,
    })
}
