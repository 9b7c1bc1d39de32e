//! Test-side oracles, independent of the library's implementation paths:
//! a plain-loop f64 forward reference for every layer kind, a central
//! finite-difference harness built on it, and small statistics helpers.

#![allow(dead_code)]

pub mod gradcheck;

use stconv_core::Tensor;

/// Dense f64 array for the reference path.
#[derive(Debug, Clone)]
pub struct RefTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RefTensor {
    pub fn from_f32(t: &Tensor) -> RefTensor {
        RefTensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }
}

/// Forward-only f64 layers mirroring the library's semantics.
#[derive(Debug, Clone)]
pub enum RefLayer {
    Conv3d {
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    BnTrain {
        channels: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        eps: f64,
    },
    Relu,
    Fc {
        in_f: usize,
        out_f: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Softmax,
    Gap,
    Residual {
        main: Vec<RefLayer>,
        shortcut: Vec<RefLayer>,
    },
}

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

fn ref_conv3d(
    x: &RefTensor,
    in_ch: usize,
    out_ch: usize,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
) -> RefTensor {
    let (n_b, c_in, t_in, h_in, w_in) = (
        x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4],
    );
    assert_eq!(c_in, in_ch);
    let (kt, kh, kw) = kernel;
    let (st, sh, sw) = stride;
    let (pt, ph, pw) = padding;
    let (t_out, h_out, w_out) = (
        out_extent(t_in, kt, st, pt),
        out_extent(h_in, kh, sh, ph),
        out_extent(w_in, kw, sw, pw),
    );
    let mut out = vec![0.0f64; n_b * out_ch * t_out * h_out * w_out];
    let mut o = 0;
    for n in 0..n_b {
        for oc in 0..out_ch {
            for ot in 0..t_out {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let mut acc = bias[oc];
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
                                        let wi =
                                            (((oc * c_in + ic) * kt + dt) * kh + dh) * kw + dw;
                                        acc += x.data[xi] * weights[wi];
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
    RefTensor {
        shape: vec![n_b, out_ch, t_out, h_out, w_out],
        data: out,
    }
}

fn ref_bn_train(x: &RefTensor, channels: usize, gamma: &[f64], beta: &[f64], eps: f64) -> RefTensor {
    let n_b = x.shape[0];
    let c = x.shape[1];
    assert_eq!(c, channels);
    let inner: usize = x.shape[2..].iter().product::<usize>().max(1);
    let m = (n_b * inner) as f64;
    let mut out = vec![0.0f64; x.data.len()];
    for ch in 0..c {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for n in 0..n_b {
            let base = (n * c + ch) * inner;
            for &v in &x.data[base..base + inner] {
                sum += v;
                sum_sq += v * v;
            }
        }
        let mean = sum / m;
        let var = (sum_sq / m - mean * mean).max(0.0);
        let istd = 1.0 / (var + eps).sqrt();
        for n in 0..n_b {
            let base = (n * c + ch) * inner;
            for i in base..base + inner {
                out[i] = gamma[ch] * (x.data[i] - mean) * istd + beta[ch];
            }
        }
    }
    RefTensor {
        shape: x.shape.clone(),
        data: out,
    }
}

fn ref_fc(x: &RefTensor, in_f: usize, out_f: usize, weights: &[f64], bias: &[f64]) -> RefTensor {
    let n_b = x.shape[0];
    let flat: usize = x.shape[1..].iter().product();
    assert_eq!(flat, in_f);
    let mut out = vec![0.0f64; n_b * out_f];
    for n in 0..n_b {
        for k in 0..out_f {
            let mut acc = bias[k];
            for d in 0..in_f {
                acc += x.data[n * in_f + d] * weights[d * out_f + k];
            }
            out[n * out_f + k] = acc;
        }
    }
    RefTensor {
        shape: vec![n_b, out_f],
        data: out,
    }
}

fn ref_softmax(x: &RefTensor) -> RefTensor {
    let k = x.shape[1];
    let mut out = vec![0.0f64; x.data.len()];
    for (row_i, row) in x.data.chunks_exact(k).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            out[row_i * k + j] = e / sum;
        }
    }
    RefTensor {
        shape: x.shape.clone(),
        data: out,
    }
}

fn ref_gap(x: &RefTensor) -> RefTensor {
    let (n_b, c) = (x.shape[0], x.shape[1]);
    let inner: usize = x.shape[2..].iter().product();
    let mut out = vec![0.0f64; n_b * c];
    for (o, chunk) in out.iter_mut().zip(x.data.chunks_exact(inner)) {
        *o = chunk.iter().sum::<f64>() / inner as f64;
    }
    RefTensor {
        shape: vec![n_b, c],
        data: out,
    }
}

pub fn ref_forward(layers: &[RefLayer], input: &RefTensor) -> RefTensor {
    let mut x = input.clone();
    for layer in layers {
        x = match layer {
            RefLayer::Conv3d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                weights,
                bias,
            } => ref_conv3d(&x, *in_ch, *out_ch, *kernel, *stride, *padding, weights, bias),
            RefLayer::BnTrain {
                channels,
                gamma,
                beta,
                eps,
            } => ref_bn_train(&x, *channels, gamma, beta, *eps),
            RefLayer::Relu => RefTensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|&v| v.max(0.0)).collect(),
            },
            RefLayer::Fc {
                in_f,
                out_f,
                weights,
                bias,
            } => ref_fc(&x, *in_f, *out_f, weights, bias),
            RefLayer::Softmax => ref_softmax(&x),
            RefLayer::Gap => ref_gap(&x),
            RefLayer::Residual { main, shortcut } => {
                let y = ref_forward(main, &x);
                let s = if shortcut.is_empty() {
                    x.clone()
                } else {
                    ref_forward(shortcut, &x)
                };
                RefTensor {
                    shape: y.shape.clone(),
                    data: y
                        .data
                        .iter()
                        .zip(&s.data)
                        .map(|(&a, &b)| (a + b).max(0.0))
                        .collect(),
                }
            }
        };
    }
    x
}

/// Projection loss sum(out .* r), the scalar used for every gradient check.
pub fn projection_loss(layers: &[RefLayer], input: &RefTensor, r: &[f64]) -> f64 {
    let out = ref_forward(layers, input);
    assert_eq!(out.len(), r.len(), "projection length mismatch");
    out.data.iter().zip(r).map(|(&a, &b)| a * b).sum()
}

/// Central finite differences of `projection_loss` with respect to the
/// `param_idx`-th parameter vector. `build` reconstructs the layer stack
/// from the flat parameter list.
pub fn fd_param_grad(
    build: &dyn Fn(&[Vec<f64>]) -> Vec<RefLayer>,
    params: &[Vec<f64>],
    param_idx: usize,
    input: &RefTensor,
    r: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut grads = vec![0.0f64; params[param_idx].len()];
    let mut work: Vec<Vec<f64>> = params.to_vec();
    for i in 0..grads.len() {
        let orig = work[param_idx][i];
        work[param_idx][i] = orig + eps;
        let plus = projection_loss(&build(&work), input, r);
        work[param_idx][i] = orig - eps;
        let minus = projection_loss(&build(&work), input, r);
        work[param_idx][i] = orig;
        grads[i] = (plus - minus) / (2.0 * eps);
    }
    grads
}

/// Central finite differences with respect to the input.
pub fn fd_input_grad(layers: &[RefLayer], input: &RefTensor, r: &[f64], eps: f64) -> Vec<f64> {
    let mut grads = vec![0.0f64; input.len()];
    let mut work = input.clone();
    for i in 0..grads.len() {
        let orig = work.data[i];
        work.data[i] = orig + eps;
        let plus = projection_loss(layers, &work, r);
        work.data[i] = orig - eps;
        let minus = projection_loss(layers, &work, r);
        work.data[i] = orig;
        grads[i] = (plus - minus) / (2.0 * eps);
    }
    grads
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_rel_err(got: &[f32], want: &[f32]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&g, &w)| ((g as f64) - (w as f64)).abs() / (w as f64).abs().max(1e-6))
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov test p-value (asymptotic).
pub fn ks_two_sample_p(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        if xa[i] <= xb[j] {
            i += 1;
        } else {
            j += 1;
        }
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        d = d.max((fa - fb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    // Kolmogorov distribution tail sum
    let mut p = 0.0f64;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    p.clamp(0.0, 1.0)
}
