//! Forward and backward kernels for the layers.
//!
//! These are plain functions over tensors so the tape can record them and
//! inference paths (embedding, prediction) can call them without a tape.
//! Dense products and loss reductions accumulate in `f64`; convolutions
//! accumulate in the scalar type (at most a few hundred terms per output).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

fn dims2(t: &Tensor<impl Scalar>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::shape(op, format!("expected rank 2, got {s:?}"))),
    }
}

fn dims4(t: &Tensor<impl Scalar>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        s => Err(Error::shape(op, format!("expected rank 4, got {s:?}"))),
    }
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

/// `x[n,d_in] . w[d_in,d_out] + b[d_out]`.
pub fn dense_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, d_in) = dims2(x, "dense")?;
    let (wk, d_out) = dims2(w, "dense")?;
    if wk != d_in || b.shape() != [d_out] {
        return Err(Error::shape(
            "dense",
            format!(
                "x {:?} . w {:?} + b {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    let w64: Vec<f64> = w.data().iter().map(|v| v.as_f64()).collect();
    let xs = x.data();
    let mut acc = vec![0.0f64; n * d_out];
    for i in 0..n {
        let out_row = &mut acc[i * d_out..(i + 1) * d_out];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = b.data()[j].as_f64();
        }
        for k in 0..d_in {
            let xv = xs[i * d_in + k].as_f64();
            if xv == 0.0 {
                continue;
            }
            let w_row = &w64[k * d_out..(k + 1) * d_out];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(
        vec![n, d_out],
        acc.into_iter().map(S::from_f64).collect(),
    )
}

/// Gradients of `dense_forward` given upstream `g[n,d_out]`.
pub fn dense_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    g: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[1];
    debug_assert_eq!(g.shape(), [n, d_out]);

    // dx[i,k] = sum_j g[i,j] w[k,j]
    let mut dx = vec![S::zero(); n * d_in];
    for i in 0..n {
        let g_row = &g.data()[i * d_out..(i + 1) * d_out];
        for k in 0..d_in {
            let w_row = &w.data()[k * d_out..(k + 1) * d_out];
            let dot: f64 = g_row
                .iter()
                .zip(w_row)
                .map(|(&gv, &wv)| gv.as_f64() * wv.as_f64())
                .sum();
            dx[i * d_in + k] = S::from_f64(dot);
        }
    }

    // dw[k,j] = sum_i x[i,k] g[i,j]
    let mut dw = vec![0.0f64; d_in * d_out];
    for i in 0..n {
        let g_row = &g.data()[i * d_out..(i + 1) * d_out];
        for k in 0..d_in {
            let xv = x.data()[i * d_in + k].as_f64();
            if xv == 0.0 {
                continue;
            }
            let dw_row = &mut dw[k * d_out..(k + 1) * d_out];
            for (o, &gv) in dw_row.iter_mut().zip(g_row) {
                *o += xv * gv.as_f64();
            }
        }
    }

    // db[j] = sum_i g[i,j]
    let mut db = vec![0.0f64; d_out];
    for i in 0..n {
        for j in 0..d_out {
            db[j] += g.data()[i * d_out + j].as_f64();
        }
    }

    (
        Tensor::new(vec![n, d_in], dx).unwrap(),
        Tensor::new(vec![d_in, d_out], dw.into_iter().map(S::from_f64).collect()).unwrap(),
        Tensor::new(vec![d_out], db.into_iter().map(S::from_f64).collect()).unwrap(),
    )
}

// ---------------------------------------------------------------------------
// conv2d, stride 1, 'same' zero padding, odd kernel
// ---------------------------------------------------------------------------

/// `x[n,c_in,h,w] * wt[c_out,c_in,kh,kw] + b[c_out]`, output `[n,c_out,h,w]`.
pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    wt: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, c_in, h, w) = dims4(x, "conv2d")?;
    let (c_out, wc_in, kh, kw) = dims4(wt, "conv2d")?;
    if wc_in != c_in || b.shape() != [c_out] || kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!(
                "x {:?} * w {:?} + b {:?} (kernel dims must be odd)",
                x.shape(),
                wt.shape(),
                b.shape()
            ),
        ));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * w;
    let mut out = vec![S::zero(); n * c_out * plane];

    for im in 0..n {
        for oc in 0..c_out {
            let o_plane = &mut out[(im * c_out + oc) * plane..(im * c_out + oc + 1) * plane];
            o_plane.fill(b.data()[oc]);
            for ic in 0..c_in {
                let x_plane = &x.data()[(im * c_in + ic) * plane..(im * c_in + ic + 1) * plane];
                for ky in 0..kh {
                    let dy = ky as isize - ph as isize;
                    let oy_lo = (-dy).max(0) as usize;
                    let oy_hi = ((h as isize - dy).min(h as isize)) as usize;
                    for kx in 0..kw {
                        let dxo = kx as isize - pw as isize;
                        let ox_lo = (-dxo).max(0) as usize;
                        let ox_hi = ((w as isize - dxo).min(w as isize)) as usize;
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let wv = wt.data()[((oc * c_in + ic) * kh + ky) * kw + kx];
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + dy) as usize;
                            let src = &x_plane
                                [iy * w + (ox_lo as isize + dxo) as usize..];
                            let dst = &mut o_plane[oy * w + ox_lo..oy * w + ox_hi];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = *d + wv * *s;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, h, w], out)
}

/// Gradients of `conv2d_forward` given upstream `g[n,c_out,h,w]`.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    wt: &Tensor<S>,
    g: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kh, kw) = (wt.shape()[0], wt.shape()[2], wt.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * w;

    let mut dx = vec![S::zero(); x.numel()];
    let mut dw = vec![0.0f64; wt.numel()];
    let mut db = vec![0.0f64; c_out];

    for im in 0..n {
        for oc in 0..c_out {
            let g_plane = &g.data()[(im * c_out + oc) * plane..(im * c_out + oc + 1) * plane];
            db[oc] += g_plane.iter().map(|v| v.as_f64()).sum::<f64>();
            for ic in 0..c_in {
                let x_plane = &x.data()[(im * c_in + ic) * plane..(im * c_in + ic + 1) * plane];
                let dx_plane =
                    &mut dx[(im * c_in + ic) * plane..(im * c_in + ic + 1) * plane];
                for ky in 0..kh {
                    let dy = ky as isize - ph as isize;
                    let oy_lo = (-dy).max(0) as usize;
                    let oy_hi = ((h as isize - dy).min(h as isize)) as usize;
                    for kx in 0..kw {
                        let dxo = kx as isize - pw as isize;
                        let ox_lo = (-dxo).max(0) as usize;
                        let ox_hi = ((w as isize - dxo).min(w as isize)) as usize;
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let widx = ((oc * c_in + ic) * kh + ky) * kw + kx;
                        let wv = wt.data()[widx];
                        let mut wgrad = 0.0f64;
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + dy) as usize;
                            let ix_lo = (ox_lo as isize + dxo) as usize;
                            let g_row = &g_plane[oy * w + ox_lo..oy * w + ox_hi];
                            let x_row = &x_plane[iy * w + ix_lo..iy * w + ix_lo + g_row.len()];
                            let dx_row =
                                &mut dx_plane[iy * w + ix_lo..iy * w + ix_lo + g_row.len()];
                            let mut row_dot = S::zero();
                            for ((dxv, &gv), &xv) in dx_row.iter_mut().zip(g_row).zip(x_row) {
                                *dxv = *dxv + wv * gv;
                                row_dot = row_dot + gv * xv;
                            }
                            wgrad += row_dot.as_f64();
                        }
                        dw[widx] += wgrad;
                    }
                }
            }
        }
    }

    (
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
        Tensor::new(
            wt.shape().to_vec(),
            dw.into_iter().map(S::from_f64).collect(),
        )
        .unwrap(),
        Tensor::new(vec![c_out], db.into_iter().map(S::from_f64).collect()).unwrap(),
    )
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

/// Returns the pooled tensor and, per output element, the flat input index of
/// its maximum (first occurrence on ties).
pub fn maxpool2_forward<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<u32>)> {
    let (n, c, h, w) = dims4(x, "maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2",
            format!("spatial dims must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![S::zero(); n * c * oh * ow];
    let mut argmax = vec![0u32; out.len()];
    for pc in 0..n * c {
        let x_plane = &x.data()[pc * h * w..(pc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = S::neg_infinity();
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dxo in 0..2 {
                        let idx = (oy * 2 + dy) * w + ox * 2 + dxo;
                        if x_plane[idx] > best {
                            best = x_plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (pc * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = (pc * h * w + best_idx) as u32;
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

/// Routes each output gradient to its argmax input position.
pub fn maxpool2_backward<S: Scalar>(
    g: &Tensor<S>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Tensor<S> {
    let mut dx = vec![S::zero(); input_shape.iter().product()];
    for (gv, &idx) in g.data().iter().zip(argmax) {
        dx[idx as usize] += *gv;
    }
    Tensor::new(input_shape.to_vec(), dx).unwrap()
}

// ---------------------------------------------------------------------------
// elementwise activations
// ---------------------------------------------------------------------------

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let data = x.data().iter().map(|&v| v.max(S::zero())).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

pub fn relu_backward<S: Scalar>(x: &Tensor<S>, g: &Tensor<S>) -> Tensor<S> {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xv, &gv)| if xv > S::zero() { gv } else { S::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

pub fn sigmoid_scalar<S: Scalar>(z: S) -> S {
    // Evaluated on the side of the exponent that cannot overflow.
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

pub fn sigmoid_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

/// Backward from the forward *output* `y`: dy/dx = y(1-y).
pub fn sigmoid_backward<S: Scalar>(y: &Tensor<S>, g: &Tensor<S>) -> Tensor<S> {
    let data = y
        .data()
        .iter()
        .zip(g.data())
        .map(|(&yv, &gv)| gv * yv * (S::one() - yv))
        .collect();
    Tensor::new(y.shape().to_vec(), data).unwrap()
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Mean softmax cross-entropy over integer labels, stabilized with
/// log-sum-exp. Returns the scalar loss and the row-softmax probabilities
/// (needed by the backward pass).
pub fn softmax_ce_forward<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[u16],
) -> Result<(S, Vec<S>)> {
    let (n, c) = dims2(logits, "softmax_ce")?;
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_ce",
            format!("{n} logit rows vs {} labels", labels.len()),
        ));
    }
    let mut probs = vec![S::zero(); n * c];
    let mut total = 0.0f64;
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let label = labels[i] as usize;
        if label >= c {
            return Err(Error::contract(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - m).exp().as_f64()).sum();
        let lse = m.as_f64() + sum_exp.ln();
        for (p, &z) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
            *p = S::from_f64((z.as_f64() - lse).exp());
        }
        total += lse - row[label].as_f64();
    }
    Ok((S::from_f64(total / n as f64), probs))
}

pub fn softmax_ce_backward<S: Scalar>(
    probs: &[S],
    labels: &[u16],
    classes: usize,
    upstream: S,
) -> Tensor<S> {
    let n = labels.len();
    let scale = upstream.as_f64() / n as f64;
    let mut dlogits = vec![S::zero(); probs.len()];
    for i in 0..n {
        for j in 0..classes {
            let onehot = if labels[i] as usize == j { 1.0 } else { 0.0 };
            dlogits[i * classes + j] =
                S::from_f64((probs[i * classes + j].as_f64() - onehot) * scale);
        }
    }
    Tensor::new(vec![n, classes], dlogits).unwrap()
}

/// Mean binary cross-entropy on logits, elementwise over the whole tensor:
/// `max(z,0) - z t + ln(1 + e^-|z|)`.
pub fn bce_logits_forward<S: Scalar>(z: &Tensor<S>, t: &Tensor<S>) -> Result<S> {
    if z.shape() != t.shape() {
        return Err(Error::shape(
            "bce_logits",
            format!("{:?} vs {:?}", z.shape(), t.shape()),
        ));
    }
    let total: f64 = z
        .data()
        .iter()
        .zip(t.data())
        .map(|(&zv, &tv)| {
            let z64 = zv.as_f64();
            z64.max(0.0) - z64 * tv.as_f64() + (-z64.abs()).exp().ln_1p()
        })
        .sum();
    Ok(S::from_f64(total / z.numel() as f64))
}

pub fn bce_logits_backward<S: Scalar>(z: &Tensor<S>, t: &Tensor<S>, upstream: S) -> Tensor<S> {
    let scale = upstream.as_f64() / z.numel() as f64;
    let data = z
        .data()
        .iter()
        .zip(t.data())
        .map(|(&zv, &tv)| {
            S::from_f64((sigmoid_scalar(zv).as_f64() - tv.as_f64()) * scale)
        })
        .collect();
    Tensor::new(z.shape().to_vec(), data).unwrap()
}
