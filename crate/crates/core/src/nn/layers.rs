//! Batched forward/backward kernels, NHWC layout throughout.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn shape_err(message: String) -> Error {
    Error::Shape { layer: 0, message }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 3×3 SAME-padded patches of one sample: row `p = y*w + x`, column
/// `(ky*3 + kx)*c + ci`, matching the `[3, 3, c_in, c_out]` kernel layout.
fn im2col(x: &[f64], h: usize, w: usize, c: usize, out: &mut [f64]) {
    let kk = 9 * c;
    out.fill(0.0);
    for y in 0..h {
        for xx in 0..w {
            let row = &mut out[(y * w + xx) * kk..(y * w + xx + 1) * kk];
            for ky in 0..3 {
                let sy = y as i64 + ky as i64 - 1;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as i64 + kx as i64 - 1;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * c;
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], h: usize, w: usize, c: usize, dx: &mut [f64]) {
    let kk = 9 * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &cols[(y * w + xx) * kk..(y * w + xx + 1) * kk];
            for ky in 0..3 {
                let sy = y as i64 + ky as i64 - 1;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as i64 + kx as i64 - 1;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * c;
                    let src = (ky * 3 + kx) * c;
                    for ci in 0..c {
                        dx[dst + ci] += row[src + ci];
                    }
                }
            }
        }
    }
}

fn conv2d_dims(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (xs, ks) = (x.shape(), k.shape());
    if xs.len() != 4 || ks.len() != 4 || ks[0] != 3 || ks[1] != 3 {
        return Err(shape_err(format!(
            "conv2d expects x [n,h,w,c] and k [3,3,c_in,c_out], got {xs:?} and {ks:?}"
        )));
    }
    if xs[3] != ks[2] {
        return Err(shape_err(format!(
            "conv2d channel mismatch: input has {}, kernel expects {}",
            xs[3], ks[2]
        )));
    }
    if b.len() != ks[3] {
        return Err(shape_err(format!("conv2d bias of {} for {} outputs", b.len(), ks[3])));
    }
    Ok((xs[0], xs[1], xs[2], xs[3], ks[3]))
}

/// Stride-1, SAME zero-padded 3×3 cross-correlation.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, h, w, ci, co) = conv2d_dims(x, k, b)?;
    let kk = 9 * ci;
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, h, w, co]);
    let mut cols = vec![0.0; hw * kk];
    let kd = k.data();
    for s in 0..n {
        im2col(&x.data()[s * hw * ci..(s + 1) * hw * ci], h, w, ci, &mut cols);
        let o = &mut out.data_mut()[s * hw * co..(s + 1) * hw * co];
        for p in 0..hw {
            let orow = &mut o[p * co..(p + 1) * co];
            orow.copy_from_slice(b.data());
            let crow = &cols[p * kk..(p + 1) * kk];
            for (q, &a) in crow.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, &kd[q * co..(q + 1) * co], orow);
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(dx, dk, db)`; `dx` only when `need_dx`.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let bias_probe = Tensor::zeros(&[k.shape().get(3).copied().unwrap_or(0)]);
    let (n, h, w, ci, co) = conv2d_dims(x, k, &bias_probe)?;
    if dy.shape() != [n, h, w, co] {
        return Err(shape_err(format!("conv2d upstream gradient {:?}", dy.shape())));
    }
    let kk = 9 * ci;
    let hw = h * w;
    let mut dk = Tensor::zeros(k.shape());
    let mut db = Tensor::zeros(&[co]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![0.0; hw * kk];
    let mut dcols = vec![0.0; hw * kk];
    let kd = k.data();
    for s in 0..n {
        im2col(&x.data()[s * hw * ci..(s + 1) * hw * ci], h, w, ci, &mut cols);
        let g = &dy.data()[s * hw * co..(s + 1) * hw * co];
        for p in 0..hw {
            let grow = &g[p * co..(p + 1) * co];
            axpy(1.0, grow, db.data_mut());
            let crow = &cols[p * kk..(p + 1) * kk];
            let dkd = dk.data_mut();
            for (q, &a) in crow.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, grow, &mut dkd[q * co..(q + 1) * co]);
                }
            }
            if need_dx {
                let drow = &mut dcols[p * kk..(p + 1) * kk];
                for (q, d) in drow.iter_mut().enumerate() {
                    *d = dot(&kd[q * co..(q + 1) * co], grow);
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            col2im_add(&dcols, h, w, ci, &mut dx.data_mut()[s * hw * ci..(s + 1) * hw * ci]);
        }
    }
    Ok((dx, dk, db))
}

fn conv3d_dims(x: &Tensor, k: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (xs, ks) = (x.shape(), k.shape());
    if xs.len() != 5 || ks.len() != 5 || xs[4] != 1 || ks[1] != 1 || ks[2] != 1 || ks[3] != 1 {
        return Err(shape_err(format!(
            "conv3d expects x [n,t,h,w,1] and k [t,1,1,1,c_out], got {xs:?} and {ks:?}"
        )));
    }
    if xs[1] != ks[0] {
        return Err(shape_err(format!(
            "conv3d time extent {} does not match kernel {}",
            xs[1], ks[0]
        )));
    }
    Ok((xs[0], xs[1], xs[2] * xs[3], ks[4]))
}

/// Temporal kernel spanning the whole stack (VALID over time), so the time
/// axis collapses: `out[n,h,w,c] = Σ_t x[n,t,h,w,0]·k[t,c] + b[c]`.
pub fn conv3d_early_fusion(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, t, hw, co) = conv3d_dims(x, k)?;
    if b.len() != co {
        return Err(shape_err(format!("conv3d bias of {} for {co} outputs", b.len())));
    }
    let xs = x.shape();
    let mut out = Tensor::zeros(&[n, xs[2], xs[3], co]);
    let (xd, kd) = (x.data(), k.data());
    let od = out.data_mut();
    for s in 0..n {
        for p in 0..hw {
            let orow = &mut od[(s * hw + p) * co..(s * hw + p + 1) * co];
            orow.copy_from_slice(b.data());
            for ti in 0..t {
                let a = xd[(s * t + ti) * hw + p];
                axpy(a, &kd[ti * co..(ti + 1) * co], orow);
            }
        }
    }
    Ok(out)
}

pub fn conv3d_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (n, t, hw, co) = conv3d_dims(x, k)?;
    if dy.len() != n * hw * co {
        return Err(shape_err(format!("conv3d upstream gradient {:?}", dy.shape())));
    }
    let mut dk = Tensor::zeros(k.shape());
    let mut db = Tensor::zeros(&[co]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let (xd, kd, g) = (x.data(), k.data(), dy.data());
    for s in 0..n {
        for p in 0..hw {
            let grow = &g[(s * hw + p) * co..(s * hw + p + 1) * co];
            axpy(1.0, grow, db.data_mut());
            for ti in 0..t {
                let a = xd[(s * t + ti) * hw + p];
                axpy(a, grow, &mut dk.data_mut()[ti * co..(ti + 1) * co]);
                if let Some(dx) = dx.as_mut() {
                    dx.data_mut()[(s * t + ti) * hw + p] = dot(&kd[ti * co..(ti + 1) * co], grow);
                }
            }
        }
    }
    Ok((dx, dk, db))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).expect("same length")
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same length")
}

/// Output extent of a 2×2/stride-2 pool with partial edge windows.
pub fn pooled(len: usize) -> usize {
    len.div_ceil(2)
}

/// 2×2 stride-2 max pool; odd edges pool their partial window. Returns the
/// pooled tensor and, per output cell, the flat input index that won.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(shape_err(format!("pool expects [n,h,w,c], got {xs:?}")));
    }
    let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = (pooled(h), pooled(w));
    let mut out = Tensor::zeros(&[n, ho, wo, c]);
    let mut arg = vec![0usize; n * ho * wo * c];
    let xd = x.data();
    let od = out.data_mut();
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for xx in 2 * ox..(2 * ox + 2).min(w) {
                            let i = ((s * h + y) * w + xx) * c + ch;
                            if xd[i] > best {
                                best = xd[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = ((s * ho + oy) * wo + ox) * c + ch;
                    od[o] = best;
                    arg[o] = best_i;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2x2_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    dx
}

/// Inverted dropout. Without an rng (inference) it is the identity and no
/// mask is returned.
pub fn dropout_forward<R: Rng>(
    x: Tensor,
    rate: f64,
    rng: Option<&mut R>,
) -> (Tensor, Option<Vec<f64>>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
                .collect();
            let mut y = x;
            for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                *v *= m;
            }
            (y, Some(mask))
        }
        _ => (x, None),
    }
}

pub fn dropout_backward(dy: Tensor, mask: Option<&[f64]>) -> Tensor {
    match mask {
        Some(mask) => {
            let mut dx = dy;
            for (g, m) in dx.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
            dx
        }
        None => dy,
    }
}

fn dense_dims(x: &Tensor, wt: &Tensor) -> Result<(usize, usize, usize)> {
    let (xs, ws) = (x.shape(), wt.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(shape_err(format!(
            "dense expects x [n,in] and w [in,out], got {xs:?} and {ws:?}"
        )));
    }
    Ok((xs[0], ws[0], ws[1]))
}

pub fn dense_forward(x: &Tensor, wt: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, din, dout) = dense_dims(x, wt)?;
    if b.len() != dout {
        return Err(shape_err(format!("dense bias of {} for {dout} outputs", b.len())));
    }
    let mut out = Tensor::zeros(&[n, dout]);
    let wd = wt.data();
    for s in 0..n {
        let xrow = &x.data()[s * din..(s + 1) * din];
        let orow = &mut out.data_mut()[s * dout..(s + 1) * dout];
        orow.copy_from_slice(b.data());
        for (i, &a) in xrow.iter().enumerate() {
            if a != 0.0 {
                axpy(a, &wd[i * dout..(i + 1) * dout], orow);
            }
        }
    }
    Ok(out)
}

pub fn dense_backward(
    x: &Tensor,
    wt: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (n, din, dout) = dense_dims(x, wt)?;
    if dy.shape() != [n, dout] {
        return Err(shape_err(format!("dense upstream gradient {:?}", dy.shape())));
    }
    let mut dw = Tensor::zeros(wt.shape());
    let mut db = Tensor::zeros(&[dout]);
    let mut dx = need_dx.then(|| Tensor::zeros(&[n, din]));
    let wd = wt.data();
    for s in 0..n {
        let xrow = &x.data()[s * din..(s + 1) * din];
        let grow = &dy.data()[s * dout..(s + 1) * dout];
        axpy(1.0, grow, db.data_mut());
        let dwd = dw.data_mut();
        for (i, &a) in xrow.iter().enumerate() {
            if a != 0.0 {
                axpy(a, grow, &mut dwd[i * dout..(i + 1) * dout]);
            }
        }
        if let Some(dx) = dx.as_mut() {
            let drow = &mut dx.data_mut()[s * din..(s + 1) * din];
            for (i, d) in drow.iter_mut().enumerate() {
                *d = dot(&wd[i * dout..(i + 1) * dout], grow);
            }
        }
    }
    Ok((dx, dw, db))
}

/// Row-wise softmax of `[n, k]` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = *logits.shape().last().unwrap_or(&1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = random(&[2, 4, 5, 3], 1);
        let mut k = Tensor::zeros(&[3, 3, 3, 3]);
        for c in 0..3 {
            // centre tap (1,1), channel c -> c
            k.data_mut()[((3 + 1) * 3 + c) * 3 + c] = 1.0;
        }
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn box_kernel_sums_neighbourhood() {
        let x = Tensor::from_vec(&[1, 5, 6, 1], vec![1.0; 30]).unwrap();
        let k = Tensor::from_vec(&[3, 3, 1, 1], vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        for yy in 1..4 {
            for xx in 1..5 {
                assert_eq!(y.data()[yy * 6 + xx], 9.0);
            }
        }
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn conv2d_matches_naive_loops() {
        let (n, h, w, ci, co) = (1, 5, 6, 2, 3);
        let x = random(&[n, h, w, ci], 2);
        let k = random(&[3, 3, ci, co], 3);
        let b = random(&[co], 4);
        let y = conv2d_forward(&x, &k, &b).unwrap();
        let mut worst = 0.0f64;
        for yy in 0..h as i64 {
            for xx in 0..w as i64 {
                for o in 0..co {
                    let mut acc = b.data()[o];
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            for c in 0..ci {
                                let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                    continue;
                                }
                                let xv = x.data()[((sy as usize) * w + sx as usize) * ci + c];
                                let kv = k.data()[(((ky * 3 + kx) as usize) * ci + c) * co + o];
                                acc += xv * kv;
                            }
                        }
                    }
                    let got = y.data()[((yy as usize) * w + xx as usize) * co + o];
                    worst = worst.max((got - acc).abs());
                }
            }
        }
        assert!(worst < 1e-10, "max abs diff {worst}");
    }

    #[test]
    fn conv2d_channel_mismatch() {
        let x = random(&[1, 4, 4, 2], 5);
        let k = random(&[3, 3, 3, 4], 6);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn temporal_delta_selects_newest_frame() {
        let x = random(&[2, 5, 3, 4, 1], 7);
        let co = 4;
        let mut k = Tensor::zeros(&[5, 1, 1, 1, co]);
        for c in 0..co {
            k.data_mut()[4 * co + c] = 1.0;
        }
        let y = conv3d_early_fusion(&x, &k, &Tensor::zeros(&[co])).unwrap();
        assert_eq!(y.shape(), &[2, 3, 4, co]);
        for s in 0..2 {
            for p in 0..12 {
                for c in 0..co {
                    assert_eq!(y.data()[(s * 12 + p) * co + c], x.data()[(s * 5 + 4) * 12 + p]);
                }
            }
        }
    }

    #[test]
    fn convex_temporal_weights_on_equal_frames() {
        let frame: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let x = Tensor::from_vec(&[1, 5, 3, 4, 1], frame.repeat(5)).unwrap();
        let k = Tensor::from_vec(&[5, 1, 1, 1, 2], vec![0.1, 0.3, 0.2, 0.2, 0.3, 0.1, 0.2, 0.2, 0.2, 0.2]).unwrap();
        let y = conv3d_early_fusion(&x, &k, &Tensor::zeros(&[2])).unwrap();
        for p in 0..12 {
            for c in 0..2 {
                assert!((y.data()[p * 2 + c] - frame[p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv3d_matches_direct_sum() {
        let x = random(&[2, 5, 3, 2, 1], 8);
        let k = random(&[5, 1, 1, 1, 3], 9);
        let b = random(&[3], 10);
        let y = conv3d_early_fusion(&x, &k, &b).unwrap();
        let mut worst = 0.0f64;
        for s in 0..2 {
            for p in 0..6 {
                for c in 0..3 {
                    let mut acc = b.data()[c];
                    for t in 0..5 {
                        acc += x.data()[(s * 5 + t) * 6 + p] * k.data()[t * 3 + c];
                    }
                    worst = worst.max((acc - y.data()[(s * 6 + p) * 3 + c]).abs());
                }
            }
        }
        assert!(worst < 1e-10);
    }

    #[test]
    fn conv3d_rejects_wrong_time_extent() {
        let x = random(&[1, 4, 3, 2, 1], 11);
        let k = random(&[5, 1, 1, 1, 3], 12);
        assert!(conv3d_early_fusion(&x, &k, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn pool_uses_ceil_sizes() {
        let x = random(&[1, 5, 30, 2], 13);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 15, 2]);
        let c = Tensor::from_vec(&[1, 3, 3, 1], vec![0.7; 9]).unwrap();
        let (yc, _) = maxpool2x2_forward(&c).unwrap();
        assert!(yc.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn dropout_rate_zero_and_inference_are_identity() {
        let x = random(&[2, 3, 3, 2], 14);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, mask) = dropout_forward(x.clone(), 0.0, Some(&mut rng));
        assert_eq!(y, x);
        assert!(mask.is_none());
        let (y, mask) = dropout_forward::<ChaCha8Rng>(x.clone(), 0.5, None);
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn dropout_scales_survivors() {
        let x = Tensor::from_vec(&[1, 1000], vec![1.0; 1000]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, _) = dropout_forward(x, 0.25, Some(&mut rng));
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!((150..350).contains(&zeros));
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = random(&[4, 5], 15);
        let p = softmax(&z);
        for row in p.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        let big = Tensor::from_vec(&[1, 2], vec![1000.0, -1000.0]).unwrap();
        assert!(softmax(&big).all_finite());
    }
}
