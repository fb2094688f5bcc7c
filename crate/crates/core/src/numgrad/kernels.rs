//! Raw f32 kernels behind the tape ops.
//!
//! All loops run in a fixed order so results are bit-deterministic. Inner
//! loops are written over unit-stride slices so they autovectorize.

use alloc::vec;
use alloc::vec::Vec;

/// y[b,o] = sum_i x[b,i] * w[i,o] + bias[o]
pub fn affine_fwd(x: &[f32], w: &[f32], bias: &[f32], bsz: usize, din: usize, dout: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; bsz * dout];
    for b in 0..bsz {
        let yrow = &mut y[b * dout..(b + 1) * dout];
        yrow.copy_from_slice(bias);
        let xrow = &x[b * din..(b + 1) * din];
        for (i, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue; // common after ReLU
            }
            let wrow = &w[i * dout..(i + 1) * dout];
            for (yv, &wv) in yrow.iter_mut().zip(wrow) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Backward of `affine_fwd`. Accumulates into the provided grad buffers.
pub fn affine_bwd(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    bsz: usize,
    din: usize,
    dout: usize,
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    if let Some(dx) = dx {
        for b in 0..bsz {
            let dyrow = &dy[b * dout..(b + 1) * dout];
            let dxrow = &mut dx[b * din..(b + 1) * din];
            for (i, dxv) in dxrow.iter_mut().enumerate() {
                let wrow = &w[i * dout..(i + 1) * dout];
                let mut acc = 0.0f32;
                for (&dyv, &wv) in dyrow.iter().zip(wrow) {
                    acc += dyv * wv;
                }
                *dxv += acc;
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..bsz {
            let xrow = &x[b * din..(b + 1) * din];
            let dyrow = &dy[b * dout..(b + 1) * dout];
            for (i, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let dwrow = &mut dw[i * dout..(i + 1) * dout];
                for (dwv, &dyv) in dwrow.iter_mut().zip(dyrow) {
                    *dwv += xv * dyv;
                }
            }
        }
    }
    if let Some(db) = db {
        for b in 0..bsz {
            let dyrow = &dy[b * dout..(b + 1) * dout];
            for (dbv, &dyv) in db.iter_mut().zip(dyrow) {
                *dbv += dyv;
            }
        }
    }
}

/// Same-padded stride-1 convolution with a square odd kernel.
/// x: [B, Ci, H, W], w: [Co, Ci, K, K], bias: [Co] -> y: [B, Co, H, W]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd(
    x: &[f32],
    w: &[f32],
    bias: &[f32],
    bsz: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    k: usize,
) -> Vec<f32> {
    let pad = (k - 1) / 2;
    let plane = h * wd;
    let mut y = vec![0.0f32; bsz * cout * plane];
    for b in 0..bsz {
        for co in 0..cout {
            let yplane = &mut y[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            yplane.fill(bias[co]);
            for ci in 0..cin {
                let xplane = &x[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                for ky in 0..k {
                    let oy = ky as isize - pad as isize;
                    let r0 = (-oy).max(0) as usize;
                    let r1 = ((h as isize - oy).min(h as isize)) as usize;
                    for kx in 0..k {
                        let wv = w[((co * cin + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let ox = kx as isize - pad as isize;
                        let c0 = (-ox).max(0) as usize;
                        let c1 = ((wd as isize - ox).min(wd as isize)) as usize;
                        for row in r0..r1 {
                            let src_row = (row as isize + oy) as usize;
                            let dst = &mut yplane[row * wd + c0..row * wd + c1];
                            let src_off = (src_row * wd) as isize + ox;
                            let src = &xplane[(src_off + c0 as isize) as usize
                                ..(src_off + c1 as isize) as usize];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * *s;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Backward of `conv2d_fwd`. Accumulates into the provided grad buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    bsz: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    k: usize,
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    let pad = (k - 1) / 2;
    let plane = h * wd;
    if let Some(dx) = dx {
        for b in 0..bsz {
            for co in 0..cout {
                let dyplane = &dy[(b * cout + co) * plane..(b * cout + co + 1) * plane];
                for ci in 0..cin {
                    let dxplane =
                        &mut dx[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    for ky in 0..k {
                        let oy = ky as isize - pad as isize;
                        let r0 = (-oy).max(0) as usize;
                        let r1 = ((h as isize - oy).min(h as isize)) as usize;
                        for kx in 0..k {
                            let wv = w[((co * cin + ci) * k + ky) * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let ox = kx as isize - pad as isize;
                            let c0 = (-ox).max(0) as usize;
                            let c1 = ((wd as isize - ox).min(wd as isize)) as usize;
                            for row in r0..r1 {
                                let src_row = (row as isize + oy) as usize;
                                let dyr = &dyplane[row * wd + c0..row * wd + c1];
                                let off = (src_row * wd) as isize + ox;
                                let dxr = &mut dxplane[(off + c0 as isize) as usize
                                    ..(off + c1 as isize) as usize];
                                for (d, g) in dxr.iter_mut().zip(dyr) {
                                    *d += wv * *g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..bsz {
            for co in 0..cout {
                let dyplane = &dy[(b * cout + co) * plane..(b * cout + co + 1) * plane];
                for ci in 0..cin {
                    let xplane = &x[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    for ky in 0..k {
                        let oy = ky as isize - pad as isize;
                        let r0 = (-oy).max(0) as usize;
                        let r1 = ((h as isize - oy).min(h as isize)) as usize;
                        for kx in 0..k {
                            let ox = kx as isize - pad as isize;
                            let c0 = (-ox).max(0) as usize;
                            let c1 = ((wd as isize - ox).min(wd as isize)) as usize;
                            let mut acc = 0.0f32;
                            for row in r0..r1 {
                                let src_row = (row as isize + oy) as usize;
                                let dyr = &dyplane[row * wd + c0..row * wd + c1];
                                let off = (src_row * wd) as isize + ox;
                                let xr = &xplane[(off + c0 as isize) as usize
                                    ..(off + c1 as isize) as usize];
                                for (&g, &s) in dyr.iter().zip(xr) {
                                    acc += g * s;
                                }
                            }
                            dw[((co * cin + ci) * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    if let Some(db) = db {
        for b in 0..bsz {
            for co in 0..cout {
                let dyplane = &dy[(b * cout + co) * plane..(b * cout + co + 1) * plane];
                db[co] += dyplane.iter().sum::<f32>();
            }
        }
    }
}

/// 2x2 max pooling with stride 2. H and W must be even.
pub fn maxpool2_fwd(x: &[f32], bsz: usize, c: usize, h: usize, wd: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, wd / 2);
    let mut y = vec![0.0f32; bsz * c * oh * ow];
    for p in 0..bsz * c {
        let xp = &x[p * h * wd..(p + 1) * h * wd];
        let yp = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let base = 2 * i * wd + 2 * j;
                let m = xp[base]
                    .max(xp[base + 1])
                    .max(xp[base + wd])
                    .max(xp[base + wd + 1]);
                yp[i * ow + j] = m;
            }
        }
    }
    y
}

/// Backward of 2x2 max pooling: gradient routes to the first maximum in
/// scan order (deterministic tie-break).
pub fn maxpool2_bwd(x: &[f32], dy: &[f32], bsz: usize, c: usize, h: usize, wd: usize, dx: &mut [f32]) {
    let (oh, ow) = (h / 2, wd / 2);
    for p in 0..bsz * c {
        let xp = &x[p * h * wd..(p + 1) * h * wd];
        let dyp = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dxp = &mut dx[p * h * wd..(p + 1) * h * wd];
        for i in 0..oh {
            for j in 0..ow {
                let base = 2 * i * wd + 2 * j;
                let idx = [base, base + 1, base + wd, base + wd + 1];
                let mut best = idx[0];
                for &cand in &idx[1..] {
                    if xp[cand] > xp[best] {
                        best = cand;
                    }
                }
                dxp[best] += dyp[i * ow + j];
            }
        }
    }
}

/// Row-wise log-softmax on [B, C].
pub fn log_softmax_fwd(x: &[f32], bsz: usize, c: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; bsz * c];
    for b in 0..bsz {
        let row = &x[b * c..(b + 1) * c];
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v));
        let mut s = 0.0f32;
        for &v in row {
            s += libm::expf(v - m);
        }
        let lse = m + libm::logf(s);
        for (o, &v) in y[b * c..(b + 1) * c].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    y
}

/// Backward of log-softmax: dx = dy - exp(y) * sum(dy) per row.
pub fn log_softmax_bwd(y: &[f32], dy: &[f32], bsz: usize, c: usize, dx: &mut [f32]) {
    for b in 0..bsz {
        let yr = &y[b * c..(b + 1) * c];
        let dyr = &dy[b * c..(b + 1) * c];
        let t: f32 = dyr.iter().sum();
        for ((d, &yv), &g) in dx[b * c..(b + 1) * c].iter_mut().zip(yr).zip(dyr) {
            *d += g - libm::expf(yv) * t;
        }
    }
}

/// Row-wise argmax on [B, C]; first index wins ties.
pub fn argmax_rows(x: &[f32], bsz: usize, c: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(bsz);
    for b in 0..bsz {
        let row = &x[b * c..(b + 1) * c];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        out.push(best);
    }
    out
}

/// Row-wise softmax on [B, C] (not on the tape; used for confidences).
pub fn softmax_rows(x: &[f32], bsz: usize, c: usize) -> Vec<f32> {
    let mut y = log_softmax_fwd(x, bsz, c);
    for v in y.iter_mut() {
        *v = libm::expf(*v);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity() {
        // 2x2 identity weight, zero bias
        let x = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0, 0.0, 0.0, 1.0];
        let b = [0.0, 0.0];
        let y = affine_fwd(&x, &w, &b, 2, 2, 2);
        assert_eq!(y, &x);
    }

    #[test]
    fn conv_1x1_unit_kernel_is_identity() {
        let x: Vec<f32> = (0..2 * 3 * 4 * 4).map(|i| i as f32 * 0.1).collect();
        let w = vec![0.0f32; 3 * 3]; // only diagonal set below
        let mut w_full = vec![0.0f32; 3 * 3 * 1 * 1];
        for c in 0..3 {
            w_full[c * 3 + c] = 1.0;
        }
        drop(w);
        let b = [0.0f32; 3];
        let y = conv2d_fwd(&x, &w_full, &b, 2, 3, 4, 4, 3, 1);
        assert_eq!(y, x);
    }

    #[test]
    fn maxpool_picks_max() {
        let x = [1.0, 2.0, 3.0, 4.0]; // one 2x2 plane
        let y = maxpool2_fwd(&x, 1, 1, 2, 2);
        assert_eq!(y, [4.0]);
        let mut dx = [0.0f32; 4];
        maxpool2_bwd(&x, &[1.0], 1, 1, 2, 2, &mut dx);
        assert_eq!(dx, [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn log_softmax_uniform_rows() {
        let x = [0.5f32; 10];
        let y = log_softmax_fwd(&x, 1, 10);
        for &v in &y {
            assert!((v - (-libm::logf(10.0))).abs() < 1e-6);
        }
    }

    #[test]
    fn log_softmax_rows_exp_sum_to_one() {
        let x = [3.0, -1.0, 0.5, 2.0, 7.0, -2.5];
        let y = log_softmax_fwd(&x, 2, 3);
        for b in 0..2 {
            let s: f32 = y[b * 3..(b + 1) * 3].iter().map(|&v| libm::expf(v)).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn argmax_first_tie_wins() {
        assert_eq!(argmax_rows(&[1.0, 3.0, 3.0], 1, 3), vec![1]);
    }
}
