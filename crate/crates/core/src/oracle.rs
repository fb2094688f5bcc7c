//! Independent f64 reference implementations used as verification oracles.
//!
//! These deliberately do not share code with [`crate::numgrad`]: the tape
//! kernels compute in f32 with their own loop structures, while everything
//! here is a direct f64 transcription of the defining formulas. Tests pair
//! the two routes (plus central finite differences) so a defect in one
//! cannot hide in the other.

use alloc::vec;
use alloc::vec::Vec;

/// y[b,o] = sum_i x[b,i] w[i,o] + bias[o]
pub fn affine64(x: &[f64], w: &[f64], bias: &[f64], bsz: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; bsz * dout];
    for b in 0..bsz {
        for o in 0..dout {
            let mut acc = bias[o];
            for i in 0..din {
                acc += x[b * din + i] * w[i * dout + o];
            }
            y[b * dout + o] = acc;
        }
    }
    y
}

/// Same-padded stride-1 convolution, f64, written index-wise from the
/// definition rather than with shifted row slices.
#[allow(clippy::too_many_arguments)]
pub fn conv2d64(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    bsz: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k as isize - 1) / 2;
    let plane = h * wd;
    let mut y = vec![0.0; bsz * cout * plane];
    for b in 0..bsz {
        for co in 0..cout {
            for oy in 0..h as isize {
                for ox in 0..wd as isize {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let iy = oy + ky - pad;
                                let ix = ox + kx - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((b * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((co * cin + ci) * k + ky as usize) * k + kx as usize];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[((b * cout + co) * h + oy as usize) * wd + ox as usize] = acc;
                }
            }
        }
    }
    y
}

pub fn maxpool2_64(x: &[f64], planes: usize, h: usize, wd: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, wd / 2);
    let mut y = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for i in 0..oh {
            for j in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for di in 0..2 {
                    for dj in 0..2 {
                        m = m.max(x[p * h * wd + (2 * i + di) * wd + 2 * j + dj]);
                    }
                }
                y[p * oh * ow + i * ow + j] = m;
            }
        }
    }
    y
}

pub fn relu64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn log_softmax64(x: &[f64], bsz: usize, c: usize) -> Vec<f64> {
    let mut y = vec![0.0; bsz * c];
    for b in 0..bsz {
        let row = &x[b * c..(b + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(row.iter().map(|&v| libm::exp(v - m)).sum::<f64>());
        for i in 0..c {
            y[b * c + i] = row[i] - lse;
        }
    }
    y
}

pub fn softmax64(x: &[f64], bsz: usize, c: usize) -> Vec<f64> {
    log_softmax64(x, bsz, c).iter().map(|&v| libm::exp(v)).collect()
}

/// Mean cross-entropy of logits [B,C] against hard labels, in f64.
pub fn mean_cross_entropy64(logits: &[f64], labels: &[usize], bsz: usize, c: usize) -> f64 {
    let logp = log_softmax64(logits, bsz, c);
    let mut acc = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        acc -= logp[b * c + y];
    }
    acc / bsz as f64
}

/// Central finite difference of `f` along coordinate `i` of `x`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Checks an autodiff gradient against central differences of an f64
/// scalar function. Passes when for every coordinate
///   |ad - fd| <= abs_tol  or  |ad - fd| <= rel_tol * max(|ad|, |fd|).
/// Returns the first failing coordinate with both values on failure.
pub fn gradcheck<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    autodiff_grad: &[f32],
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> core::result::Result<(), (usize, f64, f64)> {
    assert_eq!(x.len(), autodiff_grad.len());
    for i in 0..x.len() {
        let fd = central_diff(f, x, i, h);
        let ad = autodiff_grad[i] as f64;
        let diff = (ad - fd).abs();
        if diff > abs_tol && diff > rel_tol * ad.abs().max(fd.abs()) {
            return Err((i, ad, fd));
        }
    }
    Ok(())
}

/// Finite-difference step balancing truncation and round-off at f32 scale.
pub const FD_STEP: f64 = 1e-3;
/// Relative tolerance for autodiff-vs-FD agreement.
pub const FD_REL_TOL: f64 = 1e-3;
/// Absolute tolerance for gradients near zero.
pub const FD_ABS_TOL: f64 = 1e-5;

/// Runs `cases` randomized gradient checks of one tape construction
/// against an f64 oracle forward.
///
/// For each case: `gen` draws leaf tensors (all marked `requires_grad`),
/// `build` wires the op under test on a fresh tape, and `oracle_fwd` must
/// compute the same mathematical function from the f64 copies of those
/// inputs. The harness contracts the op output with a random weight vector
/// so every output coordinate influences the scalar loss, runs `backward`,
/// and compares each input coordinate's gradient to a central finite
/// difference of the weighted oracle.
///
/// Returns the total number of coordinates checked, or a description of
/// the first failure.
pub fn check_op(
    seed: u64,
    cases: usize,
    mut gen: impl FnMut(&mut Rng) -> Vec<Tensor>,
    mut build: impl FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
    mut oracle_fwd: impl FnMut(&[Vec<f64>]) -> Vec<f64>,
) -> core::result::Result<usize, String> {
    let mut coords = 0usize;
    for case in 0..cases {
        let mut rng = Rng::new(crate::rng::mix(seed, &[case as u64]));
        let inputs = gen(&mut rng);
        let inputs64: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();

        // Forward + backward through the tape.
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &ids).map_err(|e| format!("case {case}: forward failed: {e}"))?;
        let out_numel = tape.value(out).numel();
        let weights: Vec<f32> = (0..out_numel).map(|_| rng.f32_range(-1.0, 1.0)).collect();
        let wleaf = tape.leaf(Tensor::from_vec(tape.value(out).shape(), weights.clone()).expect("weight tensor"));
        let prod = tape.mul(out, wleaf).map_err(|e| format!("case {case}: {e}"))?;
        let loss = tape.sum(prod).map_err(|e| format!("case {case}: {e}"))?;
        tape.backward(loss).map_err(|e| format!("case {case}: backward failed: {e}"))?;

        let weights64: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
        // Weighted oracle over the concatenated coordinate space.
        let sizes: Vec<usize> = inputs64.iter().map(|v| v.len()).collect();
        let mut scalar = |flat: &[f64]| -> f64 {
            let mut split = Vec::with_capacity(sizes.len());
            let mut off = 0;
            for &n in &sizes {
                split.push(flat[off..off + n].to_vec());
                off += n;
            }
            let y = oracle_fwd(&split);
            y.iter().zip(&weights64).map(|(&a, &b)| a * b).sum()
        };
        let flat: Vec<f64> = inputs64.iter().flatten().copied().collect();
        let mut off = 0;
        for (i, id) in ids.iter().enumerate() {
            let ad = tape.grad(*id).ok_or_else(|| format!("case {case}: input {i} got no gradient"))?;
            for (j, &a) in ad.iter().enumerate() {
                let fd = central_diff(&mut scalar, &flat, off + j, FD_STEP);
                let diff = (a as f64 - fd).abs();
                if diff > FD_ABS_TOL && diff > FD_REL_TOL * (a as f64).abs().max(fd.abs()) {
                    return Err(format!(
                        "case {case}: input {i} coord {j}: autodiff {a} vs finite-diff {fd}"
                    ));
                }
                coords += 1;
            }
            off += ad.len();
        }
    }
    Ok(coords)
}

use crate::error::Result;
use crate::numgrad::{NodeId, Tape, Tensor};
use crate::rng::Rng;
use alloc::format;
use alloc::string::String;
