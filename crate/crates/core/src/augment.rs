//! Weak and strong augmentation pipelines.
//!
//! Weak views are horizontal flip plus zero-pad-and-crop; strong views draw
//! a few ops from a small set (intensity shift, contrast scale, cutout,
//! translate, small rotate) and finish with a fixed-size cutout. Every view
//! is a pure function of (image, policy, seed, index).

use alloc::vec::Vec;

use crate::rng::{mix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    Weak,
    Strong,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrongOp {
    IntensityShift,
    ContrastScale,
    Cutout,
    Translate,
    SmallRotate,
}

pub const ALL_STRONG_OPS: [StrongOp; 5] = [
    StrongOp::IntensityShift,
    StrongOp::ContrastScale,
    StrongOp::Cutout,
    StrongOp::Translate,
    StrongOp::SmallRotate,
];

/// Fill value for cutout and exposed borders; mid-gray avoids stamping
/// accidental trigger-like black patches.
pub const FILL: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    /// Crop padding in pixels (weak views).
    pub pad: usize,
    pub flip_prob: f32,
    pub strong_ops: Vec<StrongOp>,
    pub strong_ops_per_image: usize,
    /// Maximum op magnitude in [0,1].
    pub magnitude: f32,
    /// Whether strong views end with the fixed (H/4)^2 cutout.
    pub cutout: bool,
}

impl AugmentPolicy {
    pub fn weak() -> Self {
        AugmentPolicy {
            kind: AugmentKind::Weak,
            pad: 2,
            flip_prob: 0.5,
            strong_ops: Vec::new(),
            strong_ops_per_image: 0,
            magnitude: 0.0,
            cutout: false,
        }
    }

    pub fn strong() -> Self {
        AugmentPolicy {
            kind: AugmentKind::Strong,
            pad: 2,
            flip_prob: 0.5,
            strong_ops: ALL_STRONG_OPS.to_vec(),
            strong_ops_per_image: 2,
            magnitude: 0.9,
            cutout: true,
        }
    }

    pub fn none() -> Self {
        AugmentPolicy {
            kind: AugmentKind::None,
            pad: 0,
            flip_prob: 0.0,
            strong_ops: Vec::new(),
            strong_ops_per_image: 0,
            magnitude: 0.0,
            cutout: false,
        }
    }
}

/// Applies the policy's view to one image. `index` distinguishes samples
/// sharing a stream seed.
pub fn view(img: &[f32], ch: usize, h: usize, w: usize, policy: &AugmentPolicy, seed: u64, index: u64) -> Vec<f32> {
    match policy.kind {
        AugmentKind::Weak => weak_view(img, ch, h, w, policy.pad, policy.flip_prob, seed, index),
        AugmentKind::Strong => strong_view(img, ch, h, w, policy, seed, index),
        AugmentKind::None => img.to_vec(),
    }
}

/// Horizontal flip with probability `flip_prob`, then zero-pad by `pad`
/// and crop back at a random offset.
#[allow(clippy::too_many_arguments)]
pub fn weak_view(img: &[f32], ch: usize, h: usize, w: usize, pad: usize, flip_prob: f32, seed: u64, index: u64) -> Vec<f32> {
    let mut rng = Rng::new(mix(seed, &[index]));
    let mut out = img.to_vec();
    if rng.bool(flip_prob) {
        hflip(&mut out, ch, h, w);
    }
    let oy = rng.index(2 * pad + 1);
    let ox = rng.index(2 * pad + 1);
    pad_crop(&out, ch, h, w, pad, oy, ox)
}

/// Mirrors an image in place about the vertical axis.
pub fn hflip(img: &mut [f32], ch: usize, h: usize, w: usize) {
    for c in 0..ch {
        for y in 0..h {
            let row = &mut img[(c * h + y) * w..(c * h + y + 1) * w];
            row.reverse();
        }
    }
}

/// Zero-pads by `pad` on every side and crops an HxW window whose top-left
/// corner is (oy, ox) in the padded frame; (pad, pad) is the identity.
pub fn pad_crop(img: &[f32], ch: usize, h: usize, w: usize, pad: usize, oy: usize, ox: usize) -> Vec<f32> {
    debug_assert!(oy <= 2 * pad && ox <= 2 * pad);
    let mut out = Vec::with_capacity(img.len());
    let (oy, ox, pad) = (oy as isize, ox as isize, pad as isize);
    for c in 0..ch {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let sy = y + oy - pad;
                let sx = x + ox - pad;
                let v = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                    0.0
                } else {
                    img[(c * h + sy as usize) * w + sx as usize]
                };
                out.push(v);
            }
        }
    }
    out
}

/// `strong_ops_per_image` sampled ops at sampled magnitudes, then the
/// fixed (H/4)^2 cutout when enabled, clamped to [0,1].
pub fn strong_view(img: &[f32], ch: usize, h: usize, w: usize, policy: &AugmentPolicy, seed: u64, index: u64) -> Vec<f32> {
    let mut rng = Rng::new(mix(seed, &[index]));
    let mut out = img.to_vec();
    if !policy.strong_ops.is_empty() {
        for _ in 0..policy.strong_ops_per_image {
            let op = policy.strong_ops[rng.index(policy.strong_ops.len())];
            let t = rng.f32_unit() * policy.magnitude;
            apply_strong_op(&mut out, ch, h, w, op, t, &mut rng);
        }
    }
    if policy.cutout {
        let side = h / 4;
        cutout(&mut out, ch, h, w, side, &mut rng);
    }
    for v in out.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

fn apply_strong_op(img: &mut [f32], ch: usize, h: usize, w: usize, op: StrongOp, t: f32, rng: &mut Rng) {
    match op {
        StrongOp::IntensityShift => {
            let delta = if rng.bool(0.5) { 0.5 * t } else { -0.5 * t };
            for v in img.iter_mut() {
                *v += delta;
            }
        }
        StrongOp::ContrastScale => {
            // written as an additive delta so factor 1.0 is an exact no-op
            let factor = if rng.bool(0.5) { 1.0 + 0.9 * t } else { 1.0 - 0.9 * t };
            for v in img.iter_mut() {
                *v += (*v - 0.5) * (factor - 1.0);
            }
        }
        StrongOp::Cutout => {
            let side = libm::roundf(t * h as f32 * 0.4) as usize;
            cutout(img, ch, h, w, side, rng);
        }
        StrongOp::Translate => {
            let dx = libm::roundf(rng.f32_range(-1.0, 1.0) * t * w as f32 / 4.0) as isize;
            let dy = libm::roundf(rng.f32_range(-1.0, 1.0) * t * h as f32 / 4.0) as isize;
            translate(img, ch, h, w, dy, dx);
        }
        StrongOp::SmallRotate => {
            let max_rad = 15.0 * core::f32::consts::PI / 180.0;
            let theta = rng.f32_range(-1.0, 1.0) * t * max_rad;
            rotate(img, ch, h, w, theta);
        }
    }
}

/// Sets a side x side patch at a random fully-inside position to FILL.
/// Draws its position only when the patch is non-empty.
fn cutout(img: &mut [f32], ch: usize, h: usize, w: usize, side: usize, rng: &mut Rng) {
    if side == 0 || side > h || side > w {
        return;
    }
    let oy = rng.index(h - side + 1);
    let ox = rng.index(w - side + 1);
    for c in 0..ch {
        for y in oy..oy + side {
            for x in ox..ox + side {
                img[(c * h + y) * w + x] = FILL;
            }
        }
    }
}

fn translate(img: &mut [f32], ch: usize, h: usize, w: usize, dy: isize, dx: isize) {
    if dy == 0 && dx == 0 {
        return;
    }
    let src = img.to_vec();
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let sy = y as isize - dy;
                let sx = x as isize - dx;
                img[(c * h + y) * w + x] = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                    FILL
                } else {
                    src[(c * h + sy as usize) * w + sx as usize]
                };
            }
        }
    }
}

fn rotate(img: &mut [f32], ch: usize, h: usize, w: usize, theta: f32) {
    if theta == 0.0 {
        return;
    }
    let src = img.to_vec();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (sin, cos) = (libm::sinf(theta), libm::cosf(theta));
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let dy = y as f32 - cy;
                let dx = x as f32 - cx;
                let sy = cy - dx * sin + dy * cos;
                let sx = cx + dx * cos + dy * sin;
                let (ry, rx) = (libm::roundf(sy) as isize, libm::roundf(sx) as isize);
                img[(c * h + y) * w + x] = if ry < 0 || rx < 0 || ry >= h as isize || rx >= w as isize {
                    FILL
                } else {
                    src[(c * h + ry as usize) * w + rx as usize]
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::generate_synthetic;
    use alloc::vec;
    use proptest::prelude::*;

    fn demo_image() -> Vec<f32> {
        (0..24 * 24).map(|i| (i % 97) as f32 / 96.0).collect()
    }

    #[test]
    fn flip_is_an_involution() {
        let img = demo_image();
        let mut once = img.clone();
        hflip(&mut once, 1, 24, 24);
        assert_ne!(once, img);
        hflip(&mut once, 1, 24, 24);
        assert_eq!(once, img);
    }

    #[test]
    fn centered_crop_is_identity() {
        let img = demo_image();
        assert_eq!(pad_crop(&img, 1, 24, 24, 2, 2, 2), img);
    }

    #[test]
    fn weak_view_is_deterministic() {
        let img = demo_image();
        let a = weak_view(&img, 1, 24, 24, 2, 0.5, 42, 7);
        let b = weak_view(&img, 1, 24, 24, 2, 0.5, 42, 7);
        let c = weak_view(&img, 1, 24, 24, 2, 0.5, 42, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_magnitude_no_cutout_is_identity() {
        let img = demo_image();
        let mut policy = AugmentPolicy::strong();
        policy.magnitude = 0.0;
        policy.cutout = false;
        for index in 0..20 {
            assert_eq!(strong_view(&img, 1, 24, 24, &policy, 5, index), img, "index {index}");
        }
    }

    #[test]
    fn trailing_cutout_fills_exact_patch() {
        let img = vec![1.0f32; 24 * 24];
        let mut policy = AugmentPolicy::strong();
        policy.strong_ops_per_image = 0;
        let out = strong_view(&img, 1, 24, 24, &policy, 3, 0);
        let filled = out.iter().filter(|&&v| v == FILL).count();
        assert_eq!(filled, 6 * 6);
    }

    #[test]
    fn strong_views_change_more_than_weak() {
        let ds = generate_synthetic(10, 10, 24, 100).unwrap();
        let weak = AugmentPolicy::weak();
        let strong = AugmentPolicy::strong();
        let (mut dw, mut dst) = (0.0f64, 0.0f64);
        for i in 0..100 {
            let img = ds.image(i);
            let wv = view(img, 1, 24, 24, &weak, 1234, i as u64);
            let sv = view(img, 1, 24, 24, &strong, 1234, i as u64);
            dw += img.iter().zip(&wv).map(|(&a, &b)| (a - b).abs() as f64).sum::<f64>();
            dst += img.iter().zip(&sv).map(|(&a, &b)| (a - b).abs() as f64).sum::<f64>();
        }
        assert!(dst > dw, "strong mean change {dst} should exceed weak {dw}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn views_preserve_pixel_range(seed in 0u64..500, index in 0u64..50) {
            let ds = generate_synthetic(1, 10, 24, 77).unwrap();
            let img = ds.image((seed % 10) as usize);
            for policy in [AugmentPolicy::weak(), AugmentPolicy::strong(), AugmentPolicy::none()] {
                let out = view(img, 1, 24, 24, &policy, seed, index);
                prop_assert_eq!(out.len(), img.len());
                prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
