//! Synthetic desk-scale image data: procedural glyph rendering, the
//! labeled/unlabeled split, and seeded batch sampling.
//!
//! Each class is a parametric glyph family (disk, ring, bars, crosses, ...)
//! rendered in grayscale with per-sample position/scale/intensity jitter
//! and additive Gaussian noise, clamped to [0,1]. The classes are clearly
//! learnable but overlap enough under noise that interpolated blends are
//! genuinely ambiguous.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::numgrad::Tensor;
use crate::rng::{mix, Rng};
use crate::ensure;

/// Sentinel label for unlabeled samples (also the on-disk encoding).
pub const UNLABELED: u16 = 0xFFFF;

/// Pixel noise level of the generator.
pub const NOISE_SIGMA: f32 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    channels: usize,
    height: usize,
    width: usize,
    class_count: usize,
    images: Vec<f32>,
    labels: Vec<u16>,
    poison_flags: Vec<bool>,
    /// Ground truth retained for unlabeled samples; analysis-only.
    hidden_labels: Option<Vec<u16>>,
}

impl LabeledDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        channels: usize,
        height: usize,
        width: usize,
        class_count: usize,
        images: Vec<f32>,
        labels: Vec<u16>,
        poison_flags: Vec<bool>,
        hidden_labels: Option<Vec<u16>>,
    ) -> Result<Self> {
        let n = labels.len();
        ensure!(channels >= 1 && height >= 1 && width >= 1, "degenerate image dims");
        ensure!(class_count >= 2, "need at least 2 classes, got {class_count}");
        ensure!(
            images.len() == n * channels * height * width,
            "image buffer length {} does not match {} samples",
            images.len(),
            n
        );
        ensure!(poison_flags.len() == n, "poison flag count mismatch");
        ensure!(images.iter().all(|&v| (0.0..=1.0).contains(&v)), "pixel values outside [0,1]");
        ensure!(
            labels.iter().all(|&l| l == UNLABELED || (l as usize) < class_count),
            "label outside [0,{class_count})"
        );
        if let Some(h) = &hidden_labels {
            ensure!(h.len() == n, "hidden label count mismatch");
            ensure!(h.iter().all(|&l| l == UNLABELED || (l as usize) < class_count), "hidden label out of range");
        }
        Ok(LabeledDataset { channels, height, width, class_count, images, labels, poison_flags, hidden_labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn image_numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_numel();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.image_numel();
        &mut self.images[i * n..(i + 1) * n]
    }

    pub fn images_raw(&self) -> &[f32] {
        &self.images
    }

    pub fn label(&self, i: usize) -> u16 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn poison_flag(&self, i: usize) -> bool {
        self.poison_flags[i]
    }

    pub fn poison_flags(&self) -> &[bool] {
        &self.poison_flags
    }

    pub fn set_poison_flag(&mut self, i: usize, v: bool) {
        self.poison_flags[i] = v;
    }

    pub fn poison_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.poison_flags[i]).collect()
    }

    pub fn hidden_labels(&self) -> Option<&[u16]> {
        self.hidden_labels.as_deref()
    }

    /// Ground truth for analysis: the visible label if present, otherwise
    /// the hidden label carried through `split`.
    pub fn ground_truth(&self, i: usize) -> Option<usize> {
        let l = self.labels[i];
        if l != UNLABELED {
            return Some(l as usize);
        }
        match &self.hidden_labels {
            Some(h) if h[i] != UNLABELED => Some(h[i] as usize),
            _ => None,
        }
    }

    /// Indices whose ground truth equals `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.ground_truth(i) == Some(class)).collect()
    }

    /// Batch tensor [n, C_ch, H, W] for a list of indices.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        ensure!(!indices.is_empty(), "gather of empty index list");
        let n = self.image_numel();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            ensure!(i < self.len(), "index {i} out of range for dataset of {}", self.len());
            data.extend_from_slice(self.image(i));
        }
        Tensor::from_vec(&[indices.len(), self.channels, self.height, self.width], data)
    }

    /// A new dataset containing the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let n = self.image_numel();
        let mut images = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        let mut flags = Vec::with_capacity(indices.len());
        let mut hidden = self.hidden_labels.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            ensure!(i < self.len(), "index {i} out of range");
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
            flags.push(self.poison_flags[i]);
            if let (Some(out), Some(src)) = (&mut hidden, &self.hidden_labels) {
                out.push(src[i]);
            }
        }
        LabeledDataset::from_parts(self.channels, self.height, self.width, self.class_count, images, labels, flags, hidden)
    }

    /// Concatenates two datasets with identical geometry. Hidden labels are
    /// kept if either side carries them, falling back to visible labels.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        ensure!(
            self.channels == other.channels
                && self.height == other.height
                && self.width == other.width
                && self.class_count == other.class_count,
            "cannot concatenate datasets with different geometry"
        );
        let mut images = self.images.clone();
        images.extend_from_slice(&other.images);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut flags = self.poison_flags.clone();
        flags.extend_from_slice(&other.poison_flags);
        let hidden = match (&self.hidden_labels, &other.hidden_labels) {
            (None, None) => None,
            (a, b) => {
                let mut h: Vec<u16> = match a {
                    Some(v) => v.clone(),
                    None => self.labels.clone(),
                };
                match b {
                    Some(v) => h.extend_from_slice(v),
                    None => h.extend_from_slice(&other.labels),
                }
                Some(h)
            }
        };
        LabeledDataset::from_parts(self.channels, self.height, self.width, self.class_count, images, labels, flags, hidden)
    }

    /// Replaces one image in place (poison insertion).
    pub fn replace_image(&mut self, i: usize, pixels: &[f32]) -> Result<()> {
        ensure!(pixels.len() == self.image_numel(), "replacement pixel count mismatch");
        ensure!(pixels.iter().all(|&v| (0.0..=1.0).contains(&v)), "replacement pixels outside [0,1]");
        self.image_mut(i).copy_from_slice(pixels);
        Ok(())
    }
}

// ── synthetic generation ────────────────────────────────────────────

/// Number of distinct glyph families available.
pub const GLYPH_FAMILIES: usize = 10;

/// Glyph membership test in the glyph's own (rotated, scaled) frame.
/// `tw` scales stroke half-widths. The families are deliberately uneven:
/// the disk and dot grid stay crisp under every jitter, while the
/// stroke-built families (plus, X, bars, stripe) genuinely overlap once
/// rotation jitter is applied.
fn glyph_hit(class: usize, u: f32, v: f32, tw: f32) -> bool {
    let d = libm::sqrtf(u * u + v * v);
    match class {
        // filled disk
        0 => d <= 0.25,
        // ring
        1 => (d - 0.24).abs() <= 0.055 * tw,
        // plus
        2 => (u.abs() <= 0.075 * tw && v.abs() <= 0.32) || (v.abs() <= 0.075 * tw && u.abs() <= 0.32),
        // X
        3 => ((u - v).abs() <= 0.105 * tw || (u + v).abs() <= 0.105 * tw) && u.abs().max(v.abs()) <= 0.30,
        // two horizontal bars
        4 => ((v - 0.15).abs() <= 0.06 * tw || (v + 0.15).abs() <= 0.06 * tw) && u.abs() <= 0.30,
        // two vertical bars
        5 => ((u - 0.15).abs() <= 0.06 * tw || (u + 0.15).abs() <= 0.06 * tw) && v.abs() <= 0.30,
        // square outline
        6 => {
            let m = u.abs().max(v.abs());
            m <= 0.28 && m >= 0.28 - 0.055 * tw
        }
        // filled triangle
        7 => (-0.26..=0.24).contains(&v) && u.abs() <= (v + 0.26) * 0.52,
        // diagonal stripe
        8 => (u + v).abs() <= 0.10 * tw && u.abs().max(v.abs()) <= 0.33,
        // four dots
        9 => {
            let (au, av) = (u.abs() - 0.16, v.abs() - 0.16);
            libm::sqrtf(au * au + av * av) <= 0.085 * (0.8 + 0.2 * tw)
        }
        _ => false,
    }
}

/// A class-uninformative clutter stroke: a rotated bar segment.
struct Clutter {
    cx: f32,
    cy: f32,
    sin: f32,
    cos: f32,
    half_len: f32,
    half_width: f32,
    intensity: f32,
}

impl Clutter {
    fn hit(&self, px: f32, py: f32) -> bool {
        let dx = px - self.cx;
        let dy = py - self.cy;
        let along = dx * self.cos + dy * self.sin;
        let across = -dx * self.sin + dy * self.cos;
        along.abs() <= self.half_len && across.abs() <= self.half_width
    }
}

fn render_sample(class: usize, size: usize, rng: &mut Rng, out: &mut [f32]) {
    let s = size as f32;
    let cx = s / 2.0 + rng.f32_range(-s / 6.0, s / 6.0);
    let cy = s / 2.0 + rng.f32_range(-s / 6.0, s / 6.0);
    let scale = rng.f32_range(0.60, 1.25) * s;
    let phi = rng.f32_range(-0.40, 0.40);
    let tw = rng.f32_range(0.75, 1.35);
    let intensity = rng.f32_range(0.50, 0.95);
    let (sinp, cosp) = (libm::sinf(phi), libm::cosf(phi));

    // Clutter strokes mimic glyph parts so the model has to find the
    // actual glyph rather than any bright structure.
    let n_clutter = 3 + rng.index(4);
    let clutter: Vec<Clutter> = (0..n_clutter)
        .map(|_| {
            let ang = rng.f32_range(0.0, core::f32::consts::PI);
            Clutter {
                cx: rng.f32_range(0.1 * s, 0.9 * s),
                cy: rng.f32_range(0.1 * s, 0.9 * s),
                sin: libm::sinf(ang),
                cos: libm::cosf(ang),
                half_len: rng.f32_range(0.08, 0.24) * s,
                half_width: rng.f32_range(0.035, 0.06) * s,
                intensity: rng.f32_range(0.25, 0.62),
            }
        })
        .collect();

    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let du = (px - cx) / scale;
            let dv = (py - cy) / scale;
            let u = du * cosp - dv * sinp;
            let v = du * sinp + dv * cosp;
            let mut base = if glyph_hit(class, u, v, tw) { intensity } else { 0.0 };
            for c in &clutter {
                if c.hit(px, py) {
                    base = base.max(c.intensity);
                }
            }
            let noisy = base + NOISE_SIGMA * rng.normal();
            out[y * size + x] = noisy.clamp(0.0, 1.0);
        }
    }
}

/// Generates a balanced synthetic dataset: `n_per_class` samples for each
/// of `class_count` glyph families at `image_size` x `image_size`, single
/// channel. Bit-deterministic in `seed`.
pub fn generate_synthetic(n_per_class: usize, class_count: usize, image_size: usize, seed: u64) -> Result<LabeledDataset> {
    ensure!(class_count >= 2, "need at least 2 classes, got {class_count}");
    ensure!(
        class_count <= GLYPH_FAMILIES,
        "only {GLYPH_FAMILIES} glyph families are defined, got {class_count} classes"
    );
    ensure!(image_size >= 16, "image size {image_size} too small to render glyphs (minimum 16)");
    ensure!(n_per_class >= 1, "need at least one sample per class");
    let n = n_per_class * class_count;
    let numel = image_size * image_size;
    let mut images = vec![0.0f32; n * numel];
    let mut labels = Vec::with_capacity(n);
    for class in 0..class_count {
        for i in 0..n_per_class {
            let row = class * n_per_class + i;
            let mut rng = Rng::new(mix(seed, &[class as u64, i as u64]));
            render_sample(class, image_size, &mut rng, &mut images[row * numel..(row + 1) * numel]);
            labels.push(class as u16);
        }
    }
    LabeledDataset::from_parts(1, image_size, image_size, class_count, images, labels, vec![false; n], None)
}

// ── splitting ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub seed: u64,
    pub balanced: bool,
}

/// Splits a fully labeled dataset into a labeled part of exactly
/// `n_labeled` samples and an unlabeled remainder whose visible labels are
/// replaced by [`UNLABELED`] while the ground truth moves to the hidden
/// store (analysis-only access).
pub fn split(dataset: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = dataset.len();
    ensure!(spec.n_labeled <= n, "n_labeled {} exceeds dataset size {n}", spec.n_labeled);
    ensure!(dataset.labels().iter().all(|&l| l != UNLABELED), "split input must be fully labeled");
    let c = dataset.class_count();
    let mut chosen: Vec<usize> = if spec.balanced {
        ensure!(
            spec.n_labeled % c == 0,
            "balanced split needs n_labeled divisible by {c} classes, got {}",
            spec.n_labeled
        );
        let per = spec.n_labeled / c;
        let mut picks = Vec::with_capacity(spec.n_labeled);
        for class in 0..c {
            let mut idx = dataset.class_indices(class);
            ensure!(idx.len() >= per, "class {class} has only {} samples, need {per}", idx.len());
            let mut rng = Rng::new(mix(spec.seed, &[class as u64]));
            rng.shuffle(&mut idx);
            picks.extend_from_slice(&idx[..per]);
        }
        picks
    } else {
        let mut rng = Rng::new(mix(spec.seed, &[]));
        let mut perm = rng.permutation(n);
        perm.truncate(spec.n_labeled);
        perm
    };
    chosen.sort_unstable();
    let mut is_labeled = vec![false; n];
    for &i in &chosen {
        is_labeled[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !is_labeled[i]).collect();

    let labeled = dataset.select(&chosen)?;
    let unl = dataset.select(&rest)?;
    let hidden: Vec<u16> = unl.labels().to_vec();
    let unlabeled = LabeledDataset::from_parts(
        unl.channels,
        unl.height,
        unl.width,
        unl.class_count,
        unl.images,
        vec![UNLABELED; rest.len()],
        unl.poison_flags,
        Some(hidden),
    )?;
    Ok((labeled, unlabeled))
}

// ── batch sampling ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub labels: Vec<u16>,
}

/// Draws batch `step` from shuffled epochs over the dataset: every index
/// appears exactly once per epoch, batches may straddle epoch boundaries,
/// and the result is fully determined by (seed, step).
pub fn sample_batch(dataset: &LabeledDataset, batch_size: usize, seed: u64, step: usize) -> Result<ImageBatch> {
    let n = dataset.len();
    ensure!(n > 0, "sample_batch on empty dataset");
    ensure!(batch_size >= 1, "batch size must be positive");
    let mut indices = Vec::with_capacity(batch_size);
    let mut epoch = usize::MAX;
    let mut perm: Vec<usize> = Vec::new();
    for j in 0..batch_size {
        let g = step * batch_size + j;
        let e = g / n;
        if e != epoch {
            let mut rng = Rng::new(mix(seed, &[e as u64]));
            perm = rng.permutation(n);
            epoch = e;
        }
        indices.push(perm[g % n]);
    }
    let images = dataset.gather(&indices)?;
    let labels = indices.iter().map(|&i| dataset.label(i)).collect();
    Ok(ImageBatch { indices, images, labels })
}
