//! Poison construction: triggers, interpolation poisons, PGD perturbation
//! poisons, and the generalized lambda-mix attack composer.
//!
//! An attack replaces selected samples of the (unlabeled) pool with
//! modified copies of themselves: first the modification (nothing, an
//! l-inf-bounded adversarial perturbation, or a convex interpolation
//! toward a random non-target sample), then the trigger stamp. Weak
//! backdoor-creating poisons draw from the target class; strengthening
//! poisons are either strongly modified target-class samples or unmodified
//! non-target samples. All selections are deterministic in the spec seed,
//! and every poison is described by a manifest record that allows exact
//! reconstruction from the clean pool.

use alloc::vec;
use alloc::vec::Vec;

use crate::datakit::LabeledDataset;
use crate::error::Result;
use crate::model::DeskCnn;
use crate::numgrad::{Tape, Tensor};
use crate::rng::{mix, Rng};
use crate::{contract_err, ensure};

// ── triggers ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerKind {
    /// Pattern stamped in all four corners, mirrored per corner so the
    /// stamped image is flip-invariant.
    FourCorner,
    /// Single pattern in the bottom-right corner.
    Patch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    /// k*k values in {0,1}, row-major.
    pub pattern: Vec<u8>,
    pub k: usize,
}

impl TriggerSpec {
    /// k x k checkerboard starting with 1 in the top-left cell.
    pub fn checkerboard(kind: TriggerKind, k: usize) -> Result<Self> {
        ensure!(k >= 1, "trigger side must be positive");
        let pattern = (0..k * k).map(|i| (((i / k) + (i % k)) % 2 == 0) as u8).collect();
        Ok(TriggerSpec { kind, pattern, k })
    }

    /// The reference four-corner trigger: 3x3 checkerboards.
    pub fn four_corner_default() -> Self {
        Self::checkerboard(TriggerKind::FourCorner, 3).expect("static spec")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 1, "trigger side must be positive");
        ensure!(
            self.pattern.len() == self.k * self.k,
            "trigger pattern length {} != k^2 = {}",
            self.pattern.len(),
            self.k * self.k
        );
        ensure!(self.pattern.iter().all(|&v| v <= 1), "trigger pattern values must be 0 or 1");
        Ok(())
    }

    /// True for pixels overwritten by the stamp, as a (ch*h*w) mask.
    pub fn mask(&self, ch: usize, h: usize, w: usize) -> Result<Vec<bool>> {
        self.check_fit(h, w)?;
        let mut m = vec![false; ch * h * w];
        let k = self.k;
        let mut mark = |y0: usize, x0: usize| {
            for c in 0..ch {
                for dy in 0..k {
                    for dx in 0..k {
                        m[(c * h + y0 + dy) * w + x0 + dx] = true;
                    }
                }
            }
        };
        match self.kind {
            TriggerKind::FourCorner => {
                mark(0, 0);
                mark(0, w - k);
                mark(h - k, 0);
                mark(h - k, w - k);
            }
            TriggerKind::Patch => mark(h - k, w - k),
        }
        Ok(m)
    }

    fn check_fit(&self, h: usize, w: usize) -> Result<()> {
        self.validate()?;
        match self.kind {
            TriggerKind::FourCorner => {
                ensure!(
                    self.k <= h / 4 && self.k <= w / 4,
                    "four-corner trigger side {} too large for {h}x{w} image (max {})",
                    self.k,
                    h.min(w) / 4
                );
            }
            TriggerKind::Patch => {
                ensure!(
                    self.k <= h / 2 && self.k <= w / 2,
                    "patch trigger side {} too large for {h}x{w} image (max {})",
                    self.k,
                    h.min(w) / 2
                );
            }
        }
        Ok(())
    }
}

/// Stamps the trigger over the image (idempotent: pattern cells write
/// exact 0.0/1.0 values). The four-corner variant mirrors the pattern per
/// corner, so stamping commutes bit-exactly with horizontal flip.
pub fn apply_trigger(img: &mut [f32], ch: usize, h: usize, w: usize, trigger: &TriggerSpec) -> Result<()> {
    trigger.check_fit(h, w)?;
    ensure!(img.len() == ch * h * w, "image length mismatch");
    let k = trigger.k;
    let at = |dy: usize, dx: usize| trigger.pattern[dy * k + dx] as f32;
    let mut stamp = |y0: usize, x0: usize, fy: bool, fx: bool| {
        for c in 0..ch {
            for dy in 0..k {
                for dx in 0..k {
                    let sy = if fy { k - 1 - dy } else { dy };
                    let sx = if fx { k - 1 - dx } else { dx };
                    img[(c * h + y0 + dy) * w + x0 + dx] = at(sy, sx);
                }
            }
        }
    };
    match trigger.kind {
        TriggerKind::FourCorner => {
            stamp(0, 0, false, false);
            stamp(0, w - k, false, true);
            stamp(h - k, 0, true, false);
            stamp(h - k, w - k, true, true);
        }
        TriggerKind::Patch => stamp(h - k, w - k, false, false),
    }
    Ok(())
}

// ── interpolation ───────────────────────────────────────────────────

/// Exact convex combination (1-alpha)*u_t + alpha*u_n.
pub fn interpolate(u_t: &[f32], u_n: &[f32], alpha: f32) -> Result<Vec<f32>> {
    ensure!(u_t.len() == u_n.len(), "interpolation endpoints differ in shape");
    ensure!((0.0..=1.0).contains(&alpha), "alpha must be in [0,1], got {alpha}");
    Ok(u_t.iter().zip(u_n).map(|(&a, &b)| (1.0 - alpha) * a + alpha * b).collect())
}

// ── PGD perturbation ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub steps: usize,
    /// step_size = factor * epsilon / steps
    pub step_size_factor: f32,
    pub random_start: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig { steps: 40, step_size_factor: 2.5, random_start: true }
    }
}

/// A classifier that can provide d(sum cross-entropy)/d(input images) for
/// PGD. The desk CNN implements it through the tape; tests also use a
/// hand-differentiated linear-softmax model.
pub trait Surrogate {
    /// Gradient of the summed cross-entropy of `labels` w.r.t. `images`
    /// ([n, ch, h, w] in, same shape out).
    fn input_grad(&self, images: &Tensor, labels: &[usize]) -> Result<Tensor>;
}

impl Surrogate for DeskCnn {
    fn input_grad(&self, images: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let bsz = images.shape()[0];
        ensure!(labels.len() == bsz, "label count does not match batch");
        let classes = self.cfg().classes;
        let mut tape = Tape::new();
        let input = tape.leaf(images.clone().with_grad());
        let params = self.insert_params(&mut tape, false);
        let logits = self.forward(&mut tape, &params, input)?;
        let logp = tape.log_softmax(logits)?;
        let mut mask = vec![0.0f32; bsz * classes];
        for (i, &y) in labels.iter().enumerate() {
            ensure!(y < classes, "label {y} out of range");
            mask[i * classes + y] = -1.0;
        }
        let mleaf = tape.leaf(Tensor::from_vec(&[bsz, classes], mask)?);
        let picked = tape.mul(logp, mleaf)?;
        let loss = tape.sum(picked)?;
        tape.backward(loss)?;
        let g = tape.grad(input).ok_or_else(|| contract_err!("input gradient missing"))?;
        Tensor::from_vec(images.shape(), g.to_vec())
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Untargeted PGD over a whole batch: ascends the cross-entropy of each
/// sample's ground-truth label under an l-inf budget, with projection onto
/// the epsilon-ball and [0,1] after every step. Guarantees
/// ||out - in||_inf <= epsilon.
pub fn pgd_perturb_batch(
    images: &Tensor,
    labels: &[usize],
    surrogate: &dyn Surrogate,
    epsilon: f32,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<Tensor> {
    ensure!(epsilon >= 0.0, "epsilon must be non-negative");
    ensure!(images.shape().len() == 4, "expected [n,ch,h,w] batch");
    if epsilon == 0.0 || cfg.steps == 0 {
        return Tensor::from_vec(images.shape(), images.data().to_vec());
    }
    let orig = images.data();
    let mut x: Vec<f32> = orig.to_vec();
    if cfg.random_start {
        let mut rng = Rng::new(mix(seed, &[0]));
        for v in x.iter_mut() {
            *v += rng.f32_range(-epsilon, epsilon);
        }
        project(&mut x, orig, epsilon);
    }
    let step_size = cfg.step_size_factor * epsilon / cfg.steps as f32;
    for _ in 0..cfg.steps {
        let xt = Tensor::from_vec(images.shape(), x.clone())?;
        let grad = surrogate.input_grad(&xt, labels)?;
        for (v, &g) in x.iter_mut().zip(grad.data()) {
            *v += step_size * sign(g);
        }
        project(&mut x, orig, epsilon);
    }
    Tensor::from_vec(images.shape(), x)
}

/// Single-image convenience wrapper over [`pgd_perturb_batch`].
#[allow(clippy::too_many_arguments)]
pub fn pgd_perturb(
    image: &[f32],
    ch: usize,
    h: usize,
    w: usize,
    label: usize,
    surrogate: &dyn Surrogate,
    epsilon: f32,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<Vec<f32>> {
    let t = Tensor::from_vec(&[1, ch, h, w], image.to_vec())?;
    let out = pgd_perturb_batch(&t, &[label], surrogate, epsilon, cfg, seed)?;
    Ok(out.data().to_vec())
}

fn project(x: &mut [f32], orig: &[f32], epsilon: f32) {
    for (v, &o) in x.iter_mut().zip(orig) {
        *v = v.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
    }
}

// ── attack composition ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoisonMode {
    None,
    Perturb { epsilon: f32 },
    Interpolate { alpha: f32 },
}

impl PoisonMode {
    pub fn strength(&self) -> f32 {
        match self {
            PoisonMode::None => 0.0,
            PoisonMode::Perturb { epsilon } => *epsilon,
            PoisonMode::Interpolate { alpha } => *alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PoisonMode::None => Ok(()),
            PoisonMode::Perturb { epsilon } => {
                ensure!(*epsilon >= 0.0 && epsilon.is_finite(), "epsilon must be finite and >= 0");
                Ok(())
            }
            PoisonMode::Interpolate { alpha } => {
                ensure!((0.0..=1.0).contains(alpha), "alpha must be in [0,1], got {alpha}");
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonSpec {
    pub target_class: usize,
    /// Total poisons N_p.
    pub count: usize,
    /// Fraction of weak backdoor-creating poisons; the remaining
    /// (1-lambda) are strengtheners.
    pub lambda_mix: f32,
    /// Modification of the weak set U_pw (sources: target class).
    pub weak_mode: PoisonMode,
    /// Modification of the strengthening set U_ps. `None` here means
    /// unmodified non-target-class images; perturb/interpolate draw fresh
    /// target-class sources.
    pub strong_mode: PoisonMode,
    pub trigger: TriggerSpec,
    pub pgd: PgdConfig,
    pub seed: u64,
}

impl PoisonSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.count >= 1, "poison count must be >= 1");
        ensure!((0.0..=1.0).contains(&self.lambda_mix), "lambda must be in [0,1], got {}", self.lambda_mix);
        self.weak_mode.validate()?;
        self.strong_mode.validate()?;
        self.trigger.validate()
    }

    /// |U_pw| = round(lambda * N_p), round-half-up.
    pub fn weak_count(&self) -> usize {
        let n = (self.lambda_mix as f64 * self.count as f64 + 0.5) as usize;
        n.min(self.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoisonRole {
    Weak,
    Strengthening,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonRecord {
    /// Index of the replaced sample in the poisoned dataset.
    pub index: usize,
    pub role: PoisonRole,
    pub mode: PoisonMode,
    /// Source image index (equals `index`: poisons replace their source).
    pub source_a: usize,
    /// Interpolation endpoint index, when applicable.
    pub source_b: Option<usize>,
    pub target_class: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoisonManifest {
    pub records: Vec<PoisonRecord>,
}

impl PoisonManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn role_counts(&self) -> (usize, usize) {
        let weak = self.records.iter().filter(|r| r.role == PoisonRole::Weak).count();
        (weak, self.records.len() - weak)
    }
}

/// Builds the attack over (a copy of) `dataset`, replacing selected
/// samples with poisons and flagging them. Sources are always read from
/// the clean input, so manifest records reconstruct poisons exactly.
pub fn build_attack(
    dataset: &LabeledDataset,
    spec: &PoisonSpec,
    surrogate: Option<&dyn Surrogate>,
) -> Result<(LabeledDataset, PoisonManifest)> {
    spec.validate()?;
    ensure!(spec.target_class < dataset.class_count(), "target class {} out of range", spec.target_class);
    ensure!(dataset.poison_flags().iter().all(|&f| !f), "attack input already contains poisons");
    let n_w = spec.weak_count();
    let n_s = spec.count - n_w;
    let needs_pgd = (n_w > 0 && matches!(spec.weak_mode, PoisonMode::Perturb { .. }))
        || (n_s > 0 && matches!(spec.strong_mode, PoisonMode::Perturb { .. }));
    if needs_pgd {
        ensure!(surrogate.is_some(), "perturb mode requires a surrogate model");
    }

    let (ch, h, w) = (dataset.channels(), dataset.height(), dataset.width());
    let mut rng = Rng::new(mix(spec.seed, &[]));
    let mut target_pool = dataset.class_indices(spec.target_class);
    let mut nontarget_pool: Vec<usize> = (0..dataset.len())
        .filter(|&i| matches!(dataset.ground_truth(i), Some(c) if c != spec.target_class))
        .collect();
    rng.shuffle(&mut target_pool);
    rng.shuffle(&mut nontarget_pool);

    let strong_uses_target = !matches!(spec.strong_mode, PoisonMode::None);
    let target_needed = n_w + if strong_uses_target { n_s } else { 0 };
    ensure!(
        target_pool.len() >= target_needed,
        "insufficient target-class samples: need {target_needed}, have {}",
        target_pool.len()
    );
    if !strong_uses_target {
        ensure!(nontarget_pool.len() >= n_s, "insufficient non-target samples: need {n_s}, have {}", nontarget_pool.len());
    }
    let wants_interp = (matches!(spec.weak_mode, PoisonMode::Interpolate { .. }) && n_w > 0)
        || (matches!(spec.strong_mode, PoisonMode::Interpolate { .. }) && n_s > 0);
    if wants_interp {
        ensure!(!nontarget_pool.is_empty(), "interpolation needs at least one non-target sample");
    }

    let mut poisoned = dataset.clone();
    let mut records: Vec<PoisonRecord> = Vec::with_capacity(spec.count);

    let weak_slots: Vec<usize> = target_pool[..n_w].to_vec();
    let strong_slots: Vec<usize> = if strong_uses_target {
        target_pool[n_w..n_w + n_s].to_vec()
    } else {
        nontarget_pool.iter().copied().take(n_s).collect()
    };

    for (role, mode, slots, part_tag) in [
        (PoisonRole::Weak, spec.weak_mode, &weak_slots, 1u64),
        (PoisonRole::Strengthening, spec.strong_mode, &strong_slots, 2u64),
    ] {
        if slots.is_empty() {
            continue;
        }
        // Endpoints are drawn in slot order before any PGD batch so the
        // RNG schedule does not depend on batching.
        let mut endpoints: Vec<Option<usize>> = vec![None; slots.len()];
        if let PoisonMode::Interpolate { .. } = mode {
            for e in endpoints.iter_mut() {
                *e = Some(nontarget_pool[rng.index(nontarget_pool.len())]);
            }
        }
        let mut bodies: Vec<Vec<f32>> = Vec::with_capacity(slots.len());
        match mode {
            PoisonMode::None => {
                for &s in slots {
                    bodies.push(dataset.image(s).to_vec());
                }
            }
            PoisonMode::Interpolate { alpha } => {
                for (i, &s) in slots.iter().enumerate() {
                    let e = endpoints[i].expect("endpoint drawn above");
                    let mut body = interpolate(dataset.image(s), dataset.image(e), alpha)?;
                    for v in body.iter_mut() {
                        *v = v.clamp(0.0, 1.0);
                    }
                    bodies.push(body);
                }
            }
            PoisonMode::Perturb { epsilon } => {
                let batch = dataset.gather(slots)?;
                let labels = vec![spec.target_class; slots.len()];
                let sur = surrogate.expect("checked above");
                let out = pgd_perturb_batch(&batch, &labels, sur, epsilon, &spec.pgd, mix(spec.seed, &[part_tag]))?;
                let numel = ch * h * w;
                for i in 0..slots.len() {
                    bodies.push(out.data()[i * numel..(i + 1) * numel].to_vec());
                }
            }
        }
        for (i, &s) in slots.iter().enumerate() {
            let mut body = core::mem::take(&mut bodies[i]);
            apply_trigger(&mut body, ch, h, w, &spec.trigger)?;
            poisoned.replace_image(s, &body)?;
            poisoned.set_poison_flag(s, true);
            records.push(PoisonRecord {
                index: s,
                role,
                mode,
                source_a: s,
                source_b: endpoints[i],
                target_class: spec.target_class,
            });
        }
    }

    records.sort_by_key(|r| r.index);
    Ok((poisoned, PoisonManifest { records }))
}

/// Re-derives every poison from the clean pool via its manifest record and
/// checks the stored image: interpolation must match the convex formula to
/// `tol` off-trigger, perturbation must satisfy the l-inf budget
/// off-trigger, and trigger cells must hold the exact stamp.
pub fn verify_manifest(
    clean: &LabeledDataset,
    poisoned: &LabeledDataset,
    manifest: &PoisonManifest,
    trigger: &TriggerSpec,
    tol: f32,
) -> Result<()> {
    let (ch, h, w) = (clean.channels(), clean.height(), clean.width());
    let mask = trigger.mask(ch, h, w)?;
    for r in &manifest.records {
        let got = poisoned.image(r.index);
        ensure!(poisoned.poison_flag(r.index), "record {} not flagged as poison", r.index);
        ensure!(got.iter().all(|&v| (0.0..=1.0).contains(&v)), "poison {} outside [0,1]", r.index);
        let mut stamped = clean.image(r.source_a).to_vec();
        apply_trigger(&mut stamped, ch, h, w, trigger)?;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                ensure!(got[i] == stamped[i], "poison {} trigger cell {i} not an exact stamp", r.index);
            }
        }
        match r.mode {
            PoisonMode::None => {
                for (i, &m) in mask.iter().enumerate() {
                    ensure!(m || got[i] == clean.image(r.source_a)[i], "unmodified poison {} differs off-trigger", r.index);
                }
            }
            PoisonMode::Interpolate { alpha } => {
                let b = r.source_b.ok_or_else(|| contract_err!("interpolation record {} lacks an endpoint", r.index))?;
                let expect = interpolate(clean.image(r.source_a), clean.image(b), alpha)?;
                for (i, &m) in mask.iter().enumerate() {
                    if !m {
                        ensure!(
                            (got[i] - expect[i].clamp(0.0, 1.0)).abs() <= tol,
                            "poison {} deviates from convex combination at pixel {i}",
                            r.index
                        );
                    }
                }
            }
            PoisonMode::Perturb { epsilon } => {
                let src = clean.image(r.source_a);
                for (i, &m) in mask.iter().enumerate() {
                    if !m {
                        ensure!(
                            (got[i] - src[i]).abs() <= epsilon + tol,
                            "poison {} exceeds l-inf budget at pixel {i}: |{} - {}| > {epsilon}",
                            r.index,
                            got[i],
                            src[i]
                        );
                    }
                }
            }
        }
    }
    Ok(())
}
