//! Supervised and FixMatch-style trainers, the UDA soft-consistency
//! variant, labeled-only warmup, and the pseudolabel-dynamics recorder.
//!
//! The unsupervised objective follows the masked-mean form: pseudolabels
//! come from weak views of the current model (hard argmax, retained when
//! the max softmax probability exceeds tau), and retained samples pay
//! cross-entropy between their pseudolabel and the strong-view
//! prediction, normalized by the number retained. With no retained
//! samples the term is exactly zero.
//!
//! Every random stream is derived by tag from the config seed, so e.g.
//! disabling the unsupervised term (`lambda_u = 0`) leaves the labeled
//! stream untouched and reproduces the supervised trajectory bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use crate::augment::{view, AugmentPolicy};
use crate::datakit::{sample_batch, ImageBatch, LabeledDataset, UNLABELED};
use crate::error::Result;
use crate::model::{CnnConfig, DeskCnn};
use crate::numgrad::{self, ema_update, sgd_step, LrSchedule, NodeId, SgdState, Tape, Tensor};
use crate::rng::mix;
use crate::ensure;

// Stream tags; every consumer derives its seed as mix(cfg.seed, [TAG, ..]).
const TAG_INIT: u64 = 0x11;
const TAG_LAB_SAMPLE: u64 = 0x12;
const TAG_LAB_AUG: u64 = 0x13;
const TAG_UNL_SAMPLE: u64 = 0x14;
const TAG_UNL_WEAK: u64 = 0x15;
const TAG_UNL_STRONG: u64 = 0x16;
/// Tag reserved for evaluation-time views (used by eval hooks).
pub const TAG_EVAL: u64 = 0x17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SslVariant {
    FixMatch,
    Uda,
    Supervised,
}

/// Normalization of the unsupervised consistency term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnsupNorm {
    /// Divide by the number of retained samples (the masked-mean form).
    Retained,
    /// Divide by the full unlabeled batch size mu*B (the canonical
    /// consistency-loss form; far lower gradient variance early in
    /// training when only a handful of samples are retained).
    FullBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    Cosine,
    MultiStep { milestones: Vec<usize>, gamma: f32 },
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: SslVariant,
    /// Labeled batch size B.
    pub batch_size: usize,
    /// Unlabeled ratio mu (unlabeled batch is mu*B).
    pub mu: usize,
    /// Confidence threshold tau.
    pub tau: f32,
    /// Unsupervised loss weight.
    pub lambda_u: f32,
    /// Initial learning rate eta.
    pub eta: f32,
    /// Total steps K.
    pub total_steps: usize,
    /// Labeled-only pretraining steps.
    pub warmup_steps: usize,
    pub ema_decay: f32,
    pub uda_temperature: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub nesterov: bool,
    pub unsup_norm: UnsupNorm,
    pub schedule: ScheduleKind,
    /// Cosine schedules decay over this many steps (>= total_steps);
    /// running fewer steps than the horizon mirrors a long schedule
    /// stopped early. Zero means the horizon equals `total_steps`.
    pub schedule_horizon: usize,
    pub eval_interval: usize,
    pub seed: u64,
    pub weak_policy: AugmentPolicy,
    pub strong_policy: AugmentPolicy,
    pub model: CnnConfig,
}

impl TrainConfig {
    /// Desk-scale FixMatch defaults: a full poisoned run finishes in
    /// minutes on one core while keeping the reference hyperparameters
    /// (tau
    /// = 0.95, lambda_u = 1, eta = 0.03, Nesterov momentum 0.9, weight
    /// decay 5e-4, cosine decay) selectable up to full scale.
    pub fn desk_fixmatch(seed: u64) -> Self {
        TrainConfig {
            variant: SslVariant::FixMatch,
            batch_size: 16,
            mu: 4,
            tau: 0.95,
            lambda_u: 1.0,
            eta: 0.03,
            total_steps: 8000,
            warmup_steps: 1500,
            ema_decay: 0.995,
            uda_temperature: 0.4,
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
            unsup_norm: UnsupNorm::Retained,
            schedule: ScheduleKind::Cosine,
            // the 8k-step run covers the same early fraction of the
            // cosine as a 100k-step slice of a 2^20-step schedule
            schedule_horizon: 84_000,
            eval_interval: 200,
            seed,
            weak_policy: AugmentPolicy::weak(),
            strong_policy: AugmentPolicy::strong(),
            model: CnnConfig::default(),
        }
    }

    /// Desk-scale supervised recipe: momentum 0.9, weight decay 2e-4, and
    /// a multistep schedule dropping by 0.1 at 40% and 60% of the run.
    pub fn desk_supervised(seed: u64) -> Self {
        let total_steps = 4000;
        TrainConfig {
            variant: SslVariant::Supervised,
            batch_size: 64,
            mu: 1,
            tau: 0.95,
            lambda_u: 0.0,
            eta: 0.05,
            total_steps,
            warmup_steps: 0,
            ema_decay: 0.999,
            uda_temperature: 0.4,
            momentum: 0.9,
            weight_decay: 2e-4,
            nesterov: false,
            unsup_norm: UnsupNorm::Retained,
            schedule: ScheduleKind::MultiStep { milestones: vec![total_steps * 2 / 5, total_steps * 3 / 5], gamma: 0.1 },
            schedule_horizon: 0,
            eval_interval: 200,
            seed,
            weak_policy: AugmentPolicy::weak(),
            strong_policy: AugmentPolicy::strong(),
            model: CnnConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch size must be >= 1");
        ensure!(self.mu >= 1, "mu must be >= 1");
        ensure!(self.tau > 0.0 && self.tau <= 1.0, "tau must be in (0,1], got {}", self.tau);
        ensure!(self.lambda_u >= 0.0, "lambda_u must be >= 0");
        ensure!((0.0..=1.0).contains(&self.ema_decay), "ema decay must be in [0,1]");
        ensure!(self.uda_temperature > 0.0, "UDA temperature must be positive");
        ensure!(
            self.warmup_steps < self.total_steps.max(1),
            "warmup steps {} must be below total steps {}",
            self.warmup_steps,
            self.total_steps
        );
        ensure!(
            self.schedule_horizon == 0 || self.schedule_horizon >= self.total_steps,
            "schedule horizon {} shorter than the run of {} steps",
            self.schedule_horizon,
            self.total_steps
        );
        ensure!(self.eval_interval >= 1, "eval interval must be >= 1");
        self.model.validate()
    }

    fn lr_schedule(&self) -> LrSchedule {
        match &self.schedule {
            ScheduleKind::Cosine => LrSchedule::Cosine {
                eta: self.eta,
                total_steps: self.schedule_horizon.max(self.total_steps).max(1),
            },
            ScheduleKind::MultiStep { milestones, gamma } => {
                LrSchedule::MultiStep { eta: self.eta, milestones: milestones.clone(), gamma: *gamma }
            }
            ScheduleKind::Constant => LrSchedule::Constant { eta: self.eta },
        }
    }
}

// ── loss formulas over logits ───────────────────────────────────────

/// Mean cross-entropy of `labels` over a logits node [B, C].
pub fn mean_ce_from_logits(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let shape = tape.value(logits).shape().to_vec();
    ensure!(shape.len() == 2, "expected [B,C] logits");
    let (bsz, c) = (shape[0], shape[1]);
    ensure!(labels.len() == bsz, "label count mismatch");
    let logp = tape.log_softmax(logits)?;
    let mut w = vec![0.0f32; bsz * c];
    for (i, &y) in labels.iter().enumerate() {
        ensure!(y < c, "label {y} out of range");
        w[i * c + y] = -1.0 / bsz as f32;
    }
    let wleaf = tape.leaf(Tensor::from_vec(&[bsz, c], w)?);
    let picked = tape.mul(logp, wleaf)?;
    tape.sum(picked)
}

/// Masked-mean cross-entropy of hard pseudolabels: the retained samples'
/// cross-entropies summed and divided by the retained count. Returns
/// `None` when nothing is retained (the term is zero).
pub fn masked_ce_from_logits(tape: &mut Tape, logits: NodeId, targets: &[usize], mask: &[bool]) -> Result<Option<NodeId>> {
    masked_ce_with_norm(tape, logits, targets, mask, UnsupNorm::Retained)
}

/// As [`masked_ce_from_logits`] but with a selectable denominator:
/// the retained count (masked mean) or the full batch size.
pub fn masked_ce_with_norm(
    tape: &mut Tape,
    logits: NodeId,
    targets: &[usize],
    mask: &[bool],
    norm: UnsupNorm,
) -> Result<Option<NodeId>> {
    let shape = tape.value(logits).shape().to_vec();
    ensure!(shape.len() == 2, "expected [B,C] logits");
    let (bsz, c) = (shape[0], shape[1]);
    ensure!(targets.len() == bsz && mask.len() == bsz, "target/mask count mismatch");
    let retained = mask.iter().filter(|&&m| m).count();
    if retained == 0 {
        return Ok(None);
    }
    let denom = match norm {
        UnsupNorm::Retained => retained,
        UnsupNorm::FullBatch => bsz,
    } as f32;
    let logp = tape.log_softmax(logits)?;
    let mut w = vec![0.0f32; bsz * c];
    for i in 0..bsz {
        if mask[i] {
            ensure!(targets[i] < c, "pseudolabel {} out of range", targets[i]);
            w[i * c + targets[i]] = -1.0 / denom;
        }
    }
    let wleaf = tape.leaf(Tensor::from_vec(&[bsz, c], w)?);
    let picked = tape.mul(logp, wleaf)?;
    Ok(Some(tape.sum(picked)?))
}

/// Masked-mean soft cross-entropy against fixed distributions `q`
/// (row-major [B, C], detached).
pub fn soft_ce_from_logits(tape: &mut Tape, logits: NodeId, q: &[f32], mask: &[bool]) -> Result<Option<NodeId>> {
    soft_ce_with_norm(tape, logits, q, mask, UnsupNorm::Retained)
}

pub fn soft_ce_with_norm(
    tape: &mut Tape,
    logits: NodeId,
    q: &[f32],
    mask: &[bool],
    norm: UnsupNorm,
) -> Result<Option<NodeId>> {
    let shape = tape.value(logits).shape().to_vec();
    ensure!(shape.len() == 2, "expected [B,C] logits");
    let (bsz, c) = (shape[0], shape[1]);
    ensure!(q.len() == bsz * c && mask.len() == bsz, "q/mask shape mismatch");
    let retained = mask.iter().filter(|&&m| m).count();
    if retained == 0 {
        return Ok(None);
    }
    let denom = match norm {
        UnsupNorm::Retained => retained,
        UnsupNorm::FullBatch => bsz,
    } as f32;
    let logp = tape.log_softmax(logits)?;
    let mut w = vec![0.0f32; bsz * c];
    for i in 0..bsz {
        if mask[i] {
            for j in 0..c {
                w[i * c + j] = -q[i * c + j] / denom;
            }
        }
    }
    let wleaf = tape.leaf(Tensor::from_vec(&[bsz, c], w)?);
    let picked = tape.mul(logp, wleaf)?;
    Ok(Some(tape.sum(picked)?))
}

// ── pseudolabels ────────────────────────────────────────────────────

/// Hard pseudolabels and the retention mask from raw logits:
/// y* = argmax softmax, retained iff max softmax probability > tau.
pub fn pseudolabel_from_logits(logits: &Tensor, tau: f32) -> Result<(Vec<usize>, Vec<bool>)> {
    let shape = logits.shape();
    ensure!(shape.len() == 2, "expected [B,C] logits");
    let (bsz, c) = (shape[0], shape[1]);
    let probs = numgrad::softmax_rows(logits.data(), bsz, c);
    let y = numgrad::argmax_rows(logits.data(), bsz, c);
    let mask = (0..bsz)
        .map(|i| {
            let row = &probs[i * c..(i + 1) * c];
            row.iter().fold(0.0f32, |a, &v| a.max(v)) > tau
        })
        .collect();
    Ok((y, mask))
}

/// Pseudolabels from the model's predictions on already-augmented weak
/// views [n, ch, h, w].
pub fn pseudolabel(model: &DeskCnn, weak_views: &Tensor, tau: f32) -> Result<(Vec<usize>, Vec<bool>)> {
    let logits = model.logits(weak_views)?;
    pseudolabel_from_logits(&logits, tau)
}

// ── loss values (no-grad convenience, used by tests and oracles) ────

/// Mean cross-entropy of a labeled batch of (already augmented) views.
pub fn supervised_loss_value(model: &DeskCnn, views: &Tensor, labels: &[u16]) -> Result<f32> {
    ensure!(labels.iter().all(|&l| l != UNLABELED), "supervised loss over an unlabeled sample");
    let targets: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let mut tape = Tape::new();
    let input = tape.leaf(views.clone());
    let params = model.insert_params(&mut tape, false);
    let logits = model.forward(&mut tape, &params, input)?;
    let loss = mean_ce_from_logits(&mut tape, logits, &targets)?;
    tape.value(loss).item()
}

/// The masked consistency term over (already augmented) strong views,
/// given pseudolabels and the retention mask. Zero when all masked.
pub fn unsupervised_loss_value(model: &DeskCnn, strong_views: &Tensor, y_star: &[usize], mask: &[bool]) -> Result<f32> {
    let mut tape = Tape::new();
    let input = tape.leaf(strong_views.clone());
    let params = model.insert_params(&mut tape, false);
    let logits = model.forward(&mut tape, &params, input)?;
    match masked_ce_from_logits(&mut tape, logits, y_star, mask)? {
        Some(node) => tape.value(node).item(),
        None => Ok(0.0),
    }
}

/// UDA-style soft-consistency value: cross-entropy between the
/// temperature-sharpened weak distribution (detached) and strong-view
/// predictions, masked by the same tau rule, normalized by the retained
/// count.
pub fn uda_unsupervised_loss_value(
    model: &DeskCnn,
    weak_views: &Tensor,
    strong_views: &Tensor,
    tau: f32,
    temperature: f32,
) -> Result<f32> {
    let weak_logits = model.logits(weak_views)?;
    let (q, mask) = uda_targets(&weak_logits, tau, temperature)?;
    let mut tape = Tape::new();
    let input = tape.leaf(strong_views.clone());
    let params = model.insert_params(&mut tape, false);
    let logits = model.forward(&mut tape, &params, input)?;
    match soft_ce_from_logits(&mut tape, logits, &q, &mask)? {
        Some(node) => tape.value(node).item(),
        None => Ok(0.0),
    }
}

/// Sharpened soft targets and tau mask from weak-view logits.
fn uda_targets(weak_logits: &Tensor, tau: f32, temperature: f32) -> Result<(Vec<f32>, Vec<bool>)> {
    ensure!(temperature > 0.0, "temperature must be positive");
    let shape = weak_logits.shape();
    let (bsz, c) = (shape[0], shape[1]);
    let scaled: Vec<f32> = weak_logits.data().iter().map(|&v| v / temperature).collect();
    let q = numgrad::softmax_rows(&scaled, bsz, c);
    let (_, mask) = pseudolabel_from_logits(weak_logits, tau)?;
    Ok((q, mask))
}

// ── trainer ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub test_acc: f32,
    pub asr: f32,
    pub frac_conf_target: f32,
    pub frac_conf_nontarget: f32,
    pub frac_unconfident: f32,
}

pub type DynamicsTrace = Vec<TraceRow>;

/// What an evaluation hook reports at each recorded step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub test_acc: f32,
    pub asr: f32,
    /// (confident-target, confident-non-target, unconfident) fractions
    /// over the poisoned samples.
    pub fracs: (f32, f32, f32),
}

pub struct TrainOutput {
    pub model: DeskCnn,
    pub ema: DeskCnn,
    pub trace: DynamicsTrace,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: DeskCnn,
    pub ema: DeskCnn,
    sgd: SgdState,
    schedule: LrSchedule,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = DeskCnn::init(cfg.model.clone(), mix(cfg.seed, &[TAG_INIT]))?;
        let ema = model.ema_copy();
        let sgd = SgdState::new(cfg.momentum, cfg.weight_decay, cfg.nesterov)?;
        let schedule = cfg.lr_schedule();
        Ok(Trainer { cfg, model, ema, sgd, schedule })
    }

    fn batch_views(&self, batch: &ImageBatch, policy: &AugmentPolicy, tag: u64, k: usize) -> Result<Tensor> {
        let shape = batch.images.shape().to_vec();
        let (n, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let numel = ch * h * w;
        let seed = mix(self.cfg.seed, &[tag, k as u64]);
        let mut out = Vec::with_capacity(batch.images.numel());
        for i in 0..n {
            let img = &batch.images.data()[i * numel..(i + 1) * numel];
            out.extend_from_slice(&view(img, ch, h, w, policy, seed, i as u64));
        }
        Tensor::from_vec(&shape, out)
    }

    /// One optimization step at index `k`: supervised term on weak views
    /// of the labeled batch, plus (outside warmup, for SSL variants) the
    /// weighted consistency term on the unlabeled batch. Backward, SGD
    /// with the scheduled rate, EMA update. Returns the total loss.
    pub fn fixmatch_step(&mut self, labeled: &ImageBatch, unlabeled: Option<&ImageBatch>, k: usize) -> Result<f32> {
        ensure!(k < self.cfg.total_steps, "step {k} outside configured {} steps", self.cfg.total_steps);
        ensure!(labeled.labels.iter().all(|&l| l != UNLABELED), "labeled batch contains the UNLABELED sentinel");
        let lab_views = self.batch_views(labeled, &self.cfg.weak_policy.clone(), TAG_LAB_AUG, k)?;
        let targets: Vec<usize> = labeled.labels.iter().map(|&l| l as usize).collect();

        let mut tape = Tape::new();
        let params = self.model.insert_params(&mut tape, true);
        let input = tape.leaf(lab_views);
        let logits = self.model.forward(&mut tape, &params, input)?;
        let mut total = mean_ce_from_logits(&mut tape, logits, &targets)?;

        let ssl_active = self.cfg.variant != SslVariant::Supervised
            && self.cfg.lambda_u > 0.0
            && k >= self.cfg.warmup_steps;
        if ssl_active {
            if let Some(unl) = unlabeled {
                let weak = self.batch_views(unl, &self.cfg.weak_policy.clone(), TAG_UNL_WEAK, k)?;
                let strong = self.batch_views(unl, &self.cfg.strong_policy.clone(), TAG_UNL_STRONG, k)?;
                let weak_logits = self.model.logits(&weak)?;
                let strong_input = tape.leaf(strong);
                let strong_logits = self.model.forward(&mut tape, &params, strong_input)?;
                let unsup = match self.cfg.variant {
                    SslVariant::FixMatch => {
                        let (y_star, mask) = pseudolabel_from_logits(&weak_logits, self.cfg.tau)?;
                        masked_ce_with_norm(&mut tape, strong_logits, &y_star, &mask, self.cfg.unsup_norm)?
                    }
                    SslVariant::Uda => {
                        let (q, mask) = uda_targets(&weak_logits, self.cfg.tau, self.cfg.uda_temperature)?;
                        soft_ce_with_norm(&mut tape, strong_logits, &q, &mask, self.cfg.unsup_norm)?
                    }
                    SslVariant::Supervised => unreachable!(),
                };
                if let Some(unsup) = unsup {
                    let weighted = tape.scale(unsup, self.cfg.lambda_u)?;
                    total = tape.add(total, weighted)?;
                }
            }
        }

        tape.backward(total)?;
        self.model.zero_grads();
        self.model.pull_grads(&tape, &params)?;
        let lr = self.schedule.lr_at(k)?;
        sgd_step(self.model.params_mut(), &mut self.sgd, lr)?;
        ema_update(self.ema.params_mut(), self.model.params(), self.cfg.ema_decay)?;
        let loss = tape.value(total).item()?;
        ensure!(loss.is_finite(), "non-finite loss at step {k}");
        Ok(loss)
    }
}

/// Runs the configured training loop. The supervised variant ignores the
/// unlabeled pool entirely. Every `eval_interval` steps the hook is
/// invoked on the EMA model and its report appended to the trace.
pub fn train(
    cfg: &TrainConfig,
    labeled: &LabeledDataset,
    unlabeled: Option<&LabeledDataset>,
    eval_hook: &mut dyn FnMut(usize, &DeskCnn) -> Result<EvalPoint>,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg.clone())?;
    ensure!(!labeled.is_empty(), "labeled set is empty");
    let unlabeled = match cfg.variant {
        SslVariant::Supervised => None,
        _ => unlabeled.filter(|u| !u.is_empty()),
    };
    let mut trace: DynamicsTrace = Vec::new();
    for k in 0..cfg.total_steps {
        let lab = sample_batch(labeled, cfg.batch_size, mix(cfg.seed, &[TAG_LAB_SAMPLE]), k)?;
        let use_unl = unlabeled.is_some() && cfg.lambda_u > 0.0 && k >= cfg.warmup_steps;
        let unl = match (use_unl, unlabeled) {
            (true, Some(pool)) => Some(sample_batch(pool, cfg.batch_size * cfg.mu, mix(cfg.seed, &[TAG_UNL_SAMPLE]), k)?),
            _ => None,
        };
        trainer.fixmatch_step(&lab, unl.as_ref(), k)?;
        if (k + 1) % cfg.eval_interval == 0 {
            let point = eval_hook(k + 1, &trainer.ema)?;
            let (ft, fn_, fu) = point.fracs;
            trace.push(TraceRow {
                step: k + 1,
                test_acc: point.test_acc,
                asr: point.asr,
                frac_conf_target: ft,
                frac_conf_nontarget: fn_,
                frac_unconfident: fu,
            });
        }
    }
    Ok(TrainOutput { model: trainer.model, ema: trainer.ema, trace })
}

/// Fractions of the poisoned samples (given as weak views) whose
/// pseudolabels are confident-target / confident-non-target /
/// unconfident under the model. The three fractions sum to one.
pub fn record_pseudolabel_types(
    model: &DeskCnn,
    poison_weak_views: &Tensor,
    target_class: usize,
    tau: f32,
) -> Result<(f32, f32, f32)> {
    let n = poison_weak_views.shape()[0];
    ensure!(n > 0, "record_pseudolabel_types over an empty poison set");
    let (y, mask) = pseudolabel(model, poison_weak_views, tau)?;
    let mut conf_target = 0usize;
    let mut conf_nontarget = 0usize;
    for i in 0..n {
        if mask[i] {
            if y[i] == target_class {
                conf_target += 1;
            } else {
                conf_nontarget += 1;
            }
        }
    }
    let nf = n as f32;
    Ok((
        conf_target as f32 / nf,
        conf_nontarget as f32 / nf,
        (n - conf_target - conf_nontarget) as f32 / nf,
    ))
}
