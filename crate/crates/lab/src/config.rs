//! Experiment configuration: a flat `key = value` text format with `#`
//! comments and comma-separated lists. Unknown keys are rejected; every
//! module default can be overridden, either in the file or via `--set`.

use std::collections::BTreeSet;
use std::path::Path;

use psl_core::augment::{AugmentKind, AugmentPolicy, StrongOp};
use psl_core::model::CnnConfig;
use psl_core::poisonforge::{PgdConfig, PoisonMode, PoisonSpec, TriggerKind, TriggerSpec};
use psl_core::trainers::{ScheduleKind, SslVariant, TrainConfig, UnsupNorm};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,

    // data
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,

    // split
    pub n_labeled: usize,
    pub balanced: bool,

    // augmentation
    pub aug_pad: usize,
    pub aug_flip_prob: f32,
    pub strong_ops: Vec<StrongOp>,
    pub strong_ops_per_image: usize,
    pub strong_magnitude: f32,
    pub strong_cutout: bool,

    // model
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,

    // training
    pub variant: SslVariant,
    pub batch_size: usize,
    pub mu: usize,
    pub tau: f32,
    pub lambda_u: f32,
    pub eta: f32,
    pub steps: usize,
    pub warmup_steps: usize,
    pub ema_decay: f32,
    pub uda_temperature: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub nesterov: bool,
    pub unsup_norm: String,
    pub schedule: String,
    pub schedule_horizon: usize,
    pub milestones: Vec<usize>,
    pub gamma: f32,
    pub eval_interval: usize,

    // surrogate training
    pub surrogate_batch_size: usize,
    pub surrogate_eta: f32,
    pub surrogate_steps: usize,
    pub surrogate_weight_decay: f32,

    // attack
    pub target_class: usize,
    pub poison_percent: f32,
    pub attack_lambda: f32,
    pub attack_mode: String,
    pub attack_strength: f32,
    pub attack_strong_mode: String,
    pub attack_strong_strength: f32,
    pub trigger_kind: String,
    pub trigger_k: usize,
    pub pgd_steps: usize,
    pub pgd_step_factor: f32,
    pub pgd_random_start: bool,

    // evaluation
    pub profile_subset: usize,
    pub entropy_bits: bool,

    // profile grids
    pub profile_alphas: Vec<f32>,
    pub profile_epsilons: Vec<f32>,

    // sweep axes (empty = axis not swept)
    pub sweep_alphas: Vec<f32>,
    pub sweep_epsilons: Vec<f32>,
    pub sweep_lambdas: Vec<f32>,
    pub sweep_targets: Vec<usize>,
    pub sweep_percents: Vec<f32>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            workers: 2,
            classes: 10,
            image_size: 24,
            train_per_class: 500,
            test_per_class: 100,
            n_labeled: 250,
            balanced: true,
            aug_pad: 2,
            aug_flip_prob: 0.5,
            strong_ops: psl_core::augment::ALL_STRONG_OPS.to_vec(),
            strong_ops_per_image: 2,
            strong_magnitude: 0.9,
            strong_cutout: true,
            conv1: 12,
            conv2: 20,
            hidden: 64,
            variant: SslVariant::FixMatch,
            batch_size: 16,
            mu: 4,
            tau: 0.95,
            lambda_u: 1.0,
            eta: 0.03,
            steps: 8000,
            warmup_steps: 1500,
            ema_decay: 0.995,
            uda_temperature: 0.4,
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
            unsup_norm: "retained".into(),
            schedule: "cosine".into(),
            schedule_horizon: 84_000,
            milestones: vec![],
            gamma: 0.1,
            eval_interval: 200,
            surrogate_batch_size: 64,
            surrogate_eta: 0.05,
            surrogate_steps: 4000,
            surrogate_weight_decay: 2e-4,
            target_class: 3,
            poison_percent: 1.0,
            attack_lambda: 1.0,
            attack_mode: "interpolate".into(),
            attack_strength: 0.4,
            attack_strong_mode: "interpolate".into(),
            attack_strong_strength: 0.6,
            trigger_kind: "four_corner".into(),
            trigger_k: 6,
            pgd_steps: 40,
            pgd_step_factor: 2.5,
            pgd_random_start: true,
            profile_subset: 500,
            entropy_bits: false,
            profile_alphas: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            profile_epsilons: vec![0.0, 2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0, 32.0 / 255.0],
            sweep_alphas: vec![],
            sweep_epsilons: vec![],
            sweep_lambdas: vec![],
            sweep_targets: vec![],
            sweep_percents: vec![],
        }
    }
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(LabError::config(format!("key {key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| LabError::config(format!("key {key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|s| parse_num::<T>(s.trim(), key)).collect()
}

fn parse_strong_ops(v: &str, key: &str) -> Result<Vec<StrongOp>> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|s| match s.trim() {
            "intensity" => Ok(StrongOp::IntensityShift),
            "contrast" => Ok(StrongOp::ContrastScale),
            "cutout" => Ok(StrongOp::Cutout),
            "translate" => Ok(StrongOp::Translate),
            "rotate" => Ok(StrongOp::SmallRotate),
            other => Err(LabError::config(format!("key {key}: unknown strong op {other:?}"))),
        })
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment, rejecting unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(v, key)?,
            "workers" => self.workers = parse_num(v, key)?,
            "data.classes" => self.classes = parse_num(v, key)?,
            "data.image_size" => self.image_size = parse_num(v, key)?,
            "data.train_per_class" => self.train_per_class = parse_num(v, key)?,
            "data.test_per_class" => self.test_per_class = parse_num(v, key)?,
            "split.n_labeled" => self.n_labeled = parse_num(v, key)?,
            "split.balanced" => self.balanced = parse_bool(v, key)?,
            "aug.pad" => self.aug_pad = parse_num(v, key)?,
            "aug.flip_prob" => self.aug_flip_prob = parse_num(v, key)?,
            "aug.strong_ops" => self.strong_ops = parse_strong_ops(v, key)?,
            "aug.strong_ops_per_image" => self.strong_ops_per_image = parse_num(v, key)?,
            "aug.strong_magnitude" => self.strong_magnitude = parse_num(v, key)?,
            "aug.strong_cutout" => self.strong_cutout = parse_bool(v, key)?,
            "model.conv1" => self.conv1 = parse_num(v, key)?,
            "model.conv2" => self.conv2 = parse_num(v, key)?,
            "model.hidden" => self.hidden = parse_num(v, key)?,
            "train.variant" => {
                self.variant = match v {
                    "fixmatch" => SslVariant::FixMatch,
                    "uda" => SslVariant::Uda,
                    "supervised" => SslVariant::Supervised,
                    other => return Err(LabError::config(format!("unknown variant {other:?}"))),
                }
            }
            "train.batch_size" => self.batch_size = parse_num(v, key)?,
            "train.mu" => self.mu = parse_num(v, key)?,
            "train.tau" => self.tau = parse_num(v, key)?,
            "train.lambda_u" => self.lambda_u = parse_num(v, key)?,
            "train.eta" => self.eta = parse_num(v, key)?,
            "train.steps" => self.steps = parse_num(v, key)?,
            "train.warmup_steps" => self.warmup_steps = parse_num(v, key)?,
            "train.ema_decay" => self.ema_decay = parse_num(v, key)?,
            "train.uda_temperature" => self.uda_temperature = parse_num(v, key)?,
            "train.momentum" => self.momentum = parse_num(v, key)?,
            "train.weight_decay" => self.weight_decay = parse_num(v, key)?,
            "train.nesterov" => self.nesterov = parse_bool(v, key)?,
            "train.unsup_norm" => match v {
                "retained" | "full" => self.unsup_norm = v.into(),
                other => return Err(LabError::config(format!("unknown unsup_norm {other:?}"))),
            },
            "train.schedule" => match v {
                "cosine" | "multistep" | "constant" => self.schedule = v.into(),
                other => return Err(LabError::config(format!("unknown schedule {other:?}"))),
            },
            "train.schedule_horizon" => self.schedule_horizon = parse_num(v, key)?,
            "train.milestones" => self.milestones = parse_list(v, key)?,
            "train.gamma" => self.gamma = parse_num(v, key)?,
            "train.eval_interval" => self.eval_interval = parse_num(v, key)?,
            "surrogate.batch_size" => self.surrogate_batch_size = parse_num(v, key)?,
            "surrogate.eta" => self.surrogate_eta = parse_num(v, key)?,
            "surrogate.steps" => self.surrogate_steps = parse_num(v, key)?,
            "surrogate.weight_decay" => self.surrogate_weight_decay = parse_num(v, key)?,
            "attack.target_class" => self.target_class = parse_num(v, key)?,
            "attack.percent" => self.poison_percent = parse_num(v, key)?,
            "attack.lambda" => self.attack_lambda = parse_num(v, key)?,
            "attack.mode" => self.attack_mode = validated_mode(v)?,
            "attack.strength" => self.attack_strength = parse_num(v, key)?,
            "attack.strong_mode" => self.attack_strong_mode = validated_mode(v)?,
            "attack.strong_strength" => self.attack_strong_strength = parse_num(v, key)?,
            "attack.trigger" => match v {
                "four_corner" | "patch" => self.trigger_kind = v.into(),
                other => return Err(LabError::config(format!("unknown trigger kind {other:?}"))),
            },
            "attack.trigger_k" => self.trigger_k = parse_num(v, key)?,
            "attack.pgd_steps" => self.pgd_steps = parse_num(v, key)?,
            "attack.pgd_step_factor" => self.pgd_step_factor = parse_num(v, key)?,
            "attack.pgd_random_start" => self.pgd_random_start = parse_bool(v, key)?,
            "eval.profile_subset" => self.profile_subset = parse_num(v, key)?,
            "eval.entropy_base" => match v {
                "nats" => self.entropy_bits = false,
                "bits" => self.entropy_bits = true,
                other => return Err(LabError::config(format!("unknown entropy base {other:?}"))),
            },
            "profile.alphas" => self.profile_alphas = parse_list(v, key)?,
            "profile.epsilons" => self.profile_epsilons = parse_list(v, key)?,
            "sweep.alphas" => self.sweep_alphas = parse_list(v, key)?,
            "sweep.epsilons" => self.sweep_epsilons = parse_list(v, key)?,
            "sweep.lambdas" => self.sweep_lambdas = parse_list(v, key)?,
            "sweep.targets" => self.sweep_targets = parse_list(v, key)?,
            "sweep.percents" => self.sweep_percents = parse_list(v, key)?,
            _ => return Err(LabError::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses the `key = value` text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LabError::config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(LabError::config(format!("line {}: duplicate key {key:?}", i + 1)));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn model_config(&self) -> CnnConfig {
        CnnConfig {
            in_channels: 1,
            image_size: self.image_size,
            classes: self.classes,
            conv1: self.conv1,
            conv2: self.conv2,
            hidden: self.hidden,
            kernel: 3,
        }
    }

    pub fn weak_policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            kind: AugmentKind::Weak,
            pad: self.aug_pad,
            flip_prob: self.aug_flip_prob,
            strong_ops: vec![],
            strong_ops_per_image: 0,
            magnitude: 0.0,
            cutout: false,
        }
    }

    pub fn strong_policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            kind: AugmentKind::Strong,
            pad: self.aug_pad,
            flip_prob: self.aug_flip_prob,
            strong_ops: self.strong_ops.clone(),
            strong_ops_per_image: self.strong_ops_per_image,
            magnitude: self.strong_magnitude,
            cutout: self.strong_cutout,
        }
    }

    /// Training configuration for the main (possibly semi-supervised) run.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant,
            batch_size: self.batch_size,
            mu: self.mu,
            tau: self.tau,
            lambda_u: self.lambda_u,
            eta: self.eta,
            total_steps: self.steps,
            warmup_steps: self.warmup_steps,
            ema_decay: self.ema_decay,
            uda_temperature: self.uda_temperature,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            nesterov: self.nesterov,
            unsup_norm: if self.unsup_norm == "full" { UnsupNorm::FullBatch } else { UnsupNorm::Retained },
            schedule: match self.schedule.as_str() {
                "multistep" => ScheduleKind::MultiStep { milestones: self.milestones.clone(), gamma: self.gamma },
                "constant" => ScheduleKind::Constant,
                _ => ScheduleKind::Cosine,
            },
            schedule_horizon: self.schedule_horizon,
            eval_interval: self.eval_interval,
            seed: self.seed,
            weak_policy: self.weak_policy(),
            strong_policy: self.strong_policy(),
            model: self.model_config(),
        }
    }

    /// Supervised recipe for the surrogate: multistep decay by gamma at
    /// 40% and 60% of the run.
    pub fn surrogate_config(&self) -> TrainConfig {
        let steps = self.surrogate_steps;
        TrainConfig {
            variant: SslVariant::Supervised,
            batch_size: self.surrogate_batch_size,
            mu: 1,
            tau: self.tau,
            lambda_u: 0.0,
            eta: self.surrogate_eta,
            total_steps: steps,
            warmup_steps: 0,
            ema_decay: self.ema_decay,
            uda_temperature: self.uda_temperature,
            momentum: 0.9,
            weight_decay: self.surrogate_weight_decay,
            nesterov: false,
            unsup_norm: UnsupNorm::Retained,
            schedule: ScheduleKind::MultiStep { milestones: vec![steps * 2 / 5, steps * 3 / 5], gamma: self.gamma },
            schedule_horizon: 0,
            eval_interval: self.eval_interval,
            seed: psl_core::rng::mix(self.seed, &[0x5u64, 0x6a70]),
            weak_policy: self.weak_policy(),
            strong_policy: self.strong_policy(),
            model: self.model_config(),
        }
    }

    pub fn trigger(&self) -> Result<TriggerSpec> {
        let kind = match self.trigger_kind.as_str() {
            "patch" => TriggerKind::Patch,
            _ => TriggerKind::FourCorner,
        };
        TriggerSpec::checkerboard(kind, self.trigger_k).map_err(LabError::from)
    }

    pub fn pgd(&self) -> PgdConfig {
        PgdConfig { steps: self.pgd_steps, step_size_factor: self.pgd_step_factor, random_start: self.pgd_random_start }
    }

    fn mode_of(&self, name: &str, strength: f32) -> Result<PoisonMode> {
        Ok(match name {
            "none" => PoisonMode::None,
            "perturb" => PoisonMode::Perturb { epsilon: strength },
            "interpolate" => PoisonMode::Interpolate { alpha: strength },
            other => return Err(LabError::config(format!("unknown attack mode {other:?}"))),
        })
    }

    /// The attack description; `train_size` is the full training-set size
    /// the poisoning percentage refers to.
    pub fn poison_spec(&self, train_size: usize) -> Result<PoisonSpec> {
        let count = ((self.poison_percent as f64 / 100.0) * train_size as f64).round() as usize;
        if count == 0 {
            return Err(LabError::config(format!(
                "poison percentage {}% of {train_size} samples rounds to zero poisons",
                self.poison_percent
            )));
        }
        Ok(PoisonSpec {
            target_class: self.target_class,
            count,
            lambda_mix: self.attack_lambda,
            weak_mode: self.mode_of(&self.attack_mode, self.attack_strength)?,
            strong_mode: self.mode_of(&self.attack_strong_mode, self.attack_strong_strength)?,
            trigger: self.trigger()?,
            pgd: self.pgd(),
            seed: psl_core::rng::mix(self.seed, &[0xA77AC4]),
        })
    }

    pub fn train_size(&self) -> usize {
        self.classes * self.train_per_class
    }
}

fn validated_mode(v: &str) -> Result<String> {
    match v {
        "none" | "perturb" | "interpolate" => Ok(v.into()),
        other => Err(LabError::config(format!("unknown attack mode {other:?}"))),
    }
}
