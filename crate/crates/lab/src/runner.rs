//! High-level experiment stages shared by the CLI and the acceptance
//! suite: data generation, surrogate training, attack construction over
//! the split, full runs with the dynamics recorder, and profiles.

use std::path::{Path, PathBuf};

use psl_core::augment::view;
use psl_core::datakit::{generate_synthetic, split, LabeledDataset, SplitSpec, UNLABELED};
use psl_core::evalkit::{attack_success_rate, label_distribution_profile, metrics_report, test_accuracy, MetricsReport, ProfileMode, ProfilePoint, ProfileSetup};
use psl_core::model::DeskCnn;
use psl_core::numgrad::Tensor;
use psl_core::poisonforge::{build_attack, PoisonManifest, Surrogate};
use psl_core::rng::mix;
use psl_core::trainers::{record_pseudolabel_types, train, EvalPoint, TrainOutput, TAG_EVAL};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};

const TAG_DATA_TRAIN: u64 = 0xDA7A_0;
const TAG_DATA_TEST: u64 = 0xDA7A_1;
const TAG_SPLIT: u64 = 0x5915;

/// Output file names under the experiment directory.
pub struct Paths {
    pub out: PathBuf,
}

impl Paths {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Paths { out: out.into() }
    }

    pub fn ensure(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        Ok(())
    }

    pub fn train_file(&self) -> PathBuf {
        self.out.join("train.psl")
    }

    pub fn test_file(&self) -> PathBuf {
        self.out.join("test.psl")
    }

    pub fn surrogate_file(&self) -> PathBuf {
        self.out.join("surrogate.pmd")
    }

    pub fn poisoned_file(&self) -> PathBuf {
        self.out.join("poisoned.psl")
    }

    pub fn manifest_file(&self) -> PathBuf {
        self.out.join("manifest.csv")
    }

    pub fn trace_file(&self) -> PathBuf {
        self.out.join("trace.csv")
    }

    pub fn metrics_file(&self) -> PathBuf {
        self.out.join("metrics.csv")
    }

    pub fn model_file(&self) -> PathBuf {
        self.out.join("model.pmd")
    }

    pub fn dynamics_plot(&self) -> PathBuf {
        self.out.join("dynamics.svg")
    }

    pub fn fractions_plot(&self) -> PathBuf {
        self.out.join("fractions.svg")
    }

    pub fn profile_file(&self) -> PathBuf {
        self.out.join("profile.csv")
    }

    pub fn profile_plot(&self) -> PathBuf {
        self.out.join("profile.svg")
    }

    pub fn sweep_file(&self) -> PathBuf {
        self.out.join("sweep.csv")
    }

    pub fn cell_dir(&self, name: &str) -> PathBuf {
        self.out.join("cells").join(name)
    }
}

/// Generates the train and test datasets for a config.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = generate_synthetic(cfg.train_per_class, cfg.classes, cfg.image_size, mix(cfg.seed, &[TAG_DATA_TRAIN]))?;
    let test = generate_synthetic(cfg.test_per_class, cfg.classes, cfg.image_size, mix(cfg.seed, &[TAG_DATA_TEST]))?;
    Ok((train, test))
}

/// The labeled/unlabeled split every stage agrees on.
pub fn split_spec(cfg: &ExperimentConfig) -> SplitSpec {
    SplitSpec { n_labeled: cfg.n_labeled, seed: mix(cfg.seed, &[TAG_SPLIT]), balanced: cfg.balanced }
}

/// Supervised training on the fully labeled training set; returns the EMA
/// model used for perturbation generation and profiling.
pub fn train_surrogate(cfg: &ExperimentConfig, train_set: &LabeledDataset) -> Result<TrainOutput> {
    let tc = cfg.surrogate_config();
    let mut hook = |_: usize, _: &DeskCnn| Ok(EvalPoint { test_acc: 0.0, asr: 0.0, fracs: (0.0, 0.0, 1.0) });
    train(&tc, train_set, None, &mut hook).map_err(LabError::from)
}

pub struct AttackOutput {
    /// Labeled part followed by the poisoned unlabeled pool.
    pub combined: LabeledDataset,
    /// Same layout without the poisons, for reconstruction checks.
    pub clean_combined: LabeledDataset,
    /// Records indexed against the combined layout.
    pub manifest: PoisonManifest,
    pub weak_count: usize,
    pub strengthening_count: usize,
}

/// Splits the training set, poisons the unlabeled pool per the config,
/// and recombines. Poison counts are percentages of the entire training
/// set; manifest indices refer to the combined dataset.
pub fn attack(cfg: &ExperimentConfig, train_set: &LabeledDataset, surrogate: Option<&DeskCnn>) -> Result<AttackOutput> {
    let (labeled, unlabeled) = split(train_set, &split_spec(cfg))?;
    let spec = cfg.poison_spec(train_set.len())?;
    let sur = surrogate.map(|m| m as &dyn Surrogate);
    let (poisoned_unl, mut manifest) = build_attack(&unlabeled, &spec, sur)?;
    let offset = labeled.len();
    for r in &mut manifest.records {
        r.index += offset;
        r.source_a += offset;
        if let Some(b) = &mut r.source_b {
            *b += offset;
        }
    }
    let (weak_count, strengthening_count) = manifest.role_counts();
    Ok(AttackOutput {
        combined: labeled.concat(&poisoned_unl)?,
        clean_combined: labeled.concat(&unlabeled)?,
        manifest,
        weak_count,
        strengthening_count,
    })
}

/// Separates a combined dataset back into (labeled, unlabeled) by the
/// UNLABELED sentinel, preserving order. A fully labeled input is split
/// per the config instead.
pub fn partition_for_training(cfg: &ExperimentConfig, dataset: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    let has_unlabeled = dataset.labels().iter().any(|&l| l == UNLABELED);
    if has_unlabeled {
        let lab_idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.label(i) != UNLABELED).collect();
        let unl_idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.label(i) == UNLABELED).collect();
        Ok((dataset.select(&lab_idx)?, dataset.select(&unl_idx)?))
    } else {
        split(dataset, &split_spec(cfg)).map_err(LabError::from)
    }
}

pub struct RunOutput {
    pub train: TrainOutput,
    pub report: MetricsReport,
}

/// Runs the configured variant on a (possibly poisoned) dataset,
/// recording the dynamics trace on the EMA model and reporting final
/// metrics on it.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &LabeledDataset, test_set: &LabeledDataset) -> Result<RunOutput> {
    let (labeled, unlabeled) = partition_for_training(cfg, dataset)?;
    let trigger = cfg.trigger()?;
    let target = cfg.target_class;
    let tc = cfg.train_config();
    let tau = tc.tau;
    let weak_policy = tc.weak_policy.clone();
    let eval_seed = tc.seed;
    let poison_idx = unlabeled.poison_indices();
    let (ch, h, w) = (unlabeled.channels(), unlabeled.height(), unlabeled.width());

    let pool = if unlabeled.is_empty() { None } else { Some(&unlabeled) };
    let mut hook = |step: usize, ema: &DeskCnn| -> psl_core::Result<EvalPoint> {
        let acc = test_accuracy(ema, test_set)?;
        let asr = attack_success_rate(ema, test_set, &trigger, target)?;
        let fracs = if poison_idx.is_empty() {
            // no poisons: vacuously nothing is confident in anything
            (0.0, 0.0, 1.0)
        } else {
            let vseed = mix(eval_seed, &[TAG_EVAL, step as u64]);
            let numel = ch * h * w;
            let mut data = Vec::with_capacity(poison_idx.len() * numel);
            for (i, &idx) in poison_idx.iter().enumerate() {
                data.extend_from_slice(&view(unlabeled.image(idx), ch, h, w, &weak_policy, vseed, i as u64));
            }
            let views = Tensor::from_vec(&[poison_idx.len(), ch, h, w], data)?;
            record_pseudolabel_types(ema, &views, target, tau)?
        };
        Ok(EvalPoint { test_acc: acc, asr, fracs })
    };
    let out = train(&tc, &labeled, pool, &mut hook)?;
    let report = metrics_report(&out.ema, test_set, &trigger, target)?;
    Ok(RunOutput { train: out, report })
}

/// Profiles both modification modes over the configured strength grids.
pub fn profile(cfg: &ExperimentConfig, surrogate: &DeskCnn, pool: &LabeledDataset) -> Result<Vec<(ProfileMode, ProfilePoint)>> {
    let trigger = cfg.trigger()?;
    let weak = cfg.weak_policy();
    let pgd = cfg.pgd();
    let setup = ProfileSetup {
        model: surrogate,
        pool,
        target_class: cfg.target_class,
        subset: cfg.profile_subset,
        trigger: Some(&trigger),
        weak_policy: &weak,
        pgd: &pgd,
        seed: mix(cfg.seed, &[0x920F17E]),
    };
    let mut rows = Vec::new();
    for p in label_distribution_profile(&setup, ProfileMode::Perturb, &cfg.profile_epsilons)? {
        rows.push((ProfileMode::Perturb, p));
    }
    for p in label_distribution_profile(&setup, ProfileMode::Interpolate, &cfg.profile_alphas)? {
        rows.push((ProfileMode::Interpolate, p));
    }
    Ok(rows)
}

/// Trend check over one mode's profile: percent-correct must be
/// non-increasing and entropy non-decreasing in the modification
/// strength, each allowing at most one inversion within the given slack.
pub fn profile_trend_ok(points: &[ProfilePoint], pc_slack: f32, ent_slack: f32) -> (bool, bool) {
    let pc_ok = count_inversions(points.iter().map(|p| -p.percent_correct), pc_slack) <= 1;
    let ent_ok = count_inversions(points.iter().map(|p| p.entropy_nats), ent_slack) <= 1;
    (pc_ok, ent_ok)
}

/// Number of adjacent pairs violating a non-decreasing trend by more than
/// `slack`.
fn count_inversions(vals: impl Iterator<Item = f32>, slack: f32) -> usize {
    let v: Vec<f32> = vals.collect();
    v.windows(2).filter(|w| w[1] < w[0] - slack).count()
}

/// Reads a required artifact, naming it when missing.
pub fn require(path: &Path, hint: &str) -> Result<()> {
    if !path.exists() {
        return Err(LabError::config(format!("missing input {}: {hint}", path.display())));
    }
    Ok(())
}
