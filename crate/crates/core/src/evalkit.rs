//! Attack and model metrics: test accuracy, attack success rate,
//! predicted-label distribution profiles, and attack-comparison tables.

use alloc::vec;
use alloc::vec::Vec;

use crate::augment::AugmentPolicy;
use crate::datakit::LabeledDataset;
use crate::error::Result;
use crate::model::DeskCnn;
use crate::numgrad::Tensor;
use crate::poisonforge::{apply_trigger, interpolate, pgd_perturb_batch, PgdConfig, Surrogate, TriggerSpec};
use crate::rng::{mix, Rng};
use crate::{contract_err, ensure};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub test_accuracy: f32,
    pub attack_success_rate: f32,
    pub per_class_accuracy: Vec<f32>,
    /// Evaluated sample count per class.
    pub n_eval: Vec<usize>,
}

/// Fraction of argmax predictions equal to the labels; no augmentation.
pub fn test_accuracy(model: &DeskCnn, test_set: &LabeledDataset) -> Result<f32> {
    ensure!(!test_set.is_empty(), "test_accuracy over an empty set");
    let (correct, _) = per_class_hits(model, test_set)?;
    let total_correct: usize = correct.iter().sum();
    Ok(total_correct as f32 / test_set.len() as f32)
}

fn per_class_hits(model: &DeskCnn, test_set: &LabeledDataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let c = test_set.class_count();
    let mut correct = vec![0usize; c];
    let mut counts = vec![0usize; c];
    let indices: Vec<usize> = (0..test_set.len()).collect();
    for chunk in indices.chunks(512) {
        let images = test_set.gather(chunk)?;
        let preds = model.predict(&images)?;
        for (&i, &p) in chunk.iter().zip(&preds) {
            let truth = test_set
                .ground_truth(i)
                .ok_or_else(|| contract_err!("test sample {i} has no label"))?;
            counts[truth] += 1;
            if p == truth {
                correct[truth] += 1;
            }
        }
    }
    Ok((correct, counts))
}

/// Stamps the trigger on every non-target test sample (no other
/// modification, no augmentation) and returns the fraction predicted as
/// the target class.
pub fn attack_success_rate(model: &DeskCnn, test_set: &LabeledDataset, trigger: &TriggerSpec, target_class: usize) -> Result<f32> {
    ensure!(!test_set.is_empty(), "attack_success_rate over an empty set");
    let (ch, h, w) = (test_set.channels(), test_set.height(), test_set.width());
    let nontarget: Vec<usize> = (0..test_set.len())
        .filter(|&i| matches!(test_set.ground_truth(i), Some(c) if c != target_class))
        .collect();
    ensure!(!nontarget.is_empty(), "test set has no non-target samples");
    let mut hits = 0usize;
    for chunk in nontarget.chunks(512) {
        let mut data = Vec::with_capacity(chunk.len() * ch * h * w);
        for &i in chunk {
            let mut img = test_set.image(i).to_vec();
            apply_trigger(&mut img, ch, h, w, trigger)?;
            data.extend_from_slice(&img);
        }
        let images = Tensor::from_vec(&[chunk.len(), ch, h, w], data)?;
        let preds = model.predict(&images)?;
        hits += preds.iter().filter(|&&p| p == target_class).count();
    }
    Ok(hits as f32 / nontarget.len() as f32)
}

/// Full metrics on a test set, including the per-class breakdown.
pub fn metrics_report(model: &DeskCnn, test_set: &LabeledDataset, trigger: &TriggerSpec, target_class: usize) -> Result<MetricsReport> {
    let (correct, counts) = per_class_hits(model, test_set)?;
    let total: usize = counts.iter().sum();
    ensure!(total > 0, "metrics over an empty set");
    let total_correct: usize = correct.iter().sum();
    let per_class = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f32 / n as f32 })
        .collect();
    Ok(MetricsReport {
        test_accuracy: total_correct as f32 / total as f32,
        attack_success_rate: attack_success_rate(model, test_set, trigger, target_class)?,
        per_class_accuracy: per_class,
        n_eval: counts,
    })
}

/// Entropy of a predicted-class histogram, in nats.
pub fn histogram_entropy_nats(counts: &[usize]) -> f32 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0f32;
    for &c in counts {
        if c > 0 {
            let p = c as f32 / total as f32;
            h -= p * libm::logf(p);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub strength: f32,
    pub percent_correct: f32,
    pub entropy_nats: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileMode {
    Perturb,
    Interpolate,
}

impl ProfileMode {
    pub fn name(&self) -> &'static str {
        match self {
            ProfileMode::Perturb => "perturb",
            ProfileMode::Interpolate => "interpolate",
        }
    }
}

/// Everything the profile operation needs besides the strengths.
pub struct ProfileSetup<'a> {
    /// The trained reference network whose predictions are profiled (and
    /// the PGD surrogate in perturb mode).
    pub model: &'a DeskCnn,
    /// Sample pool; bases are drawn from `target_class`, interpolation
    /// endpoints from the rest.
    pub pool: &'a LabeledDataset,
    pub target_class: usize,
    /// How many target-class samples to profile.
    pub subset: usize,
    /// Trigger stamped after modification; `None` disables stamping.
    pub trigger: Option<&'a TriggerSpec>,
    pub weak_policy: &'a AugmentPolicy,
    pub pgd: &'a PgdConfig,
    pub seed: u64,
}

/// For each strength: modifies the target-class subset the way a poison
/// would be built (PGD at epsilon, or interpolation at alpha toward random
/// non-target endpoints), stamps the trigger, applies one weak view, and
/// computes the fraction predicted as the ground-truth class plus the
/// entropy of the predicted-class histogram.
pub fn label_distribution_profile(setup: &ProfileSetup<'_>, mode: ProfileMode, strengths: &[f32]) -> Result<Vec<ProfilePoint>> {
    ensure!(!strengths.is_empty(), "empty strength list");
    let pool = setup.pool;
    let (ch, h, w) = (pool.channels(), pool.height(), pool.width());
    let numel = ch * h * w;
    let classes = pool.class_count();

    let mut bases = pool.class_indices(setup.target_class);
    ensure!(!bases.is_empty(), "no target-class samples to profile");
    let nontarget: Vec<usize> = (0..pool.len())
        .filter(|&i| matches!(pool.ground_truth(i), Some(c) if c != setup.target_class))
        .collect();
    ensure!(!nontarget.is_empty(), "no non-target samples for endpoints");
    let mut rng = Rng::new(mix(setup.seed, &[0]));
    rng.shuffle(&mut bases);
    bases.truncate(setup.subset.max(1));

    let mut points = Vec::with_capacity(strengths.len());
    for (si, &strength) in strengths.iter().enumerate() {
        // endpoints drawn per strength tier, deterministic in (seed, si)
        let mut tier_rng = Rng::new(mix(setup.seed, &[1, si as u64]));
        let modified: Vec<Vec<f32>> = match mode {
            ProfileMode::Interpolate => {
                ensure!((0.0..=1.0).contains(&strength), "alpha {strength} outside [0,1]");
                bases
                    .iter()
                    .map(|&b| {
                        let e = nontarget[tier_rng.index(nontarget.len())];
                        let mut img = interpolate(pool.image(b), pool.image(e), strength)?;
                        for v in img.iter_mut() {
                            *v = v.clamp(0.0, 1.0);
                        }
                        Ok(img)
                    })
                    .collect::<Result<_>>()?
            }
            ProfileMode::Perturb => {
                let batch = pool.gather(&bases)?;
                let labels = vec![setup.target_class; bases.len()];
                let out = pgd_perturb_batch(
                    &batch,
                    &labels,
                    setup.model as &dyn Surrogate,
                    strength,
                    setup.pgd,
                    mix(setup.seed, &[2, si as u64]),
                )?;
                (0..bases.len()).map(|i| out.data()[i * numel..(i + 1) * numel].to_vec()).collect()
            }
        };

        let mut data = Vec::with_capacity(bases.len() * numel);
        let view_seed = mix(setup.seed, &[3, si as u64]);
        for (i, mut img) in modified.into_iter().enumerate() {
            if let Some(trigger) = setup.trigger {
                apply_trigger(&mut img, ch, h, w, trigger)?;
            }
            let viewed = crate::augment::view(&img, ch, h, w, setup.weak_policy, view_seed, i as u64);
            data.extend_from_slice(&viewed);
        }
        let images = Tensor::from_vec(&[bases.len(), ch, h, w], data)?;
        let preds = setup.model.predict(&images)?;
        let mut hist = vec![0usize; classes];
        let mut correct = 0usize;
        for &p in &preds {
            hist[p] += 1;
            if p == setup.target_class {
                correct += 1;
            }
        }
        points.push(ProfilePoint {
            strength,
            percent_correct: correct as f32 / bases.len() as f32,
            entropy_nats: histogram_entropy_nats(&hist),
        });
    }
    Ok(points)
}

// ── attack comparison (matched strength tiers) ──────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrengthTier {
    Weak,
    Moderate,
    Strong,
}

impl StrengthTier {
    pub fn name(&self) -> &'static str {
        match self {
            StrengthTier::Weak => "weak",
            StrengthTier::Moderate => "moderate",
            StrengthTier::Strong => "strong",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub mode: ProfileMode,
    pub tier: StrengthTier,
    pub strength: f32,
    /// Fraction of modified samples the reference network predicts as
    /// their ground-truth (target) class.
    pub percent_correct: f32,
    pub asr: f32,
}

/// Joins per-tier profile measurements with per-tier attack success
/// rates for the two modes. Both inputs must cover identical tiers.
pub fn compare_attacks(
    profiles: &[(ProfileMode, StrengthTier, f32, f32)],
    asr_results: &[(ProfileMode, StrengthTier, f32)],
) -> Result<Vec<ComparisonRow>> {
    ensure!(!profiles.is_empty(), "empty profile input");
    ensure!(profiles.len() == asr_results.len(), "profile and ASR tier counts differ");
    let mut rows = Vec::with_capacity(profiles.len());
    for (&(pm, pt, strength, pc), &(am, at, asr)) in profiles.iter().zip(asr_results) {
        ensure!(pm == am && pt == at, "tier mismatch between profiles and ASR results");
        rows.push(ComparisonRow { mode: pm, tier: pt, strength, percent_correct: pc, asr });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{generate_synthetic, split, SplitSpec};
    use crate::model::CnnConfig;

    fn model() -> DeskCnn {
        DeskCnn::init(CnnConfig::default(), 12).unwrap()
    }

    #[test]
    fn accuracy_recomposes_from_per_class_breakdown() {
        let ds = generate_synthetic(10, 10, 24, 4).unwrap();
        let m = model();
        let report = metrics_report(&m, &ds, &TriggerSpec::four_corner_default(), 0).unwrap();
        let weighted: f32 = report
            .per_class_accuracy
            .iter()
            .zip(&report.n_eval)
            .map(|(&a, &n)| a * n as f32)
            .sum::<f32>()
            / ds.len() as f32;
        assert!((weighted - report.test_accuracy).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&report.test_accuracy));
        assert!((0.0..=1.0).contains(&report.attack_success_rate));
    }

    #[test]
    fn accuracy_is_invariant_to_ordering() {
        let ds = generate_synthetic(6, 10, 24, 4).unwrap();
        let m = model();
        let perm: Vec<usize> = (0..ds.len()).rev().collect();
        let shuffled = ds.select(&perm).unwrap();
        assert_eq!(test_accuracy(&m, &ds).unwrap(), test_accuracy(&m, &shuffled).unwrap());
        let trig = TriggerSpec::four_corner_default();
        assert_eq!(
            attack_success_rate(&m, &ds, &trig, 2).unwrap(),
            attack_success_rate(&m, &shuffled, &trig, 2).unwrap()
        );
    }

    #[test]
    fn empty_set_is_contract_violation() {
        let ds = generate_synthetic(2, 10, 24, 4).unwrap();
        let empty = ds.select(&[]).unwrap();
        assert!(test_accuracy(&model(), &empty).is_err());
    }

    #[test]
    fn asr_without_nontarget_samples_is_contract_violation() {
        let ds = generate_synthetic(4, 10, 24, 4).unwrap();
        let only_3 = ds.select(&ds.class_indices(3)).unwrap();
        assert!(attack_success_rate(&model(), &only_3, &TriggerSpec::four_corner_default(), 3).is_err());
    }

    #[test]
    fn degenerate_model_hits_asr_one_and_chance_accuracy() {
        // bias the final layer so every prediction is the target class
        let ds = generate_synthetic(5, 10, 24, 4).unwrap();
        let mut m = model();
        let target = 6usize;
        {
            let bias = m.params_mut().last_mut().unwrap();
            bias.data_mut()[target] = 1000.0;
        }
        let trig = TriggerSpec::four_corner_default();
        assert_eq!(attack_success_rate(&m, &ds, &trig, target).unwrap(), 1.0);
        // balanced 10-class set: constant predictions give 10% accuracy
        assert!((test_accuracy(&m, &ds).unwrap() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn entropy_extremes() {
        // point mass -> 0; uniform over 10 -> ln 10
        assert_eq!(histogram_entropy_nats(&[42, 0, 0]), 0.0);
        let uniform = [5usize; 10];
        assert!((histogram_entropy_nats(&uniform) - libm::logf(10.0)).abs() < 1e-6);
        // any non-uniform histogram sits strictly below ln C
        assert!(histogram_entropy_nats(&[9, 1, 0, 0, 0, 0, 0, 0, 0, 0]) < libm::logf(10.0));
    }

    #[test]
    fn profile_runs_both_modes_deterministically() {
        let ds = generate_synthetic(20, 10, 24, 6).unwrap();
        let (_, unl) = split(&ds, &SplitSpec { n_labeled: 50, seed: 1, balanced: true }).unwrap();
        let m = model();
        let trig = TriggerSpec::four_corner_default();
        let weak = AugmentPolicy::weak();
        let pgd = PgdConfig { steps: 5, ..Default::default() };
        let setup = ProfileSetup {
            model: &m,
            pool: &unl,
            target_class: 2,
            subset: 20,
            trigger: Some(&trig),
            weak_policy: &weak,
            pgd: &pgd,
            seed: 9,
        };
        let alphas = label_distribution_profile(&setup, ProfileMode::Interpolate, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(alphas.len(), 3);
        for p in &alphas {
            assert!((0.0..=1.0).contains(&p.percent_correct));
            assert!(p.entropy_nats >= 0.0 && p.entropy_nats <= libm::logf(10.0) + 1e-6);
        }
        let eps = label_distribution_profile(&setup, ProfileMode::Perturb, &[0.0, 8.0 / 255.0]).unwrap();
        assert_eq!(eps.len(), 2);
        let again = label_distribution_profile(&setup, ProfileMode::Interpolate, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(alphas, again);
    }

    #[test]
    fn profile_rejects_empty_strengths() {
        let ds = generate_synthetic(5, 10, 24, 6).unwrap();
        let m = model();
        let trig = TriggerSpec::four_corner_default();
        let weak = AugmentPolicy::weak();
        let pgd = PgdConfig::default();
        let setup = ProfileSetup {
            model: &m,
            pool: &ds,
            target_class: 0,
            subset: 5,
            trigger: Some(&trig),
            weak_policy: &weak,
            pgd: &pgd,
            seed: 0,
        };
        assert!(label_distribution_profile(&setup, ProfileMode::Interpolate, &[]).is_err());
    }

    #[test]
    fn zero_strength_profile_without_trigger_or_views_is_plain_accuracy() {
        let ds = generate_synthetic(30, 10, 24, 21).unwrap();
        let m = model();
        let none = AugmentPolicy::none();
        let pgd = PgdConfig::default();
        let setup = ProfileSetup {
            model: &m,
            pool: &ds,
            target_class: 4,
            subset: usize::MAX,
            trigger: None,
            weak_policy: &none,
            pgd: &pgd,
            seed: 5,
        };
        let pts = label_distribution_profile(&setup, ProfileMode::Interpolate, &[0.0]).unwrap();
        // alpha 0, no trigger, no augmentation: the percent-correct is the
        // model's plain accuracy on the target-class subset
        let subset = ds.select(&ds.class_indices(4)).unwrap();
        let acc = test_accuracy(&m, &subset).unwrap();
        assert!((pts[0].percent_correct - acc).abs() < 1e-6, "{} vs {acc}", pts[0].percent_correct);
    }

    #[test]
    fn comparison_joins_matched_tiers() {
        let profiles = [
            (ProfileMode::Perturb, StrengthTier::Weak, 0.008, 0.9),
            (ProfileMode::Perturb, StrengthTier::Moderate, 0.03, 0.5),
            (ProfileMode::Interpolate, StrengthTier::Weak, 0.2, 0.88),
            (ProfileMode::Interpolate, StrengthTier::Moderate, 0.4, 0.45),
        ];
        let asr = [
            (ProfileMode::Perturb, StrengthTier::Weak, 0.7),
            (ProfileMode::Perturb, StrengthTier::Moderate, 0.93),
            (ProfileMode::Interpolate, StrengthTier::Weak, 0.65),
            (ProfileMode::Interpolate, StrengthTier::Moderate, 0.9),
        ];
        let rows = compare_attacks(&profiles, &asr).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].asr, 0.93);

        let bad = [
            (ProfileMode::Perturb, StrengthTier::Strong, 0.7),
            (ProfileMode::Perturb, StrengthTier::Moderate, 0.93),
            (ProfileMode::Interpolate, StrengthTier::Weak, 0.65),
            (ProfileMode::Interpolate, StrengthTier::Moderate, 0.9),
        ];
        assert!(compare_attacks(&profiles, &bad).is_err());
        assert!(compare_attacks(&[], &[]).is_err());
    }
}
