//! Attack-dynamics probes (ignored by default): full poisoned FixMatch
//! runs that print ASR traces for calibrating the acceptance gate.

use psl_core::datakit::{generate_synthetic, split, LabeledDataset, SplitSpec};
use psl_core::evalkit::{attack_success_rate, test_accuracy};
use psl_core::model::DeskCnn;
use psl_core::poisonforge::{build_attack, PgdConfig, PoisonMode, PoisonSpec, TriggerSpec};
use psl_core::trainers::{record_pseudolabel_types, train, EvalPoint, TrainConfig, TAG_EVAL};
use psl_core::rng::mix;

fn data() -> (LabeledDataset, LabeledDataset, LabeledDataset) {
    let train_set = generate_synthetic(500, 10, 24, 0xD5EED).unwrap();
    let test_set = generate_synthetic(100, 10, 24, 0x7E57).unwrap();
    let (labeled, unlabeled) = split(&train_set, &SplitSpec { n_labeled: 250, seed: 3, balanced: true }).unwrap();
    (labeled, unlabeled, test_set)
}

fn run_attack(alpha: Option<f32>, target: usize, seed: u64, steps: usize) {
    run_attack_cfg(alpha, target, seed, steps, psl_core::trainers::UnsupNorm::Retained, 0, 0.03);
}

fn run_attack_cfg(
    alpha: Option<f32>,
    target: usize,
    seed: u64,
    steps: usize,
    norm: psl_core::trainers::UnsupNorm,
    warmup: usize,
    eta: f32,
) {
    run_attack_full(alpha, target, seed, steps, norm, warmup, eta, 0.999, None);
}

#[allow(clippy::too_many_arguments)]
fn run_attack_full(
    alpha: Option<f32>,
    target: usize,
    seed: u64,
    steps: usize,
    norm: psl_core::trainers::UnsupNorm,
    warmup: usize,
    eta: f32,
    ema_decay: f32,
    model_cfg: Option<psl_core::model::CnnConfig>,
) {
    run_attack_trig(alpha, target, seed, steps, norm, warmup, eta, ema_decay, model_cfg, 3, 1.0);
}

#[allow(clippy::too_many_arguments)]
fn run_attack_trig(
    alpha: Option<f32>,
    target: usize,
    seed: u64,
    steps: usize,
    norm: psl_core::trainers::UnsupNorm,
    warmup: usize,
    eta: f32,
    ema_decay: f32,
    model_cfg: Option<psl_core::model::CnnConfig>,
    trigger_k: usize,
    percent: f32,
) {
    let (labeled, unlabeled, test_set) = data();
    let trigger = TriggerSpec::checkerboard(psl_core::poisonforge::TriggerKind::FourCorner, trigger_k).unwrap();
    let (pool, poison_idx) = match alpha {
        Some(a) => {
            let spec = PoisonSpec {
                target_class: target,
                count: (50.0 * percent) as usize,
                lambda_mix: 1.0,
                weak_mode: if a == 0.0 { PoisonMode::None } else { PoisonMode::Interpolate { alpha: a } },
                strong_mode: PoisonMode::None,
                trigger: trigger.clone(),
                pgd: PgdConfig::default(),
                seed: mix(seed, &[99]),
            };
            let (poisoned, manifest) = build_attack(&unlabeled, &spec, None).unwrap();
            let idx: Vec<usize> = manifest.records.iter().map(|r| r.index).collect();
            (poisoned, idx)
        }
        None => (unlabeled.clone(), vec![]),
    };

    let mut cfg = TrainConfig::desk_fixmatch(seed);
    cfg.total_steps = steps;
    cfg.eval_interval = 400;
    cfg.unsup_norm = norm;
    cfg.warmup_steps = warmup;
    cfg.eta = eta;
    cfg.ema_decay = ema_decay;
    if let Some(mc) = model_cfg {
        cfg.model = mc;
    }
    let weak = cfg.weak_policy.clone();
    let tau = cfg.tau;
    let eval_seed = cfg.seed;

    let t0 = std::time::Instant::now();
    let out = train(&cfg, &labeled, Some(&pool), &mut |step, ema: &DeskCnn| {
        let acc = test_accuracy(ema, &test_set)?;
        let asr = attack_success_rate(ema, &test_set, &trigger, target)?;
        let fracs = if poison_idx.is_empty() {
            (0.0, 0.0, 1.0)
        } else {
            let numel = pool.image_numel();
            let mut data = Vec::with_capacity(poison_idx.len() * numel);
            let vseed = mix(eval_seed, &[TAG_EVAL, step as u64]);
            for (i, &idx) in poison_idx.iter().enumerate() {
                data.extend_from_slice(&psl_core::augment::view(pool.image(idx), 1, 24, 24, &weak, vseed, i as u64));
            }
            let views = psl_core::numgrad::Tensor::from_vec(&[poison_idx.len(), 1, 24, 24], data)?;
            record_pseudolabel_types(ema, &views, target, tau)?
        };
        Ok(EvalPoint { test_acc: acc, asr, fracs })
    })
    .unwrap();
    let raw_asr = attack_success_rate(&out.model, &test_set, &trigger, target).unwrap();
    let ema_asr = attack_success_rate(&out.ema, &test_set, &trigger, target).unwrap();
    eprintln!(
        "== alpha {alpha:?} target {target} seed {seed} norm {norm:?} warmup {warmup} eta {eta} ema {ema_decay} k {trigger_k} pct {percent}: {:?} | final raw asr {raw_asr:.3} ema asr {ema_asr:.3}",
        t0.elapsed()
    );
    for r in &out.trace {
        eprintln!(
            "step {:5}  acc {:.3}  asr {:.3}  fracs {:.2}/{:.2}/{:.2}",
            r.step, r.test_acc, r.asr, r.frac_conf_target, r.frac_conf_nontarget, r.frac_unconfident
        );
    }
}

#[test]
#[ignore]
fn probe_clean_run() {
    run_attack(None, 3, 1001, 8000);
}

#[test]
#[ignore]
fn probe_moderate_alpha() {
    run_attack(Some(0.4), 3, 1001, 8000);
}

#[test]
#[ignore]
fn probe_strong_alpha() {
    run_attack(Some(0.8), 3, 1001, 8000);
}

#[test]
#[ignore]
fn probe_unmodified_attack() {
    run_attack(Some(0.0), 3, 1001, 8000);
}


#[test]
#[ignore]
fn probe_fullnorm_clean() {
    run_attack_cfg(None, 3, 1001, 4000, psl_core::trainers::UnsupNorm::FullBatch, 0, 0.03);
}

#[test]
#[ignore]
fn probe_fullnorm_moderate() {
    run_attack_cfg(Some(0.4), 3, 1001, 4000, psl_core::trainers::UnsupNorm::FullBatch, 0, 0.03);
}

#[test]
#[ignore]
fn probe_retained_warmup_clean() {
    run_attack_cfg(None, 3, 1001, 4000, psl_core::trainers::UnsupNorm::Retained, 1000, 0.03);
}

#[test]
#[ignore]
fn probe_retained_warmup_moderate() {
    run_attack_cfg(Some(0.4), 3, 1001, 4000, psl_core::trainers::UnsupNorm::Retained, 1000, 0.03);
}


#[test]
#[ignore]
fn probe_fullnorm_moderate_8k() {
    run_attack_cfg(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::FullBatch, 0, 0.03);
}

#[test]
#[ignore]
fn probe_fullnorm_unmodified_8k() {
    run_attack_cfg(Some(0.0), 3, 1001, 8000, psl_core::trainers::UnsupNorm::FullBatch, 0, 0.03);
}

#[test]
#[ignore]
fn probe_fullnorm_strong_8k() {
    run_attack_cfg(Some(0.8), 3, 1001, 8000, psl_core::trainers::UnsupNorm::FullBatch, 0, 0.03);
}


#[test]
#[ignore]
fn probe_retained_warmup_moderate_8k() {
    run_attack_cfg(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03);
}

#[test]
#[ignore]
fn probe_retained_warmup_clean_8k() {
    run_attack_cfg(None, 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03);
}


#[test]
#[ignore]
fn probe_long_run_14k() {
    run_attack_full(Some(0.4), 3, 1001, 14000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, None);
}

#[test]
#[ignore]
fn probe_long_run_14k_wide() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_full(Some(0.4), 3, 1001, 14000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc));
}


#[test]
#[ignore]
fn probe_trigger_k5() {
    run_attack_trig(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, None, 5, 1.0);
}

#[test]
#[ignore]
fn probe_trigger_k4() {
    run_attack_trig(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, None, 4, 1.0);
}


#[test]
#[ignore]
fn probe_trigger_k6_moderate() {
    run_attack_trig(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, None, 6, 1.0);
}

#[test]
#[ignore]
fn probe_trigger_k6_strong() {
    run_attack_trig(Some(0.8), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, None, 6, 1.0);
}


#[test]
#[ignore]
fn probe_k6_wide_model() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}

#[test]
#[ignore]
fn probe_k6_target7() {
    run_attack_trig(Some(0.4), 7, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, None, 6, 1.0);
}


#[test]
#[ignore]
fn probe_hard_k6_wide() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}

#[test]
#[ignore]
fn probe_hard_k6_std() {
    run_attack_trig(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, None, 6, 1.0);
}


#[test]
#[ignore]
fn probe_soft_k6_wide_t5() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.4), 5, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}

#[test]
#[ignore]
fn probe_soft_k6_wide_t7() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.4), 7, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}


#[test]
#[ignore]
fn probe_unmod_t0_wide() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.0), 0, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}

#[test]
#[ignore]
fn probe_unmod_t9_wide() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.0), 9, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}

#[test]
#[ignore]
fn probe_unmod_t6_wide() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.0), 6, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}


#[test]
#[ignore]
fn probe_horizon_k6_wide_t3() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.4), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}

#[test]
#[ignore]
fn probe_horizon_k6_wide_strong() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.8), 3, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}


#[test]
#[ignore]
fn probe_h_unmod_t0() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.0), 0, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}

#[test]
#[ignore]
fn probe_h_unmod_t9() {
    let mc = psl_core::model::CnnConfig { conv1: 12, conv2: 20, hidden: 64, ..Default::default() };
    run_attack_trig(Some(0.0), 9, 1001, 8000, psl_core::trainers::UnsupNorm::Retained, 1500, 0.03, 0.995, Some(mc), 6, 1.0);
}
