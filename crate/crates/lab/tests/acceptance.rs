//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! (or PASS/WARN) line. Run with `--nocapture` to see the lines:
//!
//!   cargo test -p psl-lab --test acceptance -- --nocapture
//!
//! The heavyweight fixtures (dataset, surrogate, reference training runs)
//! are shared through lazy statics so criteria can run concurrently
//! without repeating work.

use std::sync::LazyLock;
use std::time::Instant;

use psl_core::datakit::{generate_synthetic, LabeledDataset, UNLABELED};
use psl_core::evalkit::{test_accuracy, ProfileMode};
use psl_core::model::DeskCnn;
use psl_core::numgrad::Tensor;
use psl_core::oracle::{self, check_op};
use psl_core::poisonforge::{apply_trigger, build_attack, interpolate, PgdConfig, PoisonMode, PoisonSpec, TriggerSpec};
use psl_core::rng::{mix, Rng};
use psl_core::trainers::{pseudolabel, train, unsupervised_loss_value, EvalPoint, SslVariant};
use psl_lab::config::ExperimentConfig;
use psl_lab::csvio;
use psl_lab::formats;
use psl_lab::runner::{self, profile_trend_ok, RunOutput};

/// Reference seed for the end-to-end gates (criteria 5-7).
const REFERENCE_SEED: u64 = 1001;
/// Pinned thresholds for criterion 5, confirmed on the reference seeds
/// before freezing.
const MODERATE_ASR_MIN: f32 = 0.70;
const STRONG_ASR_MAX: f32 = 0.25;
const MODERATE_ALPHA: f32 = 0.4;
const STRONG_ALPHA: f32 = 0.8;
/// Pinned underperforming target class and lambda cutoff for criterion 7.
const WEAK_TARGET_CLASS: usize = 0;
const FAILING_LAMBDA: f32 = 0.2;

fn reference_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg
}

struct Stage {
    cfg: ExperimentConfig,
    train_set: LabeledDataset,
    test_set: LabeledDataset,
    surrogate: DeskCnn,
    surrogate_acc: f32,
    surrogate_secs: f64,
}

static STAGE: LazyLock<Stage> = LazyLock::new(|| {
    let cfg = reference_config(REFERENCE_SEED);
    let (train_set, test_set) = runner::gen_data(&cfg).expect("data generation");
    let t0 = Instant::now();
    let out = runner::train_surrogate(&cfg, &train_set).expect("surrogate training");
    let surrogate_secs = t0.elapsed().as_secs_f64();
    let surrogate_acc = test_accuracy(&out.ema, &test_set).expect("surrogate accuracy");
    Stage { cfg, train_set, test_set, surrogate: out.ema, surrogate_acc, surrogate_secs }
});

/// The six reference-seed training runs, executed on a two-worker pool in
/// two phases so the criterion-5 trio gets an honest wall-clock
/// measurement before the criterion-7 trio starts.
struct RefRuns {
    clean: RunOutput,
    moderate: RunOutput,
    strong: RunOutput,
    lambda_pure: RunOutput,
    lambda_mixed: RunOutput,
    lambda_failing: RunOutput,
    crit5_secs: f64,
}

fn run_phase(jobs: Vec<Box<dyn FnOnce() -> RunOutput + Send>>) -> Vec<RunOutput> {
    use std::sync::Mutex;
    let slots: Vec<Mutex<Option<RunOutput>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>());
    std::thread::scope(|scope| {
        for _ in 0..2 {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop();
                let Some((i, job)) = job else { break };
                *slots[i].lock().unwrap() = Some(job());
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("job ran")).collect()
}

static REF_RUNS: LazyLock<RefRuns> = LazyLock::new(|| {
    let stage = &*STAGE;
    let run_alpha = |alpha: f32| -> RunOutput {
        let mut cfg = stage.cfg.clone();
        cfg.attack_mode = "interpolate".into();
        cfg.attack_strength = alpha;
        cfg.attack_lambda = 1.0;
        let atk = runner::attack(&cfg, &stage.train_set, None).expect("attack");
        runner::run_experiment(&cfg, &atk.combined, &stage.test_set).expect("poisoned run")
    };
    let run_lambda = |lambda: f32| -> RunOutput {
        let mut cfg = stage.cfg.clone();
        cfg.target_class = WEAK_TARGET_CLASS;
        cfg.attack_mode = "none".into();
        cfg.attack_lambda = lambda;
        cfg.attack_strong_mode = "interpolate".into();
        cfg.attack_strong_strength = 0.55;
        let atk = runner::attack(&cfg, &stage.train_set, None).expect("attack");
        runner::run_experiment(&cfg, &atk.combined, &stage.test_set).expect("run")
    };

    let t0 = Instant::now();
    let mut phase1 = run_phase(vec![
        Box::new(|| runner::run_experiment(&stage.cfg, &stage.train_set, &stage.test_set).expect("clean run")),
        Box::new(move || run_alpha(MODERATE_ALPHA)),
        Box::new(move || run_alpha(STRONG_ALPHA)),
    ]);
    let crit5_secs = t0.elapsed().as_secs_f64();
    let strong = phase1.pop().unwrap();
    let moderate = phase1.pop().unwrap();
    let clean = phase1.pop().unwrap();

    let mut phase2 = run_phase(vec![
        Box::new(move || run_lambda(1.0)),
        Box::new(move || run_lambda(0.9)),
        Box::new(move || run_lambda(FAILING_LAMBDA)),
    ]);
    let lambda_failing = phase2.pop().unwrap();
    let lambda_mixed = phase2.pop().unwrap();
    let lambda_pure = phase2.pop().unwrap();

    RefRuns { clean, moderate, strong, lambda_pure, lambda_mixed, lambda_failing, crit5_secs }
});

// ── criterion 1: gradient oracle ────────────────────────────────────

#[test]
fn criterion_1_gradient_oracle() {
    let t0 = Instant::now();
    let cases = 20;
    let mut total = 0usize;

    fn sample(rng: &mut Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.f32_range(lo, hi)).collect()).unwrap().with_grad()
    }
    fn rand_shape(rng: &mut Rng, max_dims: usize, max_extent: usize) -> Vec<usize> {
        let dims = 1 + rng.index(max_dims);
        (0..dims).map(|_| 1 + rng.index(max_extent)).collect()
    }

    // relu (inputs clear of the kink)
    total += check_op(
        mix(101, &[0]),
        cases,
        |rng| {
            let shape = rand_shape(rng, 3, 6);
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|_| {
                    let m = rng.f32_range(0.05, 1.0);
                    if rng.bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            vec![Tensor::from_vec(&shape, data).unwrap().with_grad()]
        },
        |tape, ids| tape.relu(ids[0]),
        |ins| oracle::relu64(&ins[0]),
    )
    .unwrap();

    // elementwise add/sub/mul
    for which in [0u8, 1, 2] {
        total += check_op(
            mix(102, &[which as u64]),
            cases,
            |rng| {
                let shape = rand_shape(rng, 3, 6);
                vec![sample(rng, &shape, -1.0, 1.0), sample(rng, &shape, -1.0, 1.0)]
            },
            move |tape, ids| match which {
                0 => tape.add(ids[0], ids[1]),
                1 => tape.sub(ids[0], ids[1]),
                _ => tape.mul(ids[0], ids[1]),
            },
            move |ins| {
                ins[0]
                    .iter()
                    .zip(&ins[1])
                    .map(|(&a, &b)| match which {
                        0 => a + b,
                        1 => a - b,
                        _ => a * b,
                    })
                    .collect()
            },
        )
        .unwrap();
    }

    // scale / sum / mean / exp
    total += check_op(
        mix(103, &[0]),
        cases,
        |rng| {
            let shape = rand_shape(rng, 2, 8);
            vec![sample(rng, &shape, -1.0, 1.0)]
        },
        |tape, ids| tape.scale(ids[0], 0.73),
        |ins| ins[0].iter().map(|&v| v * 0.73).collect(),
    )
    .unwrap();
    total += check_op(
        mix(103, &[1]),
        cases,
        |rng| {
            let shape = rand_shape(rng, 2, 8);
            vec![sample(rng, &shape, -1.0, 1.0)]
        },
        |tape, ids| tape.sum(ids[0]),
        |ins| vec![ins[0].iter().sum()],
    )
    .unwrap();
    total += check_op(
        mix(103, &[2]),
        cases,
        |rng| {
            let shape = rand_shape(rng, 2, 8);
            vec![sample(rng, &shape, -1.0, 1.0)]
        },
        |tape, ids| tape.mean(ids[0]),
        |ins| vec![ins[0].iter().sum::<f64>() / ins[0].len() as f64],
    )
    .unwrap();
    total += check_op(
        mix(103, &[3]),
        cases,
        |rng| {
            let shape = rand_shape(rng, 2, 6);
            vec![sample(rng, &shape, -1.5, 1.5)]
        },
        |tape, ids| tape.exp(ids[0]),
        |ins| ins[0].iter().map(|&v| v.exp()).collect(),
    )
    .unwrap();

    // log-softmax
    for case in 0..cases as u64 {
        let mut srng = Rng::new(mix(104, &[case]));
        let b = 1 + srng.index(4);
        let c = 2 + srng.index(9);
        total += check_op(
            mix(105, &[case]),
            1,
            move |rng| vec![sample(rng, &[b, c], -3.0, 3.0)],
            |tape, ids| tape.log_softmax(ids[0]),
            move |ins| oracle::log_softmax64(&ins[0], b, c),
        )
        .unwrap();
    }

    // affine
    for case in 0..cases as u64 {
        let mut srng = Rng::new(mix(106, &[case]));
        let (bsz, din, dout) = (1 + srng.index(4), 1 + srng.index(8), 1 + srng.index(8));
        total += check_op(
            mix(107, &[case]),
            1,
            move |rng| {
                vec![sample(rng, &[bsz, din], -1.0, 1.0), sample(rng, &[din, dout], -1.0, 1.0), sample(rng, &[dout], -0.5, 0.5)]
            },
            |tape, ids| tape.affine(ids[0], ids[1], ids[2]),
            move |ins| oracle::affine64(&ins[0], &ins[1], &ins[2], bsz, din, dout),
        )
        .unwrap();
    }

    // conv2d
    for case in 0..cases as u64 {
        let mut srng = Rng::new(mix(108, &[case]));
        let (bsz, cin, cout) = (1 + srng.index(2), 1 + srng.index(3), 1 + srng.index(3));
        let (h, w) = (2 + srng.index(6), 2 + srng.index(6));
        let k = [1usize, 3, 3, 5][srng.index(4)];
        total += check_op(
            mix(109, &[case]),
            1,
            move |rng| {
                vec![
                    sample(rng, &[bsz, cin, h, w], -1.0, 1.0),
                    sample(rng, &[cout, cin, k, k], -1.0, 1.0),
                    sample(rng, &[cout], -0.5, 0.5),
                ]
            },
            |tape, ids| tape.conv2d(ids[0], ids[1], ids[2]),
            move |ins| oracle::conv2d64(&ins[0], &ins[1], &ins[2], bsz, cin, h, w, cout, k),
        )
        .unwrap();
    }

    // max-pool (window entries separated)
    for case in 0..cases as u64 {
        let mut srng = Rng::new(mix(110, &[case]));
        let (bsz, c) = (1 + srng.index(2), 1 + srng.index(3));
        let (h, w) = (2 * (1 + srng.index(4)), 2 * (1 + srng.index(4)));
        total += check_op(
            mix(111, &[case]),
            1,
            move |rng| {
                let mut t = sample(rng, &[bsz, c, h, w], -1.0, 1.0);
                let data = t.data_mut();
                for p in 0..bsz * c {
                    for i in 0..h / 2 {
                        for j in 0..w / 2 {
                            let base = p * h * w + 2 * i * w + 2 * j;
                            let idx = [base, base + 1, base + w, base + w + 1];
                            for a in 0..4 {
                                for b in (a + 1)..4 {
                                    if (data[idx[a]] - data[idx[b]]).abs() < 0.02 {
                                        data[idx[b]] += 0.05 * (b as f32 + 1.0);
                                    }
                                }
                            }
                        }
                    }
                }
                vec![t]
            },
            |tape, ids| tape.max_pool2(ids[0]),
            move |ins| oracle::maxpool2_64(&ins[0], bsz * c, h, w),
        )
        .unwrap();
    }

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 30.0, "gradient oracle took {secs:.1}s, budget is 30s");
    println!("[PASS] criterion 1: gradient oracle, {total} coordinates across 12 ops in {secs:.1}s");
}

// ── criterion 2: attack-constraint invariants ───────────────────────

#[test]
fn criterion_2_attack_constraints() {
    let stage = &*STAGE;
    let (labeled_split, pool) = runner::partition_for_training(&stage.cfg, &stage.train_set).expect("split");
    drop(labeled_split);
    let trigger = TriggerSpec::four_corner_default();
    let mut checked = 0usize;

    // 500 perturb-mode poisons (two attacks over different targets) and
    // 500 interpolate-mode poisons
    let mk = |target: usize, count: usize, mode: PoisonMode, seed: u64| PoisonSpec {
        target_class: target,
        count,
        lambda_mix: 1.0,
        weak_mode: mode,
        strong_mode: PoisonMode::None,
        trigger: trigger.clone(),
        pgd: PgdConfig { steps: 20, ..Default::default() },
        seed,
    };
    let eps = 8.0 / 255.0;
    let cases = [
        mk(2, 250, PoisonMode::Perturb { epsilon: eps }, 11),
        mk(7, 250, PoisonMode::Perturb { epsilon: eps }, 12),
        mk(4, 250, PoisonMode::Interpolate { alpha: 0.4 }, 13),
        mk(8, 250, PoisonMode::Interpolate { alpha: 0.7 }, 14),
    ];
    let mask = trigger.mask(pool.channels(), pool.height(), pool.width()).unwrap();
    for spec in cases {
        let (poisoned, manifest) = build_attack(&pool, &spec, Some(&stage.surrogate)).expect("attack builds");
        assert_eq!(manifest.len(), spec.count);
        // 100%: l-inf budget / exact convex reconstruction, off-trigger
        for r in &manifest.records {
            let got = poisoned.image(r.index);
            assert!(got.iter().all(|&v| (0.0..=1.0).contains(&v)), "pixel range violated");
            match r.mode {
                PoisonMode::Perturb { epsilon } => {
                    let src = pool.image(r.source_a);
                    for (i, &m) in mask.iter().enumerate() {
                        assert!(m || (got[i] - src[i]).abs() <= epsilon + 1e-6, "l-inf violated at {i}");
                    }
                }
                PoisonMode::Interpolate { alpha } => {
                    let expect = interpolate(pool.image(r.source_a), pool.image(r.source_b.unwrap()), alpha).unwrap();
                    for (i, &m) in mask.iter().enumerate() {
                        assert!(
                            m || (got[i] - expect[i].clamp(0.0, 1.0)).abs() <= 1e-6,
                            "convex reconstruction violated at {i}"
                        );
                    }
                }
                PoisonMode::None => unreachable!(),
            }
            // trigger idempotence: restamping changes nothing, bit-exact
            let mut restamped = got.to_vec();
            apply_trigger(&mut restamped, pool.channels(), pool.height(), pool.width(), &trigger).unwrap();
            assert_eq!(restamped, got, "trigger stamp not idempotent");
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
    println!("[PASS] criterion 2: attack-constraint invariants on {checked} poisons");
}

// ── criterion 3: loss-oracle equivalence ────────────────────────────

#[test]
fn criterion_3_loss_oracle() {
    // Eq-form value vs independent f64 cross-entropy on 100 random batches
    let ds = generate_synthetic(40, 10, 24, 0xBEEF).unwrap();
    let mut worst = 0.0f64;
    for batch in 0..100u64 {
        let mut rng = Rng::new(mix(3001, &[batch]));
        let model = DeskCnn::init(Default::default(), rng.next_u64()).unwrap();
        let n = 8 + rng.index(12);
        let indices: Vec<usize> = (0..n).map(|_| rng.index(ds.len())).collect();
        let views = ds.gather(&indices).unwrap();
        let truth: Vec<usize> = indices.iter().map(|&i| ds.label(i) as usize).collect();
        // tau = 0 retains everything; pseudolabels forced to ground truth
        let (_, mask) = pseudolabel(&model, &views, 0.0).unwrap();
        assert!(mask.iter().all(|&m| m));
        let ours = unsupervised_loss_value(&model, &views, &truth, &mask).unwrap() as f64;

        let logits = model.logits(&views).unwrap();
        let logits64: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        let reference = oracle::mean_cross_entropy64(&logits64, &truth, n, 10);
        worst = worst.max((ours - reference).abs());
    }
    assert!(worst <= 1e-5, "worst loss-oracle deviation {worst}");

    // lambda_u = 0 FixMatch is bit-identical to supervised for 200 steps
    let stage = &*STAGE;
    let (labeled, unlabeled) = runner::partition_for_training(&stage.cfg, &stage.train_set).unwrap();
    let mut fm = stage.cfg.train_config();
    fm.total_steps = 200;
    fm.eval_interval = 200;
    fm.lambda_u = 0.0;
    let mut sup = fm.clone();
    sup.variant = SslVariant::Supervised;
    let mut hook = |_: usize, _: &DeskCnn| Ok(EvalPoint { test_acc: 0.0, asr: 0.0, fracs: (0.0, 0.0, 1.0) });
    let a = train(&fm, &labeled, Some(&unlabeled), &mut hook).unwrap();
    let b = train(&sup, &labeled, None, &mut hook).unwrap();
    for (x, y) in a.model.params().iter().zip(b.model.params()) {
        assert_eq!(x.data(), y.data(), "lambda_u = 0 trajectory diverged from supervised");
    }
    println!("[PASS] criterion 3: loss oracle <= 1e-5 over 100 batches; lambda_u=0 bit-identical for 200 steps");
}

// ── criterion 4: profile trend reproduction ─────────────────────────

#[test]
fn criterion_4_profile_trends() {
    let stage = &*STAGE;
    assert!(
        stage.surrogate_acc >= 0.90,
        "surrogate reached only {:.4}, needs 0.90",
        stage.surrogate_acc
    );
    assert!(stage.surrogate_secs < 300.0, "surrogate training took {:.0}s, budget 300s", stage.surrogate_secs);

    let rows = runner::profile(&stage.cfg, &stage.surrogate, &stage.train_set).expect("profile");
    for mode in [ProfileMode::Interpolate, ProfileMode::Perturb] {
        let pts: Vec<psl_core::evalkit::ProfilePoint> =
            rows.iter().filter(|(m, _)| *m == mode).map(|(_, p)| *p).collect();
        assert!(pts.len() >= 5, "profile grid too small for {}", mode.name());
        let (pc_ok, ent_ok) = profile_trend_ok(&pts, 0.02, 0.05);
        let detail: Vec<String> = pts.iter().map(|p| format!("{:.3}/{:.3}", p.percent_correct, p.entropy_nats)).collect();
        assert!(pc_ok, "{} percent-correct not non-increasing (one inversion <= 0.02 allowed): {detail:?}", mode.name());
        assert!(ent_ok, "{} entropy not non-decreasing (one inversion <= 0.05 allowed): {detail:?}", mode.name());
    }
    println!(
        "[PASS] criterion 4: surrogate at {:.3} in {:.0}s; percent-correct falls and entropy rises over both strength grids",
        stage.surrogate_acc, stage.surrogate_secs
    );
}

// ── criterion 5: end-to-end attack ordering ─────────────────────────

#[test]
fn criterion_5_attack_ordering() {
    let runs = &*REF_RUNS;
    let base_rate = runs.clean.report.attack_success_rate;
    let moderate = runs.moderate.report.attack_success_rate;
    let strong = runs.strong.report.attack_success_rate;
    let acc_drop = runs.clean.report.test_accuracy - runs.moderate.report.test_accuracy;

    assert!(runs.crit5_secs < 1800.0, "reference runs took {:.0}s, budget 1800s", runs.crit5_secs);
    assert!(moderate > strong, "ASR ordering violated: moderate {moderate:.3} <= strong {strong:.3}");
    assert!(
        moderate > 3.0 * base_rate,
        "moderate ASR {moderate:.3} not above 3x clean base rate {base_rate:.3}"
    );
    assert!(moderate >= MODERATE_ASR_MIN, "moderate ASR {moderate:.3} below pinned {MODERATE_ASR_MIN}");
    assert!(strong <= STRONG_ASR_MAX, "strong ASR {strong:.3} above pinned {STRONG_ASR_MAX}");
    assert!(acc_drop <= 0.03, "accuracy degradation {acc_drop:.4} exceeds 3 points");
    println!(
        "[PASS] criterion 5: ASR moderate {moderate:.3} > strong {strong:.3}, base rate {base_rate:.3}, accuracy drop {acc_drop:.4}, {:.0}s for the three runs",
        runs.crit5_secs
    );
}

// ── criterion 6: tipping-point characterization ─────────────────────

#[test]
fn criterion_6_tipping_point() {
    let runs = &*REF_RUNS;
    let trace = &runs.moderate.train.trace;
    assert!(!trace.is_empty());
    let k = STAGE.cfg.steps;
    let window = k / 10;

    // find any window of <= 10% of K where ASR rises by >= 0.4 while the
    // confident-target fraction also rises
    let mut found = None;
    for i in 0..trace.len() {
        for j in (i + 1)..trace.len() {
            if trace[j].step - trace[i].step > window {
                break;
            }
            if trace[j].asr - trace[i].asr >= 0.4 && trace[j].frac_conf_target > trace[i].frac_conf_target {
                found = Some((trace[i].step, trace[j].step, trace[j].asr - trace[i].asr));
            }
        }
    }
    match found {
        Some((a, b, rise)) => {
            println!("[PASS] criterion 6: tipping point, ASR rose {rise:.3} within steps {a}..{b} (window {window}) while confident-target rose");
        }
        None => {
            // reported, not failed: the dynamic is expected but not guaranteed
            println!("[WARN] criterion 6: no {window}-step window with an ASR rise >= 0.4 plus rising confident-target fraction");
        }
    }
}

// ── criterion 7: generalized-framework ordering ─────────────────────

#[test]
fn criterion_7_generalized_framework() {
    let runs = &*REF_RUNS;
    let pure_asr = runs.lambda_pure.report.attack_success_rate;
    let mixed_asr = runs.lambda_mixed.report.attack_success_rate;
    let failing_asr = runs.lambda_failing.report.attack_success_rate;
    assert!(
        mixed_asr > pure_asr,
        "lambda=0.9 mixed attack ({mixed_asr:.3}) did not beat the pure weak attack ({pure_asr:.3})"
    );
    assert!(
        failing_asr <= 0.25,
        "strengthening-dominated attack at lambda={FAILING_LAMBDA} has ASR {failing_asr:.3} > 0.25"
    );
    println!(
        "[PASS] criterion 7: target {WEAK_TARGET_CLASS}: pure-weak {pure_asr:.3} < lambda=0.9 mix {mixed_asr:.3}; lambda={FAILING_LAMBDA} fails at {failing_asr:.3}"
    );
}

// ── criterion 8: format round trips ─────────────────────────────────

#[test]
fn criterion_8_format_round_trips() {
    let stage = &*STAGE;
    let dir = std::env::temp_dir().join(format!("psl-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();

    // dataset: write -> read -> write bit-exact, hidden labels included
    let (_, pool) = runner::partition_for_training(&stage.cfg, &stage.train_set).unwrap();
    for ds in [&stage.train_set, &pool] {
        let bytes = formats::encode_dataset(ds);
        let back = formats::decode_dataset(&bytes).unwrap();
        assert_eq!(formats::encode_dataset(&back), bytes);
    }
    assert!(pool.labels().iter().all(|&l| l == UNLABELED));

    // model container
    let mbytes = formats::encode_model(&stage.surrogate);
    let mback = formats::decode_model(&mbytes).unwrap();
    assert_eq!(formats::encode_model(&mback), mbytes);

    // manifest CSV via a real attack
    let mut cfg = stage.cfg.clone();
    cfg.attack_lambda = 0.9;
    cfg.attack_mode = "interpolate".into();
    cfg.attack_strong_mode = "interpolate".into();
    let atk = runner::attack(&cfg, &stage.train_set, None).unwrap();
    let csv = csvio::manifest_to_csv(&atk.manifest);
    let back = csvio::manifest_from_csv(&csv).unwrap();
    assert_eq!(back, atk.manifest);
    assert_eq!(csvio::manifest_to_csv(&back), csv);

    // trace, metrics, profile, sweep CSVs
    let trace = vec![
        psl_core::trainers::TraceRow { step: 200, test_acc: 0.51, asr: 0.031, frac_conf_target: 0.2, frac_conf_nontarget: 0.1, frac_unconfident: 0.7 },
        psl_core::trainers::TraceRow { step: 400, test_acc: 0.77, asr: 0.92, frac_conf_target: 0.9, frac_conf_nontarget: 0.02, frac_unconfident: 0.08 },
    ];
    let tcsv = csvio::trace_to_csv(&trace);
    assert_eq!(csvio::trace_to_csv(&csvio::trace_from_csv(&tcsv).unwrap()), tcsv);

    let report = psl_core::evalkit::MetricsReport {
        test_accuracy: 0.913,
        attack_success_rate: 0.861,
        per_class_accuracy: vec![0.8; 10],
        n_eval: vec![100; 10],
    };
    let mcsv = csvio::metrics_to_csv(&report);
    assert_eq!(csvio::metrics_to_csv(&csvio::metrics_from_csv(&mcsv).unwrap()), mcsv);

    let prows = vec![
        (ProfileMode::Perturb, psl_core::evalkit::ProfilePoint { strength: 0.0314, percent_correct: 0.55, entropy_nats: 1.71 }),
        (ProfileMode::Interpolate, psl_core::evalkit::ProfilePoint { strength: 0.4, percent_correct: 0.52, entropy_nats: 1.8 }),
    ];
    let pcsv = csvio::profile_to_csv(&prows);
    assert_eq!(csvio::profile_to_csv(&csvio::profile_from_csv(&pcsv).unwrap()), pcsv);

    let srows = vec![csvio::SweepRow { alpha: 0.4, epsilon: 0.0, lambda: 1.0, percent: 1.0, target_trials: 5, mean_asr: 0.83, mean_test_acc: 0.9 }];
    let scsv = csvio::sweep_to_csv(&srows);
    assert_eq!(csvio::sweep_to_csv(&csvio::sweep_from_csv(&scsv).unwrap()), scsv);

    // malformed inputs produce the specified error classes
    let ds_bytes = formats::encode_dataset(&stage.train_set);
    let err = formats::decode_dataset(&ds_bytes[..100]).unwrap_err();
    assert_eq!(err.exit_code(), 2, "truncation must be a format error");
    let err = formats::decode_dataset(b"XXXX").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = csvio::manifest_from_csv("bad header\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = ExperimentConfig::parse("unknown.key = 1\n").unwrap_err();
    assert_eq!(err.exit_code(), 1, "config violations are contract errors");

    let _ = std::fs::remove_dir_all(&dir);
    println!("[PASS] criterion 8: all containers and CSVs round-trip bit-exactly; malformed inputs map to the right error classes");
}
