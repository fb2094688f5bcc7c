//! Quick difficulty probe (ignored by default): prints labeled-only and
//! full-supervised accuracy so the generator can be tuned.

use psl_core::datakit::{generate_synthetic, split, SplitSpec};
use psl_core::evalkit::test_accuracy;
use psl_core::model::DeskCnn;
use psl_core::trainers::{train, EvalPoint, SslVariant, TrainConfig};

fn no_eval() -> impl FnMut(usize, &DeskCnn) -> psl_core::Result<EvalPoint> {
    |_, _| Ok(EvalPoint { test_acc: 0.0, asr: 0.0, fracs: (0.0, 0.0, 1.0) })
}

#[test]
#[ignore]
fn difficulty_probe() {
    let train_set = generate_synthetic(500, 10, 24, 0xD5EED).unwrap();
    let test_set = generate_synthetic(100, 10, 24, 0x7E57).unwrap();
    let (labeled, _unl) = split(&train_set, &SplitSpec { n_labeled: 250, seed: 3, balanced: true }).unwrap();

    let mut lab_cfg = TrainConfig::desk_fixmatch(42);
    lab_cfg.variant = SslVariant::Supervised;
    lab_cfg.total_steps = 1500;
    lab_cfg.eval_interval = 1500;
    let t0 = std::time::Instant::now();
    let lab_out = train(&lab_cfg, &labeled, None, &mut no_eval()).unwrap();
    let lab_acc = test_accuracy(&lab_out.ema, &test_set).unwrap();
    eprintln!("labeled-only(250) 1500 steps: acc {:.4} in {:?}", lab_acc, t0.elapsed());

    let mut full_cfg = TrainConfig::desk_supervised(41);
    full_cfg.eta = 0.05;
    full_cfg.total_steps = 4000;
    full_cfg.eval_interval = 4000;
    full_cfg.schedule = psl_core::trainers::ScheduleKind::MultiStep { milestones: vec![1600, 2400], gamma: 0.1 };
    let t0 = std::time::Instant::now();
    let full_out = train(&full_cfg, &train_set, None, &mut no_eval()).unwrap();
    let train_acc = test_accuracy(&full_out.ema, &train_set).unwrap();
    eprintln!("supervised-full train acc {:.4}", train_acc);
    let full_acc = test_accuracy(&full_out.ema, &test_set).unwrap();
    eprintln!("supervised-full 4000 steps: acc {:.4} in {:?}", full_acc, t0.elapsed());
}
