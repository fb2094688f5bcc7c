//! `psl` - experiment front door for the semi-supervised poisoning lab.
//!
//! Subcommands cover each pipeline stage; artifacts live under `--out`
//! with fixed names (train.psl, test.psl, surrogate.pmd, poisoned.psl,
//! manifest.csv, trace.csv, metrics.csv, sweep.csv, profile.csv, plus
//! SVG plots). Exit codes: 0 success, 1 contract violation, 2 I/O or
//! format error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use psl_lab::config::ExperimentConfig;
use psl_lab::csvio;
use psl_lab::error::{LabError, Result};
use psl_lab::formats;
use psl_lab::plot::{line_plot, Series};
use psl_lab::runner::{self, Paths};
use psl_lab::sweep;

#[derive(Parser)]
#[command(name = "psl", about = "Desk-scale lab for backdoor poisoning of semi-supervised training", version)]
struct Cli {
    /// Experiment configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Config overrides as key=value, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test datasets.
    GenData,
    /// Train the supervised surrogate on the full labeled training set.
    TrainSurrogate,
    /// Poison the unlabeled pool per the attack configuration.
    Attack,
    /// Train the configured variant on the (possibly poisoned) data.
    Run,
    /// Cartesian sweep over the configured axes with aggregation.
    Sweep,
    /// Predicted-label distribution profile over both attack modes.
    Profile,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| LabError::config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let paths = Paths::new(&cli.out);
    paths.ensure()?;
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg, &paths),
        Command::TrainSurrogate => cmd_train_surrogate(&cfg, &paths),
        Command::Attack => cmd_attack(&cfg, &paths),
        Command::Run => cmd_run(&cfg, &paths),
        Command::Sweep => cmd_sweep(&cfg, &paths),
        Command::Profile => cmd_profile(&cfg, &paths),
    }
}

fn cmd_gen_data(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    let (train_set, test_set) = runner::gen_data(cfg)?;
    formats::write_dataset(&train_set, &paths.train_file())?;
    formats::write_dataset(&test_set, &paths.test_file())?;
    println!(
        "wrote {} (N={}, {} per class) and {} (N={})",
        paths.train_file().display(),
        train_set.len(),
        cfg.train_per_class,
        paths.test_file().display(),
        test_set.len()
    );
    if cfg.balanced {
        println!(
            "labeled split: {} samples over {} classes -> {} per class",
            cfg.n_labeled,
            cfg.classes,
            cfg.n_labeled / cfg.classes.max(1)
        );
    }
    Ok(())
}

fn cmd_train_surrogate(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    runner::require(&paths.train_file(), "run `psl gen-data` first")?;
    let train_set = formats::read_dataset(&paths.train_file())?;
    let out = runner::train_surrogate(cfg, &train_set)?;
    formats::write_model(&out.ema, &paths.surrogate_file())?;
    let sc = cfg.surrogate_config();
    if let psl_core::trainers::ScheduleKind::MultiStep { milestones, gamma } = &sc.schedule {
        println!("surrogate schedule: eta {} with gamma {} drops at steps {:?}", sc.eta, gamma, milestones);
    }
    let acc_msg = if paths.test_file().exists() {
        let test_set = formats::read_dataset(&paths.test_file())?;
        format!("test accuracy {:.4}", psl_core::evalkit::test_accuracy(&out.ema, &test_set)?)
    } else {
        format!("train accuracy {:.4}", psl_core::evalkit::test_accuracy(&out.ema, &train_set)?)
    };
    println!("wrote {} ({acc_msg})", paths.surrogate_file().display());
    Ok(())
}

fn surrogate_if_needed(cfg: &ExperimentConfig, paths: &Paths) -> Result<Option<psl_core::model::DeskCnn>> {
    let needs = cfg.attack_mode == "perturb" || (cfg.attack_lambda < 1.0 && cfg.attack_strong_mode == "perturb");
    if !needs {
        return Ok(None);
    }
    if !paths.surrogate_file().exists() {
        return Err(LabError::config(format!(
            "perturb mode requires the surrogate model at {}; run `psl train-surrogate` first",
            paths.surrogate_file().display()
        )));
    }
    Ok(Some(formats::read_model(&paths.surrogate_file())?))
}

fn cmd_attack(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    runner::require(&paths.train_file(), "run `psl gen-data` first")?;
    let train_set = formats::read_dataset(&paths.train_file())?;
    let surrogate = surrogate_if_needed(cfg, paths)?;
    let out = runner::attack(cfg, &train_set, surrogate.as_ref())?;
    formats::write_dataset(&out.combined, &paths.poisoned_file())?;
    csvio::write_text(&paths.manifest_file(), &csvio::manifest_to_csv(&out.manifest))?;
    println!(
        "poisoned {} of {} samples ({} weak / {} strengthening) -> {}",
        out.manifest.len(),
        train_set.len(),
        out.weak_count,
        out.strengthening_count,
        paths.poisoned_file().display()
    );
    println!("manifest -> {}", paths.manifest_file().display());
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    runner::require(&paths.test_file(), "run `psl gen-data` first")?;
    let test_set = formats::read_dataset(&paths.test_file())?;
    let (dataset, source) = if paths.poisoned_file().exists() {
        (formats::read_dataset(&paths.poisoned_file())?, paths.poisoned_file())
    } else {
        runner::require(&paths.train_file(), "run `psl gen-data` first")?;
        (formats::read_dataset(&paths.train_file())?, paths.train_file())
    };
    println!("training on {}", source.display());
    let run = runner::run_experiment(cfg, &dataset, &test_set)?;

    csvio::write_text(&paths.trace_file(), &csvio::trace_to_csv(&run.train.trace))?;
    csvio::write_text(&paths.metrics_file(), &csvio::metrics_to_csv(&run.report))?;
    formats::write_model(&run.train.ema, &paths.model_file())?;
    write_run_plots(paths)?;
    println!(
        "final (EMA): test accuracy {:.4}, attack success rate {:.4}; {} trace rows -> {}",
        run.report.test_accuracy,
        run.report.attack_success_rate,
        run.train.trace.len(),
        paths.trace_file().display()
    );
    Ok(())
}

fn write_run_plots(paths: &Paths) -> Result<()> {
    // plots are rendered from the parsed CSV so they can never show
    // anything the CSV does not contain
    let parsed = csvio::trace_from_csv(&csvio::read_text(&paths.trace_file())?)?;
    let xy = |f: fn(&psl_core::trainers::TraceRow) -> f32| -> Vec<(f32, f32)> {
        parsed.iter().map(|r| (r.step as f32, f(r))).collect()
    };
    let dynamics = line_plot(
        "attack success rate and test accuracy",
        "step",
        "rate",
        &[
            Series { name: "asr", color: "#d62728", points: xy(|r| r.asr) },
            Series { name: "test_acc", color: "#1f77b4", points: xy(|r| r.test_acc) },
        ],
    );
    csvio::write_text(&paths.dynamics_plot(), &dynamics)?;
    let fractions = line_plot(
        "poisoned-sample pseudolabel types",
        "step",
        "fraction",
        &[
            Series { name: "conf_target", color: "#1f77b4", points: xy(|r| r.frac_conf_target) },
            Series { name: "conf_nontarget", color: "#ff7f0e", points: xy(|r| r.frac_conf_nontarget) },
            Series { name: "unconfident", color: "#2ca02c", points: xy(|r| r.frac_unconfident) },
            Series { name: "asr", color: "#d62728", points: xy(|r| r.asr) },
        ],
    );
    csvio::write_text(&paths.fractions_plot(), &fractions)?;
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    runner::require(&paths.train_file(), "run `psl gen-data` first")?;
    runner::require(&paths.test_file(), "run `psl gen-data` first")?;
    let train_set = formats::read_dataset(&paths.train_file())?;
    let test_set = formats::read_dataset(&paths.test_file())?;
    let needs_surrogate = !cfg.sweep_epsilons.is_empty()
        || cfg.attack_mode == "perturb"
        || (cfg.attack_lambda < 1.0 && cfg.attack_strong_mode == "perturb");
    let surrogate = if needs_surrogate {
        runner::require(&paths.surrogate_file(), "run `psl train-surrogate` first")?;
        Some(formats::read_model(&paths.surrogate_file())?)
    } else {
        None
    };

    let mut failures = 0usize;
    let results = sweep::run_cells(cfg, &train_set, &test_set, surrogate.as_ref(), |cell, outcome| {
        let dir = paths.cell_dir(&cell.name());
        std::fs::create_dir_all(&dir)?;
        match outcome {
            Ok((run, atk)) => {
                csvio::write_text(&dir.join("trace.csv"), &csvio::trace_to_csv(&run.train.trace))?;
                csvio::write_text(&dir.join("metrics.csv"), &csvio::metrics_to_csv(&run.report))?;
                csvio::write_text(&dir.join("manifest.csv"), &csvio::manifest_to_csv(&atk.manifest))?;
                println!(
                    "cell {}: asr {:.4}, acc {:.4}",
                    cell.name(),
                    run.report.attack_success_rate,
                    run.report.test_accuracy
                );
            }
            Err(msg) => {
                failures += 1;
                csvio::write_text(&dir.join("failure.txt"), msg)?;
                println!("cell {}: FAILED ({msg})", cell.name());
            }
        }
        Ok(())
    })?;

    let rows = sweep::aggregate(cfg, &results);
    csvio::write_text(&paths.sweep_file(), &csvio::sweep_to_csv(&rows))?;
    println!(
        "{} cells ({failures} failed), {} aggregated rows -> {}",
        results.len(),
        rows.len(),
        paths.sweep_file().display()
    );
    Ok(())
}

fn cmd_profile(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    runner::require(&paths.train_file(), "run `psl gen-data` first")?;
    runner::require(
        &paths.surrogate_file(),
        "the profile needs the trained reference network; run `psl train-surrogate` first",
    )?;
    let train_set = formats::read_dataset(&paths.train_file())?;
    let surrogate = formats::read_model(&paths.surrogate_file())?;
    let rows = runner::profile(cfg, &surrogate, &train_set)?;
    csvio::write_text(&paths.profile_file(), &csvio::profile_to_csv(&rows))?;

    // trend check: percent-correct should fall and entropy rise with
    // modification strength
    let parsed = csvio::profile_from_csv(&csvio::read_text(&paths.profile_file())?)?;
    for mode in [psl_core::evalkit::ProfileMode::Perturb, psl_core::evalkit::ProfileMode::Interpolate] {
        let pts: Vec<psl_core::evalkit::ProfilePoint> = parsed.iter().filter(|(m, _)| *m == mode).map(|(_, p)| *p).collect();
        if pts.len() < 2 {
            continue;
        }
        let (pc_ok, ent_ok) = runner::profile_trend_ok(&pts, 0.02, 0.05);
        println!(
            "{} trend: percent_correct non-increasing {}, entropy non-decreasing {}",
            mode.name(),
            if pc_ok { "PASS" } else { "FAIL" },
            if ent_ok { "PASS" } else { "FAIL" }
        );
    }

    // plot from the parsed CSV, in the configured entropy base
    let base = if cfg.entropy_bits { core::f32::consts::LN_2 } else { 1.0 };
    let series = |mode: psl_core::evalkit::ProfileMode, f: &dyn Fn(&psl_core::evalkit::ProfilePoint) -> f32| -> Vec<(f32, f32)> {
        parsed.iter().filter(|(m, _)| *m == mode).map(|(_, p)| (p.strength, f(p))).collect()
    };
    let svg = line_plot(
        "predicted labels of modified samples",
        "modification strength",
        if cfg.entropy_bits { "fraction / entropy (bits)" } else { "fraction / entropy (nats)" },
        &[
            Series { name: "perturb: correct", color: "#1f77b4", points: series(psl_core::evalkit::ProfileMode::Perturb, &|p| p.percent_correct) },
            Series { name: "perturb: entropy", color: "#2ca02c", points: series(psl_core::evalkit::ProfileMode::Perturb, &|p| p.entropy_nats / base) },
            Series { name: "interp: correct", color: "#9467bd", points: series(psl_core::evalkit::ProfileMode::Interpolate, &|p| p.percent_correct) },
            Series { name: "interp: entropy", color: "#8c564b", points: series(psl_core::evalkit::ProfileMode::Interpolate, &|p| p.entropy_nats / base) },
        ],
    );
    csvio::write_text(&paths.profile_plot(), &svg)?;
    println!("profile -> {} and {}", paths.profile_file().display(), paths.profile_plot().display());
    Ok(())
}
