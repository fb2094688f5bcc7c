//! CSV emission and parsing for manifests, dynamics traces, metric
//! reports, profiles, comparisons, and sweep aggregates.
//!
//! Numbers are written with Rust's shortest-round-trip float formatting,
//! so write -> read -> write is bit-exact. The `offset` of a CSV format
//! error is the 1-based line number.

use std::fs;
use std::path::Path;

use psl_core::evalkit::{MetricsReport, ProfileMode, ProfilePoint};
use psl_core::poisonforge::{PoisonManifest, PoisonMode, PoisonRecord, PoisonRole};
use psl_core::trainers::{DynamicsTrace, TraceRow};

use crate::error::{LabError, Result};

pub const MANIFEST_HEADER: &str = "index,role,mode,strength,source_a,source_b,target_class";
pub const TRACE_HEADER: &str = "step,test_acc,asr,frac_conf_target,frac_conf_nontarget,frac_unconf";
pub const PROFILE_HEADER: &str = "mode,strength,percent_correct,entropy_nats";
pub const SWEEP_HEADER: &str = "alpha,epsilon,lambda,percent,target_trials,mean_asr,mean_test_acc";
pub const COMPARISON_HEADER: &str = "mode,tier,strength,percent_correct,asr";

fn parse_err(line: usize, what: impl Into<String>) -> LabError {
    LabError::format(line as u64, what.into())
}

fn field<'a>(fields: &[&'a str], i: usize, line: usize) -> Result<&'a str> {
    fields.get(i).copied().ok_or_else(|| parse_err(line, format!("missing field {i}")))
}

fn num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| parse_err(line, format!("bad {what}: {s:?}")))
}

/// Splits CSV text into non-empty lines, checking the header.
fn body<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, &'a str)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((_, h)) => return Err(parse_err(1, format!("bad header {h:?}, expected {header:?}"))),
        None => return Err(parse_err(1, "empty file")),
    }
    Ok(lines.filter(|(_, l)| !l.is_empty()).map(|(i, l)| (i + 1, l)).collect())
}

// ── manifest ────────────────────────────────────────────────────────

pub fn manifest_to_csv(m: &PoisonManifest) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in &m.records {
        let mode = match r.mode {
            PoisonMode::None => "none",
            PoisonMode::Perturb { .. } => "perturb",
            PoisonMode::Interpolate { .. } => "interpolate",
        };
        let role = match r.role {
            PoisonRole::Weak => "weak",
            PoisonRole::Strengthening => "strengthening",
        };
        let source_b = r.source_b.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.index,
            role,
            mode,
            r.mode.strength(),
            r.source_a,
            source_b,
            r.target_class
        ));
    }
    out
}

pub fn manifest_from_csv(text: &str) -> Result<PoisonManifest> {
    let mut records = Vec::new();
    for (line, l) in body(text, MANIFEST_HEADER)? {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 7 {
            return Err(parse_err(line, format!("expected 7 fields, got {}", f.len())));
        }
        let role = match field(&f, 1, line)? {
            "weak" => PoisonRole::Weak,
            "strengthening" => PoisonRole::Strengthening,
            other => return Err(parse_err(line, format!("unknown role {other:?}"))),
        };
        let strength: f32 = num(field(&f, 3, line)?, line, "strength")?;
        let mode = match field(&f, 2, line)? {
            "none" => PoisonMode::None,
            "perturb" => PoisonMode::Perturb { epsilon: strength },
            "interpolate" => PoisonMode::Interpolate { alpha: strength },
            other => return Err(parse_err(line, format!("unknown mode {other:?}"))),
        };
        let source_b = match field(&f, 5, line)? {
            "" => None,
            s => Some(num(s, line, "source_b")?),
        };
        records.push(PoisonRecord {
            index: num(field(&f, 0, line)?, line, "index")?,
            role,
            mode,
            source_a: num(field(&f, 4, line)?, line, "source_a")?,
            source_b,
            target_class: num(field(&f, 6, line)?, line, "target_class")?,
        });
    }
    Ok(PoisonManifest { records })
}

// ── dynamics trace ──────────────────────────────────────────────────

pub fn trace_to_csv(trace: &DynamicsTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.test_acc, r.asr, r.frac_conf_target, r.frac_conf_nontarget, r.frac_unconfident
        ));
    }
    out
}

pub fn trace_from_csv(text: &str) -> Result<DynamicsTrace> {
    let mut rows = Vec::new();
    for (line, l) in body(text, TRACE_HEADER)? {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 6 {
            return Err(parse_err(line, format!("expected 6 fields, got {}", f.len())));
        }
        rows.push(TraceRow {
            step: num(f[0], line, "step")?,
            test_acc: num(f[1], line, "test_acc")?,
            asr: num(f[2], line, "asr")?,
            frac_conf_target: num(f[3], line, "frac_conf_target")?,
            frac_conf_nontarget: num(f[4], line, "frac_conf_nontarget")?,
            frac_unconfident: num(f[5], line, "frac_unconf")?,
        });
    }
    Ok(rows)
}

// ── metrics report ──────────────────────────────────────────────────

pub fn metrics_to_csv(m: &MetricsReport) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("test_accuracy,{}\n", m.test_accuracy));
    out.push_str(&format!("attack_success_rate,{}\n", m.attack_success_rate));
    for (i, (&acc, &n)) in m.per_class_accuracy.iter().zip(&m.n_eval).enumerate() {
        out.push_str(&format!("class_{i}_accuracy,{acc}\n"));
        out.push_str(&format!("class_{i}_count,{n}\n"));
    }
    out
}

pub fn metrics_from_csv(text: &str) -> Result<MetricsReport> {
    let mut test_accuracy = None;
    let mut asr = None;
    let mut per_class: Vec<(usize, f32)> = Vec::new();
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for (line, l) in body(text, "metric,value")? {
        let (k, v) = l
            .split_once(',')
            .ok_or_else(|| parse_err(line, "expected metric,value"))?;
        if k == "test_accuracy" {
            test_accuracy = Some(num(v, line, "test_accuracy")?);
        } else if k == "attack_success_rate" {
            asr = Some(num(v, line, "attack_success_rate")?);
        } else if let Some(rest) = k.strip_prefix("class_") {
            if let Some(i) = rest.strip_suffix("_accuracy") {
                per_class.push((num(i, line, "class index")?, num(v, line, "accuracy")?));
            } else if let Some(i) = rest.strip_suffix("_count") {
                counts.push((num(i, line, "class index")?, num(v, line, "count")?));
            } else {
                return Err(parse_err(line, format!("unknown metric {k:?}")));
            }
        } else {
            return Err(parse_err(line, format!("unknown metric {k:?}")));
        }
    }
    per_class.sort_by_key(|&(i, _)| i);
    counts.sort_by_key(|&(i, _)| i);
    Ok(MetricsReport {
        test_accuracy: test_accuracy.ok_or_else(|| parse_err(0, "missing test_accuracy"))?,
        attack_success_rate: asr.ok_or_else(|| parse_err(0, "missing attack_success_rate"))?,
        per_class_accuracy: per_class.into_iter().map(|(_, v)| v).collect(),
        n_eval: counts.into_iter().map(|(_, v)| v).collect(),
    })
}

// ── profiles ────────────────────────────────────────────────────────

pub fn profile_to_csv(rows: &[(ProfileMode, ProfilePoint)]) -> String {
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    for (mode, p) in rows {
        out.push_str(&format!("{},{},{},{}\n", mode.name(), p.strength, p.percent_correct, p.entropy_nats));
    }
    out
}

pub fn profile_from_csv(text: &str) -> Result<Vec<(ProfileMode, ProfilePoint)>> {
    let mut rows = Vec::new();
    for (line, l) in body(text, PROFILE_HEADER)? {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, got {}", f.len())));
        }
        let mode = match f[0] {
            "perturb" => ProfileMode::Perturb,
            "interpolate" => ProfileMode::Interpolate,
            other => return Err(parse_err(line, format!("unknown mode {other:?}"))),
        };
        rows.push((
            mode,
            ProfilePoint {
                strength: num(f[1], line, "strength")?,
                percent_correct: num(f[2], line, "percent_correct")?,
                entropy_nats: num(f[3], line, "entropy_nats")?,
            },
        ));
    }
    Ok(rows)
}

// ── sweep aggregate ─────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f32,
    pub epsilon: f32,
    pub lambda: f32,
    pub percent: f32,
    pub target_trials: usize,
    pub mean_asr: f32,
    pub mean_test_acc: f32,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.alpha, r.epsilon, r.lambda, r.percent, r.target_trials, r.mean_asr, r.mean_test_acc
        ));
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (line, l) in body(text, SWEEP_HEADER)? {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 7 {
            return Err(parse_err(line, format!("expected 7 fields, got {}", f.len())));
        }
        rows.push(SweepRow {
            alpha: num(f[0], line, "alpha")?,
            epsilon: num(f[1], line, "epsilon")?,
            lambda: num(f[2], line, "lambda")?,
            percent: num(f[3], line, "percent")?,
            target_trials: num(f[4], line, "target_trials")?,
            mean_asr: num(f[5], line, "mean_asr")?,
            mean_test_acc: num(f[6], line, "mean_test_acc")?,
        });
    }
    Ok(rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}
