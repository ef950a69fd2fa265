//! Per-run CSV records and aggregated CSV / Markdown reports.
//!
//! Reports contain only values that are deterministic given the config, so
//! re-running a campaign reproduces them byte for byte. Wall time is kept in
//! the per-run `result.csv` only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use visemekl::models::EpochLog;

use crate::campaign::{Rates, RunResult};
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CampaignKind {
    Table,
    Sweep,
}

impl CampaignKind {
    fn name(self) -> &'static str {
        match self {
            Self::Table => "table",
            Self::Sweep => "sweep",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "table" => Some(Self::Table),
            "sweep" => Some(Self::Sweep),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Md,
}

const RESULT_HEADER: [&str; 14] = [
    "order",
    "spec",
    "silent_fraction",
    "seed",
    "status",
    "ver_normal",
    "ver_silent",
    "wer_normal",
    "wer_silent",
    "best_epoch",
    "n_normal",
    "n_silent",
    "wall_time_s",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_result_csv(path: &Path, r: &RunResult, order: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULT_HEADER)?;
    let (status, rates, error) = match &r.outcome {
        Ok(rates) => ("ok", Some(rates), String::new()),
        Err(e) => ("failed", None, e.clone()),
    };
    w.write_record([
        order.to_string(),
        r.spec.clone(),
        r.silent_fraction.to_string(),
        r.seed.to_string(),
        status.to_string(),
        opt(rates.map(|x| x.ver_normal)),
        opt(rates.map(|x| x.ver_silent)),
        opt(rates.and_then(|x| x.wer_normal)),
        opt(rates.and_then(|x| x.wer_silent)),
        r.best_epoch.to_string(),
        r.n_normal.to_string(),
        r.n_silent.to_string(),
        format!("{:.3}", r.wall_time_s),
        error,
    ])?;
    w.flush()?;
    Ok(())
}

/// Reads back a `result.csv`, returning the run and its schedule position.
pub fn read_result_csv(path: &Path) -> Result<(usize, RunResult)> {
    let bad = |m: &str| HarnessError::Config(format!("{}: {m}", path.display()));
    let mut rd = csv::Reader::from_path(path)?;
    let rec = rd.records().next().ok_or_else(|| bad("no data row"))??;
    let field = |i: usize| rec.get(i).unwrap_or("");
    let num = |i: usize| field(i).parse::<f64>().map_err(|_| bad(RESULT_HEADER[i]));
    let int = |i: usize| field(i).parse::<u64>().map_err(|_| bad(RESULT_HEADER[i]));
    let maybe = |i: usize| if field(i).is_empty() { Ok(None) } else { num(i).map(Some) };
    let outcome = match field(4) {
        "ok" => Ok(Rates {
            ver_normal: num(5)?,
            ver_silent: num(6)?,
            wer_normal: maybe(7)?,
            wer_silent: maybe(8)?,
        }),
        "failed" => Err(field(13).to_string()),
        _ => return Err(bad("status")),
    };
    Ok((
        int(0)? as usize,
        RunResult {
            spec: field(1).to_string(),
            silent_fraction: num(2)?,
            seed: int(3)?,
            outcome,
            best_epoch: int(9)? as usize,
            n_normal: int(10)? as usize,
            n_silent: int(11)? as usize,
            epochs: Vec::new(),
            wall_time_s: num(12)?,
        },
    ))
}

pub fn write_epochs_csv(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let terms: Vec<String> = epochs.first().map_or(Vec::new(), |e| e.terms.iter().map(|(t, _)| t.name().to_string()).collect());
    let mut header = vec!["epoch", "lr", "train_loss", "val_loss", "skipped"].into_iter().map(String::from).collect::<Vec<_>>();
    header.extend(terms.iter().map(|t| format!("loss_{t}")));
    w.write_record(&header)?;
    for e in epochs {
        let mut row = vec![e.epoch.to_string(), e.lr.to_string(), e.train_loss.to_string(), e.val_loss.to_string(), e.skipped.to_string()];
        row.extend(e.terms.iter().map(|(_, v)| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

pub const METRICS: [&str; 4] = ["ver_normal", "ver_silent", "wer_normal", "wer_silent"];

/// One report line: a spec at one fraction, aggregated over its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub spec: String,
    pub silent_fraction: f64,
    pub runs: usize,
    pub failed: usize,
    /// Mean and std per entry of [`METRICS`], in percent.
    pub stats: [Option<(f64, f64)>; 4],
}

/// Groups results by (spec, fraction) in order of first appearance.
pub fn aggregate(results: &[RunResult]) -> Vec<Aggregate> {
    let mut groups: Vec<((String, u64), Vec<&RunResult>)> = Vec::new();
    for r in results {
        let key = (r.spec.clone(), r.silent_fraction.to_bits());
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((spec, f), rs)| {
            let ok: Vec<&Rates> = rs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let col = |pick: fn(&Rates) -> Option<f64>| -> Option<(f64, f64)> {
                let xs: Option<Vec<f64>> = ok.iter().map(|r| pick(r).map(|x| 100.0 * x)).collect();
                xs.and_then(|xs| mean_std(&xs))
            };
            Aggregate {
                spec,
                silent_fraction: f64::from_bits(f),
                runs: ok.len(),
                failed: rs.len() - ok.len(),
                stats: [col(|r| Some(r.ver_normal)), col(|r| Some(r.ver_silent)), col(|r| r.wer_normal), col(|r| r.wer_silent)],
            }
        })
        .collect()
}

fn num4(v: Option<(f64, f64)>, pick: fn((f64, f64)) -> f64) -> String {
    v.map(|s| format!("{:.4}", pick(s))).unwrap_or_default()
}

pub fn render_csv(aggs: &[Aggregate]) -> String {
    let mut out = String::from("spec,silent_fraction,runs,failed");
    for m in METRICS {
        let _ = write!(out, ",{m}_mean,{m}_std");
    }
    out.push('\n');
    for a in aggs {
        let _ = write!(out, "{},{},{},{}", a.spec, a.silent_fraction, a.runs, a.failed);
        for s in a.stats {
            let _ = write!(out, ",{},{}", num4(s, |s| s.0), num4(s, |s| s.1));
        }
        out.push('\n');
    }
    out
}

fn cell(s: Option<(f64, f64)>) -> String {
    s.map(|(m, sd)| format!("{m:.4} ± {sd:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn render_md(kind: CampaignKind, aggs: &[Aggregate], results: &[RunResult]) -> String {
    let mut out = String::new();
    match kind {
        CampaignKind::Table => {
            out.push_str("| Loss | VER Normal (%) | VER Silent (%) | WER Normal (%) | WER Silent (%) | Runs |\n");
            out.push_str("|---|---|---|---|---|---|\n");
            for a in aggs {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    a.spec,
                    cell(a.stats[0]),
                    cell(a.stats[1]),
                    cell(a.stats[2]),
                    cell(a.stats[3]),
                    a.runs
                );
            }
        }
        CampaignKind::Sweep => {
            out.push_str("| Silent fraction | Loss | VER Silent m (%) | VER Silent σ (%) | VER Normal m (%) | VER Normal σ (%) | Runs |\n");
            out.push_str("|---|---|---|---|---|---|---|\n");
            let mut sorted: Vec<&Aggregate> = aggs.iter().collect();
            sorted.sort_by(|a, b| a.silent_fraction.total_cmp(&b.silent_fraction));
            for a in sorted {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    a.silent_fraction,
                    a.spec,
                    num4(a.stats[1], |s| s.0),
                    num4(a.stats[1], |s| s.1),
                    num4(a.stats[0], |s| s.0),
                    num4(a.stats[0], |s| s.1),
                    a.runs
                );
            }
        }
    }
    let failed: Vec<&RunResult> = results.iter().filter(|r| r.outcome.is_err()).collect();
    if !failed.is_empty() {
        out.push_str("\n## Failures\n\n");
        for r in failed {
            let _ = writeln!(
                out,
                "- {} (fraction {}, seed {}): {}",
                r.spec,
                r.silent_fraction,
                r.seed,
                r.outcome.as_ref().err().map_or("", String::as_str)
            );
        }
    }
    out
}

fn report_name(kind: CampaignKind, format: Format) -> String {
    let ext = match format {
        Format::Csv => "csv",
        Format::Md => "md",
    };
    format!("{}.{ext}", kind.name())
}

/// Writes `<kind>.csv`, `<kind>.md` and the `kind` marker into `dir`.
pub fn write_reports(dir: &Path, kind: CampaignKind, results: &[RunResult]) -> Result<Vec<PathBuf>> {
    fs::write(dir.join("kind"), format!("{}\n", kind.name()))?;
    let aggs = aggregate(results);
    let csv_path = dir.join(report_name(kind, Format::Csv));
    let md_path = dir.join(report_name(kind, Format::Md));
    fs::write(&csv_path, render_csv(&aggs))?;
    fs::write(&md_path, render_md(kind, &aggs, results))?;
    Ok(vec![csv_path, md_path])
}

/// Rebuilds a report from the `result.csv` files under a campaign directory.
pub fn report_from_dir(dir: &Path, format: Format) -> Result<String> {
    let kind_text = fs::read_to_string(dir.join("kind")).map_err(|_| HarnessError::Config(format!("{} is not a campaign directory", dir.display())))?;
    let kind = CampaignKind::parse(&kind_text).ok_or_else(|| HarnessError::Config("unknown campaign kind".into()))?;
    let mut found = BTreeMap::new();
    for spec in fs::read_dir(dir)? {
        let spec = spec?.path();
        if !spec.is_dir() {
            continue;
        }
        for seed in fs::read_dir(&spec)? {
            let path = seed?.path().join("result.csv");
            if path.is_file() {
                let (order, r) = read_result_csv(&path)?;
                found.insert(order, r);
            }
        }
    }
    let results: Vec<RunResult> = found.into_values().collect();
    let aggs = aggregate(&results);
    Ok(match format {
        Format::Csv => render_csv(&aggs),
        Format::Md => render_md(kind, &aggs, &results),
    })
}
