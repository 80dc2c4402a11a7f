//! One-parameter sweeps over any numeric config key.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{override_key, parse_config, ConfigError};
use crate::emit::{emit_run, fmt_f64, EmitError};
use crate::pipeline::{run, RunData, RunOptions, RunOutcome, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub verdict: Option<Verdict>,
    pub lambda0: Option<f64>,
    pub gap: Option<f64>,
    pub rate: Option<f64>,
    pub asymptote: Option<f64>,
    pub final_sc_mix_mean: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    /// `‖limit(k+1) − limit(k)‖∞` between neighbouring values.
    pub continuity: Vec<Option<f64>>,
    pub verdict: Verdict,
}

impl SweepReport {
    /// Failed runs count as failures.
    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }
}

pub struct Sweep {
    pub report: SweepReport,
    pub outcomes: Vec<Option<RunOutcome>>,
}

fn row_of(value: f64, result: &Result<RunOutcome, String>) -> SweepRow {
    match result {
        Err(e) => SweepRow {
            value,
            verdict: None,
            lambda0: None,
            gap: None,
            rate: None,
            asymptote: None,
            final_sc_mix_mean: None,
            error: Some(e.clone()),
        },
        Ok(o) => {
            let r = &o.report;
            let (asymptote, final_mean) = match &o.data {
                RunData::Flow(f) => (Some(f.asymptote), f.sc_mix.last().map(|s| s.mean())),
                _ => (None, None),
            };
            SweepRow {
                value,
                verdict: Some(r.verdict),
                lambda0: r.spectral.as_ref().map(|s| s.lambda0),
                gap: r.spectral.as_ref().map(|s| s.gap),
                rate: r.rate.as_ref().map(|s| s.fitted).or(r.revolution.as_ref().and_then(|s| s.fitted_rate)),
                asymptote,
                final_sc_mix_mean: final_mean,
                error: None,
            }
        }
    }
}

/// Runs `template` once per value with `axis` overridden. The template is
/// checked up front; errors of individual runs are recorded in their rows.
pub fn sweep(
    template: &str,
    axis: &str,
    values: &[f64],
    opts: RunOptions,
    parallel: bool,
) -> Result<Sweep, ConfigError> {
    parse_config(template)?;
    if values.is_empty() {
        return Err(ConfigError::Invalid { key: "values".into(), message: "no sweep values given".into() });
    }
    let texts = values.iter().map(|v| override_key(template, axis, *v)).collect::<Result<Vec<_>, _>>()?;
    let one = |text: &String| -> Result<RunOutcome, String> {
        let config = parse_config(text).map_err(|e| e.to_string())?;
        run(&config, opts).map_err(|e| e.to_string())
    };
    let results: Vec<Result<RunOutcome, String>> =
        if parallel { texts.par_iter().map(one).collect() } else { texts.iter().map(one).collect() };

    let rows: Vec<SweepRow> = values.iter().zip(&results).map(|(v, r)| row_of(*v, r)).collect();
    let outcomes: Vec<Option<RunOutcome>> = results.into_iter().map(Result::ok).collect();
    let continuity = outcomes
        .windows(2)
        .map(|w| match (&w[0], &w[1]) {
            (Some(a), Some(b)) => a.limit_field().zip(b.limit_field()).and_then(|(x, y)| x.sup_distance(y).ok()),
            _ => None,
        })
        .collect();
    let verdict = Verdict::combine(rows.iter().map(|r| r.verdict.unwrap_or(Verdict::Fail)));
    Ok(Sweep { report: SweepReport { axis: axis.to_string(), rows, continuity, verdict }, outcomes })
}

/// Directory of the `k`-th run inside a sweep output directory.
pub fn run_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("run_{k:03}"))
}

pub fn emit_sweep(s: &Sweep, out: &Path) -> Result<Vec<PathBuf>, EmitError> {
    fs::create_dir_all(out).map_err(|source| EmitError::Io { path: out.to_path_buf(), source })?;
    let mut written = Vec::new();
    for (k, o) in s.outcomes.iter().enumerate() {
        if let Some(o) = o {
            written.extend(emit_run(o, &run_dir(out, k))?);
        }
    }
    let path = out.join("sweep.csv");
    let csv_err = |source| EmitError::Csv { path: path.clone(), source };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["value", "verdict", "lambda0", "gap", "rate", "asymptote", "final_sc_mix_mean", "continuity", "error"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for (k, r) in s.report.rows.iter().enumerate() {
        w.write_record([
            fmt_f64(r.value),
            r.verdict.map(|v| v.to_string()).unwrap_or_else(|| "error".into()),
            opt(r.lambda0),
            opt(r.gap),
            opt(r.rate),
            opt(r.asymptote),
            opt(r.final_sc_mix_mean),
            opt(k.checked_sub(1).and_then(|j| s.report.continuity[j])),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| EmitError::Io { path: path.clone(), source })?;
    written.push(path);
    let json = out.join("sweep.json");
    fs::write(&json, serde_json::to_string_pretty(&s.report)? + "\n")
        .map_err(|source| EmitError::Io { path: json.clone(), source })?;
    written.push(json);
    Ok(written)
}
