use std::fs;
use std::path::Path;
use std::process::Command;

use leafflow_cli::config::{parse_config, preset, PRESETS};
use leafflow_cli::emit::{emit_run, read_field_csv, read_revolution_summary, read_summary_csv};
use leafflow_cli::pipeline::{run, RunData, RunOptions, RunOutcome, Verdict};
use leafflow_cli::sweep::{emit_sweep, run_dir, sweep};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leafflow"))
}

fn run_text(text: &str) -> RunOutcome {
    run(&parse_config(text).unwrap(), RunOptions::default()).unwrap()
}

fn verdict_of(o: &RunOutcome, name: &str) -> Verdict {
    o.report.checks.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no check {name}")).verdict
}

/// A nonlinear circle scenario with `λ0 < 0` and a comfortable initial condition.
fn custom(phi: f64, t_end: f64) -> String {
    format!(
        r#"[scenario]
preset = "custom"
n = 2
phi = {phi:?}
beta_d = "0.3 + 0.2*cos(x)"
t2 = "0.02*(1 + 0.5*sin(x))"
hf2 = "0.3 + 0.1*cos(2*x)"
u0 = "1 + 0.2*sin(x)"

[grid]
topology = "circle"
nx = 64

[time]
t_end = {t_end:?}
dt = 1e-3
save_every = 50
scheme = "imex_trapezoid"
"#
    )
}

/// For constant data the initial condition reads `‖T‖² ≤ n |λ0| = 2.6`. The
/// solution then collapses near `t = 0.39` for `‖T‖² = 3` and `t = 0.14` for `5`.
fn violating(t2: f64) -> String {
    format!(
        r#"[scenario]
preset = "custom"
n = 2
phi = 2.0
beta_d = "0.3"
t2 = "{t2}"
u0 = "1"

[grid]
nx = 32

[time]
t_end = 0.2
dt = 1e-3
save_every = 50
"#
    )
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn hopf_preset_exits_zero_with_stationarity_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hopf.toml", preset("hopf").unwrap().template);
    let out = dir.path().join("out");
    let status = bin().arg("run").arg(&cfg).arg("--out").arg(&out).arg("--quiet").status().unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "pass");
    let checks = report["checks"].as_array().unwrap();
    let stationarity = checks.iter().find(|c| c["name"] == "stationarity").unwrap();
    assert_eq!(stationarity["verdict"], "pass");
    // Every enabled toggle has a section.
    for section in ["envelope", "conservation", "burgers"] {
        assert!(report[section].is_object(), "{section}");
    }
    for f in ["u.csv", "v.csv", "sc_mix.csv", "phi.csv", "summary.csv", "plots/envelope.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn hopf_plots_are_flat() {
    let o = run_text(preset("hopf").unwrap().template);
    let RunData::Flow(f) = &o.data else { panic!() };
    for r in &f.summary {
        assert!((r.sc_mix_mean.unwrap() - 2.0).abs() <= 1e-8);
        assert!((r.min_u - 1.0).abs() <= 1e-10 && (r.max_u - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn violated_initial_condition_is_gated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &violating(3.0));
    let out = dir.path().join("out");
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("hypotheses-not-met"));
    assert!(!out.join("u.csv").exists());

    let out2 = dir.path().join("out2");
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(&out2).arg("--override-hypotheses").arg("-q").output().unwrap();
    assert_ne!(o.status.code(), Some(0));
    assert!(out2.join("u.csv").exists());
    let report = fs::read_to_string(out2.join("report.json")).unwrap();
    assert!(report.contains("\"overridden\": true"));
}

#[test]
fn torus_burgers_rate_is_lambda1() {
    let o = run_text(preset("torus_burgers").unwrap().template);
    assert_eq!(verdict_of(&o, "rate"), Verdict::Pass);
    let s = o.report.spectral.as_ref().unwrap();
    let rate = o.report.rate.as_ref().unwrap();
    assert!(s.lambda0.abs() < 1e-10);
    assert!((rate.bound - s.lambda1).abs() < 1e-10);
    assert!((rate.fitted / s.lambda1 - 1.0).abs() < 0.02, "{} vs {}", rate.fitted, s.lambda1);
}

#[test]
fn linear_residual_slope_is_the_gap() {
    let o = run_text(preset("twisted_product").unwrap().template);
    let RunData::Flow(f) = &o.data else { panic!() };
    let fit = f.rate_fit.unwrap();
    let gap = o.report.spectral.as_ref().unwrap().gap;
    assert!((fit.rate / gap - 1.0).abs() < 0.02);
    let line: Vec<f64> = f.summary.iter().filter_map(|r| r.rate_fit).collect();
    assert_eq!(line.len(), f.summary.len());
    for w in line.windows(2) {
        assert!(w[1] < w[0]);
    }
}

#[test]
fn every_preset_runs_and_passes() {
    for p in &PRESETS {
        let o = run_text(p.template);
        assert_eq!(o.report.verdict, Verdict::Pass, "{}: {:#?}", p.name, o.report.checks);
    }
}

#[test]
fn csv_outputs_are_deterministic_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = custom(0.4, 2.0);
    let a = run_text(&text);
    let b = run_text(&text);
    let (da, db) = (dir.path().join("a"), dir.path().join("b"));
    emit_run(&a, &da).unwrap();
    emit_run(&b, &db).unwrap();
    for f in ["u.csv", "v.csv", "sc_mix.csv", "phi.csv", "summary.csv"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }

    let RunData::Flow(f) = &a.data else { panic!() };
    let table = read_field_csv(&da.join("u.csv")).unwrap();
    assert_eq!(table.times, f.times);
    for (row, u) in table.rows.iter().zip(&f.u) {
        assert_eq!(row.as_slice(), u.values());
    }
    assert_eq!(table.coordinates.len(), 64);
    let x1: f64 = table.coordinates[1].parse().unwrap();
    assert_eq!(x1, 2.0 * std::f64::consts::PI / 64.0);
    assert_eq!(read_summary_csv(&da.join("summary.csv")).unwrap(), f.summary);
}

#[test]
fn summary_time_is_monotone_and_envelopes_bracket() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_text(&custom(0.4, 4.0));
    emit_run(&o, dir.path()).unwrap();
    let rows = read_summary_csv(&dir.path().join("summary.csv")).unwrap();
    assert!(rows.len() > 10);
    for w in rows.windows(2) {
        assert!(w[1].t > w[0].t);
    }
    for r in &rows {
        let (lo, hi) = (r.w_minus.unwrap(), r.w_plus.unwrap());
        assert!(lo <= r.min_ratio * (1.0 + 1e-9), "t = {}: {lo} > {}", r.t, r.min_ratio);
        assert!(r.max_ratio <= hi * (1.0 + 1e-9), "t = {}: {} > {hi}", r.t, r.max_ratio);
    }
}

#[test]
fn revolution_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_text(preset("revolution").unwrap().template);
    let written = emit_run(&o, dir.path()).unwrap();
    assert!(written.iter().any(|p| p.ends_with("mesh.txt")));
    assert!(dir.path().join("plots/revolution.svg").exists());
    let RunData::Revolution(r) = &o.data else { panic!() };
    assert_eq!(read_revolution_summary(&dir.path().join("summary.csv")).unwrap(), r.summary);
    let last = r.summary.last().unwrap();
    let first = r.summary[0];
    assert!(last.distance_to_linear < 1e-4 && first.distance_to_linear > 0.1);
}

#[test]
fn phi_sweep_limit_curvature_is_affine_in_phi() {
    let values = [0.2, 0.4, 0.6, 0.8, 1.0];
    let s = sweep(&custom(0.2, 15.0), "scenario.phi", &values, RunOptions::default(), true).unwrap();
    let sc: Vec<f64> = s.report.rows.iter().map(|r| r.final_sc_mix_mean.unwrap()).collect();
    let asymptote: Vec<f64> = s.report.rows.iter().map(|r| r.asymptote.unwrap()).collect();
    for k in 0..values.len() {
        assert!((sc[k] - asymptote[k]).abs() < 1e-4, "{k}: {} vs {}", sc[k], asymptote[k]);
    }
    // Equal spacing in Φ, so second differences vanish for an affine map.
    for w in sc.windows(3) {
        assert!((w[0] - 2.0 * w[1] + w[2]).abs() < 1e-4, "{w:?}");
    }
    // λ0 itself moves by −Φ/n.
    let l: Vec<f64> = s.report.rows.iter().map(|r| r.lambda0.unwrap()).collect();
    for w in l.windows(2) {
        assert!((w[1] - w[0] + 0.1).abs() < 1e-10);
    }
    assert!(s.report.continuity.iter().all(|c| c.is_some()));
}

#[test]
fn single_value_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = custom(0.4, 2.0);
    let direct = run_text(&text);
    emit_run(&direct, &dir.path().join("direct")).unwrap();
    let s = sweep(&text, "scenario.phi", &[0.4], RunOptions::default(), false).unwrap();
    emit_sweep(&s, &dir.path().join("sweep")).unwrap();
    let swept = s.outcomes[0].as_ref().unwrap();
    assert_eq!(swept.report.checks, direct.report.checks);
    assert_eq!(swept.report.config, direct.report.config);
    let k0 = run_dir(&dir.path().join("sweep"), 0);
    for f in ["u.csv", "sc_mix.csv", "summary.csv"] {
        assert_eq!(fs::read(k0.join(f)).unwrap(), fs::read(dir.path().join("direct").join(f)).unwrap(), "{f}");
    }
    assert!(s.report.continuity.is_empty());
    assert!(dir.path().join("sweep/sweep.csv").exists());
}

#[test]
fn deeper_potential_lowers_lambda0() {
    let text = r#"[scenario]
preset = "custom"
n = 1
phi = 0.0
beta_d = "amp*(1 + cos(x)) + 0.1*sin(3*x)^2"
u0 = "1"

[params]
amp = 0.0

[grid]
nx = 64

[time]
t_end = 0.1
dt = 1e-3
save_every = 10

[reports]
burgers = false
"#;
    let values = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0];
    let s = sweep(text, "params.amp", &values, RunOptions::default(), true).unwrap();
    let l: Vec<f64> = s.report.rows.iter().map(|r| r.lambda0.unwrap()).collect();
    for w in l.windows(2) {
        assert!(w[1] <= w[0], "{l:?}");
    }
    assert!(l[5] < l[0] - 1.0);
}

#[test]
fn sweep_records_failed_runs_and_continues() {
    let s = sweep(&custom(0.4, 0.5), "time.dt", &[1e-3, -1.0, 2e-3], RunOptions::default(), true).unwrap();
    assert!(s.report.rows[0].error.is_none() && s.report.rows[2].error.is_none());
    assert!(s.report.rows[1].error.as_deref().unwrap().contains("time.dt"));
    assert_eq!(s.report.verdict, Verdict::Fail);
    assert_eq!(s.report.continuity, vec![None, None]);
}

#[test]
fn sequential_and_parallel_sweeps_agree() {
    let text = custom(0.4, 1.0);
    let a = sweep(&text, "scenario.phi", &[0.3, 0.5, 0.7], RunOptions::default(), true).unwrap();
    let b = sweep(&text, "scenario.phi", &[0.3, 0.5, 0.7], RunOptions::default(), false).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn config_errors_exit_three_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = custom(0.4, 1.0).replace("phi = 0.4", "phi_ = 0.4");
    let cfg = write(dir.path(), "typo.toml", &text);
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("phi_"));

    let cfg = write(dir.path(), "broken.toml", "[scenario\npreset = 1\n");
    let o = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn pipeline_errors_name_the_stage() {
    let text = custom(0.4, 1.0).replace("u0 = \"1 + 0.2*sin(x)\"", "u0 = \"-1\"");
    let err = run(&parse_config(&text).unwrap(), RunOptions::default()).unwrap_err();
    assert!(err.to_string().starts_with("scenario stage failed"), "{err}");

    let opts = RunOptions { override_hypotheses: true };
    let err = run(&parse_config(&violating(5.0)).unwrap(), opts).unwrap_err();
    assert!(err.to_string().starts_with("evolve stage failed: blow-down"), "{err}");
}

#[test]
fn presets_subcommand_lists_and_shows() {
    let o = bin().arg("presets").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for p in &PRESETS {
        assert!(text.contains(p.name));
    }
    let o = bin().args(["presets", "--show", "torus_burgers"]).output().unwrap();
    assert!(parse_config(&String::from_utf8_lossy(&o.stdout)).is_ok());
    assert_eq!(bin().args(["presets", "--show", "nope"]).status().unwrap().code(), Some(3));
}

#[test]
fn cli_sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &custom(0.4, 1.0));
    let out = dir.path().join("s");
    let o = bin()
        .args(["sweep"])
        .arg(&cfg)
        .args(["--axis", "scenario.phi", "--values", "0.3,0.5", "--quiet", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.code().is_some());
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(run_dir(&out, 1).join("report.json").exists());
}
