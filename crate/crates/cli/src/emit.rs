//! Files written for each run: field CSVs, `summary.csv`, `report.json` and plots.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use leafflow::scenarios::export_mesh;
use leafflow::{LeafGrid, ScalarField};

use crate::pipeline::{FlowData, RevolutionData, RevolutionRow, RunData, RunOutcome, SummaryRow};
use crate::plot::{LinePlot, Series};

pub const SUMMARY_COLUMNS: [&str; 10] =
    ["t", "min_u", "max_u", "min_ratio", "max_ratio", "w_minus", "w_plus", "residual", "sc_mix_mean", "rate_fit"];
pub const REVOLUTION_COLUMNS: [&str; 4] = ["t", "max_slope", "distance_to_linear", "max_abs_curvature"];

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("report serialisation: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EmitError + '_ {
    move |source| EmitError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> EmitError + '_ {
    move |source| EmitError::Csv { path: path.to_path_buf(), source }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn coordinate_header(grid: &LeafGrid) -> Vec<String> {
    (0..grid.len())
        .map(|i| {
            let [x, y] = grid.point(i);
            if grid.dim() == 2 {
                format!("{};{}", fmt_f64(x), fmt_f64(y))
            } else {
                fmt_f64(x)
            }
        })
        .collect()
}

/// One row per saved time: `t` then the field value at every grid point.
pub fn write_field_csv(path: &Path, grid: &LeafGrid, times: &[f64], fields: &[ScalarField]) -> Result<(), EmitError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string()];
    header.extend(coordinate_header(grid));
    w.write_record(&header).map_err(csv_err(path))?;
    for (t, f) in times.iter().zip(fields) {
        let mut row = vec![fmt_f64(*t)];
        row.extend(f.values().iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    /// Coordinate labels from the header, without the leading `t`.
    pub coordinates: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_cell(path: &Path, s: &str) -> Result<f64, EmitError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| EmitError::Format { path: path.to_path_buf(), message: format!("not a number: `{s}`") })
}

fn parse_opt(path: &Path, s: &str) -> Result<Option<f64>, EmitError> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_cell(path, s).map(Some)
    }
}

pub fn read_field_csv(path: &Path) -> Result<FieldTable, EmitError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let coordinates: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let vals = rec.iter().map(|c| parse_cell(path, c)).collect::<Result<Vec<_>, _>>()?;
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Ok(FieldTable { coordinates, times, rows })
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), EmitError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            fmt_f64(r.t),
            fmt_f64(r.min_u),
            fmt_f64(r.max_u),
            fmt_f64(r.min_ratio),
            fmt_f64(r.max_ratio),
            fmt_opt(r.w_minus),
            fmt_opt(r.w_plus),
            fmt_opt(r.residual),
            fmt_opt(r.sc_mix_mean),
            fmt_opt(r.rate_fit),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> Result<(), EmitError> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(EmitError::Format {
            path: path.to_path_buf(),
            message: format!("expected columns {expected:?}, found {:?}", found.iter().collect::<Vec<_>>()),
        });
    }
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>, EmitError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    check_header(path, r.headers().map_err(csv_err(path))?, &SUMMARY_COLUMNS)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let c = |i: usize| rec.get(i).unwrap_or("");
        out.push(SummaryRow {
            t: parse_cell(path, c(0))?,
            min_u: parse_cell(path, c(1))?,
            max_u: parse_cell(path, c(2))?,
            min_ratio: parse_cell(path, c(3))?,
            max_ratio: parse_cell(path, c(4))?,
            w_minus: parse_opt(path, c(5))?,
            w_plus: parse_opt(path, c(6))?,
            residual: parse_opt(path, c(7))?,
            sc_mix_mean: parse_opt(path, c(8))?,
            rate_fit: parse_opt(path, c(9))?,
        });
    }
    Ok(out)
}

pub fn write_revolution_summary(path: &Path, rows: &[RevolutionRow]) -> Result<(), EmitError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(REVOLUTION_COLUMNS).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([fmt_f64(r.t), fmt_f64(r.max_slope), fmt_f64(r.distance_to_linear), fmt_f64(r.max_abs_curvature)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_revolution_summary(path: &Path) -> Result<Vec<RevolutionRow>, EmitError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    check_header(path, r.headers().map_err(csv_err(path))?, &REVOLUTION_COLUMNS)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let c = |i: usize| parse_cell(path, rec.get(i).unwrap_or(""));
        out.push(RevolutionRow { t: c(0)?, max_slope: c(1)?, distance_to_linear: c(2)?, max_abs_curvature: c(3)? });
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), EmitError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes everything for one run into `dir` and returns the paths written.
pub fn emit_run(outcome: &RunOutcome, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let report = dir.join("report.json");
    write_text(&report, &(serde_json::to_string_pretty(&outcome.report)? + "\n"))?;
    written.push(report);
    match &outcome.data {
        RunData::None => {}
        RunData::Flow(f) => written.extend(emit_flow(f, dir)?),
        RunData::Revolution(r) => written.extend(emit_revolution(r, dir)?),
    }
    Ok(written)
}

fn emit_flow(f: &FlowData, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    let mut written = Vec::new();
    for (name, fields) in [("u", &f.u), ("v", &f.v), ("sc_mix", &f.sc_mix), ("phi", &f.phi)] {
        let path = dir.join(format!("{name}.csv"));
        write_field_csv(&path, &f.grid, &f.times, fields)?;
        written.push(path);
    }
    let path = dir.join("summary.csv");
    write_summary_csv(&path, &f.summary)?;
    written.push(path);

    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    let col = |g: fn(&SummaryRow) -> Option<f64>| -> Vec<(f64, f64)> {
        f.summary.iter().filter_map(|r| g(r).map(|v| (r.t, v))).collect()
    };

    let mut envelope = LinePlot::new("Ratio extrema and envelope", "t", "u / e0")
        .log_y()
        .with(Series::new("min u/e0", col(|r| Some(r.min_ratio))))
        .with(Series::new("max u/e0", col(|r| Some(r.max_ratio))));
    if f.summary.iter().any(|r| r.w_minus.is_some()) {
        envelope = envelope
            .with(Series::new("w-", col(|r| r.w_minus)).dashed())
            .with(Series::new("w+", col(|r| r.w_plus)).dashed());
    }
    let residual = LinePlot::new("Rescaled residual", "t", "‖v − ũ e0‖∞")
        .log_y()
        .with(Series::new("residual", col(|r| r.residual)))
        .with(Series::new("fit", col(|r| r.rate_fit)).dashed());
    let (t0, t1) = (f.times[0], *f.times.last().expect("non-empty"));
    let sc_mix = LinePlot::new("Mean mixed scalar curvature", "t", "Sc_mix")
        .with(Series::new("mean Sc_mix", col(|r| r.sc_mix_mean)))
        .with(Series::new("n λ0^F", vec![(t0, f.asymptote), (t1, f.asymptote)]).dashed())
        .with(Series::new("n λ0^F − Φ", vec![(t0, f.asymptote_minus_phi), (t1, f.asymptote_minus_phi)]).dashed());
    for (name, plot) in [("envelope", envelope), ("residual", residual), ("sc_mix", sc_mix)] {
        let path = plots.join(format!("{name}.svg"));
        write_text(&path, &plot.render())?;
        written.push(path);
    }
    Ok(written)
}

fn profile_points(grid: &LeafGrid, f: &ScalarField) -> Vec<(f64, f64)> {
    let (left, right) = grid.boundary_values().unwrap_or((f64::NAN, f64::NAN));
    let mut pts = vec![(0.0, left)];
    pts.extend((0..grid.len()).map(|i| (grid.point(i)[0], f.values()[i])));
    pts.push((grid.volume(), right));
    pts
}

fn emit_revolution(r: &RevolutionData, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    let mut written = Vec::new();
    for (name, fields) in [("profiles", &r.profiles), ("curvature", &r.curvature)] {
        let path = dir.join(format!("{name}.csv"));
        write_field_csv(&path, &r.grid, &r.times, fields)?;
        written.push(path);
    }
    let path = dir.join("summary.csv");
    write_revolution_summary(&path, &r.summary)?;
    written.push(path);
    if let Some(mesh) = &r.mesh {
        let path = dir.join("mesh.txt");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        export_mesh(mesh, io::BufWriter::new(file)).map_err(io_err(&path))?;
        written.push(path);
    }

    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    let mut plot = LinePlot::new("Profile ρ(x, t)", "x", "ρ");
    let k = r.profiles.len();
    let picks: Vec<usize> = if k <= 5 { (0..k).collect() } else { (0..5).map(|j| j * (k - 1) / 4).collect() };
    for i in picks {
        plot = plot.with(Series::new(format!("t = {:.3}", r.times[i]), profile_points(&r.grid, &r.profiles[i])));
    }
    plot = plot.with(Series::new("linear", profile_points(&r.grid, &r.linear)).dashed());
    let path = plots.join("revolution.svg");
    write_text(&path, &plot.render())?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use leafflow::{build_grid, GridSpec};

    #[test]
    fn field_csv_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let grid = build_grid(&GridSpec::torus(1.0, 2.0, 8, 8)).unwrap();
        let f = grid.sample(|x, y| (x * 3.1).sin() / 7.0 + y.exp() * 1e-300).unwrap();
        let g = f.scale(std::f64::consts::PI);
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &grid, &[0.0, 0.1], &[f.clone(), g.clone()]).unwrap();
        let table = read_field_csv(&path).unwrap();
        assert_eq!(table.times, vec![0.0, 0.1]);
        assert_eq!(table.rows[0], f.values());
        assert_eq!(table.rows[1], g.values());
        assert_eq!(table.coordinates.len(), 64);
        assert!(table.coordinates[0].contains(';'));
    }

    #[test]
    fn summary_round_trips_with_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![SummaryRow {
            t: 0.1,
            min_u: 1.0 / 3.0,
            max_u: 2.0,
            min_ratio: 0.5,
            max_ratio: 1e-310,
            w_minus: None,
            w_plus: Some(3.0),
            residual: None,
            sc_mix_mean: Some(-1.25),
            rate_fit: None,
        }];
        let path = dir.path().join("summary.csv");
        write_summary_csv(&path, &rows).unwrap();
        assert_eq!(read_summary_csv(&path).unwrap(), rows);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        fs::write(&path, "t,x\n1,2\n").unwrap();
        assert!(matches!(read_summary_csv(&path), Err(EmitError::Format { .. })));
    }
}
