//! Log-linear least squares for exponential decay rates.

use crate::error::{Error, Result};

/// Fitted `value ≈ C e^{-rate t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub log_prefactor: f64,
    pub points: usize,
}

/// Least-squares slope of `ln(value)` against `t` over the samples with
/// `t` in `[window.0, window.1]`, sign-flipped so that decay is positive.
pub fn fit_exponential_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::InvalidSeries(format!("empty window [{lo}, {hi}]")));
    }
    let mut pts = Vec::new();
    for &(t, v) in series {
        if t < lo || t > hi {
            continue;
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidSeries(format!("non-positive value {v} at t = {t}")));
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < 2 {
        return Err(Error::InvalidSeries("fewer than two samples in the window".into()));
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidSeries("window contains a single time".into()));
    }
    let slope = sxy / sxx;
    Ok(RateFit { rate: -slope, log_prefactor: ym - slope * tm, points: pts.len() })
}
