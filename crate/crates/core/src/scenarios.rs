//! Built-in configurations: the Hopf fixed point, Burgers flow on the torus,
//! twisted products, and surfaces of revolution.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::heatflow::FoliationScenario;
use crate::implicit::solve_tridiagonal;
use crate::leafgrid::{laplacian, leaf_gradient, LeafGrid, ScalarField, Topology};
use crate::schrodinger::{full_spectrum, SpectralData};

fn require_circle(grid: &Arc<LeafGrid>) -> Result<()> {
    match grid.topology() {
        Topology::Circle { .. } => Ok(()),
        _ => Err(Error::InvalidGrid("this scenario lives on a circle leaf".into())),
    }
}

/// The Hopf fibration of `S^{2m+1}` reduced to one fibre:
/// `n = Φ = ‖T‖² = 2m`, `u0 = 1`, everything else zero.
pub fn hopf_scenario(m: usize, grid: &Arc<LeafGrid>) -> Result<FoliationScenario> {
    if m == 0 {
        return Err(Error::InvalidField("m must be at least 1".into()));
    }
    require_circle(grid)?;
    let k = 2.0 * m as f64;
    let zero = ScalarField::zeros(grid);
    FoliationScenario::new(
        2 * m,
        k,
        zero.clone(),
        ScalarField::constant(grid, k)?,
        zero,
        ScalarField::constant(grid, 1.0)?,
    )
}

/// A torus foliated by circles whose orthogonal curves have geodesic
/// curvature `k = ∂x ψ0`.
#[derive(Debug, Clone)]
pub struct TorusBurgers {
    pub scenario: FoliationScenario,
    /// Decay rate of `H`: the first non-zero eigenvalue of `−Δ`.
    pub expected_rate: f64,
}

pub fn torus_burgers_scenario(psi0: &ScalarField) -> Result<TorusBurgers> {
    let grid = psi0.grid();
    require_circle(grid)?;
    let zero = ScalarField::zeros(grid);
    let scenario = FoliationScenario::new(1, 0.0, zero.clone(), zero.clone(), zero.clone(), psi0.map(|p| (-p).exp())?)?;
    let expected_rate = full_spectrum(&zero)?.lambda1();
    Ok(TorusBurgers { scenario, expected_rate })
}

/// Leaf factor of a twisted product: `u` obeys the linear heat equation
/// with the constant potential `Φ/n`.
#[derive(Debug, Clone)]
pub struct TwistedProduct {
    pub scenario: FoliationScenario,
    spectrum: SpectralData,
}

pub fn twisted_product_scenario(f0: &ScalarField, n: usize, phi: f64) -> Result<TwistedProduct> {
    let grid = f0.grid();
    let zero = ScalarField::zeros(grid);
    let scenario = FoliationScenario::new(n, phi, zero.clone(), zero.clone(), zero, f0.clone())?;
    let spectrum = full_spectrum(&scenario.scaled_beta())?;
    Ok(TwistedProduct { scenario, spectrum })
}

impl TwistedProduct {
    /// Exact semi-discrete solution at scaled time `t`.
    pub fn oracle(&self, t: f64) -> Result<ScalarField> {
        self.spectrum.evolve_linear(&self.scenario.u0, t)
    }

    /// `e^{Φ t / n}`, the factor separating this run from the `Φ = 0` run.
    pub fn gauge_factor(&self, t: f64) -> f64 {
        (self.scenario.phi / self.scenario.n as f64 * t).exp()
    }

    /// Limit of the `Φ = 0` run: the leaf mean of `f0`.
    pub fn mean_limit(&self) -> f64 {
        self.scenario.u0.mean()
    }
}

/// `ρ(x)` on `[0, l]` for the metric `dx² + ρ² dθ²`.
#[derive(Debug, Clone)]
pub struct RevolutionProfile {
    pub rho: ScalarField,
    pub phi: f64,
}

impl RevolutionProfile {
    pub fn new(rho: ScalarField, phi: f64) -> Result<Self> {
        let (left, right) = rho
            .grid()
            .boundary_values()
            .ok_or_else(|| Error::Profile("profile needs an interval grid".into()))?;
        if !(rho.min() > 0.0 && left > 0.0 && right > 0.0) {
            return Err(Error::Profile("ρ must be positive".into()));
        }
        let slope = max_slope(&rho);
        if !(slope < 1.0) {
            return Err(Error::Profile(format!("|ρx| = {slope:.6} must stay below 1")));
        }
        if !phi.is_finite() {
            return Err(Error::Profile("Φ must be finite".into()));
        }
        Ok(Self { rho, phi })
    }

    pub fn grid(&self) -> &Arc<LeafGrid> {
        self.rho.grid()
    }
}

/// `max |ρx|` over all edges, boundary edges included.
pub fn max_slope(rho: &ScalarField) -> f64 {
    leaf_gradient(rho).sup_norm()
}

/// `ρ1 + x (ρ2 − ρ1) / l` on the profile's grid.
pub fn linear_interpolant(grid: &Arc<LeafGrid>) -> Result<ScalarField> {
    let (left, right) =
        grid.boundary_values().ok_or_else(|| Error::Profile("interpolant needs an interval grid".into()))?;
    let l = grid.volume();
    grid.sample(|x, _| left + x * (right - left) / l)
}

#[derive(Debug, Clone)]
pub struct RevolutionTrajectory {
    pub times: Vec<f64>,
    pub profiles: Vec<ScalarField>,
    /// `max |ρx|` after every step, starting at `t = 0`.
    pub slopes: Vec<(f64, f64)>,
    /// First time `|ρx| ≥ 1`, after which profiles cannot be embedded.
    pub invalid_from: Option<f64>,
}

impl RevolutionTrajectory {
    pub fn final_profile(&self) -> &ScalarField {
        self.profiles.last().expect("starts with the initial profile")
    }

    pub fn slope_bound_held(&self) -> bool {
        self.invalid_from.is_none()
    }
}

/// Backward Euler for `ρt = ρxx − Φ ρ` with the end values held fixed.
pub fn revolution_evolve(
    profile: &RevolutionProfile,
    t_end: f64,
    dt: f64,
    save_every: usize,
) -> Result<RevolutionTrajectory> {
    if !(t_end > 0.0 && dt > 0.0) {
        return Err(Error::Profile(format!("bad time window t_end = {t_end}, dt = {dt}")));
    }
    let grid = profile.grid().clone();
    let m = grid.len();
    let steps = (t_end / dt).round().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let r = dt / (grid.hx() * grid.hx());
    let a = vec![-r; m];
    let b = vec![1.0 + 2.0 * r + dt * profile.phi; m];
    let c = vec![-r; m];

    let mut rho = profile.rho.values().to_vec();
    let mut times = vec![0.0];
    let mut profiles = vec![profile.rho.clone()];
    let mut slopes = vec![(0.0, max_slope(&profile.rho))];
    let mut invalid_from = None;
    let save_every = save_every.max(1);
    for k in 1..=steps {
        // Increment form: (1 − dtΔ + dtΦ) δ = dt (Δρ − Φρ), so that
        // stationary profiles stay bit-exact.
        let current = ScalarField::new(grid.clone(), rho.clone())?;
        let lap = laplacian(&current);
        let d: Vec<f64> =
            rho.iter().zip(lap.values()).map(|(v, l)| dt * (l - profile.phi * v)).collect();
        let delta = solve_tridiagonal(&a, &b, &c, &d);
        rho.iter_mut().zip(&delta).for_each(|(v, dv)| *v += dv);
        let t = k as f64 * dt;
        let field = ScalarField::new(grid.clone(), rho.clone())?;
        if !(field.min() > 0.0) {
            return Err(Error::Profile(format!("ρ lost positivity at t = {t}")));
        }
        let s = max_slope(&field);
        slopes.push((t, s));
        if s >= 1.0 && invalid_from.is_none() {
            invalid_from = Some(t);
        }
        if k % save_every == 0 || k == steps {
            times.push(t);
            profiles.push(field);
        }
    }
    Ok(RevolutionTrajectory { times, profiles, slopes, invalid_from })
}

/// Generating curve `(ρ(x), h(x))` parametrised by arc length `x`.
#[derive(Debug, Clone)]
pub struct ProfileCurve {
    /// Node coordinates, both ends included.
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub h: Vec<f64>,
}

impl ProfileCurve {
    /// `Σ √(Δρ² + Δh²)`, the length of the polygonal curve.
    pub fn arc_length(&self) -> f64 {
        self.rho
            .windows(2)
            .zip(self.h.windows(2))
            .map(|(r, h)| ((r[1] - r[0]).powi(2) + (h[1] - h[0]).powi(2)).sqrt())
            .sum()
    }

    /// `(ρ2 − ρ1)² + (h2 − h1)²`.
    pub fn chord_squared(&self) -> f64 {
        let last = self.rho.len() - 1;
        (self.rho[last] - self.rho[0]).powi(2) + (self.h[last] - self.h[0]).powi(2)
    }

    /// Surface points `[ρ cos θ, ρ sin θ, h]`, curve-major, on `n_theta` angles.
    pub fn embedding(&self, n_theta: usize) -> Vec<[f64; 3]> {
        let mut pts = Vec::with_capacity(self.rho.len() * n_theta);
        for (r, h) in self.rho.iter().zip(&self.h) {
            for k in 0..n_theta {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n_theta as f64;
                pts.push([r * th.cos(), r * th.sin(), *h]);
            }
        }
        pts
    }
}

/// Angular samples used for mesh export.
pub const EMBEDDING_THETA_SAMPLES: usize = 64;

/// Builds `h` with `h(0) = h1` and increments `Δx √(1 − ρx²)` per edge, so
/// each polygon segment has length exactly `Δx`.
pub fn reconstruct_profile(rho: &ScalarField, h1: f64) -> Result<ProfileCurve> {
    let grid = rho.grid();
    if grid.boundary_values().is_none() {
        return Err(Error::Profile("profile needs an interval grid".into()));
    }
    let full = rho.with_boundary();
    let dx = grid.hx();
    let mut h = Vec::with_capacity(full.len());
    h.push(h1);
    for (e, w) in full.windows(2).enumerate() {
        let s = (w[1] - w[0]) / dx;
        let radicand = 1.0 - s * s;
        if radicand < 0.0 {
            return Err(Error::Profile(format!("|ρx| = {:.6} ≥ 1 on edge {e}", s.abs())));
        }
        h.push(h[e] + dx * radicand.sqrt());
    }
    let x = (0..full.len()).map(|j| j as f64 * dx).collect();
    Ok(ProfileCurve { x, rho: full, h })
}

/// Writes one `x y z` line per vertex.
pub fn export_mesh<W: Write>(points: &[[f64; 3]], mut out: W) -> std::io::Result<()> {
    for p in points {
        writeln!(out, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2])?;
    }
    Ok(())
}

/// `K = −ρxx / ρ` for the metric `dx² + ρ² dθ²`.
pub fn gaussian_curvature(rho: &ScalarField) -> Result<ScalarField> {
    if !(rho.min() > 0.0) {
        return Err(Error::Profile("ρ must be positive".into()));
    }
    laplacian(rho).zip_map(rho, |l, r| -l / r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leafgrid::{build_grid, GridSpec};

    #[test]
    fn hopf_parameters() {
        let g = build_grid(&GridSpec::circle(1.0, 16)).unwrap();
        for (m, k) in [(1, 2.0), (2, 4.0)] {
            let s = hopf_scenario(m, &g).unwrap();
            assert_eq!((s.n, s.phi, s.t2_0.values()[0]), (2 * m, k, k));
            assert_eq!(s.u0.min(), 1.0);
            assert_eq!(s.hf2_0.max(), 0.0);
        }
        assert!(hopf_scenario(0, &g).is_err());
        let t = build_grid(&GridSpec::torus(1.0, 1.0, 8, 8)).unwrap();
        assert!(hopf_scenario(1, &t).is_err());
    }

    #[test]
    fn cylinder_is_stationary() {
        let g = build_grid(&GridSpec::interval(1.0, 21, 2.0, 2.0)).unwrap();
        let p = RevolutionProfile::new(ScalarField::constant(&g, 2.0).unwrap(), 0.0).unwrap();
        let tr = revolution_evolve(&p, 1.0, 0.01, 10).unwrap();
        assert!(tr.final_profile().values().iter().all(|&v| v == 2.0));
        let curve = reconstruct_profile(tr.final_profile(), 0.0).unwrap();
        for (x, h) in curve.x.iter().zip(&curve.h) {
            assert!((x - h).abs() < 1e-14);
        }
    }

    #[test]
    fn cone_arc_length() {
        let g = build_grid(&GridSpec::interval(2.0, 41, 1.0, 1.5)).unwrap();
        let rho = linear_interpolant(&g).unwrap();
        let curve = reconstruct_profile(&rho, 0.0).unwrap();
        assert!((curve.chord_squared() - 4.0).abs() < 1e-12);
        let sigma: f64 = 0.25;
        assert!((curve.h[40] - 2.0 * (1.0 - sigma * sigma).sqrt()).abs() < 1e-12);
        assert!(gaussian_curvature(&rho).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn steep_profile_rejected() {
        let g = build_grid(&GridSpec::interval(1.0, 11, 1.0, 3.0)).unwrap();
        let rho = linear_interpolant(&g).unwrap();
        assert!(RevolutionProfile::new(rho.clone(), 0.0).is_err());
        assert!(reconstruct_profile(&rho, 0.0).is_err());
    }

    #[test]
    fn sphere_patch_curvature() {
        // cos x on [0.2, 1.2], shifted so the grid starts at zero.
        let g = build_grid(&GridSpec::interval(1.0, 201, 0.2f64.cos(), 1.2f64.cos())).unwrap();
        let rho = g.sample(|x, _| (x + 0.2).cos()).unwrap();
        for k in gaussian_curvature(&rho).unwrap().values() {
            assert!((k - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn mesh_export_lines() {
        let g = build_grid(&GridSpec::interval(1.0, 5, 1.0, 1.0)).unwrap();
        let curve = reconstruct_profile(&ScalarField::constant(&g, 1.0).unwrap(), 0.0).unwrap();
        let pts = curve.embedding(EMBEDDING_THETA_SAMPLES);
        assert_eq!(pts.len(), 5 * 64);
        let mut buf = Vec::new();
        export_mesh(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 320);
        assert_eq!(text.lines().next().unwrap().split_whitespace().count(), 3);
    }
}
