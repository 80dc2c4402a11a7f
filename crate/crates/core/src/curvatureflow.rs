//! Geometric observables reconstructed from the potential `u`.
//!
//! Conventions, all in flow time `τ = t / n`:
//!
//! * `H = −n ∇ log u` (edge field),
//! * `g_τ^⊥ = e^{2φ} g_0^⊥` with `φ = −∫ (Sc_mix − Φ) dτ`, so `u = u0 e^φ`,
//! * `‖T‖²_τ = ‖T‖²_0 e^{−4φ}`, `‖h_F‖²_τ = ‖h_F‖²_0 e^{−2φ}`,
//!   and the volume form scales by `e^{nφ}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heatflow::{FlowTrajectory, FoliationScenario, ScaledProblem};
use crate::leafgrid::{laplacian, leaf_divergence, leaf_gradient, ScalarField, Topology, VectorField};

/// Points where `Ψ1 Ψ2` exceeds this belong to the domain `U`.
pub const U_THRESHOLD: f64 = 1e-14;

/// `H = −n ∇ log u`.
pub fn mean_curvature_potential(u: &ScalarField, n: usize) -> Result<VectorField> {
    if !(u.min() > 0.0) {
        return Err(Error::InvalidField("u must be positive".into()));
    }
    Ok(leaf_gradient(&u.map(f64::ln)?).scale(-(n as f64)))
}

/// `Sc_mix = −n Δu/u − n β_D + Ψ2^F u⁻⁴ − Ψ1^F u⁻²`.
pub fn mixed_scalar_curvature(u: &ScalarField, scenario: &FoliationScenario) -> Result<ScalarField> {
    if !u.same_grid(&scenario.u0) {
        return Err(Error::GridMismatch);
    }
    if !(u.min() > 0.0) {
        return Err(Error::InvalidField("u must be positive".into()));
    }
    let n = scenario.n as f64;
    let lap = laplacian(u);
    let (psi1, psi2) = (scenario.psi1_f(), scenario.psi2_f());
    let vals = (0..u.len())
        .map(|i| {
            let v = u.values()[i];
            let v2 = v * v;
            -n * lap.values()[i] / v - n * scenario.beta_d.values()[i] + psi2.values()[i] / (v2 * v2)
                - psi1.values()[i] / v2
        })
        .collect();
    ScalarField::new(u.grid().clone(), vals)
}

// expm1(s) − s without cancellation for small |s|.
fn excess_exp(s: f64) -> f64 {
    if s.abs() < 1e-3 {
        let s2 = s * s;
        s2 * (0.5 + s * (1.0 / 6.0 + s * (1.0 / 24.0 + s / 120.0)))
    } else {
        s.exp_m1() - s
    }
}

/// The discrete `‖H‖²` that makes `Div H − ‖H‖²/n = −n Δu/u` hold exactly
/// on the grid. Per axis it sums `(n/h)² ψ(∓h H/n)` over the two edges at a
/// node, with `ψ(s) = e^s − 1 − s`; this tends to `‖H‖²` as `h → 0`.
pub fn exact_norm_squared(h_field: &VectorField, n: usize) -> ScalarField {
    let g = h_field.grid();
    let nf = n as f64;
    let axis_term = |fwd: f64, bwd: f64, h: f64| {
        (nf / h).powi(2) * (excess_exp(-h * fwd / nf) + excess_exp(h * bwd / nf))
    };
    let vals: Vec<f64> = match g.topology() {
        Topology::Circle { .. } => {
            let c = h_field.axis(0);
            let m = c.len();
            (0..m).map(|i| axis_term(c[i], c[(i + m - 1) % m], g.hx())).collect()
        }
        Topology::Interval { .. } => {
            let c = h_field.axis(0);
            (0..g.len()).map(|i| axis_term(c[i + 1], c[i], g.hx())).collect()
        }
        Topology::Torus2 { .. } => {
            let (nx, ny) = (g.nx(), g.ny());
            let (cx, cy) = (h_field.axis(0), h_field.axis(1));
            (0..nx * ny)
                .map(|i| {
                    let (ix, iy) = (i / ny, i % ny);
                    let xm = ((ix + nx - 1) % nx) * ny + iy;
                    let ym = ix * ny + (iy + ny - 1) % ny;
                    axis_term(cx[i], cx[xm], g.hx()) + axis_term(cy[i], cy[ym], g.hy())
                })
                .collect()
        }
    };
    ScalarField::new(g.clone(), vals).expect("finite for finite H")
}

/// `Div H − ‖H‖²/n + ‖T‖² − ‖h_F‖² − n β_D` evaluated term by term from `H`.
pub fn mixed_scalar_curvature_from_h(u: &ScalarField, scenario: &FoliationScenario) -> Result<ScalarField> {
    let n = scenario.n;
    let h = mean_curvature_potential(u, n)?;
    let div = leaf_divergence(&h);
    let norm = exact_norm_squared(&h, n);
    let (t2, hf2) = norms_from_potential(u, scenario)?;
    let nf = n as f64;
    let vals = (0..u.len())
        .map(|i| {
            div.values()[i] - norm.values()[i] / nf + t2.values()[i] - hf2.values()[i]
                - nf * scenario.beta_d.values()[i]
        })
        .collect();
    ScalarField::new(u.grid().clone(), vals)
}

/// `(‖T‖², ‖h_F‖²)` at the metric whose potential is `u`.
fn norms_from_potential(u: &ScalarField, scenario: &FoliationScenario) -> Result<(ScalarField, ScalarField)> {
    let t2 = scenario.psi2_f().zip_map(u, |p, v| p / (v * v * v * v))?;
    let hf2 = scenario.psi1_f().zip_map(u, |p, v| p / (v * v))?;
    Ok((t2, hf2))
}

/// `φ` at every saved time of a trajectory.
#[derive(Debug, Clone)]
pub struct ConformalFactor {
    /// Flow times `τ = t / n`.
    pub flow_times: Vec<f64>,
    pub phi: Vec<ScalarField>,
    /// `Sc_mix` at each saved time.
    pub sc_mix: Vec<ScalarField>,
    /// Richardson estimate of the trapezoid error, `max |φ_h − φ_2h| / 3`.
    pub quadrature_error: f64,
}

fn check_trajectory(traj: &FlowTrajectory, scenario: &FoliationScenario) -> Result<()> {
    let start = &traj.snapshots[0];
    if !start.same_grid(&scenario.u0) {
        return Err(Error::GridMismatch);
    }
    if start.sup_distance(&scenario.u0)? > 1e-12 * scenario.u0.sup_norm() {
        return Err(Error::InvalidField("trajectory does not start at the scenario's u0".into()));
    }
    Ok(())
}

pub fn accumulate_conformal_factor(traj: &FlowTrajectory, scenario: &FoliationScenario) -> Result<ConformalFactor> {
    check_trajectory(traj, scenario)?;
    let n = scenario.n as f64;
    let flow_times: Vec<f64> = traj.times.iter().map(|t| t / n).collect();
    let sc_mix: Vec<ScalarField> =
        traj.snapshots.iter().map(|u| mixed_scalar_curvature(u, scenario)).collect::<Result<_>>()?;
    let rate: Vec<ScalarField> =
        sc_mix.iter().map(|s| s.map(|v| scenario.phi - v)).collect::<Result<_>>()?;

    let grid = scenario.grid();
    let mut phi = vec![ScalarField::zeros(grid)];
    let mut acc = vec![0.0; grid.len()];
    for k in 1..rate.len() {
        let d = flow_times[k] - flow_times[k - 1];
        for (i, a) in acc.iter_mut().enumerate() {
            *a += 0.5 * d * (rate[k - 1].values()[i] + rate[k].values()[i]);
        }
        phi.push(ScalarField::new(grid.clone(), acc.clone())?);
    }

    // Trapezoid over every other save, compared at the shared times.
    let mut coarse = vec![0.0; grid.len()];
    let mut quadrature_error: f64 = 0.0;
    let mut k = 2;
    while k < rate.len() {
        let d = flow_times[k] - flow_times[k - 2];
        for (i, c) in coarse.iter_mut().enumerate() {
            *c += 0.5 * d * (rate[k - 2].values()[i] + rate[k].values()[i]);
            quadrature_error = quadrature_error.max((phi[k].values()[i] - *c).abs() / 3.0);
        }
        k += 2;
    }
    let range = phi.iter().map(|p| p.sup_norm()).fold(0.0, f64::max);
    if range > 0.0 && quadrature_error > 1e-4 * range {
        log::warn!("conformal factor quadrature error {quadrature_error:.3e} exceeds 1e-4 of its range {range:.3e}");
    }
    Ok(ConformalFactor { flow_times, phi, sc_mix, quadrature_error })
}

#[derive(Debug, Clone)]
pub struct ExtrinsicNorms {
    pub t2: ScalarField,
    pub hf2: ScalarField,
    pub vol_scale: ScalarField,
}

pub fn evolve_extrinsic_norms(phi: &ScalarField, scenario: &FoliationScenario) -> Result<ExtrinsicNorms> {
    let n = scenario.n as f64;
    Ok(ExtrinsicNorms {
        t2: scenario.t2_0.zip_map(phi, |t, p| t * (-4.0 * p).exp())?,
        hf2: scenario.hf2_0.zip_map(phi, |h, p| h * (-2.0 * p).exp())?,
        vol_scale: phi.map(|p| (n * p).exp())?,
    })
}

/// Everything the flow knows about the metric at one saved time.
#[derive(Debug, Clone)]
pub struct GeometricState {
    /// Flow time.
    pub t: f64,
    pub h: VectorField,
    pub sc_mix: ScalarField,
    pub phi: ScalarField,
    pub t2: ScalarField,
    pub hf2: ScalarField,
    pub vol_scale: ScalarField,
}

pub fn geometric_states(traj: &FlowTrajectory, scenario: &FoliationScenario) -> Result<Vec<GeometricState>> {
    let cf = accumulate_conformal_factor(traj, scenario)?;
    let mut out = Vec::with_capacity(traj.snapshots.len());
    for (k, u) in traj.snapshots.iter().enumerate() {
        let norms = evolve_extrinsic_norms(&cf.phi[k], scenario)?;
        out.push(GeometricState {
            t: cf.flow_times[k],
            h: mean_curvature_potential(u, scenario.n)?,
            sc_mix: cf.sc_mix[k].clone(),
            phi: cf.phi[k].clone(),
            t2: norms.t2,
            hf2: norms.hf2,
            vol_scale: norms.vol_scale,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConservationRow {
    pub t: f64,
    /// Relative drift of `‖h_F‖²/‖T‖` on `U`; `None` when `U` is empty.
    pub ratio_drift: Option<f64>,
    pub u_drift: f64,
    pub t2_drift: f64,
    pub hf2_drift: f64,
    pub path_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub max_ratio_drift: Option<f64>,
    /// `max |u − u0 e^φ|`.
    pub max_u_drift: f64,
    /// `max |T2_τ e^{4φ} − T2_0|`.
    pub max_t2_drift: f64,
    /// `max |hF2_τ e^{2φ} − hF2_0|`.
    pub max_hf2_drift: f64,
    /// Agreement of the two `Sc_mix` evaluations; `β_D` is held fixed, so
    /// this is what its reconstruction drift amounts to.
    pub max_path_mismatch: f64,
    pub u_points: usize,
    pub quadrature_error: f64,
    pub rows: Vec<ConservationRow>,
}

pub fn conservation_report(traj: &FlowTrajectory, scenario: &FoliationScenario) -> Result<ConservationReport> {
    let cf = accumulate_conformal_factor(traj, scenario)?;
    let (psi1, psi2) = (scenario.psi1_f(), scenario.psi2_f());
    let on_u: Vec<usize> =
        (0..psi1.len()).filter(|&i| psi1.values()[i] * psi2.values()[i] > U_THRESHOLD).collect();
    let ratio = |hf2: &ScalarField, t2: &ScalarField, i: usize| hf2.values()[i] / t2.values()[i].sqrt();

    let mut rows = Vec::with_capacity(traj.snapshots.len());
    for (k, u) in traj.snapshots.iter().enumerate() {
        let phi = &cf.phi[k];
        let norms = evolve_extrinsic_norms(phi, scenario)?;
        let ratio_drift = (!on_u.is_empty()).then(|| {
            on_u.iter()
                .map(|&i| {
                    let r0 = ratio(&scenario.hf2_0, &scenario.t2_0, i);
                    ((ratio(&norms.hf2, &norms.t2, i) - r0) / r0).abs()
                })
                .fold(0.0, f64::max)
        });
        let mut u_drift: f64 = 0.0;
        let mut t2_drift: f64 = 0.0;
        let mut hf2_drift: f64 = 0.0;
        for i in 0..u.len() {
            let p = phi.values()[i];
            u_drift = u_drift.max((u.values()[i] - scenario.u0.values()[i] * p.exp()).abs());
            t2_drift = t2_drift.max((norms.t2.values()[i] * (4.0 * p).exp() - scenario.t2_0.values()[i]).abs());
            hf2_drift =
                hf2_drift.max((norms.hf2.values()[i] * (2.0 * p).exp() - scenario.hf2_0.values()[i]).abs());
        }
        let path_mismatch = mixed_scalar_curvature_from_h(u, scenario)?.sup_distance(&cf.sc_mix[k])?;
        rows.push(ConservationRow { t: cf.flow_times[k], ratio_drift, u_drift, t2_drift, hf2_drift, path_mismatch });
    }
    let fold = |f: &dyn Fn(&ConservationRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    Ok(ConservationReport {
        max_ratio_drift: (!on_u.is_empty()).then(|| fold(&|r| r.ratio_drift.unwrap_or(0.0))),
        max_u_drift: fold(&|r| r.u_drift),
        max_t2_drift: fold(&|r| r.t2_drift),
        max_hf2_drift: fold(&|r| r.hf2_drift),
        max_path_mismatch: fold(&|r| r.path_mismatch),
        u_points: on_u.len(),
        quadrature_error: cf.quadrature_error,
        rows,
    })
}

/// Residual of `∂τ H + ∇‖H‖² = n ∇ Div H + n ∇(‖T‖² − ‖h_F‖² − n β_D)`.
#[derive(Debug, Clone)]
pub struct BurgersResidual {
    /// Flow times of the interior snapshots.
    pub times: Vec<f64>,
    pub fields: Vec<VectorField>,
    pub max_per_snapshot: Vec<f64>,
    /// Largest residual over interior snapshots.
    pub max: f64,
}

/// `‖H‖²` uses the two-edge average at each node, the norms come from the
/// accumulated conformal factor, and `∂τ H` is a central difference over
/// saved snapshots. The first and last snapshot are excluded.
pub fn burgers_residual(traj: &FlowTrajectory, scenario: &FoliationScenario) -> Result<BurgersResidual> {
    if traj.snapshots.len() < 3 {
        return Err(Error::InvalidSeries("need at least three snapshots".into()));
    }
    let states = geometric_states(traj, scenario)?;
    let mut times = Vec::new();
    let mut fields = Vec::new();
    let mut max_per_snapshot = Vec::new();
    for k in 1..states.len() - 1 {
        let s = &states[k];
        let dtau = states[k + 1].t - states[k - 1].t;
        let dh = states[k + 1].h.sub(&states[k - 1].h)?.scale(1.0 / dtau);
        let field = burgers_terms(&dh, &s.h, &s.t2, &s.hf2, scenario)?;
        max_per_snapshot.push(field.sup_norm());
        times.push(s.t);
        fields.push(field);
    }
    let max = max_per_snapshot.iter().copied().fold(0.0, f64::max);
    Ok(BurgersResidual { times, fields, max_per_snapshot, max })
}

fn burgers_terms(
    dh: &VectorField,
    h: &VectorField,
    t2: &ScalarField,
    hf2: &ScalarField,
    scenario: &FoliationScenario,
) -> Result<VectorField> {
    let n = scenario.n as f64;
    let grad_norm = leaf_gradient(&h.norm_squared());
    let grad_div = leaf_gradient(&leaf_divergence(h));
    let source = t2.zip_map(hf2, |t, h| t - h)?.zip_map(&scenario.beta_d, |a, b| a - n * b)?;
    let grad_source = leaf_gradient(&source);
    let comps: Vec<f64> = (0..dh.components().len())
        .map(|e| {
            dh.components()[e] + grad_norm.components()[e]
                - n * grad_div.components()[e]
                - n * grad_source.components()[e]
        })
        .collect();
    VectorField::new(h.grid().clone(), comps)
}

/// The Burgers residual at a single state with `∂τ H = −n ∇(∂τ u / u)`
/// taken from the semi-discrete equation instead of from snapshots. What
/// remains is the spatial part, `∇(‖H‖²_avg − ‖H‖²_exact)`, of order `h²`.
pub fn burgers_space_residual(u: &ScalarField, scenario: &FoliationScenario) -> Result<VectorField> {
    if !u.same_grid(&scenario.u0) {
        return Err(Error::GridMismatch);
    }
    let n = scenario.n;
    let h = mean_curvature_potential(u, n)?;
    let c = scenario.flow_coefficients();
    let lap = laplacian(u);
    let rate: Vec<f64> = (0..u.len())
        .map(|i| {
            let v = u.values()[i];
            c.diffusion * lap.values()[i] / v + c.beta[i] + c.psi1[i] / (v * v) - c.psi2[i] / (v * v * v * v)
        })
        .collect();
    let dh = leaf_gradient(&ScalarField::new(u.grid().clone(), rate)?).scale(-(n as f64));
    let (t2, hf2) = norms_from_potential(u, scenario)?;
    burgers_terms(&dh, &h, &t2, &hf2, scenario)
}

/// `d = min(u0/e0) / max(u0/e0)`.
pub fn d_ratio(u0: &ScalarField, e0: &ScalarField) -> Result<f64> {
    if !(u0.min() > 0.0 && e0.min() > 0.0) {
        return Err(Error::InvalidField("u0 and e0 must be positive".into()));
    }
    let r = u0.zip_map(e0, |a, b| a / b)?;
    Ok(r.min() / r.max())
}

/// `Φ ≥ n λ0^F + d⁻⁴ max ‖T‖²_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiCondition {
    pub phi: f64,
    pub bound: f64,
    pub d: f64,
    pub satisfied: bool,
}

/// `λ0^F` is the least eigenvalue of `−Δ − β_D`, i.e. `λ0 + Φ/n`.
pub fn leaf_lambda0(problem: &ScaledProblem, scenario: &FoliationScenario) -> f64 {
    problem.lambda0() + scenario.phi / scenario.n as f64
}

pub fn check_phi_condition(problem: &ScaledProblem, scenario: &FoliationScenario) -> Result<PhiCondition> {
    let d = d_ratio(&scenario.u0, problem.e0())?;
    let bound = scenario.n as f64 * leaf_lambda0(problem, scenario) + scenario.t2_0.max() / d.powi(4);
    Ok(PhiCondition { phi: scenario.phi, bound, d, satisfied: scenario.phi >= bound })
}

/// Long-time limit of `Sc_mix(g_τ)`: `n λ0^F`.
///
/// The limit follows from `∂τ log u = Φ − Sc_mix` and `log u ≈ −λ0 t`,
/// so `Sc_mix → Φ + n λ0 = n λ0^F`.
pub fn curvature_asymptote(problem: &ScaledProblem, scenario: &FoliationScenario) -> f64 {
    scenario.n as f64 * leaf_lambda0(problem, scenario)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    Mixed,
}

impl Sign {
    pub fn of(f: &ScalarField) -> Self {
        if f.min() > 0.0 {
            Sign::Positive
        } else if f.max() < 0.0 {
            Sign::Negative
        } else {
            Sign::Mixed
        }
    }
}

#[derive(Debug, Clone)]
pub struct LimitCurvature {
    /// `ξ = u0 / (ũ0⁰ e0)`.
    pub xi: ScalarField,
    /// `n λ0^F + ξ⁴ ‖T‖²_0 − ξ² ‖h_F‖²_0`.
    pub sc_limit: ScalarField,
    pub sign: Sign,
    /// `ξ² ‖h_F‖² < ξ⁴ ‖T‖² + d⁻⁴ max ‖T‖²` at every point.
    pub negativity_hypothesis: bool,
}

/// Mixed scalar curvature of the rescaled limit metric.
pub fn limit_metric_curvature(
    problem: &ScaledProblem,
    scenario: &FoliationScenario,
    tilde_u00: f64,
) -> Result<LimitCurvature> {
    if !(tilde_u00 > 0.0) {
        return Err(Error::HypothesisViolated(format!("ũ0⁰ > 0 required, got {tilde_u00}")));
    }
    let e0 = problem.e0();
    let xi = scenario.u0.zip_map(e0, |u, e| u / (tilde_u00 * e))?;
    let base = curvature_asymptote(problem, scenario);
    let mut sc = Vec::with_capacity(xi.len());
    let mut hyp = true;
    let d = d_ratio(&scenario.u0, e0)?;
    let t2_max = scenario.t2_0.max();
    for i in 0..xi.len() {
        let x2 = xi.values()[i].powi(2);
        let t2 = scenario.t2_0.values()[i];
        let hf2 = scenario.hf2_0.values()[i];
        sc.push(base + x2 * x2 * t2 - x2 * hf2);
        hyp &= x2 * hf2 < x2 * x2 * t2 + t2_max / d.powi(4);
    }
    let sc_limit = ScalarField::new(xi.grid().clone(), sc)?;
    let sign = Sign::of(&sc_limit);
    Ok(LimitCurvature { xi, sc_limit, sign, negativity_hypothesis: hyp })
}

/// `Sc_mix` of the rescaled metric whose potential is `v = e^{λ0 t} u`.
pub fn rescaled_metric_curvature(v: &ScalarField, scenario: &FoliationScenario) -> Result<ScalarField> {
    mixed_scalar_curvature(v, scenario)
}
