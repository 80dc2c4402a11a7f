//! The scaled nonlinear heat equation
//! `∂t u = Δu + βu + Ψ1 u⁻¹ − Ψ2 u⁻³`, its a-priori envelopes and its
//! long-time limit.
//!
//! Time conventions: the flow of metrics runs in flow time `τ`. The scaled
//! equation runs in `t = n τ`, with `β = β_D + Φ/n` and `Ψi = Ψi^F / n`.
//! In flow time the same solution obeys
//! `∂τ u = nΔu + (nβ_D + Φ) u + Ψ1^F u⁻¹ − Ψ2^F u⁻³`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::implicit::DiffusionSolver;
use crate::leafgrid::{inner_product_l2, leaf_gradient, LeafGrid, ScalarField};
use crate::schrodinger::{full_spectrum, tilde_u00, SpectralData, TildeU00};

pub use crate::fit::{fit_exponential_rate, RateFit};

/// Halvings allowed before a positivity failure becomes a blow-down.
pub const MAX_HALVINGS: u32 = 20;
/// Relative tolerance under which the initial condition counts as an equality.
pub const CONDITION_EQUALITY_TOL: f64 = 1e-10;

/// Geometric data of one leaf.
#[derive(Debug, Clone)]
pub struct FoliationScenario {
    /// Dimension of the orthogonal distribution.
    pub n: usize,
    pub phi: f64,
    pub beta_d: ScalarField,
    /// `‖T‖²` at `t = 0`.
    pub t2_0: ScalarField,
    /// `‖h_F‖²` at `t = 0`.
    pub hf2_0: ScalarField,
    pub u0: ScalarField,
}

impl FoliationScenario {
    pub fn new(
        n: usize,
        phi: f64,
        beta_d: ScalarField,
        t2_0: ScalarField,
        hf2_0: ScalarField,
        u0: ScalarField,
    ) -> Result<Self> {
        let s = Self { n, phi, beta_d, t2_0, hf2_0, u0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidField("n must be positive".into()));
        }
        if !self.phi.is_finite() {
            return Err(Error::InvalidField("Φ must be finite".into()));
        }
        for f in [&self.t2_0, &self.hf2_0, &self.u0] {
            if !f.same_grid(&self.beta_d) {
                return Err(Error::GridMismatch);
            }
        }
        if self.beta_d.min() < 0.0 {
            return Err(Error::InvalidField("β_D must be non-negative".into()));
        }
        if self.t2_0.min() < 0.0 || self.hf2_0.min() < 0.0 {
            return Err(Error::InvalidField("squared norms must be non-negative".into()));
        }
        if !(self.u0.min() > 0.0) {
            return Err(Error::InvalidField("u0 must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<LeafGrid> {
        self.u0.grid()
    }

    /// Leaf dimension.
    pub fn p(&self) -> usize {
        self.grid().dim()
    }

    pub fn psi1_f(&self) -> ScalarField {
        self.u0.zip_map(&self.hf2_0, |u, h| u * u * h).expect("validated")
    }

    pub fn psi2_f(&self) -> ScalarField {
        self.u0.zip_map(&self.t2_0, |u, t| u * u * u * u * t).expect("validated")
    }

    /// Scaled potential `β_D + Φ/n`.
    pub fn scaled_beta(&self) -> ScalarField {
        let shift = self.phi / self.n as f64;
        self.beta_d.map(|b| b + shift).expect("finite")
    }

    /// Spectrum of the unscaled operator `−Δ − β_D`.
    pub fn leaf_spectrum(&self) -> Result<SpectralData> {
        full_spectrum(&self.beta_d)
    }

    /// Coefficients of the equation in flow time.
    pub fn flow_coefficients(&self) -> Coefficients {
        let n = self.n as f64;
        Coefficients {
            diffusion: n,
            beta: self.beta_d.values().iter().map(|b| n * b + self.phi).collect(),
            psi1: self.psi1_f().into_values(),
            psi2: self.psi2_f().into_values(),
        }
    }
}

/// `∂t u = D Δu + β u + Ψ1 u⁻¹ − Ψ2 u⁻³` with a constant diffusivity `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub diffusion: f64,
    pub beta: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
}

impl Coefficients {
    fn reaction(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..u.len() {
            let v = u[i];
            out[i] = self.beta[i] * v + self.psi1[i] / v - self.psi2[i] / (v * v * v);
        }
    }

    pub fn is_linear(&self) -> bool {
        self.psi1.iter().chain(&self.psi2).all(|&p| p == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    /// Backward Euler diffusion, forward Euler reaction. First order.
    #[default]
    ImexEuler,
    /// Crank–Nicolson diffusion, Heun reaction. Second order.
    ImexTrapezoid,
}

fn all_positive(v: &[f64]) -> bool {
    v.iter().all(|&x| x > 0.0 && x.is_finite())
}

fn laplacian_values(grid: &Arc<LeafGrid>, v: &[f64]) -> Vec<f64> {
    let f = ScalarField::new(grid.clone(), v.to_vec());
    match f {
        Ok(f) => crate::leafgrid::laplacian(&f).into_values(),
        Err(_) => vec![f64::NAN; v.len()],
    }
}

/// One attempted step; `None` when the result leaves the positive cone.
///
/// Both schemes are written in increment form, `u_new = r + δ` with the
/// implicit solve acting on `δ` only, so spatially constant states with a
/// vanishing reaction are reproduced bit for bit.
fn try_step(grid: &Arc<LeafGrid>, c: &Coefficients, u: &[f64], dt: f64, scheme: TimeScheme) -> Option<Vec<f64>> {
    let n = u.len();
    let mut reac = vec![0.0; n];
    c.reaction(u, &mut reac);
    let euler = |reac: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = u.iter().zip(reac).map(|(a, b)| a + dt * b).collect();
        let theta = dt * c.diffusion;
        let rhs: Vec<f64> = laplacian_values(grid, &r).iter().map(|l| theta * l).collect();
        let delta = DiffusionSolver::new(grid.clone(), theta).solve(&rhs);
        r.iter().zip(&delta).map(|(a, b)| a + b).collect()
    };
    let out = match scheme {
        TimeScheme::ImexEuler => euler(&reac),
        TimeScheme::ImexTrapezoid => {
            let pred = euler(&reac);
            if !all_positive(&pred) {
                return None;
            }
            let mut reac_pred = vec![0.0; n];
            c.reaction(&pred, &mut reac_pred);
            let r: Vec<f64> =
                (0..n).map(|i| u[i] + 0.5 * dt * (reac[i] + reac_pred[i])).collect();
            let theta = 0.5 * dt * c.diffusion;
            let sum: Vec<f64> = u.iter().zip(&r).map(|(a, b)| a + b).collect();
            let rhs: Vec<f64> = laplacian_values(grid, &sum).iter().map(|l| theta * l).collect();
            let delta = DiffusionSolver::new(grid.clone(), theta).solve(&rhs);
            r.iter().zip(&delta).map(|(a, b)| a + b).collect()
        }
    };
    all_positive(&out).then_some(out)
}

/// Advance by `dt`, splitting into halves recursively on positivity loss.
pub fn step_coefficients(
    grid: &Arc<LeafGrid>,
    c: &Coefficients,
    u: &[f64],
    t: f64,
    dt: f64,
    scheme: TimeScheme,
) -> Result<Vec<f64>> {
    fn go(
        grid: &Arc<LeafGrid>,
        c: &Coefficients,
        u: &[f64],
        t: f64,
        dt: f64,
        scheme: TimeScheme,
        depth: u32,
    ) -> Result<Vec<f64>> {
        if let Some(next) = try_step(grid, c, u, dt, scheme) {
            return Ok(next);
        }
        if depth >= MAX_HALVINGS {
            return Err(Error::BlowDown { time: t });
        }
        let half = 0.5 * dt;
        let mid = go(grid, c, u, t, half, scheme, depth + 1)?;
        go(grid, c, &mid, t + half, half, scheme, depth + 1)
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidField(format!("time step must be positive, got {dt}")));
    }
    if !all_positive(u) {
        return Err(Error::InvalidField("state must be positive".into()));
    }
    go(grid, c, u, t, dt, scheme, 0)
}

/// Uniform steps of `dt` to `t_end`; the final step is shortened if needed.
fn step_plan(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_end > 0.0 && t_end.is_finite()) || !(dt > 0.0) {
        return Err(Error::InvalidField(format!("bad time window t_end = {t_end}, dt = {dt}")));
    }
    let n = (t_end / dt).round().max(1.0) as usize;
    let n = if (n as f64 * dt - t_end).abs() <= 1e-9 * t_end { n } else { (t_end / dt).ceil() as usize };
    Ok((1..=n).map(|k| if k == n { t_end } else { k as f64 * dt }).collect())
}

/// Saved states of a plain integration, without diagnostics.
#[derive(Debug, Clone)]
pub struct Integration {
    pub times: Vec<f64>,
    pub states: Vec<ScalarField>,
}

/// Integrates `c` from `u0`, saving every `save_every` steps and the final state.
pub fn integrate(
    c: &Coefficients,
    u0: &ScalarField,
    t_end: f64,
    dt: f64,
    save_every: usize,
    scheme: TimeScheme,
) -> Result<Integration> {
    let grid = u0.grid();
    let plan = step_plan(t_end, dt)?;
    let save_every = save_every.max(1);
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut u = u0.values().to_vec();
    let mut t = 0.0;
    for (k, &t_next) in plan.iter().enumerate() {
        u = step_coefficients(grid, c, &u, t, t_next - t, scheme)?;
        t = t_next;
        if (k + 1) % save_every == 0 || k + 1 == plan.len() {
            times.push(t);
            states.push(ScalarField::new(grid.clone(), u.clone())?);
        }
    }
    Ok(Integration { times, states })
}

/// The equation in scaled time together with the spectrum of `−Δ − β`.
#[derive(Debug, Clone)]
pub struct ScaledProblem {
    n: usize,
    beta: ScalarField,
    psi1: ScalarField,
    psi2: ScalarField,
    u0: ScalarField,
    spectrum: SpectralData,
}

/// Scales a scenario. `spec` must be the spectrum of `β_D + Φ/n`.
pub fn scale_problem(scenario: &FoliationScenario, spec: &SpectralData) -> Result<ScaledProblem> {
    scenario.validate()?;
    let beta = scenario.scaled_beta();
    let mismatch = beta.sup_distance(spec.potential())?;
    if mismatch > 1e-12 * (1.0 + beta.sup_norm()) {
        return Err(Error::InvalidSpectrum(format!("spectrum potential differs from β_D + Φ/n by {mismatch:e}")));
    }
    let n = scenario.n as f64;
    Ok(ScaledProblem {
        n: scenario.n,
        beta,
        psi1: scenario.psi1_f().scale(1.0 / n),
        psi2: scenario.psi2_f().scale(1.0 / n),
        u0: scenario.u0.clone(),
        spectrum: spec.clone(),
    })
}

impl ScaledProblem {
    pub fn from_scenario(scenario: &FoliationScenario) -> Result<Self> {
        let spec = full_spectrum(&scenario.scaled_beta())?;
        scale_problem(scenario, &spec)
    }

    /// Direct construction from scaled coefficients.
    pub fn from_parts(n: usize, beta: ScalarField, psi1: ScalarField, psi2: ScalarField, u0: ScalarField) -> Result<Self> {
        for f in [&psi1, &psi2, &u0] {
            if !f.same_grid(&beta) {
                return Err(Error::GridMismatch);
            }
        }
        if n == 0 || psi1.min() < 0.0 || psi2.min() < 0.0 || !(u0.min() > 0.0) {
            return Err(Error::InvalidField("need n ≥ 1, Ψi ≥ 0 and u0 > 0".into()));
        }
        let spectrum = full_spectrum(&beta)?;
        Ok(Self { n, beta, psi1, psi2, u0, spectrum })
    }

    /// Same coefficients, new initial data.
    pub fn with_initial(&self, u0: ScalarField) -> Result<Self> {
        if !u0.same_grid(&self.beta) {
            return Err(Error::GridMismatch);
        }
        if !(u0.min() > 0.0) {
            return Err(Error::InvalidField("u0 must be positive".into()));
        }
        Ok(Self { u0, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &Arc<LeafGrid> {
        self.beta.grid()
    }

    pub fn beta(&self) -> &ScalarField {
        &self.beta
    }

    pub fn psi1(&self) -> &ScalarField {
        &self.psi1
    }

    pub fn psi2(&self) -> &ScalarField {
        &self.psi2
    }

    pub fn u0(&self) -> &ScalarField {
        &self.u0
    }

    pub fn spectrum(&self) -> &SpectralData {
        &self.spectrum
    }

    pub fn lambda0(&self) -> f64 {
        self.spectrum.lambda0()
    }

    pub fn lambda1(&self) -> f64 {
        self.spectrum.lambda1()
    }

    pub fn gap(&self) -> f64 {
        self.spectrum.gap()
    }

    pub fn e0(&self) -> &ScalarField {
        self.spectrum.ground_state()
    }

    pub fn is_linear(&self) -> bool {
        self.psi1.sup_norm() == 0.0 && self.psi2.sup_norm() == 0.0
    }

    /// Flow time corresponding to scaled time `t`.
    pub fn flow_time(&self, t: f64) -> f64 {
        t / self.n as f64
    }

    pub fn scaled_time(&self, tau: f64) -> f64 {
        tau * self.n as f64
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            diffusion: 1.0,
            beta: self.beta.values().to_vec(),
            psi1: self.psi1.values().to_vec(),
            psi2: self.psi2.values().to_vec(),
        }
    }

    /// The same equation written in flow time.
    pub fn unscaled_coefficients(&self) -> Coefficients {
        let n = self.n as f64;
        Coefficients {
            diffusion: n,
            beta: self.beta.values().iter().map(|b| n * b).collect(),
            psi1: self.psi1.values().iter().map(|p| n * p).collect(),
            psi2: self.psi2.values().iter().map(|p| n * p).collect(),
        }
    }

    /// Reaction stiffness bound `|β| + Ψ1/u² + 3Ψ2/u⁴` at the initial data.
    pub fn stiffness(&self) -> f64 {
        let mut s: f64 = 0.0;
        for i in 0..self.u0.len() {
            let u = self.u0.values()[i];
            s = s.max(
                self.beta.values()[i].abs()
                    + self.psi1.values()[i] / (u * u)
                    + 3.0 * self.psi2.values()[i] / (u * u * u * u),
            );
        }
        s
    }

    /// `0.25 h²`, reduced further when the reaction is stiff.
    pub fn default_dt(&self) -> f64 {
        let h = self.grid().spacing();
        (0.25 * h * h).min(0.25 / self.stiffness().max(1e-300))
    }

    /// One step of the scaled equation.
    pub fn step(&self, u: &ScalarField, dt: f64, scheme: TimeScheme) -> Result<ScalarField> {
        if !u.same_grid(&self.beta) {
            return Err(Error::GridMismatch);
        }
        let next = step_coefficients(self.grid(), &self.coefficients(), u.values(), 0.0, dt, scheme)?;
        ScalarField::new(self.grid().clone(), next)
    }

    /// `Q = e^{λ0 t}(Ψ1 u⁻¹ − Ψ2 u⁻³)`, the forcing of the rescaled solution.
    pub fn rescaled_forcing(&self, u: &ScalarField, t: f64) -> Result<ScalarField> {
        let s = (self.lambda0() * t).exp();
        let vals = (0..u.len())
            .map(|i| {
                let v = u.values()[i];
                s * (self.psi1.values()[i] / v - self.psi2.values()[i] / (v * v * v))
            })
            .collect();
        ScalarField::new(self.grid().clone(), vals)
    }

    fn ratio_extrema(&self, u: &[f64]) -> (f64, usize, f64, usize) {
        let e0 = self.e0().values();
        let (mut lo, mut ilo, mut hi, mut ihi) = (f64::INFINITY, 0, f64::NEG_INFINITY, 0);
        for (i, (a, b)) in u.iter().zip(e0).enumerate() {
            let r = a / b;
            if r < lo {
                lo = r;
                ilo = i;
            }
            if r > hi {
                hi = r;
                ihi = i;
            }
        }
        (lo, ilo, hi, ihi)
    }
}

/// Step with the default scheme.
pub fn step(problem: &ScaledProblem, u: &ScalarField, dt: f64) -> Result<ScalarField> {
    problem.step(u, dt, TimeScheme::default())
}

/// Evaluation of `(u0⁻)⁴ ≥ Ψ2⁺/|λ0|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub satisfied: bool,
    /// True when the two sides agree to [`CONDITION_EQUALITY_TOL`].
    pub equality: bool,
}

pub fn check_initial_condition(problem: &ScaledProblem) -> Result<ConditionCheck> {
    let lambda0 = problem.lambda0();
    if !(lambda0 < 0.0) {
        return Err(Error::HypothesisViolated(format!("λ0 < 0 required, got {lambda0:.6e}")));
    }
    let (u_minus, _, _, _) = problem.ratio_extrema(problem.u0.values());
    let psi2_plus = max_weighted(&problem.psi2, problem.e0(), 4);
    let lhs = u_minus.powi(4);
    let rhs = psi2_plus / lambda0.abs();
    let margin = lhs - rhs;
    let equality = margin.abs() <= CONDITION_EQUALITY_TOL * lhs.max(rhs);
    Ok(ConditionCheck { lhs, rhs, margin, satisfied: margin >= 0.0 || equality, equality })
}

fn max_weighted(psi: &ScalarField, e0: &ScalarField, power: i32) -> f64 {
    psi.values().iter().zip(e0.values()).map(|(p, e)| p / e.powi(power)).fold(f64::NEG_INFINITY, f64::max)
}

/// Whether the theorems about a run can be asserted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum HypothesisStatus {
    Satisfied(ConditionCheck),
    Violated(ConditionCheck),
    /// `λ0 ≥ 0`: the envelope and limit theorems do not apply.
    NotApplicable(String),
}

impl HypothesisStatus {
    pub fn of(problem: &ScaledProblem) -> Self {
        match check_initial_condition(problem) {
            Ok(c) if c.satisfied => Self::Satisfied(c),
            Ok(c) => Self::Violated(c),
            Err(e) => Self::NotApplicable(e.to_string()),
        }
    }

    pub fn is_met(&self) -> bool {
        matches!(self, Self::Satisfied(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub t_end: f64,
    pub dt: f64,
    pub save_every: usize,
    pub scheme: TimeScheme,
    /// Run nonlinear problems even when the initial condition fails.
    pub override_hypotheses: bool,
}

impl EvolveOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self { t_end, dt, save_every: 1, scheme: TimeScheme::default(), override_hypotheses: false }
    }

    pub fn save_every(mut self, k: usize) -> Self {
        self.save_every = k;
        self
    }

    pub fn scheme(mut self, scheme: TimeScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn override_hypotheses(mut self, yes: bool) -> Self {
        self.override_hypotheses = yes;
        self
    }
}

/// Per-step monitor values, including `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub argmin_ratio: usize,
    pub argmax_ratio: usize,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<ScalarField>,
    pub dt: f64,
    pub scheme: TimeScheme,
    pub diagnostics: Vec<StepDiagnostics>,
    pub hypotheses: HypothesisStatus,
}

impl FlowTrajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory starts at t = 0")
    }

    pub fn final_state(&self) -> &ScalarField {
        self.snapshots.last().expect("trajectory starts at t = 0")
    }

    pub fn hypotheses_met(&self) -> bool {
        self.hypotheses.is_met()
    }
}

pub fn evolve(problem: &ScaledProblem, opts: &EvolveOptions) -> Result<FlowTrajectory> {
    let hypotheses = HypothesisStatus::of(problem);
    if !problem.is_linear() && !hypotheses.is_met() && !opts.override_hypotheses {
        let why = match &hypotheses {
            HypothesisStatus::Violated(c) => format!("initial condition fails with margin {:.6e}", c.margin),
            HypothesisStatus::NotApplicable(s) => s.clone(),
            HypothesisStatus::Satisfied(_) => unreachable!(),
        };
        return Err(Error::HypothesisViolated(why));
    }

    let grid = problem.grid().clone();
    let coeffs = problem.coefficients();
    let plan = step_plan(opts.t_end, opts.dt)?;
    let save_every = opts.save_every.max(1);

    let diag = |t: f64, u: &[f64]| {
        let (min_ratio, argmin_ratio, max_ratio, argmax_ratio) = problem.ratio_extrema(u);
        StepDiagnostics {
            t,
            min_u: u.iter().copied().fold(f64::INFINITY, f64::min),
            max_u: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_ratio,
            max_ratio,
            argmin_ratio,
            argmax_ratio,
        }
    };

    let mut u = problem.u0.values().to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut snapshots = vec![problem.u0.clone()];
    let mut diagnostics = Vec::with_capacity(plan.len() + 1);
    diagnostics.push(diag(0.0, &u));
    for (k, &t_next) in plan.iter().enumerate() {
        u = step_coefficients(&grid, &coeffs, &u, t, t_next - t, opts.scheme)?;
        t = t_next;
        diagnostics.push(diag(t, &u));
        if (k + 1) % save_every == 0 || k + 1 == plan.len() {
            times.push(t);
            snapshots.push(ScalarField::new(grid.clone(), u.clone())?);
        }
    }
    Ok(FlowTrajectory { times, snapshots, dt: opts.dt, scheme: opts.scheme, diagnostics, hypotheses })
}

/// Closed-form bounds `w−(t) ≤ u/e0 ≤ w+(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    pub lambda0: f64,
    pub u0_minus: f64,
    pub u0_plus: f64,
    pub psi1_plus: f64,
    pub psi2_plus: f64,
    /// `(u0⁻)⁴ − Ψ2⁺/|λ0|`, set to zero inside the equality tolerance.
    excess: f64,
}

impl Envelope {
    pub fn w_minus(&self, t: f64) -> f64 {
        let l = self.lambda0;
        let b = self.psi2_plus / l.abs();
        let radicand = (self.excess + b * (4.0 * l * t).exp()).max(0.0);
        (-l * t).exp() * radicand.powf(0.25)
    }

    pub fn w_plus(&self, t: f64) -> f64 {
        let l = self.lambda0;
        let c = self.psi1_plus / l.abs();
        let radicand = self.u0_plus * self.u0_plus - c * (2.0 * l * t).exp_m1();
        (-l * t).exp() * radicand.sqrt()
    }

    /// Limits of `e^{λ0 t} w∓(t)`.
    pub fn v_minus(&self) -> f64 {
        self.excess.powf(0.25)
    }

    pub fn v_plus(&self) -> f64 {
        (self.u0_plus * self.u0_plus + self.psi1_plus / self.lambda0.abs()).sqrt()
    }
}

pub fn envelope(problem: &ScaledProblem) -> Result<Envelope> {
    let check = check_initial_condition(problem)?;
    if !check.satisfied {
        return Err(Error::HypothesisViolated(format!(
            "initial condition violated: (u0⁻)⁴ = {:.6e} < Ψ2⁺/|λ0| = {:.6e}",
            check.lhs, check.rhs
        )));
    }
    let (u0_minus, _, u0_plus, _) = problem.ratio_extrema(problem.u0.values());
    Ok(Envelope {
        lambda0: problem.lambda0(),
        u0_minus,
        u0_plus,
        psi1_plus: max_weighted(&problem.psi1, problem.e0(), 2),
        psi2_plus: max_weighted(&problem.psi2, problem.e0(), 4),
        excess: if check.equality { 0.0 } else { check.margin },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    /// Largest `max(w− − u/e0, u/e0 − w+, 0)` over all steps.
    pub max_violation: f64,
    /// The same, divided by `w+(t)` at that step.
    pub max_relative_violation: f64,
    pub worst_time: f64,
    pub worst_index: usize,
    pub lower_is_worst: bool,
    pub steps_checked: usize,
}

impl EnvelopeReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_relative_violation <= tol
    }
}

/// Checks every recorded step of `traj` against `env`. The ratios in the
/// diagnostics are taken with the trajectory's own ground state, which must be `e0`.
pub fn verify_envelope(traj: &FlowTrajectory, env: &Envelope, e0: &ScalarField) -> Result<EnvelopeReport> {
    if !e0.same_grid(&traj.snapshots[0]) {
        return Err(Error::GridMismatch);
    }
    let mut report = EnvelopeReport {
        max_violation: 0.0,
        max_relative_violation: 0.0,
        worst_time: 0.0,
        worst_index: 0,
        lower_is_worst: false,
        steps_checked: traj.diagnostics.len(),
    };
    for d in &traj.diagnostics {
        let (lo, hi) = (env.w_minus(d.t), env.w_plus(d.t));
        let below = lo - d.min_ratio;
        let above = d.max_ratio - hi;
        let (v, lower, idx) = if below >= above { (below, true, d.argmin_ratio) } else { (above, false, d.argmax_ratio) };
        let rel = v / hi;
        if v > 0.0 && rel > report.max_relative_violation {
            report.max_relative_violation = rel;
            report.max_violation = v;
            report.worst_time = d.t;
            report.worst_index = idx;
            report.lower_is_worst = lower;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct RescaledLimit {
    /// `v(T) = e^{λ0 T} u(T)`.
    pub limit: ScalarField,
    /// `(v(T), e0)`.
    pub tilde_u00: f64,
    /// Independent estimate from the Duhamel forcing integral.
    pub cross_check: Option<TildeU00>,
    /// `(t, ‖v(t) − ũ0⁰ e0‖∞)`.
    pub residual: Vec<(f64, f64)>,
    /// `(t, ‖∇(v(t) − ũ0⁰ e0)‖∞)`.
    pub gradient_residual: Vec<(f64, f64)>,
    /// Whether the residual fell by at least a factor 100.
    pub decayed_two_decades: bool,
}

impl RescaledLimit {
    /// Rate fit of the residual over `[a T, b T]`.
    pub fn residual_rate(&self, a: f64, b: f64) -> Result<RateFit> {
        let t_end = self.residual.last().map(|p| p.0).unwrap_or(0.0);
        fit_exponential_rate(&self.residual, (a * t_end, b * t_end))
    }

    /// Rate fit between the first times the residual falls `skip` and
    /// `skip + span` decades below its initial value. Skipping avoids the
    /// transient; stopping early keeps the fit above the floor set by the
    /// time discretisation.
    pub fn residual_rate_by_decades(&self, skip: f64, span: f64) -> Result<RateFit> {
        decade_window_fit(&self.residual, skip, span)
    }
}

/// See [`RescaledLimit::residual_rate_by_decades`].
pub fn decade_window_fit(series: &[(f64, f64)], skip: f64, span: f64) -> Result<RateFit> {
    let r0 = series.first().map(|p| p.1).unwrap_or(0.0);
    let first_below = |level: f64| series.iter().find(|p| p.1 <= level).map(|p| p.0);
    let start = first_below(r0 * 10f64.powf(-skip))
        .ok_or_else(|| Error::InvalidSeries(format!("residual never fell {skip} decades")))?;
    let end = first_below(r0 * 10f64.powf(-(skip + span)))
        .ok_or_else(|| Error::InvalidSeries(format!("residual never fell {} decades", skip + span)))?;
    fit_exponential_rate(series, (start, end))
}

pub fn rescaled_limit(traj: &FlowTrajectory, problem: &ScaledProblem) -> Result<RescaledLimit> {
    let spec = problem.spectrum();
    let e0 = spec.ground_state();
    let lambda0 = spec.lambda0();
    let v: Vec<ScalarField> =
        traj.times.iter().zip(&traj.snapshots).map(|(t, u)| u.scale((lambda0 * t).exp())).collect();
    let limit = v.last().expect("non-empty trajectory").clone();
    let tilde = inner_product_l2(&limit, e0)?;
    let profile = e0.scale(tilde);

    let mut residual = Vec::with_capacity(v.len());
    let mut gradient_residual = Vec::with_capacity(v.len());
    for (t, vt) in traj.times.iter().zip(&v) {
        let diff = vt.zip_map(&profile, |a, b| a - b)?;
        residual.push((*t, diff.sup_norm()));
        gradient_residual.push((*t, leaf_gradient(&diff).sup_norm()));
    }
    let r0 = residual[0].1;
    let r_min = residual.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let decayed_two_decades = r0 > 0.0 && r_min <= 0.01 * r0;
    if !decayed_two_decades {
        log::warn!("rescaled residual has not decayed two decades (from {r0:.3e} to {r_min:.3e})");
    }

    let cross_check = if lambda0 < 0.0 && traj.times.len() >= 2 {
        let q0: Result<Vec<(f64, f64)>> = traj
            .times
            .iter()
            .zip(&traj.snapshots)
            .map(|(t, u)| Ok((*t, inner_product_l2(&problem.rescaled_forcing(u, *t)?, e0)?)))
            .collect();
        let u00 = inner_product_l2(problem.u0(), e0)?;
        Some(tilde_u00(u00, &q0?, lambda0)?)
    } else {
        None
    };

    Ok(RescaledLimit { limit, tilde_u00: tilde, cross_check, residual, gradient_residual, decayed_two_decades })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leafgrid::{build_grid, GridSpec};
    use std::f64::consts::PI;

    fn circle(n: usize) -> Arc<LeafGrid> {
        build_grid(&GridSpec::circle(2.0 * PI, n)).unwrap()
    }

    fn constant(g: &Arc<LeafGrid>, c: f64) -> ScalarField {
        ScalarField::constant(g, c).unwrap()
    }

    fn hopf(m: usize, g: &Arc<LeafGrid>) -> FoliationScenario {
        let k = 2.0 * m as f64;
        FoliationScenario::new(2 * m, k, constant(g, 0.0), constant(g, k), constant(g, 0.0), constant(g, 1.0)).unwrap()
    }

    #[test]
    fn hopf_scaling() {
        let g = circle(32);
        let p = ScaledProblem::from_scenario(&hopf(1, &g)).unwrap();
        assert!(p.beta().values().iter().all(|&b| b == 1.0));
        assert!(p.psi2().values().iter().all(|&b| b == 1.0));
        assert!(p.psi1().values().iter().all(|&b| b == 0.0));
        assert!((p.lambda0() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hopf_condition_is_equality() {
        let g = circle(64);
        let p = ScaledProblem::from_scenario(&hopf(1, &g)).unwrap();
        let c = check_initial_condition(&p).unwrap();
        assert!(c.satisfied && c.equality);
        assert!((c.lhs - (2.0 * PI).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn condition_needs_negative_lambda0() {
        let g = circle(16);
        let z = constant(&g, 0.0);
        let p = ScaledProblem::from_parts(1, z.clone(), z.clone(), z, constant(&g, 1.0)).unwrap();
        assert!(matches!(check_initial_condition(&p), Err(Error::HypothesisViolated(_))));
    }

    #[test]
    fn hopf_step_is_exact() {
        let g = circle(64);
        let p = ScaledProblem::from_scenario(&hopf(2, &g)).unwrap();
        for scheme in [TimeScheme::ImexEuler, TimeScheme::ImexTrapezoid] {
            let u = p.step(p.u0(), 1e-3, scheme).unwrap();
            assert!(u.values().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn eigenmode_step_matches_scalar_oracle() {
        let g = circle(32);
        let h = g.hx();
        let b = 0.4;
        let z = constant(&g, 0.0);
        let p = ScaledProblem::from_parts(1, constant(&g, b), z.clone(), z, constant(&g, 1.0)).unwrap();
        let k = 3.0;
        let mode = g.sample(|x, _| 2.0 + (k * x).cos()).unwrap();
        let dt = 0.01;
        let u = p.step(&mode, dt, TimeScheme::ImexEuler).unwrap();
        let mu = 4.0 / (h * h) * (k * h / 2.0).sin().powi(2);
        let expected = g
            .sample(|x, _| 2.0 * (1.0 + dt * b) + (1.0 + dt * b) / (1.0 + dt * mu) * (k * x).cos())
            .unwrap();
        assert!(u.sup_distance(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn ground_state_step() {
        // β constant: e0 is constant and one step multiplies it by 1 − dt λ0.
        let g = circle(32);
        let z = constant(&g, 0.0);
        let p = ScaledProblem::from_parts(1, constant(&g, 0.7), z.clone(), z, constant(&g, 1.0)).unwrap();
        let e0 = p.e0().clone();
        let dt = 0.05;
        let u = p.step(&e0, dt, TimeScheme::ImexEuler).unwrap();
        assert!(u.sup_distance(&e0.scale(1.0 - dt * p.lambda0())).unwrap() < 1e-12);
    }

    #[test]
    fn constant_data_matches_ode() {
        let g = circle(16);
        let (b, p1, p2) = (0.5, 0.3, 0.2);
        let p = ScaledProblem::from_parts(
            1,
            constant(&g, b),
            constant(&g, p1),
            constant(&g, p2),
            constant(&g, 1.2),
        )
        .unwrap();
        let rhs = |u: f64| b * u + p1 / u - p2 / (u * u * u);
        // RK4 with a much finer step as the reference.
        let reference = |u0: f64, t: f64| {
            let n = 20_000;
            let h = t / n as f64;
            let mut u = u0;
            for _ in 0..n {
                let k1 = rhs(u);
                let k2 = rhs(u + 0.5 * h * k1);
                let k3 = rhs(u + 0.5 * h * k2);
                let k4 = rhs(u + h * k3);
                u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            u
        };
        for dt in [1e-2, 5e-3] {
            let u = p.step(p.u0(), dt, TimeScheme::ImexEuler).unwrap();
            let err = (u.values()[0] - reference(1.2, dt)).abs();
            assert!(err < dt * dt, "dt = {dt}: local error {err}");
            assert!(u.values().iter().all(|&v| v == u.values()[0]));
        }
    }

    #[test]
    fn positivity_loss_halves_then_blows_down() {
        let g = circle(16);
        let z = constant(&g, 0.0);
        // u' = −Ψ2 u⁻³ reaches zero in finite time.
        let p = ScaledProblem::from_parts(1, z.clone(), z, constant(&g, 1.0), constant(&g, 0.5)).unwrap();
        let u = p.step(p.u0(), 0.01, TimeScheme::ImexEuler).unwrap();
        assert!(u.min() > 0.0);
        let err = p.step(p.u0(), 1.0, TimeScheme::ImexEuler).unwrap_err();
        assert!(matches!(err, Error::BlowDown { .. }));
    }

    #[test]
    fn linear_constant_growth() {
        let g = circle(16);
        let z = constant(&g, 0.0);
        let b = 0.3;
        let p = ScaledProblem::from_parts(1, constant(&g, b), z.clone(), z, constant(&g, 2.0)).unwrap();
        let dt = 1e-3;
        let traj = evolve(&p, &EvolveOptions::new(1.0, dt).save_every(100)).unwrap();
        let exact = 2.0 * (b * 1.0f64).exp();
        let got = traj.final_state().values()[0];
        assert!((got - exact).abs() < 2.0 * exact * b * b * dt);
        assert_eq!(traj.times.len(), 11);
        assert!(traj.hypotheses_met());
    }

    #[test]
    fn evolve_refuses_violated_condition() {
        let g = circle(16);
        let p = ScaledProblem::from_parts(
            1,
            constant(&g, 1.0),
            constant(&g, 0.0),
            constant(&g, 5.0),
            constant(&g, 0.5),
        )
        .unwrap();
        assert!(!check_initial_condition(&p).unwrap().satisfied);
        assert!(matches!(evolve(&p, &EvolveOptions::new(0.1, 1e-3)), Err(Error::HypothesisViolated(_))));
        assert!(envelope(&p).is_err());
    }

    #[test]
    fn envelope_initial_values_and_linear_case() {
        let g = circle(32);
        let beta = g.sample(|x, _| 1.0 + 0.3 * x.cos()).unwrap();
        let u0 = g.sample(|x, _| 1.0 + 0.2 * x.sin()).unwrap();
        let z = constant(&g, 0.0);
        let p = ScaledProblem::from_parts(1, beta, z.clone(), z, u0).unwrap();
        let env = envelope(&p).unwrap();
        assert_eq!(env.w_minus(0.0), env.u0_minus);
        assert!((env.w_plus(0.0) - env.u0_plus).abs() < 1e-15);
        let t = 1.7;
        let growth = (-p.lambda0() * t).exp();
        assert!((env.w_minus(t) - env.u0_minus * growth).abs() < 1e-12 * growth);
        assert!((env.w_plus(t) - env.u0_plus * growth).abs() < 1e-12 * growth);
    }

    #[test]
    fn hopf_envelope_lower_curve_is_constant() {
        let g = circle(64);
        let p = ScaledProblem::from_scenario(&hopf(1, &g)).unwrap();
        let env = envelope(&p).unwrap();
        let root_l = (2.0 * PI).sqrt();
        for t in [0.0, 1.0, 5.0, 10.0] {
            assert!((env.w_minus(t) - root_l).abs() < 1e-9 * root_l);
            assert!(env.w_plus(t) >= root_l);
        }
    }

    #[test]
    fn step_plan_shortens_last_step() {
        let plan = step_plan(1.0, 0.3).unwrap();
        assert_eq!(plan.len(), 4);
        assert_eq!(*plan.last().unwrap(), 1.0);
        assert_eq!(step_plan(1.0, 1e-3).unwrap().len(), 1000);
    }
}
