//! Build grid → eigensolve → scale → check hypotheses → evolve → post-process.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use leafflow::curvatureflow::{
    accumulate_conformal_factor, burgers_residual, burgers_space_residual, check_phi_condition, conservation_report,
    curvature_asymptote, d_ratio, leaf_lambda0, limit_metric_curvature, mean_curvature_potential,
    rescaled_metric_curvature, PhiCondition, Sign,
};
use leafflow::fit::{fit_exponential_rate, RateFit};
use leafflow::heatflow::{
    decade_window_fit, envelope, evolve, rescaled_limit, verify_envelope, EnvelopeReport, EvolveOptions,
    FoliationScenario, HypothesisStatus, ScaledProblem,
};
use leafflow::leafgrid::{leaf_divergence, leaf_gradient, LeafGrid, ScalarField};
use leafflow::scenarios::{
    gaussian_curvature, hopf_scenario, linear_interpolant, reconstruct_profile, revolution_evolve,
    torus_burgers_scenario, twisted_product_scenario, RevolutionProfile, EMBEDDING_THETA_SAMPLES,
};
use serde::{Deserialize, Serialize};

use crate::config::{ResolvedReports, RunConfig, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "hypotheses-not-met")]
    HypothesesNotMet,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::HypothesesNotMet => "hypotheses-not-met",
        })
    }
}

impl Verdict {
    fn of(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Any failure wins, then unmet hypotheses.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
        verdicts.into_iter().fold(Verdict::Pass, |acc, v| match (acc, v) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::HypothesesNotMet, _) | (_, Verdict::HypothesesNotMet) => Verdict::HypothesesNotMet,
            _ => Verdict::Pass,
        })
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::HypothesesNotMet => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub detail: String,
}

impl Check {
    fn new(name: &str, verdict: Verdict, value: Option<f64>, bound: Option<f64>, detail: impl Into<String>) -> Self {
        Check { name: name.into(), verdict, value, bound, detail: detail.into() }
    }

    fn unmet(name: &str, detail: impl Into<String>) -> Self {
        Check::new(name, Verdict::HypothesesNotMet, None, None, detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Grid,
    Scenario,
    Eigensolve,
    Scale,
    Evolve,
    Postprocess,
    Emit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

fn at<E: fmt::Display>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError { stage, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub override_hypotheses: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub lambda0: f64,
    pub lambda1: f64,
    pub gap: f64,
    /// Least eigenvalue of `−Δ − β_D`.
    pub leaf_lambda0: f64,
    pub d_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialCondition {
    /// `satisfied`, `violated` or `not_applicable`.
    pub status: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub margin: Option<f64>,
    pub equality: bool,
    pub reason: Option<String>,
}

impl From<&HypothesisStatus> for InitialCondition {
    fn from(h: &HypothesisStatus) -> Self {
        let with = |status: &str, c: &leafflow::heatflow::ConditionCheck| InitialCondition {
            status: status.into(),
            lhs: Some(c.lhs),
            rhs: Some(c.rhs),
            margin: Some(c.margin),
            equality: c.equality,
            reason: None,
        };
        match h {
            HypothesisStatus::Satisfied(c) => with("satisfied", c),
            HypothesisStatus::Violated(c) => with("violated", c),
            HypothesisStatus::NotApplicable(r) => InitialCondition {
                status: "not_applicable".into(),
                lhs: None,
                rhs: None,
                margin: None,
                equality: false,
                reason: Some(r.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypotheses {
    pub linear: bool,
    pub initial_condition: InitialCondition,
    pub phi_condition: Option<PhiCondition>,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaritySection {
    pub max_u_deviation: f64,
    pub max_sc_mix_deviation: f64,
    pub sc_mix_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeSection {
    #[serde(flatten)]
    pub report: EnvelopeReport,
    pub v_minus: f64,
    pub v_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationSection {
    pub max_ratio_drift: Option<f64>,
    pub max_u_drift: f64,
    /// `max_u_drift / max(1, max |u|)`.
    pub max_u_drift_relative: f64,
    pub max_t2_drift: f64,
    pub max_hf2_drift: f64,
    pub max_path_mismatch: f64,
    pub u_points: usize,
    pub quadrature_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BurgersSection {
    pub max_residual: f64,
    /// `max ‖n ∇ Div H‖∞` over the same snapshots.
    pub scale: f64,
    pub relative: f64,
    /// Spatial part at the final snapshot.
    pub final_space_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSection {
    pub fitted: f64,
    pub bound: f64,
    pub gap: f64,
    pub two_abs_lambda0: f64,
    pub window: (f64, f64),
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSection {
    pub tilde_u00: f64,
    pub tilde_u00_duhamel: Option<f64>,
    pub residual_decayed_two_decades: bool,
    pub sc_limit_min: f64,
    pub sc_limit_max: f64,
    pub sign: Sign,
    pub negativity_hypothesis: bool,
    /// `‖Sc_mix(ḡ_T) − Sc_mix limit‖∞` at the final time.
    pub late_mismatch: f64,
    /// `n λ0^F`.
    pub asymptote: f64,
    /// `n λ0^F − Φ`.
    pub asymptote_minus_phi: f64,
    pub final_sc_mix_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RevolutionSection {
    pub distance_to_linear: f64,
    pub max_abs_curvature: f64,
    pub max_slope: f64,
    pub slope_bound_held: bool,
    pub invalid_from: Option<f64>,
    pub arc_length_identity_error: Option<f64>,
    pub fitted_rate: Option<f64>,
    pub expected_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub config: RunConfig,
    /// TOML that reproduces this run.
    pub config_toml: String,
    pub reports: ResolvedReports,
    pub spectral: Option<SpectralSummary>,
    pub hypotheses: Option<Hypotheses>,
    pub stationarity: Option<StationaritySection>,
    pub envelope: Option<EnvelopeSection>,
    pub conservation: Option<ConservationSection>,
    pub burgers: Option<BurgersSection>,
    pub rate: Option<RateSection>,
    pub limit: Option<LimitSection>,
    pub revolution: Option<RevolutionSection>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub t: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub w_minus: Option<f64>,
    pub w_plus: Option<f64>,
    pub residual: Option<f64>,
    pub sc_mix_mean: Option<f64>,
    /// The fitted exponential evaluated at `t`.
    pub rate_fit: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowData {
    pub grid: Arc<LeafGrid>,
    pub times: Vec<f64>,
    pub u: Vec<ScalarField>,
    pub v: Vec<ScalarField>,
    pub sc_mix: Vec<ScalarField>,
    pub phi: Vec<ScalarField>,
    pub summary: Vec<SummaryRow>,
    pub rate_fit: Option<RateFit>,
    pub asymptote: f64,
    pub asymptote_minus_phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevolutionRow {
    pub t: f64,
    pub max_slope: f64,
    pub distance_to_linear: f64,
    pub max_abs_curvature: f64,
}

#[derive(Debug, Clone)]
pub struct RevolutionData {
    pub grid: Arc<LeafGrid>,
    pub times: Vec<f64>,
    pub profiles: Vec<ScalarField>,
    pub curvature: Vec<ScalarField>,
    pub linear: ScalarField,
    pub summary: Vec<RevolutionRow>,
    pub mesh: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone)]
pub enum RunData {
    /// Nothing was integrated.
    None,
    Flow(Box<FlowData>),
    Revolution(Box<RevolutionData>),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub data: RunData,
}

impl RunOutcome {
    /// The field compared across sweep values: `v(T)` for flows, `ρ(T)` for profiles.
    pub fn limit_field(&self) -> Option<&ScalarField> {
        match &self.data {
            RunData::Flow(f) => f.v.last(),
            RunData::Revolution(r) => r.profiles.last(),
            RunData::None => None,
        }
    }
}

struct Timer {
    start: Instant,
    timings: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Timer { start: Instant::now(), timings: BTreeMap::new() }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.insert(stage.to_string(), (now - self.start).as_secs_f64());
        self.start = now;
    }
}

fn blank_report(config: &RunConfig) -> RunReport {
    RunReport {
        scenario: config.scenario.name().to_string(),
        config: config.clone(),
        config_toml: toml::to_string(config).unwrap_or_default(),
        reports: config.reports(),
        spectral: None,
        hypotheses: None,
        stationarity: None,
        envelope: None,
        conservation: None,
        burgers: None,
        rate: None,
        limit: None,
        revolution: None,
        checks: vec![],
        verdict: Verdict::Pass,
        timings: BTreeMap::new(),
    }
}

pub fn run(config: &RunConfig, opts: RunOptions) -> Result<RunOutcome, PipelineError> {
    let mut timer = Timer::new();
    let grid = config.build_grid().map_err(at(Stage::Grid))?;
    timer.lap("grid");
    let mut out = match &config.scenario {
        ScenarioConfig::Revolution { rho0, phi } => run_revolution(config, &grid, rho0, *phi, &mut timer)?,
        _ => run_flow(config, &grid, opts, &mut timer)?,
    };
    out.report.timings = timer.timings;
    out.report.verdict = Verdict::combine(out.report.checks.iter().map(|c| c.verdict));
    Ok(out)
}

fn build_scenario(config: &RunConfig, grid: &Arc<LeafGrid>) -> Result<FoliationScenario, PipelineError> {
    let field = |key: &str, text: &str| config.field(key, text, grid).map_err(at(Stage::Scenario));
    let s = match &config.scenario {
        ScenarioConfig::Hopf { m } => hopf_scenario(*m, grid),
        ScenarioConfig::TorusBurgers { psi0 } => {
            torus_burgers_scenario(&field("scenario.psi0", psi0)?).map(|t| t.scenario)
        }
        ScenarioConfig::TwistedProduct { f0, n, phi } => {
            twisted_product_scenario(&field("scenario.f0", f0)?, *n, *phi).map(|t| t.scenario)
        }
        ScenarioConfig::Custom { n, phi, beta_d, t2, hf2, u0 } => FoliationScenario::new(
            *n,
            *phi,
            field("scenario.beta_d", beta_d)?,
            field("scenario.t2", t2)?,
            field("scenario.hf2", hf2)?,
            field("scenario.u0", u0)?,
        ),
        ScenarioConfig::Revolution { .. } => unreachable!("handled by run_revolution"),
    };
    s.map_err(at(Stage::Scenario))
}

fn run_flow(
    config: &RunConfig,
    grid: &Arc<LeafGrid>,
    opts: RunOptions,
    timer: &mut Timer,
) -> Result<RunOutcome, PipelineError> {
    let reports = config.reports();
    let tol = &config.tolerances;
    let mut report = blank_report(config);

    let scenario = build_scenario(config, grid)?;
    // The scaled operator differs from −Δ − β_D by the constant Φ/n, so
    // one dense solve of the scaled potential is enough.
    let problem = ScaledProblem::from_scenario(&scenario).map_err(at(Stage::Eigensolve))?;
    timer.lap("eigensolve");

    let lambda0 = problem.lambda0();
    let linear = problem.is_linear();
    let status = HypothesisStatus::of(&problem);
    let phi_condition = check_phi_condition(&problem, &scenario).ok();
    report.spectral = Some(SpectralSummary {
        lambda0,
        lambda1: problem.lambda1(),
        gap: problem.gap(),
        leaf_lambda0: leaf_lambda0(&problem, &scenario),
        d_ratio: d_ratio(&scenario.u0, problem.e0()).map_err(at(Stage::Scale))?,
    });
    report.hypotheses = Some(Hypotheses {
        linear,
        initial_condition: InitialCondition::from(&status),
        phi_condition,
        overridden: opts.override_hypotheses,
    });
    timer.lap("scale");

    let met = status.is_met();
    if !linear {
        report.checks.push(if met {
            Check::new("initial_condition", Verdict::Pass, None, None, "")
        } else {
            Check::unmet("initial_condition", describe(&status))
        });
    }
    let theorems_apply = linear || met;
    if !theorems_apply && !opts.override_hypotheses {
        for (on, name) in enabled_names(config) {
            if on {
                report.checks.push(Check::unmet(name, "not run: initial condition unmet"));
            }
        }
        return Ok(RunOutcome { report, data: RunData::None });
    }

    let t = &config.time;
    let evolve_opts = EvolveOptions::new(t.t_end, t.dt)
        .save_every(t.post_every)
        .scheme(t.scheme)
        .override_hypotheses(opts.override_hypotheses);
    let traj = evolve(&problem, &evolve_opts).map_err(at(Stage::Evolve))?;
    timer.lap("evolve");

    let post = at(Stage::Postprocess);
    let cf = accumulate_conformal_factor(&traj, &scenario).map_err(post)?;
    let e0 = problem.e0();
    let n = scenario.n as f64;
    let asymptote = curvature_asymptote(&problem, &scenario);
    let asymptote_minus_phi = asymptote - scenario.phi;

    if let ScenarioConfig::Hopf { m } = config.scenario {
        let target = 2.0 * m as f64;
        let max_u_deviation = traj
            .diagnostics
            .iter()
            .map(|d| (d.min_u - 1.0).abs().max((d.max_u - 1.0).abs()))
            .fold(0.0, f64::max);
        let max_sc_mix_deviation = cf
            .sc_mix
            .iter()
            .flat_map(|s| s.values().iter().map(|v| (v - target).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        let ok = max_u_deviation <= tol.stationarity && max_sc_mix_deviation <= tol.stationarity_curvature;
        report.checks.push(Check::new(
            "stationarity",
            Verdict::of(ok),
            Some(max_u_deviation),
            Some(tol.stationarity),
            format!("max |Sc_mix − {target}| = {max_sc_mix_deviation:.3e}"),
        ));
        report.stationarity = Some(StationaritySection { max_u_deviation, max_sc_mix_deviation, sc_mix_target: target });
    }

    let env = if met { envelope(&problem).ok() } else { None };
    if reports.envelope {
        match &env {
            Some(env) => {
                let r = verify_envelope(&traj, env, e0).map_err(at(Stage::Postprocess))?;
                report.checks.push(Check::new(
                    "envelope",
                    Verdict::of(r.within(tol.envelope)),
                    Some(r.max_relative_violation),
                    Some(tol.envelope),
                    format!("{} steps checked", r.steps_checked),
                ));
                report.envelope = Some(EnvelopeSection { report: r, v_minus: env.v_minus(), v_plus: env.v_plus() });
            }
            None => report.checks.push(Check::unmet("envelope", describe(&status))),
        }
    }

    if reports.conservation {
        let r = conservation_report(&traj, &scenario).map_err(at(Stage::Postprocess))?;
        let scale = traj.snapshots.iter().map(|u| u.sup_norm()).fold(1.0, f64::max);
        let rel = r.max_u_drift / scale;
        let ratio_ok = r.max_ratio_drift.is_none_or(|d| d <= tol.conservation);
        report.checks.push(Check::new(
            "conservation",
            Verdict::of(ratio_ok && rel <= tol.conservation),
            Some(rel.max(r.max_ratio_drift.unwrap_or(0.0))),
            Some(tol.conservation),
            match r.max_ratio_drift {
                Some(d) => format!("ratio drift {d:.3e}, relative u drift {rel:.3e}"),
                None => format!("relative u drift {rel:.3e}"),
            },
        ));
        report.conservation = Some(ConservationSection {
            max_ratio_drift: r.max_ratio_drift,
            max_u_drift: r.max_u_drift,
            max_u_drift_relative: rel,
            max_t2_drift: r.max_t2_drift,
            max_hf2_drift: r.max_hf2_drift,
            max_path_mismatch: r.max_path_mismatch,
            u_points: r.u_points,
            quadrature_error: r.quadrature_error,
        });
    }

    if reports.burgers {
        if traj.snapshots.len() < 3 {
            report.checks.push(Check::new("burgers", Verdict::Fail, None, None, "fewer than three snapshots"));
        } else {
            let r = burgers_residual(&traj, &scenario).map_err(at(Stage::Postprocess))?;
            let mut scale: f64 = 0.0;
            for u in &traj.snapshots[1..traj.snapshots.len() - 1] {
                let h = mean_curvature_potential(u, scenario.n).map_err(at(Stage::Postprocess))?;
                scale = scale.max(leaf_gradient(&leaf_divergence(&h)).sup_norm() * n);
            }
            let relative = if scale > 0.0 { r.max / scale } else { r.max };
            let space = burgers_space_residual(traj.final_state(), &scenario)
                .map_err(at(Stage::Postprocess))?
                .sup_norm();
            report.checks.push(Check::new(
                "burgers",
                Verdict::of(relative <= tol.burgers),
                Some(relative),
                Some(tol.burgers),
                format!("max residual {:.3e}", r.max),
            ));
            report.burgers = Some(BurgersSection { max_residual: r.max, scale, relative, final_space_residual: space });
        }
    }

    let wants_limit = reports.rate || reports.limit_curvature;
    let limit = if wants_limit { Some(rescaled_limit(&traj, &problem).map_err(at(Stage::Postprocess))?) } else { None };
    let mut rate_fit = None;
    if reports.rate {
        let lim = limit.as_ref().expect("computed above");
        let gap = problem.gap();
        let two = 2.0 * lambda0.abs();
        let bound = if linear { gap } else { gap.min(two) };
        match decade_window_fit(&lim.residual, 1.0, 2.0) {
            Ok(fit) => {
                let ok = fit.rate >= tol.rate_lower * bound && fit.rate <= tol.rate_upper * bound;
                let verdict = if theorems_apply { Verdict::of(ok) } else { Verdict::HypothesesNotMet };
                report.checks.push(Check::new(
                    "rate",
                    verdict,
                    Some(fit.rate),
                    Some(bound),
                    format!("{} points", fit.points),
                ));
                report.rate = Some(RateSection {
                    fitted: fit.rate,
                    bound,
                    gap,
                    two_abs_lambda0: two,
                    window: decade_window(&lim.residual, 1.0, 2.0),
                    points: fit.points,
                });
                rate_fit = Some(fit);
            }
            Err(e) => {
                let verdict = if theorems_apply { Verdict::Fail } else { Verdict::HypothesesNotMet };
                report.checks.push(Check::new("rate", verdict, None, Some(bound), e.to_string()));
            }
        }
    }

    if reports.limit_curvature {
        let lim = limit.as_ref().expect("computed above");
        let final_mean = cf.sc_mix.last().expect("non-empty").mean();
        let phi_ok = phi_condition.is_some_and(|p| p.satisfied);
        if lambda0 >= 0.0 || !lim.tilde_u00.is_finite() || lim.tilde_u00 <= 0.0 {
            report.checks.push(Check::unmet("limit_curvature", "requires λ0 < 0 and ũ0⁰ > 0"));
        } else {
            let lc = limit_metric_curvature(&problem, &scenario, lim.tilde_u00).map_err(at(Stage::Postprocess))?;
            let late = rescaled_metric_curvature(&lim.limit, &scenario).map_err(at(Stage::Postprocess))?;
            let mismatch = late.sup_distance(&lc.sc_limit).map_err(at(Stage::Postprocess))?;
            let hyp = theorems_apply && phi_ok;
            let verdict = |ok: bool| if hyp { Verdict::of(ok) } else { Verdict::HypothesesNotMet };
            report.checks.push(Check::new(
                "limit_curvature",
                verdict(mismatch <= tol.limit_curvature),
                Some(mismatch),
                Some(tol.limit_curvature),
                format!("sign {:?}", lc.sign),
            ));
            let dist = (final_mean - asymptote).abs();
            report.checks.push(Check::new(
                "curvature_asymptote",
                verdict(dist <= tol.limit_curvature),
                Some(dist),
                Some(tol.limit_curvature),
                format!("mean Sc_mix(T) = {final_mean:.6e}, n λ0^F = {asymptote:.6e}"),
            ));
            report.limit = Some(LimitSection {
                tilde_u00: lim.tilde_u00,
                tilde_u00_duhamel: lim.cross_check.as_ref().map(|c| c.value),
                residual_decayed_two_decades: lim.decayed_two_decades,
                sc_limit_min: lc.sc_limit.min(),
                sc_limit_max: lc.sc_limit.max(),
                sign: lc.sign,
                negativity_hypothesis: lc.negativity_hypothesis,
                late_mismatch: mismatch,
                asymptote,
                asymptote_minus_phi,
                final_sc_mix_mean: final_mean,
            });
        }
    }
    timer.lap("postprocess");

    // Post-processing used every `post_every`-th step; only every
    // `save_every`-th is written.
    let stride = t.save_every / t.post_every;
    let last = traj.times.len() - 1;
    let keep: Vec<usize> = (0..=last).filter(|k| k % stride == 0 || *k == last).collect();
    let residual: Vec<Option<f64>> = match &limit {
        Some(l) => l.residual.iter().map(|r| Some(r.1)).collect(),
        None => vec![None; traj.times.len()],
    };
    let mut summary = Vec::with_capacity(keep.len());
    for &k in &keep {
        let (t, u) = (traj.times[k], &traj.snapshots[k]);
        let ratio = u.zip_map(e0, |a, b| a / b).map_err(at(Stage::Postprocess))?;
        summary.push(SummaryRow {
            t,
            min_u: u.min(),
            max_u: u.max(),
            min_ratio: ratio.min(),
            max_ratio: ratio.max(),
            w_minus: env.as_ref().map(|e| e.w_minus(t)),
            w_plus: env.as_ref().map(|e| e.w_plus(t)),
            residual: residual[k],
            sc_mix_mean: Some(cf.sc_mix[k].mean()),
            rate_fit: rate_fit.as_ref().map(|f| (f.log_prefactor - f.rate * t).exp()),
        });
    }
    let pick = |fields: &[ScalarField]| -> Vec<ScalarField> { keep.iter().map(|&k| fields[k].clone()).collect() };
    let v: Vec<ScalarField> = keep.iter().map(|&k| traj.snapshots[k].scale((lambda0 * traj.times[k]).exp())).collect();

    let data = FlowData {
        grid: grid.clone(),
        times: keep.iter().map(|&k| traj.times[k]).collect(),
        u: pick(&traj.snapshots),
        v,
        sc_mix: pick(&cf.sc_mix),
        phi: pick(&cf.phi),
        summary,
        rate_fit,
        asymptote,
        asymptote_minus_phi,
    };
    Ok(RunOutcome { report, data: RunData::Flow(Box::new(data)) })
}

/// The times bounding a [`decade_window_fit`].
fn decade_window(series: &[(f64, f64)], skip: f64, span: f64) -> (f64, f64) {
    let r0 = series.first().map(|p| p.1).unwrap_or(0.0);
    let first_below = |d: f64| series.iter().find(|p| p.1 <= r0 * 10f64.powf(-d)).map(|p| p.0).unwrap_or(f64::NAN);
    (first_below(skip), first_below(skip + span))
}

fn describe(status: &HypothesisStatus) -> String {
    match status {
        HypothesisStatus::Satisfied(_) => "satisfied".into(),
        HypothesisStatus::Violated(c) => {
            format!("(u0⁻)⁴ = {:.6e} < Ψ2⁺/|λ0| = {:.6e}", c.lhs, c.rhs)
        }
        HypothesisStatus::NotApplicable(r) => r.clone(),
    }
}

fn enabled_names(config: &RunConfig) -> Vec<(bool, &'static str)> {
    let r = config.reports();
    vec![
        (r.envelope, "envelope"),
        (r.conservation, "conservation"),
        (r.burgers, "burgers"),
        (r.rate, "rate"),
        (r.limit_curvature, "limit_curvature"),
    ]
}

fn run_revolution(
    config: &RunConfig,
    grid: &Arc<LeafGrid>,
    rho0: &str,
    phi: f64,
    timer: &mut Timer,
) -> Result<RunOutcome, PipelineError> {
    let tol = &config.tolerances;
    let mut report = blank_report(config);
    let rho = config.field("scenario.rho0", rho0, grid).map_err(at(Stage::Scenario))?;
    let profile = RevolutionProfile::new(rho, phi).map_err(at(Stage::Scenario))?;
    let t = &config.time;
    let traj = revolution_evolve(&profile, t.t_end, t.dt, t.save_every).map_err(at(Stage::Evolve))?;
    timer.lap("evolve");

    let post = |e: leafflow::Error| PipelineError { stage: Stage::Postprocess, message: e.to_string() };
    let linear = linear_interpolant(grid).map_err(post)?;
    let curvature: Vec<ScalarField> =
        traj.profiles.iter().map(gaussian_curvature).collect::<Result<_, _>>().map_err(post)?;
    let mut summary = Vec::with_capacity(traj.times.len());
    for (k, (t, r)) in traj.times.iter().zip(&traj.profiles).enumerate() {
        summary.push(RevolutionRow {
            t: *t,
            max_slope: leafflow::scenarios::max_slope(r),
            distance_to_linear: r.sup_distance(&linear).map_err(post)?,
            max_abs_curvature: curvature[k].sup_norm(),
        });
    }
    let last = summary.last().copied().expect("starts at t = 0");
    let max_slope = traj.slopes.iter().map(|s| s.1).fold(0.0, f64::max);
    let l = grid.volume();
    let expected_rate = (std::f64::consts::PI / l).powi(2) + phi;
    let series: Vec<(f64, f64)> = summary.iter().map(|r| (r.t, r.distance_to_linear)).collect();
    let fitted_rate = decade_window_fit(&series, 1.0, 2.0).or_else(|_| fit_exponential_rate(&series, (0.0, t.t_end))).ok().map(|f| f.rate);

    let (mesh, arc) = if traj.slope_bound_held() {
        let curve = reconstruct_profile(traj.final_profile(), 0.0).map_err(post)?;
        let err = (curve.chord_squared() - l * l).abs();
        (Some(curve.embedding(EMBEDDING_THETA_SAMPLES)), Some(err))
    } else {
        (None, None)
    };

    let theory = phi == 0.0;
    let gate = |ok: bool| if theory { Verdict::of(ok) } else { Verdict::HypothesesNotMet };
    report.checks.push(Check::new(
        "revolution_limit",
        gate(last.distance_to_linear <= tol.revolution),
        Some(last.distance_to_linear),
        Some(tol.revolution),
        "sup distance to the linear interpolant at t_end",
    ));
    report.checks.push(Check::new(
        "revolution_curvature",
        gate(last.max_abs_curvature <= tol.revolution),
        Some(last.max_abs_curvature),
        Some(tol.revolution),
        "‖K‖∞ at t_end",
    ));
    report.checks.push(Check::new(
        "slope_bound",
        gate(traj.slope_bound_held()),
        Some(max_slope),
        Some(1.0),
        match traj.invalid_from {
            Some(t) => format!("|ρx| ≥ 1 from t = {t}"),
            None => "|ρx| < 1 at every step".into(),
        },
    ));
    report.checks.push(match arc {
        Some(e) => Check::new("arc_length", Verdict::of(e <= tol.arc_length), Some(e), Some(tol.arc_length), ""),
        None => Check::unmet("arc_length", "profile cannot be embedded"),
    });
    report.revolution = Some(RevolutionSection {
        distance_to_linear: last.distance_to_linear,
        max_abs_curvature: last.max_abs_curvature,
        max_slope,
        slope_bound_held: traj.slope_bound_held(),
        invalid_from: traj.invalid_from,
        arc_length_identity_error: arc,
        fitted_rate,
        expected_rate,
    });
    timer.lap("postprocess");

    let data = RevolutionData {
        grid: grid.clone(),
        times: traj.times.clone(),
        profiles: traj.profiles.clone(),
        curvature,
        linear,
        summary,
        mesh,
    };
    Ok(RunOutcome { report, data: RunData::Revolution(Box::new(data)) })
}
