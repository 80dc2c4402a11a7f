use std::f64::consts::PI;
use std::sync::Arc;

use leafflow::curvatureflow::{
    accumulate_conformal_factor, burgers_residual, burgers_space_residual, check_phi_condition,
    conservation_report, curvature_asymptote, d_ratio, geometric_states, limit_metric_curvature,
    mixed_scalar_curvature, mixed_scalar_curvature_from_h, rescaled_metric_curvature,
};
use leafflow::fit::fit_exponential_rate;
use leafflow::heatflow::{
    evolve, rescaled_limit, EvolveOptions, FlowTrajectory, FoliationScenario, ScaledProblem, TimeScheme,
};
use leafflow::leafgrid::{build_grid, GridSpec, LeafGrid, ScalarField};
use leafflow::scenarios::{hopf_scenario, torus_burgers_scenario};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn circle(n: usize) -> Arc<LeafGrid> {
    build_grid(&GridSpec::circle(2.0 * PI, n)).unwrap()
}

fn smooth(g: &Arc<LeafGrid>, rng: &mut ChaCha8Rng, base: f64, amp: f64) -> ScalarField {
    let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm: f64 = a.iter().map(|v| v.abs()).sum();
    g.sample(|x, _| {
        let s = a[0] * x.cos() + a[1] * x.sin() + a[2] * (2.0 * x).cos() + a[3] * (2.0 * x).sin();
        base + amp * s / norm
    })
    .unwrap()
}

/// Nonlinear scenario with `T2, hF2 > 0`, scaled so that
/// `d⁻⁴ max T2 = fill · (−n λ0)`.
fn curved_scenario(seed: u64, n_points: usize, fill: f64) -> FoliationScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = circle(n_points);
    let n = rng.gen_range(1..=3);
    let phi = rng.gen_range(0.5..2.0) * n as f64;
    let beta_d = smooth(&g, &mut rng, 0.3, 0.25);
    let hf2 = smooth(&g, &mut rng, 0.4, 0.3);
    let t2 = smooth(&g, &mut rng, 0.5, 0.4);
    let u0 = smooth(&g, &mut rng, 1.0, 0.3);
    let trial = FoliationScenario::new(n, phi, beta_d.clone(), t2.clone(), hf2.clone(), u0.clone()).unwrap();
    let p = ScaledProblem::from_scenario(&trial).unwrap();
    let d = d_ratio(&u0, p.e0()).unwrap();
    let target = fill * (-(n as f64) * p.lambda0()) * d.powi(4);
    let t2 = t2.scale(target / t2.max());
    FoliationScenario::new(n, phi, beta_d, t2, hf2, u0).unwrap()
}

/// Like [`curved_scenario`] but with `Φ` chosen so that `λ0 = lambda0`,
/// keeping the growth of `u` mild over long windows.
fn gentle_scenario(seed: u64, n_points: usize, lambda0: f64) -> FoliationScenario {
    let s = curved_scenario(seed, n_points, 0.5);
    let leaf = s.leaf_spectrum().unwrap().lambda0();
    let phi = s.n as f64 * (leaf - lambda0);
    let trial = FoliationScenario::new(s.n, phi, s.beta_d.clone(), s.t2_0.clone(), s.hf2_0.clone(), s.u0.clone()).unwrap();
    let p = ScaledProblem::from_scenario(&trial).unwrap();
    let d = d_ratio(&s.u0, p.e0()).unwrap();
    let t2 = s.t2_0.scale(0.5 * (-(s.n as f64) * lambda0) * d.powi(4) / s.t2_0.max());
    FoliationScenario::new(s.n, phi, s.beta_d, t2, s.hf2_0, s.u0).unwrap()
}

fn run(s: &FoliationScenario, t_end: f64, dt: f64, save_every: usize, scheme: TimeScheme) -> FlowTrajectory {
    let p = ScaledProblem::from_scenario(s).unwrap();
    evolve(&p, &EvolveOptions::new(t_end, dt).save_every(save_every).scheme(scheme)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn both_curvature_paths_agree(seed in 0u64..10_000, n in 1usize..5, points in 8usize..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = circle(points);
        let s = FoliationScenario::new(
            n,
            rng.gen_range(0.0..3.0),
            smooth(&g, &mut rng, 0.5, 0.45),
            smooth(&g, &mut rng, 0.6, 0.5),
            smooth(&g, &mut rng, 0.6, 0.5),
            smooth(&g, &mut rng, 1.0, 0.4),
        )
        .unwrap();
        let amp = rng.gen_range(0.0..0.8);
        let u = smooth(&g, &mut rng, 1.0, amp);
        let a = mixed_scalar_curvature(&u, &s).unwrap();
        let b = mixed_scalar_curvature_from_h(&u, &s).unwrap();
        prop_assert!(a.sup_distance(&b).unwrap() <= 1e-10);
    }
}

#[test]
fn torus_leaf_paths_agree() {
    let g = build_grid(&GridSpec::torus(2.0 * PI, 2.0 * PI, 16, 12)).unwrap();
    let z = ScalarField::zeros(&g);
    let u0 = g.sample(|x, y| 1.0 + 0.3 * x.cos() * y.sin()).unwrap();
    let beta_d = g.sample(|x, y| 0.3 + 0.2 * (x + y).sin()).unwrap();
    let s = FoliationScenario::new(2, 1.0, beta_d, z.clone(), z, u0.clone()).unwrap();
    let a = mixed_scalar_curvature(&u0, &s).unwrap();
    let b = mixed_scalar_curvature_from_h(&u0, &s).unwrap();
    assert!(a.sup_distance(&b).unwrap() <= 1e-10);
}

#[test]
fn hopf_has_flat_conformal_factor_and_no_burgers_residual() {
    let g = circle(64);
    let s = hopf_scenario(1, &g).unwrap();
    let traj = run(&s, 1.0, 1e-3, 50, TimeScheme::ImexEuler);
    let cf = accumulate_conformal_factor(&traj, &s).unwrap();
    assert!(cf.phi.iter().all(|p| p.sup_norm() == 0.0));
    assert!(burgers_residual(&traj, &s).unwrap().max <= 1e-12);
    let rep = conservation_report(&traj, &s).unwrap();
    assert_eq!(rep.u_points, 0);
    assert!(rep.max_ratio_drift.is_none());
    assert!(rep.max_u_drift <= 1e-10);
}

#[test]
fn eigenmode_conformal_factor_is_linear_in_time() {
    // u0 = e0 gives Sc_mix = n λ0 + Φ for all time, so φ = −λ0 t.
    let g = circle(64);
    let beta_d = g.sample(|x, _| 0.4 + 0.3 * x.cos()).unwrap();
    let z = ScalarField::zeros(&g);
    let one = ScalarField::constant(&g, 1.0).unwrap();
    let trial = FoliationScenario::new(2, 1.0, beta_d.clone(), z.clone(), z.clone(), one).unwrap();
    let e0 = ScaledProblem::from_scenario(&trial).unwrap().e0().clone();
    let s = FoliationScenario::new(2, 1.0, beta_d, z.clone(), z, e0).unwrap();
    let p = ScaledProblem::from_scenario(&s).unwrap();
    let traj = run(&s, 1.0, 1e-4, 1000, TimeScheme::ImexTrapezoid);
    let cf = accumulate_conformal_factor(&traj, &s).unwrap();
    for (t, phi) in traj.times.iter().zip(&cf.phi) {
        for v in phi.values() {
            assert!((v + p.lambda0() * t).abs() < 1e-6, "t = {t}: {v} vs {}", -p.lambda0() * t);
        }
    }
}

#[test]
fn consistency_triangle_and_ratio_law() {
    for seed in 0..3 {
        let s = gentle_scenario(seed, 64, -0.2);
        let traj = run(&s, 10.0, 5e-4, 1, TimeScheme::ImexTrapezoid);
        let rep = conservation_report(&traj, &s).unwrap();
        assert_eq!(rep.u_points, 64);
        assert!(rep.max_ratio_drift.unwrap() <= 1e-6, "seed {seed}: {:?}", rep.max_ratio_drift);
        assert!(rep.max_u_drift <= 1e-6, "seed {seed}: {:e}", rep.max_u_drift);
        assert!(rep.max_t2_drift <= 1e-12);
        assert!(rep.max_hf2_drift <= 1e-12);
        assert!(rep.max_path_mismatch <= 1e-10);
    }
}

#[test]
fn extrinsic_norms_decay_on_long_runs() {
    let s = curved_scenario(4, 64, 0.5);
    let traj = run(&s, 15.0, 2e-3, 500, TimeScheme::ImexTrapezoid);
    let states = geometric_states(&traj, &s).unwrap();
    let last = states.last().unwrap();
    assert!(last.t2.sup_norm() < 1e-8 * s.t2_0.sup_norm());
    assert!(last.hf2.sup_norm() < 1e-4 * s.hf2_0.sup_norm());
    for w in states.windows(2) {
        assert!(w[1].hf2.max() <= w[0].hf2.max() * (1.0 + 1e-12) || w[0].t < 0.5);
    }
}

/// `R(dt) − R_space` at flow time `tau`, sup over edges.
fn burgers_time_part(s: &FoliationScenario, dt: f64, tau: f64) -> f64 {
    let t_end = 2.0 * tau * s.n as f64;
    let traj = run(s, t_end, dt, 1, TimeScheme::ImexEuler);
    let res = burgers_residual(&traj, s).unwrap();
    let k = res.times.iter().position(|t| (t - tau).abs() < 1e-9).unwrap();
    let space = burgers_space_residual(&traj.snapshots[k + 1], s).unwrap();
    res.fields[k].sub(&space).unwrap().sup_norm()
}

fn burgers_space_part(s_of: impl Fn(usize) -> FoliationScenario, n: usize) -> f64 {
    let s = s_of(n);
    burgers_space_residual(&s.u0, &s).unwrap().sup_norm()
}

#[test]
fn torus_burgers_residual_orders() {
    let torus = |n: usize| {
        let g = circle(n);
        torus_burgers_scenario(&g.sample(|x, _| x.cos()).unwrap()).unwrap().scenario
    };
    let s = torus(64);
    let r = burgers_time_part(&s, 2e-3, 0.1) / burgers_time_part(&s, 1e-3, 0.1);
    assert!((r - 2.0).abs() <= 0.4, "time ratio {r}");
    for n in [32, 64] {
        let r = burgers_space_part(torus, n) / burgers_space_part(torus, 2 * n);
        assert!((r - 4.0).abs() <= 0.8, "N = {n}: space ratio {r}");
    }
}

#[test]
fn nonlinear_burgers_residual_orders() {
    let at = |n: usize| {
        let g = circle(n);
        FoliationScenario::new(
            2,
            1.5,
            g.sample(|x, _| 0.3 + 0.2 * x.cos()).unwrap(),
            g.sample(|x, _| 0.02 + 0.01 * x.sin()).unwrap(),
            g.sample(|x, _| 0.4 + 0.2 * (2.0 * x).cos()).unwrap(),
            g.sample(|x, _| 1.0 + 0.3 * x.sin() + 0.1 * (2.0 * x).cos()).unwrap(),
        )
        .unwrap()
    };
    let s = at(64);
    let r = burgers_time_part(&s, 2e-3, 0.1) / burgers_time_part(&s, 1e-3, 0.1);
    assert!((r - 2.0).abs() <= 0.4, "time ratio {r}");
    let r = burgers_space_part(at, 64) / burgers_space_part(at, 128);
    assert!((r - 4.0).abs() <= 0.8, "space ratio {r}");
}

#[test]
fn curvature_approaches_its_asymptote() {
    for seed in [1, 5] {
        let s = curved_scenario(seed, 64, 0.5);
        let p = ScaledProblem::from_scenario(&s).unwrap();
        assert!(check_phi_condition(&p, &s).unwrap().satisfied);
        let bound = p.gap().min(2.0 * p.lambda0().abs());
        let t_end = 14.0 / bound;
        let traj = run(&s, t_end, 1e-3, 50, TimeScheme::ImexTrapezoid);
        let cf = accumulate_conformal_factor(&traj, &s).unwrap();
        let target = curvature_asymptote(&p, &s);
        let series: Vec<(f64, f64)> =
            cf.flow_times.iter().zip(&cf.sc_mix).map(|(t, sc)| (*t, (sc.mean() - target).abs())).collect();
        assert!(series.last().unwrap().1 < 1e-4, "seed {seed}: {:e}", series.last().unwrap().1);
        let tau_end = p.flow_time(t_end);
        let fit = fit_exponential_rate(&series, (0.2 * tau_end, 0.6 * tau_end)).unwrap();
        let tau_bound = s.n as f64 * bound;
        assert!(fit.rate >= 0.9 * tau_bound, "seed {seed}: {} vs {tau_bound}", fit.rate);
    }
}

#[test]
fn limit_curvature_matches_rescaled_run() {
    let s = curved_scenario(3, 64, 0.5);
    let p = ScaledProblem::from_scenario(&s).unwrap();
    let bound = p.gap().min(2.0 * p.lambda0().abs());
    let traj = run(&s, 16.0 / bound, 1e-3, 100, TimeScheme::ImexTrapezoid);
    let lim = rescaled_limit(&traj, &p).unwrap();
    let t = traj.final_time();
    let v = traj.final_state().scale((p.lambda0() * t).exp());
    let late = rescaled_metric_curvature(&v, &s).unwrap();
    let predicted = limit_metric_curvature(&p, &s, lim.tilde_u00).unwrap();
    let err = late.sup_distance(&predicted.sc_limit).unwrap();
    assert!(err <= 1e-3, "{err:e}");
}

#[test]
fn degenerate_limit_is_constant() {
    let g = circle(32);
    let z = ScalarField::zeros(&g);
    let beta_d = g.sample(|x, _| 0.5 + 0.2 * x.sin()).unwrap();
    let s = FoliationScenario::new(2, 1.5, beta_d, z.clone(), z, ScalarField::constant(&g, 1.0).unwrap()).unwrap();
    let p = ScaledProblem::from_scenario(&s).unwrap();
    let lim = limit_metric_curvature(&p, &s, 0.8).unwrap();
    let c = curvature_asymptote(&p, &s);
    assert!(lim.sc_limit.values().iter().all(|v| (v - c).abs() < 1e-12));
}

#[test]
fn d_ratio_of_proportional_fields_is_one() {
    let g = circle(32);
    let e0 = g.sample(|x, _| 1.0 + 0.3 * x.cos()).unwrap();
    assert!((d_ratio(&e0.scale(2.5), &e0).unwrap() - 1.0).abs() < 1e-15);
    let u0 = g.sample(|x, _| 1.0 + 0.5 * x.sin()).unwrap();
    let one = ScalarField::constant(&g, 1.0).unwrap();
    assert!((d_ratio(&u0, &one).unwrap() - u0.min() / u0.max()).abs() < 1e-15);
}
