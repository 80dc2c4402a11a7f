//! The leaf-wise Schrödinger operator `H = -Δ - β`, its spectrum, and
//! spectral solvers for the linear and forced heat equations.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::leafgrid::{inner_product_l2, LeafGrid, ScalarField, Topology};

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 0; // unlimited

#[derive(Debug, Clone)]
pub struct SchrodingerOperator {
    grid: Arc<LeafGrid>,
    potential: ScalarField,
    matrix: DMatrix<f64>,
}

impl SchrodingerOperator {
    pub fn grid(&self) -> &Arc<LeafGrid> {
        &self.grid
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Matrix-vector product, for checking against the stencil.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        if !f.same_grid(&self.potential) {
            return Err(Error::GridMismatch);
        }
        let v = nalgebra::DVector::from_column_slice(f.values());
        let out = &self.matrix * v;
        ScalarField::new(self.grid.clone(), out.as_slice().to_vec())
    }
}

pub fn assemble(potential: &ScalarField) -> Result<SchrodingerOperator> {
    let grid = potential.grid().clone();
    let n = grid.len();
    let beta = potential.values();
    let mut m = DMatrix::<f64>::zeros(n, n);
    match grid.topology() {
        Topology::Interval { .. } => return Err(Error::NotPeriodic),
        Topology::Circle { .. } => {
            let ih2 = 1.0 / (grid.hx() * grid.hx());
            for i in 0..n {
                m[(i, i)] = 2.0 * ih2 - beta[i];
                m[(i, (i + 1) % n)] -= ih2;
                m[(i, (i + n - 1) % n)] -= ih2;
            }
        }
        Topology::Torus2 { .. } => {
            let (nx, ny) = (grid.nx(), grid.ny());
            let ihx2 = 1.0 / (grid.hx() * grid.hx());
            let ihy2 = 1.0 / (grid.hy() * grid.hy());
            for ix in 0..nx {
                for iy in 0..ny {
                    let i = ix * ny + iy;
                    m[(i, i)] = 2.0 * ihx2 + 2.0 * ihy2 - beta[i];
                    m[(i, ((ix + 1) % nx) * ny + iy)] -= ihx2;
                    m[(i, ((ix + nx - 1) % nx) * ny + iy)] -= ihx2;
                    m[(i, ix * ny + (iy + 1) % ny)] -= ihy2;
                    m[(i, ix * ny + (iy + ny - 1) % ny)] -= ihy2;
                }
            }
        }
    }
    Ok(SchrodingerOperator { grid, potential: potential.clone(), matrix: m })
}

/// Leading eigenpairs of a Schrödinger operator.
#[derive(Debug, Clone)]
pub struct SpectralData {
    potential: ScalarField,
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<ScalarField>,
}

impl SpectralData {
    pub fn grid(&self) -> &Arc<LeafGrid> {
        self.potential.grid()
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &[ScalarField] {
        &self.eigenfunctions
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn lambda0(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[1]
    }

    pub fn ground_state(&self) -> &ScalarField {
        &self.eigenfunctions[0]
    }

    pub fn gap(&self) -> f64 {
        self.eigenvalues[1] - self.eigenvalues[0]
    }

    /// True when every mode of the discrete operator is present.
    pub fn is_complete(&self) -> bool {
        self.eigenvalues.len() == self.grid().len()
    }

    pub fn reconstruct(&self, coefficients: &[f64]) -> Result<ScalarField> {
        if coefficients.len() > self.len() {
            return Err(Error::InvalidSpectrum("more coefficients than modes".into()));
        }
        let mut out = vec![0.0; self.grid().len()];
        for (c, e) in coefficients.iter().zip(&self.eigenfunctions) {
            for (o, v) in out.iter_mut().zip(e.values()) {
                *o += c * v;
            }
        }
        ScalarField::new(self.grid().clone(), out)
    }

    /// `sum_j c_j e^{-λ_j t} e_j` with `c_j = (u0, e_j)`.
    pub fn evolve_linear(&self, u0: &ScalarField, t: f64) -> Result<ScalarField> {
        if t < 0.0 {
            return Err(Error::InvalidSpectrum(format!("negative time {t}")));
        }
        let c = project(u0, self)?;
        let evolved: Vec<f64> =
            c.iter().zip(&self.eigenvalues).map(|(cj, lj)| cj * (-lj * t).exp()).collect();
        self.reconstruct(&evolved)
    }

    /// Sup-norm of what the retained modes miss in `f`.
    pub fn truncation_residual(&self, f: &ScalarField) -> Result<f64> {
        let back = self.reconstruct(&project(f, self)?)?;
        f.sup_distance(&back)
    }
}

/// First `k` eigenpairs in ascending order, L2-orthonormal, with the ground
/// state made positive.
pub fn eigensolve(op: &SchrodingerOperator, k: usize) -> Result<SpectralData> {
    let n = op.grid.len();
    if k < 2 || k > n {
        return Err(Error::InvalidSpectrum(format!("mode count {k} outside [2, {n}]")));
    }
    let eig = SymmetricEigen::try_new(op.matrix.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or(Error::EigenSolverFailed)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let norm = 1.0 / op.grid.cell_volume().sqrt();
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenfunctions = Vec::with_capacity(k);
    for (j, &col) in order.iter().take(k).enumerate() {
        let mut values: Vec<f64> = eig.eigenvectors.column(col).iter().map(|v| v * norm).collect();
        if j == 0 && values.iter().sum::<f64>() < 0.0 {
            values.iter_mut().for_each(|v| *v = -*v);
        }
        eigenvalues.push(eig.eigenvalues[col]);
        eigenfunctions.push(ScalarField::new(op.grid.clone(), values)?);
    }
    Ok(SpectralData { potential: op.potential.clone(), eigenvalues, eigenfunctions })
}

/// Full spectrum of `-Δ - β`.
pub fn full_spectrum(potential: &ScalarField) -> Result<SpectralData> {
    let op = assemble(potential)?;
    eigensolve(&op, potential.len())
}

pub fn fundamental_gap(spec: &SpectralData) -> f64 {
    spec.gap()
}

/// `c_j = (f, e_j)` for every retained mode.
pub fn project(f: &ScalarField, spec: &SpectralData) -> Result<Vec<f64>> {
    spec.eigenfunctions.iter().map(|e| inner_product_l2(f, e)).collect()
}

/// Exact solution of the semi-discrete `∂t u = Δu + βu` at time `t`.
pub fn linear_heat_evolve(u0: &ScalarField, beta: &ScalarField, t: f64) -> Result<ScalarField> {
    full_spectrum(beta)?.evolve_linear(u0, t)
}

/// Rescaled Duhamel solution `v(t_end)` of `∂t v = Δv + (β + λ0) v + Q`,
/// with the time integral in each mode by the composite trapezoid rule on
/// a uniform grid no coarser than `dt`.
pub fn duhamel_solve<F>(u0: &ScalarField, spec: &SpectralData, mut forcing: F, t_end: f64, dt: f64) -> Result<ScalarField>
where
    F: FnMut(f64) -> Result<ScalarField>,
{
    if !(t_end >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidSpectrum(format!("bad Duhamel window t_end = {t_end}, dt = {dt}")));
    }
    let lambda0 = spec.lambda0();
    let rates: Vec<f64> = spec.eigenvalues.iter().map(|l| lambda0 - l).collect();
    let mut v: Vec<f64> =
        project(u0, spec)?.iter().zip(&rates).map(|(c, a)| c * (a * t_end).exp()).collect();
    if t_end > 0.0 {
        let steps = (t_end / dt).ceil().max(1.0) as usize;
        let h = t_end / steps as f64;
        for i in 0..=steps {
            let tau = i as f64 * h;
            let weight = if i == 0 || i == steps { 0.5 * h } else { h };
            let q = project(&forcing(tau)?, spec)?;
            for ((vj, qj), a) in v.iter_mut().zip(&q).zip(&rates) {
                *vj += weight * (a * (t_end - tau)).exp() * qj;
            }
        }
    }
    spec.reconstruct(&v)
}

/// The limiting ground-state coefficient `ũ0⁰ = u0⁰ + ∫₀^∞ q0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeU00 {
    pub value: f64,
    /// Trapezoid integral over the recorded window.
    pub integral: f64,
    /// Estimate of the integral beyond the window.
    pub tail: f64,
}

impl TildeU00 {
    pub fn tail_fraction(&self) -> f64 {
        if self.value == 0.0 {
            self.tail.abs()
        } else {
            (self.tail / self.value).abs()
        }
    }
}

/// `q0` samples are `(τ, q0(τ))` in increasing `τ`. The tail assumes
/// `q0 ≈ C e^{2 λ0 τ}` with `C` fitted on the last tenth of the window.
pub fn tilde_u00(u00: f64, q0: &[(f64, f64)], lambda0: f64) -> Result<TildeU00> {
    if !(lambda0 < 0.0) {
        return Err(Error::HypothesisViolated(format!("λ0 < 0 required, got {lambda0}")));
    }
    if q0.len() < 2 {
        return Err(Error::InvalidSeries("need at least two q0 samples".into()));
    }
    let integral: f64 = q0.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();

    let kappa = -2.0 * lambda0;
    let (t0, t_end) = (q0[0].0, q0[q0.len() - 1].0);
    let start = t_end - 0.1 * (t_end - t0);
    let window: Vec<&(f64, f64)> = q0.iter().filter(|(t, _)| *t >= start).collect();
    // Least squares for C in q0 = C e^{-κτ}: C = Σ q e^{-κτ} / Σ e^{-2κτ},
    // written relative to t_end to stay in range.
    let (num, den) = window.iter().fold((0.0, 0.0), |(n, d), (t, q)| {
        let w = (-kappa * (t - t_end)).exp();
        (n + q * w, d + w * w)
    });
    let c_end = if den > 0.0 { num / den } else { q0[q0.len() - 1].1 };
    let tail = c_end / kappa;

    let value = u00 + integral + tail;
    let out = TildeU00 { value, integral, tail };
    if out.tail_fraction() > 0.01 {
        log::warn!("ground-state coefficient tail is {:.3e} of the result; run longer", out.tail_fraction());
    }
    Ok(out)
}
