//! Linear solvers for the implicit diffusion half of the time steppers.

use std::sync::Arc;

use crate::leafgrid::{LeafGrid, Topology};

/// Thomas algorithm for `a[i] x[i-1] + b[i] x[i] + c[i] x[i+1] = d[i]`.
/// `a[0]` and `c[n-1]` are ignored. The system must be diagonally dominant.
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = d.len();
    assert!(a.len() == n && b.len() == n && c.len() == n, "band lengths differ");
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    x
}

/// Periodic constant-coefficient system `off*x[i-1] + diag*x[i] + off*x[i+1] = d[i]`
/// (indices mod n), solved by Sherman–Morrison around a Thomas solve.
pub fn solve_cyclic_constant(diag: f64, off: f64, d: &[f64]) -> Vec<f64> {
    let n = d.len();
    assert!(n >= 3);
    let gamma = -diag;
    let mut b = vec![diag; n];
    b[0] = diag - gamma;
    b[n - 1] = diag - off * off / gamma;
    let a = vec![off; n];
    let c = vec![off; n];
    let x = solve_tridiagonal(&a, &b, &c, d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = off;
    let z = solve_tridiagonal(&a, &b, &c, &u);
    let factor = (x[0] + off * x[n - 1] / gamma) / (1.0 + z[0] + off * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - factor * zi).collect()
}

/// Solves `(I - theta * Lap) x = rhs` on a grid, where `Lap` is the compact
/// Laplacian with homogeneous Dirichlet data on an interval.
#[derive(Debug, Clone)]
pub struct DiffusionSolver {
    grid: Arc<LeafGrid>,
    theta: f64,
}

const CG_TOLERANCE: f64 = 1e-15;

impl DiffusionSolver {
    pub fn new(grid: Arc<LeafGrid>, theta: f64) -> Self {
        assert!(theta >= 0.0 && theta.is_finite());
        Self { grid, theta }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        assert_eq!(rhs.len(), g.len());
        match g.topology() {
            Topology::Circle { .. } => {
                let r = self.theta / (g.hx() * g.hx());
                solve_cyclic_constant(1.0 + 2.0 * r, -r, rhs)
            }
            Topology::Interval { .. } => {
                let r = self.theta / (g.hx() * g.hx());
                let n = rhs.len();
                solve_tridiagonal(&vec![-r; n], &vec![1.0 + 2.0 * r; n], &vec![-r; n], rhs)
            }
            Topology::Torus2 { .. } => self.solve_torus(rhs),
        }
    }

    fn apply_torus(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let rx = self.theta / (g.hx() * g.hx());
        let ry = self.theta / (g.hy() * g.hy());
        for ix in 0..nx {
            let xp = ((ix + 1) % nx) * ny;
            let xm = ((ix + nx - 1) % nx) * ny;
            let row = ix * ny;
            for iy in 0..ny {
                let yp = (iy + 1) % ny;
                let ym = (iy + ny - 1) % ny;
                let v = x[row + iy];
                out[row + iy] = v - rx * (x[xp + iy] - 2.0 * v + x[xm + iy])
                    - ry * (x[row + yp] - 2.0 * v + x[row + ym]);
            }
        }
    }

    // The operator is symmetric positive definite with spectrum in
    // [1, 1 + 4(rx + ry)], so unpreconditioned CG converges quickly.
    fn solve_torus(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut x = vec![0.0; n];
        let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return x;
        }
        let mut r = rhs.to_vec();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        for _ in 0..10 * n {
            self.apply_torus(&p, &mut ap);
            let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            if rr_new.sqrt() <= CG_TOLERANCE * bnorm {
                break;
            }
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
        }
        x
    }
}
