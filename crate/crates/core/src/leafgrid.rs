//! Discretised model leaves and the leaf-wise calculus on them.
//!
//! Scalar fields live on grid nodes. Vector fields live on the edges between
//! neighbouring nodes (a staggered layout), so that the forward-difference
//! gradient is centred at the edge midpoint and the backward-difference
//! divergence brings it back to the nodes. With this pairing
//! `leaf_divergence(leaf_gradient(f))` is the compact three-point Laplacian.
//!
//! Node ordering on the torus is row-major with `y` fastest:
//! `index = ix * ny + iy`. Edge ordering on the torus stores all `x`-edges
//! first, then all `y`-edges, each block in node order; edge `e` of an axis
//! joins node `e` to its forward neighbour along that axis.
//!
//! On an interval only the interior nodes are unknowns; the two Dirichlet
//! values are part of the grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest resolution accepted on a periodic axis.
pub const MIN_PERIODIC_POINTS: usize = 8;
/// Smallest resolution (boundary nodes included) accepted on an interval.
pub const MIN_INTERVAL_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Topology {
    Circle { length: f64 },
    Torus2 { lx: f64, ly: f64 },
    /// Dirichlet interval `[0, length]` with fixed end values.
    Interval { length: f64, left: f64, right: f64 },
}

/// Requested topology and resolution. `ny` is only read for `Torus2`.
/// For an interval `nx` counts both boundary nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub topology: Topology,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn circle(length: f64, n: usize) -> Self {
        Self { topology: Topology::Circle { length }, nx: n, ny: 1 }
    }

    pub fn torus(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self { topology: Topology::Torus2 { lx, ly }, nx, ny }
    }

    pub fn interval(length: f64, n: usize, left: f64, right: f64) -> Self {
        Self { topology: Topology::Interval { length, left, right }, nx: n, ny: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafGrid {
    topology: Topology,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

fn check_length(name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::InvalidGrid(format!("{name} must be positive and finite, got {value}")));
    }
    Ok(())
}

fn check_points(axis: &str, n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidGrid(format!("{axis} resolution {n} is below the minimum {min}")));
    }
    Ok(())
}

pub fn build_grid(spec: &GridSpec) -> Result<Arc<LeafGrid>> {
    let grid = match spec.topology {
        Topology::Circle { length } => {
            check_length("length", length)?;
            check_points("x", spec.nx, MIN_PERIODIC_POINTS)?;
            LeafGrid { topology: spec.topology, nx: spec.nx, ny: 1, hx: length / spec.nx as f64, hy: 0.0 }
        }
        Topology::Torus2 { lx, ly } => {
            check_length("lx", lx)?;
            check_length("ly", ly)?;
            check_points("x", spec.nx, MIN_PERIODIC_POINTS)?;
            check_points("y", spec.ny, MIN_PERIODIC_POINTS)?;
            LeafGrid {
                topology: spec.topology,
                nx: spec.nx,
                ny: spec.ny,
                hx: lx / spec.nx as f64,
                hy: ly / spec.ny as f64,
            }
        }
        Topology::Interval { length, left, right } => {
            check_length("length", length)?;
            check_points("x", spec.nx, MIN_INTERVAL_POINTS)?;
            if !(left.is_finite() && right.is_finite()) {
                return Err(Error::InvalidGrid("boundary values must be finite".into()));
            }
            LeafGrid {
                topology: spec.topology,
                nx: spec.nx,
                ny: 1,
                hx: length / (spec.nx - 1) as f64,
                hy: 0.0,
            }
        }
    };
    Ok(Arc::new(grid))
}

impl LeafGrid {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Leaf dimension `p`.
    pub fn dim(&self) -> usize {
        match self.topology {
            Topology::Torus2 { .. } => 2,
            _ => 1,
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self.topology, Topology::Interval { .. })
    }

    /// Resolution along x (boundary nodes included on an interval).
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Largest grid spacing.
    pub fn spacing(&self) -> f64 {
        self.hx.max(self.hy)
    }

    /// Number of unknowns (nodes carrying field values).
    pub fn len(&self) -> usize {
        match self.topology {
            Topology::Circle { .. } => self.nx,
            Topology::Torus2 { .. } => self.nx * self.ny,
            Topology::Interval { .. } => self.nx - 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge_count(&self) -> usize {
        match self.topology {
            Topology::Circle { .. } => self.nx,
            Topology::Torus2 { .. } => 2 * self.nx * self.ny,
            Topology::Interval { .. } => self.nx - 1,
        }
    }

    /// Quadrature weight of one node: `h^p`.
    pub fn cell_volume(&self) -> f64 {
        match self.topology {
            Topology::Torus2 { .. } => self.hx * self.hy,
            _ => self.hx,
        }
    }

    /// Total volume of a periodic leaf, or the interval length.
    pub fn volume(&self) -> f64 {
        match self.topology {
            Topology::Circle { length } | Topology::Interval { length, .. } => length,
            Topology::Torus2 { lx, ly } => lx * ly,
        }
    }

    pub fn boundary_values(&self) -> Option<(f64, f64)> {
        match self.topology {
            Topology::Interval { left, right, .. } => Some((left, right)),
            _ => None,
        }
    }

    /// Coordinates of unknown `i`; `y` is zero on one-dimensional leaves.
    pub fn point(&self, i: usize) -> [f64; 2] {
        match self.topology {
            Topology::Circle { .. } => [i as f64 * self.hx, 0.0],
            Topology::Torus2 { .. } => {
                [(i / self.ny) as f64 * self.hx, (i % self.ny) as f64 * self.hy]
            }
            Topology::Interval { .. } => [(i + 1) as f64 * self.hx, 0.0],
        }
    }

    /// Midpoint coordinates of edge `e`.
    pub fn edge_point(&self, e: usize) -> [f64; 2] {
        match self.topology {
            Topology::Circle { .. } => [(e as f64 + 0.5) * self.hx, 0.0],
            Topology::Interval { .. } => [(e as f64 + 0.5) * self.hx, 0.0],
            Topology::Torus2 { .. } => {
                let cells = self.nx * self.ny;
                let [x, y] = self.point(e % cells);
                if e < cells {
                    [x + 0.5 * self.hx, y]
                } else {
                    [x, y + 0.5 * self.hy]
                }
            }
        }
    }

    /// Evaluate a closed-form function at the unknowns.
    pub fn sample(self: &Arc<Self>, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        let values = (0..self.len())
            .map(|i| {
                let [x, y] = self.point(i);
                f(x, y)
            })
            .collect();
        ScalarField::new(self.clone(), values)
    }

    fn torus_neighbours(&self, i: usize) -> (usize, usize, usize, usize) {
        let (ix, iy) = (i / self.ny, i % self.ny);
        let xp = ((ix + 1) % self.nx) * self.ny + iy;
        let xm = ((ix + self.nx - 1) % self.nx) * self.ny + iy;
        let yp = ix * self.ny + (iy + 1) % self.ny;
        let ym = ix * self.ny + (iy + self.ny - 1) % self.ny;
        (xp, xm, yp, ym)
    }
}

fn same_grid(a: &Arc<LeafGrid>, b: &Arc<LeafGrid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Real values on the unknowns of a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<LeafGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<LeafGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &Arc<LeafGrid>, c: f64) -> Result<Self> {
        Self::new(grid.clone(), vec![c; grid.len()])
    }

    pub fn zeros(grid: &Arc<LeafGrid>) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn grid(&self) -> &Arc<LeafGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        same_grid(&self.grid, &other.grid)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ScalarField> {
        ScalarField::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        ScalarField::new(self.grid.clone(), values)
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Arithmetic mean over the unknowns (the leaf average on uniform grids).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &ScalarField) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Values including the two Dirichlet nodes on an interval; the plain
    /// values on periodic grids.
    pub fn with_boundary(&self) -> Vec<f64> {
        match self.grid.boundary_values() {
            Some((left, right)) => {
                let mut full = Vec::with_capacity(self.values.len() + 2);
                full.push(left);
                full.extend_from_slice(&self.values);
                full.push(right);
                full
            }
            None => self.values.clone(),
        }
    }
}

/// Edge-centred vector field; one value per edge.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<LeafGrid>,
    components: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Arc<LeafGrid>, components: Vec<f64>) -> Result<Self> {
        if components.len() != grid.edge_count() {
            return Err(Error::InvalidField(format!(
                "expected {} edge values, got {}",
                grid.edge_count(),
                components.len()
            )));
        }
        if components.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite edge value".into()));
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: &Arc<LeafGrid>) -> Self {
        Self { grid: grid.clone(), components: vec![0.0; grid.edge_count()] }
    }

    pub fn grid(&self) -> &Arc<LeafGrid> {
        &self.grid
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// Values along one axis (`0` = x, `1` = y on the torus).
    pub fn axis(&self, axis: usize) -> &[f64] {
        match self.grid.topology {
            Topology::Torus2 { .. } => {
                let cells = self.grid.nx * self.grid.ny;
                &self.components[axis * cells..(axis + 1) * cells]
            }
            _ => {
                assert_eq!(axis, 0, "one-dimensional leaf has a single axis");
                &self.components
            }
        }
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField { grid: self.grid.clone(), components: self.components.iter().map(|v| v * c).collect() }
    }

    pub fn sub(&self, other: &VectorField) -> Result<VectorField> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let components = self.components.iter().zip(&other.components).map(|(a, b)| a - b).collect();
        VectorField::new(self.grid.clone(), components)
    }

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `|X|^2` at the nodes: per axis, the mean of the squares on the two
    /// edges adjacent to the node.
    pub fn norm_squared(&self) -> ScalarField {
        let g = &self.grid;
        let c = &self.components;
        let values = match g.topology {
            Topology::Circle { .. } => {
                let n = g.nx;
                (0..n).map(|i| 0.5 * (c[i] * c[i] + c[(i + n - 1) % n].powi(2))).collect()
            }
            Topology::Interval { .. } => {
                (0..g.len()).map(|i| 0.5 * (c[i + 1] * c[i + 1] + c[i] * c[i])).collect()
            }
            Topology::Torus2 { .. } => {
                let cells = g.nx * g.ny;
                (0..cells)
                    .map(|i| {
                        let (_, xm, _, ym) = g.torus_neighbours(i);
                        let ex = 0.5 * (c[i].powi(2) + c[xm].powi(2));
                        let ey = 0.5 * (c[cells + i].powi(2) + c[cells + ym].powi(2));
                        ex + ey
                    })
                    .collect()
            }
        };
        ScalarField { grid: g.clone(), values }
    }
}

/// Compact second-order Laplacian. Interval boundaries enter as Dirichlet data.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let v = &f.values;
    let values = match g.topology {
        Topology::Circle { .. } => {
            let n = g.nx;
            let ih2 = 1.0 / (g.hx * g.hx);
            (0..n).map(|i| (v[(i + 1) % n] - 2.0 * v[i] + v[(i + n - 1) % n]) * ih2).collect()
        }
        Topology::Interval { .. } => {
            let full = f.with_boundary();
            let ih2 = 1.0 / (g.hx * g.hx);
            (1..full.len() - 1).map(|j| (full[j + 1] - 2.0 * full[j] + full[j - 1]) * ih2).collect()
        }
        Topology::Torus2 { .. } => {
            let (ihx2, ihy2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
            (0..v.len())
                .map(|i| {
                    let (xp, xm, yp, ym) = g.torus_neighbours(i);
                    (v[xp] - 2.0 * v[i] + v[xm]) * ihx2 + (v[yp] - 2.0 * v[i] + v[ym]) * ihy2
                })
                .collect()
        }
    };
    ScalarField { grid: g.clone(), values }
}

/// Forward differences, which are central differences about the edge midpoints.
pub fn leaf_gradient(f: &ScalarField) -> VectorField {
    let g = &f.grid;
    let v = &f.values;
    let components = match g.topology {
        Topology::Circle { .. } => {
            let n = g.nx;
            (0..n).map(|i| (v[(i + 1) % n] - v[i]) / g.hx).collect()
        }
        Topology::Interval { .. } => {
            let full = f.with_boundary();
            full.windows(2).map(|w| (w[1] - w[0]) / g.hx).collect()
        }
        Topology::Torus2 { .. } => {
            let cells = v.len();
            let mut out = vec![0.0; 2 * cells];
            for i in 0..cells {
                let (xp, _, yp, _) = g.torus_neighbours(i);
                out[i] = (v[xp] - v[i]) / g.hx;
                out[cells + i] = (v[yp] - v[i]) / g.hy;
            }
            out
        }
    };
    VectorField { grid: g.clone(), components }
}

/// Backward differences from edges to nodes; the negative adjoint of
/// [`leaf_gradient`] in the discrete L2 pairings.
pub fn leaf_divergence(x: &VectorField) -> ScalarField {
    let g = &x.grid;
    let c = &x.components;
    let values = match g.topology {
        Topology::Circle { .. } => {
            let n = g.nx;
            (0..n).map(|i| (c[i] - c[(i + n - 1) % n]) / g.hx).collect()
        }
        Topology::Interval { .. } => (0..g.len()).map(|i| (c[i + 1] - c[i]) / g.hx).collect(),
        Topology::Torus2 { .. } => {
            let cells = g.nx * g.ny;
            (0..cells)
                .map(|i| {
                    let (_, xm, _, ym) = g.torus_neighbours(i);
                    (c[i] - c[xm]) / g.hx + (c[cells + i] - c[cells + ym]) / g.hy
                })
                .collect()
        }
    };
    ScalarField { grid: g.clone(), values }
}

/// `h^p * sum(f * g)`.
pub fn inner_product_l2(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    if !f.same_grid(g) {
        return Err(Error::GridMismatch);
    }
    let sum: f64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
    Ok(sum * f.grid.cell_volume())
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    f.values.iter().map(|v| v * v).sum::<f64>().sqrt() * f.grid.cell_volume().sqrt()
}

pub fn field_extrema(f: &ScalarField) -> (f64, f64) {
    (f.min(), f.max())
}
