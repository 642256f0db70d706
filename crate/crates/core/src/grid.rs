//! Uniform cell-centered grid on a rectangle with homogeneous Neumann boundaries.
//!
//! The five-point Laplacian uses reflected ghost cells, so it is diagonalized
//! exactly by the type-II cosine basis
//! `phi_jk(i, l) = cos(j pi (i + 1/2) / nx) cos(k pi (l + 1/2) / ny)` with
//! eigenvalues `-mu_jk`,
//! `mu_jk = (4 / hx^2) sin^2(j pi / (2 nx)) + (4 / hy^2) sin^2(k pi / (2 ny))`.
//! Every linear solve in the crate goes through that basis and is exact up to
//! roundoff.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Radicands of `h1_seminorm` below this are treated as roundoff.
const SEMINORM_CLAMP: f64 = 1e-14;

/// Relative tolerance on the mean of inputs to the inverse Laplacian.
const MEAN_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 cells per axis, got {nx}x{ny}"
            )));
        }
        if !(lx.is_finite() && lx > 0.0 && ly.is_finite() && ly > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain lengths must be positive and finite, got {lx}x{ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// `n x n` cells on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Quadrature weight of a single cell.
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Flat index of cell `(i, j)`; `j` (the y index) is the slow axis.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy()
    }

    /// Eigenvalue of `-Laplacian` for cosine mode `(j, k)`.
    pub fn eigenvalue(&self, j: usize, k: usize) -> f64 {
        axis_eigenvalue(j, self.nx, self.hx()) + axis_eigenvalue(k, self.ny, self.hy())
    }

    /// Smallest positive eigenvalue of `-Laplacian`.
    pub fn smallest_positive_eigenvalue(&self) -> f64 {
        axis_eigenvalue(1, self.nx, self.hx()).min(axis_eigenvalue(1, self.ny, self.hy()))
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField::constant(*self, 0.0)
    }

    /// Samples `f(x, y)` at the cell centers.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> ScalarField {
        let mut values = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            let y = self.y(j);
            for i in 0..self.nx {
                values.push(f(self.x(i), y));
            }
        }
        ScalarField { grid: *self, values }
    }

    /// The discrete cosine mode `(j, k)` sampled at cell centers.
    pub fn cosine_mode(&self, j: usize, k: usize) -> ScalarField {
        let (nx, ny) = (self.nx as f64, self.ny as f64);
        let mut values = Vec::with_capacity(self.len());
        for l in 0..self.ny {
            let cy = (k as f64 * PI * (l as f64 + 0.5) / ny).cos();
            for i in 0..self.nx {
                values.push((j as f64 * PI * (i as f64 + 0.5) / nx).cos() * cy);
            }
        }
        ScalarField { grid: *self, values }
    }
}

fn axis_eigenvalue(j: usize, n: usize, h: f64) -> f64 {
    let s = (j as f64 * PI / (2.0 * n as f64)).sin();
    4.0 * s * s / (h * h)
}

/// Cell-centered values on a [`Grid`], stored with the x index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite field value at index {pos}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise map into a new field on the same grid.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &ScalarField) -> Result<Self> {
        self.check_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    pub fn check_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{}x{} on {}x{} vs {}x{} on {}x{}",
                self.grid.nx,
                self.grid.ny,
                self.grid.lx,
                self.grid.ly,
                other.grid.nx,
                other.grid.ny,
                other.grid.lx,
                other.grid.ly
            )));
        }
        Ok(())
    }

    /// Mesh-weighted L2 inner product.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.check_grid(other)?;
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(self.grid.cell_area() * s)
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        (self.grid.cell_area() * s).sqrt()
    }

    /// Integral of the field over the domain.
    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.integral() / self.grid.area()
    }

    pub fn project_mean_zero(&self) -> Self {
        let m = self.mean();
        self.map(|v| v - m)
    }

    /// Writes the snapshot CSV: a `nx,ny,lx,ly` line, then one row per y index.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        writeln!(w, "{},{},{:.16e},{:.16e}", g.nx, g.ny, g.lx, g.ly)?;
        for j in 0..g.ny {
            let row = &self.values[j * g.nx..(j + 1) * g.nx];
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{v:.16e}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty snapshot file".into(),
        })?;
        let header = header?;
        let parts: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected `nx,ny,lx,ly`, got `{header}`"),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: 1,
            message: format!("bad {what} in header `{header}`"),
        };
        let nx: usize = parts[0].parse().map_err(|_| bad("nx"))?;
        let ny: usize = parts[1].parse().map_err(|_| bad("ny"))?;
        let lx: f64 = parts[2].parse().map_err(|_| bad("lx"))?;
        let ly: f64 = parts[3].parse().map_err(|_| bad("ly"))?;
        let grid = Grid::new(nx, ny, lx, ly)?;

        let mut values = Vec::with_capacity(grid.len());
        let mut rows = 0;
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = values.len();
            for tok in line.split(',') {
                let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("bad value `{}`", tok.trim()),
                })?;
                values.push(v);
            }
            if values.len() - before != nx {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {nx} values, got {}", values.len() - before),
                });
            }
            rows += 1;
        }
        if rows != ny {
            return Err(Error::Parse {
                line: rows + 1,
                message: format!("expected {ny} rows, got {rows}"),
            });
        }
        Self::from_values(grid, values)
    }
}

/// Five-point Neumann Laplacian with reflected ghost cells.
pub fn apply_laplacian(u: &ScalarField) -> ScalarField {
    let g = u.grid;
    let (nx, ny) = (g.nx, g.ny);
    let ax = 1.0 / (g.hx() * g.hx());
    let ay = 1.0 / (g.hy() * g.hy());
    let v = &u.values;
    let mut out = vec![0.0; g.len()];
    for j in 0..ny {
        let jm = if j == 0 { 0 } else { j - 1 };
        let jp = if j + 1 == ny { j } else { j + 1 };
        for i in 0..nx {
            let im = if i == 0 { 0 } else { i - 1 };
            let ip = if i + 1 == nx { i } else { i + 1 };
            let c = v[j * nx + i];
            let dxx = (v[j * nx + ip] - c) + (v[j * nx + im] - c);
            let dyy = (v[jp * nx + i] - c) + (v[jm * nx + i] - c);
            out[j * nx + i] = ax * dxx + ay * dyy;
        }
    }
    ScalarField {
        grid: g,
        values: out,
    }
}

/// `sqrt(-(u, Laplacian u))`, the operator-induced gradient seminorm.
pub fn h1_seminorm(u: &ScalarField) -> Result<f64> {
    let q = -u.inner(&apply_laplacian(u))?;
    if q >= 0.0 {
        Ok(q.sqrt())
    } else if q >= -SEMINORM_CLAMP {
        Ok(0.0)
    } else {
        Err(Error::Internal(format!(
            "negative gradient energy {q:e}: Laplacian is not negative semidefinite"
        )))
    }
}

/// Dense matrix of `-Laplacian`, assembled face by face from the stencil.
///
/// Only meant for small oracle problems.
pub fn dense_neg_laplacian(g: &Grid) -> DMatrix<f64> {
    let n = g.len();
    let mut a = DMatrix::zeros(n, n);
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let mut couple = |p: usize, q: usize, w: f64| {
        a[(p, p)] += w;
        a[(q, q)] += w;
        a[(p, q)] -= w;
        a[(q, p)] -= w;
    };
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let p = g.index(i, j);
            if i + 1 < g.nx() {
                couple(p, g.index(i + 1, j), ax);
            }
            if j + 1 < g.ny() {
                couple(p, g.index(i, j + 1), ay);
            }
        }
    }
    a
}

/// Precomputed cosine bases and eigenvalues for exact Neumann solves.
///
/// Transforms are dense matrix products against an orthonormal DCT-II basis,
/// `O(n^3)` per 2D transform, which is fine for the grid sizes used here.
#[derive(Debug, Clone)]
pub struct SolverWorkspace {
    grid: Grid,
    basis_x: Vec<f64>,
    basis_y: Vec<f64>,
    mu: Vec<f64>,
    tol: f64,
}

impl SolverWorkspace {
    pub fn new(grid: Grid) -> Self {
        Self::with_tolerance(grid, 1e-12)
    }

    pub fn with_tolerance(grid: Grid, tol: f64) -> Self {
        let mut mu = Vec::with_capacity(grid.len());
        for k in 0..grid.ny {
            for j in 0..grid.nx {
                mu.push(grid.eigenvalue(j, k));
            }
        }
        Self {
            grid,
            basis_x: orthonormal_dct_basis(grid.nx),
            basis_y: orthonormal_dct_basis(grid.ny),
            mu,
            tol,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Iterative-solver tolerance used by callers that run Krylov iterations.
    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// Eigenvalues `mu_jk` of `-Laplacian`, laid out like field values (`j` fastest).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.mu
    }

    fn check(&self, u: &ScalarField) -> Result<()> {
        if u.grid != self.grid {
            return Err(Error::GridMismatch(
                "field grid differs from workspace grid".into(),
            ));
        }
        Ok(())
    }

    /// Coefficients of `u` in the orthonormal cosine basis.
    pub fn forward(&self, u: &ScalarField) -> Result<Vec<f64>> {
        self.check(u)?;
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut tmp = vec![0.0; nx * ny];
        for l in 0..ny {
            let row = &u.values[l * nx..(l + 1) * nx];
            for j in 0..nx {
                let b = &self.basis_x[j * nx..(j + 1) * nx];
                tmp[l * nx + j] = dot(b, row);
            }
        }
        let mut out = vec![0.0; nx * ny];
        for k in 0..ny {
            let b = &self.basis_y[k * ny..(k + 1) * ny];
            let dst = &mut out[k * nx..(k + 1) * nx];
            for (l, &c) in b.iter().enumerate() {
                let src = &tmp[l * nx..(l + 1) * nx];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`SolverWorkspace::forward`].
    pub fn inverse(&self, coeffs: &[f64]) -> Result<ScalarField> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        if coeffs.len() != nx * ny {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                nx * ny,
                coeffs.len()
            )));
        }
        let mut tmp = vec![0.0; nx * ny];
        for k in 0..ny {
            let b = &self.basis_y[k * ny..(k + 1) * ny];
            let src = &coeffs[k * nx..(k + 1) * nx];
            for (l, &c) in b.iter().enumerate() {
                let dst = &mut tmp[l * nx..(l + 1) * nx];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
        let mut out = vec![0.0; nx * ny];
        for l in 0..ny {
            let src = &tmp[l * nx..(l + 1) * nx];
            let dst = &mut out[l * nx..(l + 1) * nx];
            for (j, &c) in src.iter().enumerate() {
                let b = &self.basis_x[j * nx..(j + 1) * nx];
                for (d, s) in dst.iter_mut().zip(b) {
                    *d += c * s;
                }
            }
        }
        Ok(ScalarField {
            grid: self.grid,
            values: out,
        })
    }

    /// Applies a spectral multiplier `m(mu_jk)` to `u`.
    pub fn apply_multiplier<F: Fn(f64) -> f64>(&self, u: &ScalarField, m: F) -> Result<ScalarField> {
        let mut c = self.forward(u)?;
        for (ci, &mu) in c.iter_mut().zip(&self.mu) {
            *ci *= m(mu);
        }
        self.inverse(&c)
    }

    /// Mean-zero `x` with `-Laplacian x = v`.
    pub fn inv_neumann_laplacian(&self, v: &ScalarField) -> Result<ScalarField> {
        self.check(v)?;
        let m = v.mean();
        if m.abs() > MEAN_ZERO_TOL * v.max_abs() {
            return Err(Error::Precondition(format!(
                "inverse Laplacian needs a mean-zero input, mean is {m:e}"
            )));
        }
        let mut c = self.forward(v)?;
        c[0] = 0.0;
        for (ci, &mu) in c.iter_mut().zip(&self.mu).skip(1) {
            *ci /= mu;
        }
        self.inverse(&c)
    }

    /// Discrete `H^{-1}` norm `sqrt((v, -Laplacian^{-1} v))` of a mean-zero field.
    pub fn hm1_norm(&self, v: &ScalarField) -> Result<f64> {
        let x = self.inv_neumann_laplacian(v)?;
        Ok(v.inner(&x)?.max(0.0).sqrt())
    }

    /// Solves `(I + tau eps Laplacian^2) x = b`.
    pub fn solve_shifted_biharmonic(&self, b: &ScalarField, tau: f64, eps: f64) -> Result<ScalarField> {
        if !(tau > 0.0 && eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau and eps must be positive, got tau={tau}, eps={eps}"
            )));
        }
        let s = tau * eps;
        self.apply_multiplier(b, |mu| 1.0 / (1.0 + s * mu * mu))
    }
}

/// Row `j` holds `s_j cos(j pi (i + 1/2) / n)` with `s_0 = sqrt(1/n)`, `s_j = sqrt(2/n)`.
fn orthonormal_dct_basis(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut b = Vec::with_capacity(n * n);
    for j in 0..n {
        let s = if j == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            b.push(s * (j as f64 * PI * (i as f64 + 0.5) / nf).cos());
        }
    }
    b
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
        let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::from_values(grid, values).unwrap()
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(1, 4, 1.0, 1.0).is_err());
        assert!(Grid::new(4, 1, 1.0, 1.0).is_err());
        assert!(Grid::new(4, 4, 0.0, 1.0).is_err());
        assert!(Grid::new(4, 4, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn cell_centers_are_interior() {
        let g = Grid::new(5, 3, 2.0, 0.7).unwrap();
        for i in 0..5 {
            assert!(g.x(i) > 0.0 && g.x(i) < 2.0);
        }
        for j in 0..3 {
            assert!(g.y(j) > 0.0 && g.y(j) < 0.7);
        }
    }

    #[test]
    fn inner_of_ones_is_area() {
        let g = Grid::unit_square(8).unwrap();
        let one = ScalarField::constant(g, 1.0);
        assert_relative_eq!(one.inner(&one).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn inner_of_cosine_mode_is_half() {
        let g = Grid::unit_square(16).unwrap();
        let u = g.cosine_mode(1, 0);
        assert_relative_eq!(u.inner(&u).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn inner_matches_naive_sum() {
        let g = Grid::unit_square(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(g, &mut rng);
        let v = random_field(g, &mut rng);
        let mut s = 0.0;
        for j in 0..8 {
            for i in 0..8 {
                s += u.get(i, j) * v.get(i, j) / 64.0;
            }
        }
        assert_relative_eq!(u.inner(&v).unwrap(), s, epsilon = 1e-14);
    }

    #[test]
    fn inner_rejects_mismatched_grids() {
        let a = ScalarField::constant(Grid::unit_square(4).unwrap(), 1.0);
        let b = ScalarField::constant(Grid::unit_square(5).unwrap(), 1.0);
        assert!(matches!(a.inner(&b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn laplacian_kills_constants() {
        let g = Grid::new(7, 5, 1.3, 0.4).unwrap();
        let lap = apply_laplacian(&ScalarField::constant(g, 3.7));
        assert!(lap.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_modes_are_eigenfunctions() {
        let g = Grid::new(8, 6, 1.0, 0.75).unwrap();
        for k in 0..6 {
            for j in 0..8 {
                let u = g.cosine_mode(j, k);
                let lap = apply_laplacian(&u);
                let mu = g.eigenvalue(j, k);
                let scale = mu.max(1.0);
                for (a, b) in lap.values().iter().zip(u.values()) {
                    assert!((a + mu * b).abs() <= 1e-12 * scale, "mode ({j},{k})");
                }
            }
        }
    }

    #[test]
    fn laplacian_is_symmetric_and_nonpositive() {
        let g = Grid::unit_square(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let u = random_field(g, &mut rng);
            let w = random_field(g, &mut rng);
            let a = apply_laplacian(&u).inner(&w).unwrap();
            let b = u.inner(&apply_laplacian(&w)).unwrap();
            assert!((a - b).abs() <= 1e-12 * u.l2_norm() * w.l2_norm());
            assert!(u.inner(&apply_laplacian(&u)).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn inverse_laplacian_of_mode() {
        let g = Grid::unit_square(16).unwrap();
        let ws = SolverWorkspace::new(g);
        let v = g.cosine_mode(1, 0);
        let x = ws.inv_neumann_laplacian(&v).unwrap();
        let mu = g.eigenvalue(1, 0);
        for (a, b) in x.values().iter().zip(v.values()) {
            assert_relative_eq!(*a, b / mu, epsilon = 1e-14);
        }
        let zero = ws.inv_neumann_laplacian(&g.zeros()).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inverse_laplacian_round_trip() {
        let g = Grid::new(8, 8, 1.0, 1.0).unwrap();
        let ws = SolverWorkspace::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_field(g, &mut rng).project_mean_zero();
        let x = ws.inv_neumann_laplacian(&v).unwrap();
        assert!(x.mean().abs() <= 1e-14);
        let back = apply_laplacian(&x);
        for (a, b) in back.values().iter().zip(v.values()) {
            assert!((a + b).abs() <= 1e-11);
        }
    }

    #[test]
    fn inverse_laplacian_rejects_nonzero_mean() {
        let g = Grid::unit_square(8).unwrap();
        let ws = SolverWorkspace::new(g);
        let v = ScalarField::constant(g, 1.0);
        assert!(matches!(
            ws.inv_neumann_laplacian(&v),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn hm1_norm_of_mode() {
        let g = Grid::unit_square(16).unwrap();
        let ws = SolverWorkspace::new(g);
        let v = g.cosine_mode(1, 0);
        let mu = g.eigenvalue(1, 0);
        assert_relative_eq!(ws.hm1_norm(&v).unwrap(), (0.5 / mu).sqrt(), epsilon = 1e-14);
        assert_eq!(ws.hm1_norm(&g.zeros()).unwrap(), 0.0);
    }

    #[test]
    fn l2_bounded_by_h1_times_hm1() {
        let g = Grid::new(12, 9, 1.0, 0.8).unwrap();
        let ws = SolverWorkspace::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let v = random_field(g, &mut rng).project_mean_zero();
            let lhs = v.inner(&v).unwrap();
            let rhs = h1_seminorm(&v).unwrap() * ws.hm1_norm(&v).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn h1_seminorm_cases() {
        let g = Grid::unit_square(16).unwrap();
        assert_eq!(h1_seminorm(&ScalarField::constant(g, 2.0)).unwrap(), 0.0);
        let mu = g.eigenvalue(1, 0);
        assert_relative_eq!(
            h1_seminorm(&g.cosine_mode(1, 0)).unwrap(),
            (0.5 * mu).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn h1_seminorm_matches_forward_differences() {
        let g = Grid::new(8, 8, 1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_field(g, &mut rng);
        // Reflected ghosts give zero boundary differences, so only interior faces count.
        let mut s = 0.0;
        for j in 0..8 {
            for i in 0..7 {
                let d = (u.get(i + 1, j) - u.get(i, j)) / g.hx();
                s += d * d;
            }
        }
        for j in 0..7 {
            for i in 0..8 {
                let d = (u.get(i, j + 1) - u.get(i, j)) / g.hy();
                s += d * d;
            }
        }
        s *= g.cell_area();
        assert_relative_eq!(h1_seminorm(&u).unwrap(), s.sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn shifted_biharmonic_cases() {
        let g = Grid::unit_square(8).unwrap();
        let ws = SolverWorkspace::new(g);
        let x = ws
            .solve_shifted_biharmonic(&ScalarField::constant(g, 0.3), 0.1, 0.2)
            .unwrap();
        assert!(x.values().iter().all(|v| (v - 0.3).abs() < 1e-15));

        let b = g.cosine_mode(2, 3);
        let mu = g.eigenvalue(2, 3);
        let x = ws.solve_shifted_biharmonic(&b, 1e-3, 0.05).unwrap();
        let d = 1.0 + 1e-3 * 0.05 * mu * mu;
        for (a, bb) in x.values().iter().zip(b.values()) {
            assert!((a - bb / d).abs() < 1e-14);
        }
        assert!(ws.solve_shifted_biharmonic(&b, 0.0, 0.1).is_err());
    }

    #[test]
    fn shifted_biharmonic_matches_dense_solve() {
        let g = Grid::new(8, 7, 1.0, 0.9).unwrap();
        let ws = SolverWorkspace::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random_field(g, &mut rng);
        let (tau, eps) = (1e-4, 0.1);
        let k = dense_neg_laplacian(&g);
        let a = DMatrix::identity(g.len(), g.len()) + &k * &k * (tau * eps);
        let rhs = DVector::from_column_slice(b.values());
        let dense = a.clone().lu().solve(&rhs).unwrap();
        let x = ws.solve_shifted_biharmonic(&b, tau, eps).unwrap();
        for (p, q) in x.values().iter().zip(dense.iter()) {
            assert!((p - q).abs() <= 1e-10);
        }
        let res = &a * DVector::from_column_slice(x.values()) - rhs;
        assert!(res.norm() <= 1e-11 * b.values().iter().map(|v| v * v).sum::<f64>().sqrt());
    }

    #[test]
    fn dct_basis_matches_dense_eigenvectors() {
        let g = Grid::new(6, 5, 1.0, 1.0).unwrap();
        let k = dense_neg_laplacian(&g);
        let ws = SolverWorkspace::new(g);
        for kk in 0..5 {
            for j in 0..6 {
                let m = g.cosine_mode(j, kk);
                let kv = &k * DVector::from_column_slice(m.values());
                let mu = g.eigenvalue(j, kk);
                for (a, b) in kv.iter().zip(m.values()) {
                    assert!((a - mu * b).abs() < 1e-10);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_field(g, &mut rng);
        let back = ws.inverse(&ws.forward(&u).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn mean_and_projection() {
        let g = Grid::new(6, 4, 2.0, 1.0).unwrap();
        assert_relative_eq!(ScalarField::constant(g, -0.4).mean(), -0.4, epsilon = 1e-15);
        let m = g.cosine_mode(1, 1);
        assert_eq!(m.project_mean_zero().values().len(), m.values().len());
        for (a, b) in m.project_mean_zero().values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_field(g, &mut rng).map(|v| v + 3.0);
        assert!(u.project_mean_zero().mean().abs() <= 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid::new(5, 3, 1.0, 0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_field(g, &mut rng);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("5,3,"));
        assert_eq!(text.lines().count(), 4);
        let back = ScalarField::read_csv(&buf[..]).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let text = "3,2,1.0,1.0\n1,2,3\n4,5\n";
        assert!(ScalarField::read_csv(text.as_bytes()).is_err());
        let text = "3,2,1.0,1.0\n1,2,3\n";
        assert!(ScalarField::read_csv(text.as_bytes()).is_err());
    }
}
