//! Principal eigenvalue of the linearized Cahn-Hilliard operator.
//!
//! For a frozen field `u` the probe minimizes
//!
//! ```text
//! R(v) = (eps ||grad v||^2 + (1/eps) (f'(u) v, v)) / ||v||_{-1}^2
//! ```
//!
//! over mean-zero `v`. Writing `v = C^T D^{1/2} y`, where `C` is the
//! orthonormal cosine transform and `D = diag(mu)`, turns the denominator
//! into `|y|^2` and the problem into the smallest eigenvalue of the symmetric
//! matrix `S = eps D^2 + D^{1/2} C diag(q) C^T D^{1/2}`, `q = f'(u)/eps`,
//! restricted to nonzero modes.
//!
//! `S` is handled by shifted inverse iteration. The shift sits strictly below
//! the lower bound `min_mu (eps mu^2 + min(q) mu)`, so `S - shift` is positive
//! definite and its systems are solved with conjugate gradients,
//! preconditioned by the constant-coefficient part of `S`. Each outer step
//! takes the Rayleigh-Ritz minimizer over the current iterate, the previous
//! one and the new inverse-iteration direction.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, SolverWorkspace};
use crate::potential::PotentialSpec;

pub const MAX_ITERATIONS: usize = 500;
const MAX_INNER_ITERATIONS: usize = 500;
const INNER_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralProbeResult {
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
    pub eps: f64,
}

/// `min over nonzero discrete modes of (eps mu + f'(c)/eps) mu`.
pub fn constant_field_lambda(c: f64, eps: f64, grid: &Grid, spec: &PotentialSpec) -> f64 {
    let q = spec.fp(c) / eps;
    let mut best = f64::INFINITY;
    for k in 0..grid.ny() {
        for j in 0..grid.nx() {
            if j == 0 && k == 0 {
                continue;
            }
            let mu = grid.eigenvalue(j, k);
            best = best.min((eps * mu + q) * mu);
        }
    }
    best
}

/// Smallest Rayleigh quotient of the linearized operator at `u`.
pub fn spectral_probe(
    ws: &SolverWorkspace,
    u: &ScalarField,
    eps: f64,
    tol: f64,
    spec: &PotentialSpec,
) -> Result<SpectralProbeResult> {
    let q: Vec<f64> = u.values().iter().map(|&v| spec.fp(v) / eps).collect();
    probe_with_coefficient(ws, &q, eps, tol, None)
}

/// Probe with an explicit reaction coefficient `q` in place of `f'(u)/eps`,
/// optionally starting from a given mean-zero field.
pub fn probe_with_coefficient(
    ws: &SolverWorkspace,
    q: &[f64],
    eps: f64,
    tol: f64,
    start: Option<&ScalarField>,
) -> Result<SpectralProbeResult> {
    if !(eps > 0.0 && eps.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps and tol must be positive, got eps={eps}, tol={tol}"
        )));
    }
    if q.len() != ws.grid().len() || q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "reaction coefficient must be finite and match the grid".into(),
        ));
    }
    let op = ReducedOperator::new(ws, q, eps)?;
    op.smallest_eigenvalue(tol, start)
}

struct ReducedOperator<'a> {
    ws: &'a SolverWorkspace,
    grid: Grid,
    q: ScalarField,
    eps: f64,
    sqrt_mu: Vec<f64>,
    shift: f64,
    /// Diagonal preconditioner: `eps mu^2 + mean(q) mu - shift`.
    precond: Vec<f64>,
    /// Upper estimate of `||S||`; residuals are measured relative to it.
    scale: f64,
}

impl<'a> ReducedOperator<'a> {
    fn new(ws: &'a SolverWorkspace, q: &[f64], eps: f64) -> Result<Self> {
        let grid = *ws.grid();
        let mu = ws.eigenvalues();
        let q_min = q.iter().copied().fold(f64::INFINITY, f64::min);
        let q_mean = q.iter().sum::<f64>() / q.len() as f64;
        let lower = mu
            .iter()
            .skip(1)
            .map(|&m| eps * m * m + q_min * m)
            .fold(f64::INFINITY, f64::min);
        let mu_max = mu.iter().copied().fold(0.0, f64::max);
        let q_max = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = (eps * mu_max * mu_max + q_max * mu_max).max(1.0);
        let margin = 1e-3 * lower.abs().max(grid.smallest_positive_eigenvalue());
        let shift = lower - margin;
        let precond = mu
            .iter()
            .map(|&m| eps * m * m + q_mean * m - shift)
            .collect();
        Ok(Self {
            ws,
            grid,
            q: ScalarField::from_values(grid, q.to_vec())?,
            eps,
            sqrt_mu: mu.iter().map(|m| m.sqrt()).collect(),
            shift,
            precond,
            scale,
        })
    }

    /// `S y`; the zero mode of `y` is ignored and that of the result is zero.
    fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        let scaled: Vec<f64> = y.iter().zip(&self.sqrt_mu).map(|(a, s)| a * s).collect();
        let v = self.ws.inverse(&scaled)?;
        let qv = ScalarField::from_values(self.grid, v.values().iter().zip(self.q.values()).map(|(a, b)| a * b).collect())?;
        let mut out = self.ws.forward(&qv)?;
        for ((o, s), yi) in out.iter_mut().zip(&self.sqrt_mu).zip(y) {
            let mu = s * s;
            *o = *o * s + self.eps * mu * mu * yi;
        }
        out[0] = 0.0;
        Ok(out)
    }

    /// Preconditioned CG for `(S - shift) x = b`.
    fn solve_shifted(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        r[0] = 0.0;
        let b_norm = norm(&r);
        if b_norm == 0.0 {
            return Ok(x);
        }
        let precond = |r: &[f64]| -> Vec<f64> {
            let mut z: Vec<f64> = r.iter().zip(&self.precond).map(|(a, p)| a / p).collect();
            z[0] = 0.0;
            z
        };
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..MAX_INNER_ITERATIONS {
            let mut ap = self.apply(&p)?;
            axpy(-self.shift, &p, &mut ap);
            ap[0] = 0.0;
            let alpha = rz / dot(&p, &ap);
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            if norm(&r) <= INNER_RTOL * b_norm {
                break;
            }
            z = precond(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        // An inexact inner solve only slows the outer iteration; the Ritz step
        // keeps the eigenvalue estimate a valid Rayleigh quotient.
        Ok(x)
    }

    fn initial_iterate(&self, start: Option<&ScalarField>) -> Result<Vec<f64>> {
        let mut y = match start {
            Some(v) => {
                let mut c = self.ws.forward(&v.project_mean_zero())?;
                for (ci, s) in c.iter_mut().zip(&self.sqrt_mu).skip(1) {
                    *ci /= s;
                }
                c
            }
            None => self.precond.iter().map(|p| 1.0 / p).collect(),
        };
        y[0] = 0.0;
        let n = norm(&y);
        if n == 0.0 {
            return Err(Error::InvalidArgument("initial iterate has no mean-zero part".into()));
        }
        y.iter_mut().for_each(|v| *v /= n);
        Ok(y)
    }

    fn smallest_eigenvalue(&self, tol: f64, start: Option<&ScalarField>) -> Result<SpectralProbeResult> {
        let mut x = self.initial_iterate(start)?;
        let mut sx = self.apply(&x)?;
        let mut lambda = dot(&x, &sx);
        let mut prev: Option<Vec<f64>> = None;
        let mut residual = f64::INFINITY;

        for it in 1..=MAX_ITERATIONS {
            residual = residual_norm(&sx, &x, lambda) / self.scale;
            if residual <= tol {
                return Ok(SpectralProbeResult {
                    lambda,
                    iterations: it - 1,
                    residual,
                    eps: self.eps,
                });
            }
            let dir = self.solve_shifted(&x)?;
            let mut basis = vec![x.clone()];
            for cand in std::iter::once(dir).chain(prev.take()) {
                if let Some(v) = orthonormalize(&basis, cand) {
                    basis.push(v);
                }
            }
            let images: Vec<Vec<f64>> = basis.iter().map(|b| self.apply(b)).collect::<Result<_>>()?;
            let m = basis.len();
            let h = DMatrix::from_fn(m, m, |i, j| 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i])));
            let eig = SymmetricEigen::new(h);
            let (imin, &theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("Ritz space is nonempty");
            let c = eig.eigenvectors.column(imin);
            let mut x_new = vec![0.0; x.len()];
            let mut sx_new = vec![0.0; x.len()];
            for k in 0..m {
                axpy(c[k], &basis[k], &mut x_new);
                axpy(c[k], &images[k], &mut sx_new);
            }
            let nrm = norm(&x_new);
            x_new.iter_mut().for_each(|v| *v /= nrm);
            sx_new.iter_mut().for_each(|v| *v /= nrm);
            prev = Some(x);
            x = x_new;
            sx = sx_new;
            lambda = theta;
        }
        Err(Error::NotConverged {
            iterations: MAX_ITERATIONS,
            residual,
            best: lambda,
        })
    }
}

/// Gram-Schmidt `v` against an orthonormal `basis`; `None` if `v` is (nearly) dependent.
fn orthonormalize(basis: &[Vec<f64>], mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n0 = norm(&v);
    if n0 == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, &v);
            axpy(-c, b, &mut v);
        }
    }
    let n = norm(&v);
    if n <= 1e-10 * n0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

fn residual_norm(sx: &[f64], x: &[f64], lambda: f64) -> f64 {
    sx.iter()
        .zip(x)
        .map(|(a, b)| (a - lambda * b).powi(2))
        .sum::<f64>()
        .sqrt()
        / norm(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dense_neg_laplacian, h1_seminorm};
    use crate::potential::build_truncated_potential;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Orthonormal basis of the mean-zero subspace (Helmert columns).
    fn helmert(n: usize) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(n, n - 1);
        for k in 1..n {
            let s = ((k * (k + 1)) as f64).sqrt();
            for i in 0..k {
                q[(i, k - 1)] = 1.0 / s;
            }
            q[(k, k - 1)] = -(k as f64) / s;
        }
        q
    }

    /// Dense generalized eigensolve of `(eps K + diag(q), K^{-1})` on mean-zero vectors.
    fn dense_lambda(grid: &Grid, q: &[f64], eps: f64) -> f64 {
        let n = grid.len();
        let k = dense_neg_laplacian(grid);
        let a = &k * eps + DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(q));
        let h = helmert(n);
        let kr = h.transpose() * &k * &h;
        let ar = h.transpose() * &a * &h;
        let l = kr.cholesky().expect("reduced Laplacian is SPD").l();
        let m = l.transpose() * ar * &l;
        let m = (&m + m.transpose()) * 0.5;
        SymmetricEigen::new(m).eigenvalues.min()
    }

    fn quotient(ws: &SolverWorkspace, q: &[f64], eps: f64, v: &ScalarField) -> f64 {
        let s = h1_seminorm(v).unwrap();
        let qv: f64 = v.values().iter().zip(q).map(|(a, b)| b * a * a).sum::<f64>() * v.grid().cell_area();
        let d = ws.hm1_norm(v).unwrap();
        (eps * s * s + qv) / (d * d)
    }

    #[test]
    fn constant_field_lambda_closed_form() {
        let g = Grid::unit_square(16).unwrap();
        let spec = build_truncated_potential(2.0, 1.0).unwrap();
        let eps = 0.1;
        let mu1 = g.eigenvalue(1, 0);
        // f'(1) = 2 makes every term increasing in mu.
        assert_relative_eq!(
            constant_field_lambda(1.0, eps, &g, &spec),
            (eps * mu1 + 2.0 / eps) * mu1,
            max_relative = 1e-14
        );
        let lam0 = constant_field_lambda(0.0, eps, &g, &spec);
        assert!(lam0 < 0.0);
        assert!(lam0 >= -1.0 / (4.0 * eps.powi(3)) - 1e-9);
        assert!(constant_field_lambda(0.0, 2.0, &g, &spec) > 0.0);
    }

    #[test]
    fn probe_matches_constant_fields() {
        let g = Grid::unit_square(16).unwrap();
        let ws = SolverWorkspace::new(g);
        let spec = build_truncated_potential(2.0, 1.0).unwrap();
        for c in [1.0, 0.0, -0.5] {
            for eps in [0.1, 0.05] {
                let u = ScalarField::constant(g, c);
                let res = spectral_probe(&ws, &u, eps, 1e-10, &spec).unwrap();
                let exact = constant_field_lambda(c, eps, &g, &spec);
                assert_relative_eq!(res.lambda, exact, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn probe_matches_dense_oracle() {
        let g = Grid::new(10, 8, 1.0, 0.8).unwrap();
        let ws = SolverWorkspace::new(g);
        let spec = build_truncated_potential(2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for eps in [0.1, 0.05] {
            let u = ScalarField::from_values(g, (0..g.len()).map(|_| rng.gen_range(-1.2..1.2)).collect())
                .unwrap();
            let q: Vec<f64> = u.values().iter().map(|&v| spec.fp(v) / eps).collect();
            let res = spectral_probe(&ws, &u, eps, 1e-10, &spec).unwrap();
            let dense = dense_lambda(&g, &q, eps);
            assert_relative_eq!(res.lambda, dense, max_relative = 1e-8);
        }
    }

    #[test]
    fn probe_is_a_lower_bound_on_quotients() {
        let g = Grid::unit_square(12).unwrap();
        let ws = SolverWorkspace::new(g);
        let spec = build_truncated_potential(2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let eps = 0.08;
        let u = ScalarField::from_values(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let q: Vec<f64> = u.values().iter().map(|&v| spec.fp(v) / eps).collect();
        let lam = spectral_probe(&ws, &u, eps, 1e-10, &spec).unwrap().lambda;
        for _ in 0..20 {
            let v = ScalarField::from_values(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap()
                .project_mean_zero();
            assert!(quotient(&ws, &q, eps, &v) >= lam - 1e-9 * lam.abs());
        }
    }

    #[test]
    fn start_scaling_does_not_matter() {
        let g = Grid::unit_square(12).unwrap();
        let ws = SolverWorkspace::new(g);
        let spec = build_truncated_potential(2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let eps = 0.1;
        let u = ScalarField::from_values(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let q: Vec<f64> = u.values().iter().map(|&v| spec.fp(v) / eps).collect();
        let v0 = g.cosine_mode(1, 1).add_scaled(0.3, &g.cosine_mode(2, 0)).unwrap();
        let a = probe_with_coefficient(&ws, &q, eps, 1e-10, Some(&v0)).unwrap();
        let b = probe_with_coefficient(&ws, &q, eps, 1e-10, Some(&v0.scaled(-1e3))).unwrap();
        assert_relative_eq!(a.lambda, b.lambda, max_relative = 1e-9);
    }

    #[test]
    fn shifting_coefficient_raises_lambda() {
        let g = Grid::unit_square(12).unwrap();
        let ws = SolverWorkspace::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let eps = 0.1;
        let q: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-10.0..20.0)).collect();
        let base = probe_with_coefficient(&ws, &q, eps, 1e-10, None).unwrap().lambda;
        let mu1 = g.smallest_positive_eigenvalue();
        for s in [0.5, 3.0, 25.0] {
            let qs: Vec<f64> = q.iter().map(|v| v + s).collect();
            let lam = probe_with_coefficient(&ws, &qs, eps, 1e-10, None).unwrap().lambda;
            assert!(lam >= base + s * mu1 - 1e-8 * lam.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let g = Grid::unit_square(6).unwrap();
        let ws = SolverWorkspace::new(g);
        let spec = build_truncated_potential(2.0, 1.0).unwrap();
        let u = g.zeros();
        assert!(spectral_probe(&ws, &u, 0.0, 1e-8, &spec).is_err());
        assert!(spectral_probe(&ws, &u, 0.1, 0.0, &spec).is_err());
        assert!(probe_with_coefficient(&ws, &[1.0; 3], 0.1, 1e-8, None).is_err());
        assert!(probe_with_coefficient(&ws, &[1.0; 36], 0.1, 1e-8, Some(&ScalarField::constant(g, 1.0))).is_err());
    }
}
