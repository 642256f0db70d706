//! Truncated double-well potential with quadratic growth.
//!
//! Inside `[-M, M]` the potential is the usual `F(v) = (v^2 - 1)^2 / 4`. On
//! `(M, 2M]` and `[-2M, -M)` it is replaced by ninth-order Hermite
//! polynomials that match `F` to fourth order at `|v| = M`, and at `|v| = 2M`
//! hand over to a linear function with zero second through fourth
//! derivatives. The result is `C^4` with bounded `f`, `f'` and `f''`.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::grid::ScalarField;

const DEGREE: usize = 9;
const NCOEF: usize = DEGREE + 1;
const BOUND_SAMPLES: usize = 10_000;

/// A ninth-order polynomial written in powers of `(v - center)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedPolynomial {
    pub center: f64,
    pub coeffs: [f64; NCOEF],
}

impl ShiftedPolynomial {
    /// `d`-th derivative at `v`.
    pub fn derivative(&self, d: usize, v: f64) -> f64 {
        if d > DEGREE {
            return 0.0;
        }
        let x = v - self.center;
        let mut acc = 0.0;
        for k in (d..NCOEF).rev() {
            acc = acc * x + self.coeffs[k] * falling_factorial(k, d);
        }
        acc
    }

    pub fn value(&self, v: f64) -> f64 {
        self.derivative(0, v)
    }
}

/// `k (k-1) ... (k-d+1)`.
fn falling_factorial(k: usize, d: usize) -> f64 {
    (0..d).fold(1.0, |acc, i| acc * (k - i) as f64)
}

/// Derivatives `0..=4` of the untruncated quartic.
fn quartic_derivative(d: usize, v: f64) -> f64 {
    match d {
        0 => 0.25 * (v * v - 1.0).powi(2),
        1 => (v * v - 1.0) * v,
        2 => 3.0 * v * v - 1.0,
        3 => 6.0 * v,
        4 => 6.0,
        _ => 0.0,
    }
}

/// The ten Hermite conditions `(point, derivative order, target)` for one side.
/// `sign = 1` gives the `[M, 2M]` piece, `sign = -1` the mirrored one.
fn hermite_conditions(m: f64, sign: f64) -> [(f64, usize, f64); NCOEF] {
    let inner = sign * m;
    let outer = sign * 2.0 * m;
    let slope = ((2.0 * m).powi(2) - 1.0) * 2.0 * m;
    let height = 0.25 * ((2.0 * m).powi(2) - 1.0).powi(2);
    [
        (inner, 0, quartic_derivative(0, inner)),
        (inner, 1, quartic_derivative(1, inner)),
        (inner, 2, quartic_derivative(2, inner)),
        (inner, 3, quartic_derivative(3, inner)),
        (inner, 4, quartic_derivative(4, inner)),
        (outer, 0, height),
        (outer, 1, sign * slope),
        (outer, 2, 0.0),
        (outer, 3, 0.0),
        (outer, 4, 0.0),
    ]
}

fn solve_hermite(m: f64, sign: f64) -> Result<ShiftedPolynomial> {
    let center = sign * 1.5 * m;
    let conds = hermite_conditions(m, sign);
    let mut a = SMatrix::<f64, NCOEF, NCOEF>::zeros();
    let mut b = SVector::<f64, NCOEF>::zeros();
    for (row, &(x, d, target)) in conds.iter().enumerate() {
        let s = x - center;
        for k in d..NCOEF {
            a[(row, k)] = falling_factorial(k, d) * s.powi((k - d) as i32);
        }
        b[row] = target;
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Internal("singular Hermite interpolation system".into()))?;
    let mut coeffs = [0.0; NCOEF];
    coeffs.copy_from_slice(sol.as_slice());
    Ok(ShiftedPolynomial { center, coeffs })
}

/// The truncated potential and the constants derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    m: f64,
    c0: f64,
    phi_plus: ShiftedPolynomial,
    phi_minus: ShiftedPolynomial,
    l_bound: f64,
}

/// Builds the truncated potential for cut-off level `m` and energy shift `c0`.
pub fn build_truncated_potential(m: f64, c0: f64) -> Result<PotentialSpec> {
    if !(m.is_finite() && m > 1.0) {
        return Err(Error::InvalidArgument(format!("cut-off level must exceed 1, got {m}")));
    }
    if !(c0.is_finite() && c0 > 0.0) {
        return Err(Error::InvalidArgument(format!("c0 must be positive, got {c0}")));
    }
    let mut spec = PotentialSpec {
        m,
        c0,
        phi_plus: solve_hermite(m, 1.0)?,
        phi_minus: solve_hermite(m, -1.0)?,
        l_bound: 0.0,
    };
    spec.l_bound = spec.sampled_bound();
    Ok(spec)
}

impl Default for PotentialSpec {
    fn default() -> Self {
        build_truncated_potential(2.0, 1.0).expect("default potential parameters are valid")
    }
}

impl PotentialSpec {
    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn phi_plus(&self) -> &ShiftedPolynomial {
        &self.phi_plus
    }

    pub fn phi_minus(&self) -> &ShiftedPolynomial {
        &self.phi_minus
    }

    /// Sampled bound on `|f|`, `|f'|` and `|f''|` over the real line.
    pub fn l_bound(&self) -> f64 {
        self.l_bound
    }

    fn outer_slope(&self) -> f64 {
        ((2.0 * self.m).powi(2) - 1.0) * 2.0 * self.m
    }

    fn outer_height(&self) -> f64 {
        0.25 * ((2.0 * self.m).powi(2) - 1.0).powi(2)
    }

    /// `d`-th derivative of the truncated potential, `d <= 4`.
    fn derivative(&self, d: usize, v: f64) -> f64 {
        let (m, two_m) = (self.m, 2.0 * self.m);
        if v >= two_m {
            match d {
                0 => self.outer_slope() * (v - two_m) + self.outer_height(),
                1 => self.outer_slope(),
                _ => 0.0,
            }
        } else if v > m {
            self.phi_plus.derivative(d, v)
        } else if v >= -m {
            quartic_derivative(d, v)
        } else if v > -two_m {
            self.phi_minus.derivative(d, v)
        } else {
            match d {
                0 => -self.outer_slope() * (v + two_m) + self.outer_height(),
                1 => -self.outer_slope(),
                _ => 0.0,
            }
        }
    }

    /// Potential value.
    #[allow(non_snake_case)]
    pub fn F(&self, v: f64) -> f64 {
        self.derivative(0, v)
    }

    /// First derivative of the potential.
    pub fn f(&self, v: f64) -> f64 {
        self.derivative(1, v)
    }

    pub fn fp(&self, v: f64) -> f64 {
        self.derivative(2, v)
    }

    pub fn fpp(&self, v: f64) -> f64 {
        self.derivative(3, v)
    }

    /// Residuals of all twenty Hermite conditions, plus side / derivative labels.
    pub fn hermite_residuals(&self) -> Vec<(&'static str, f64, usize, f64)> {
        let mut out = Vec::with_capacity(2 * NCOEF);
        for (label, poly, sign) in [("plus", &self.phi_plus, 1.0), ("minus", &self.phi_minus, -1.0)] {
            for (x, d, target) in hermite_conditions(self.m, sign) {
                out.push((label, x, d, poly.derivative(d, x) - target));
            }
        }
        out
    }

    fn sampled_bound(&self) -> f64 {
        let lo = -3.0 * self.m;
        let hi = 3.0 * self.m;
        let step = (hi - lo) / (BOUND_SAMPLES - 1) as f64;
        let knots = [-2.0 * self.m, -self.m, self.m, 2.0 * self.m];
        let points = (0..BOUND_SAMPLES)
            .map(|i| lo + i as f64 * step)
            .chain(knots);
        let mut bound = self.outer_slope();
        for v in points {
            bound = bound
                .max(self.f(v).abs())
                .max(self.fp(v).abs())
                .max(self.fpp(v).abs());
        }
        bound
    }

    /// `sqrt(integral of F(u) + c0)`.
    pub fn a_eval(&self, u: &ScalarField) -> f64 {
        let s: f64 = u.values().iter().map(|&v| self.F(v)).sum();
        (u.grid().cell_area() * s + self.c0).sqrt()
    }

    /// `f(u) / A(u)`, the nonlinear term of the SAV formulation.
    pub fn g_eval(&self, u: &ScalarField) -> ScalarField {
        let a = self.a_eval(u);
        u.map(|v| self.f(v) / a)
    }

    /// First Gateaux derivative of `A` at `v` in direction `w`.
    #[allow(non_snake_case)]
    pub fn DA_eval(&self, v: &ScalarField, w: &ScalarField) -> Result<f64> {
        Ok(0.5 * self.g_eval(v).inner(w)?)
    }

    /// Second Gateaux derivative of `A` at `v` in direction `w`.
    #[allow(non_snake_case)]
    pub fn D2A_eval(&self, v: &ScalarField, w: &ScalarField) -> Result<f64> {
        v.check_grid(w)?;
        let a = self.a_eval(v);
        let h = v.grid().cell_area();
        let (mut quad, mut lin) = (0.0, 0.0);
        for (&vi, &wi) in v.values().iter().zip(w.values()) {
            quad += self.fp(vi) * wi * wi;
            lin += self.f(vi) * wi;
        }
        quad *= h;
        lin *= h;
        Ok(0.5 * quad / a - 0.25 * lin * lin / (a * a * a))
    }
}
