//! Consistency and convergence instrumentation.
//!
//! Temporal order is measured the way it is for problems without a known
//! exact solution: run at `tau, tau/2, tau/4, ...` on one fixed grid, take
//! `H^{-1}` norms of differences between consecutive runs at the final time,
//! and compare consecutive differences.

use std::collections::HashMap;
use std::io::Write;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, SolverWorkspace};
use crate::potential::PotentialSpec;
use crate::sav::Simulation;

/// Mean mismatch tolerated between fields being compared in `H^{-1}`.
const MEAN_MATCH_TOL: f64 = 1e-10;

/// `log(d_coarse / d_fine) / log 2`.
pub fn order_of_convergence(d_coarse: f64, d_fine: f64) -> Result<f64> {
    if !(d_coarse > 0.0 && d_fine > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "differences must be positive, got {d_coarse} and {d_fine}"
        )));
    }
    Ok((d_coarse / d_fine).ln() / std::f64::consts::LN_2)
}

/// A space-time function with its time derivative.
pub trait ExactSolution {
    fn value(&self, x: f64, y: f64, t: f64) -> f64;
    fn time_derivative(&self, x: f64, y: f64, t: f64) -> f64;
}

/// [`ExactSolution`] backed by a pair of closures.
pub struct FnSolution<U, D> {
    pub value: U,
    pub time_derivative: D,
}

impl<U, D> ExactSolution for FnSolution<U, D>
where
    U: Fn(f64, f64, f64) -> f64,
    D: Fn(f64, f64, f64) -> f64,
{
    fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.value)(x, y, t)
    }

    fn time_derivative(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.time_derivative)(x, y, t)
    }
}

#[derive(Debug, Clone)]
pub struct TruncationResidual {
    pub field: ScalarField,
    /// `||R||_{h,-1}` of the mean-projected residual.
    pub norm: f64,
    /// Norm of the time-difference bracket alone.
    pub time_part_norm: f64,
    /// Norm of the potential-difference bracket alone.
    pub potential_part_norm: f64,
}

/// Residual left when an exact solution is inserted into the backward-Euler
/// form with the nonlinearity lagged:
/// `R = Laplacian^{-1}[(u(t+tau) - u(t))/tau - u_t(t+tau)] + (f(u(t+tau)) - f(u(t)))/eps`.
pub fn truncation_residual(
    ws: &SolverWorkspace,
    exact: &dyn ExactSolution,
    t_n: f64,
    tau: f64,
    eps: f64,
    spec: &PotentialSpec,
) -> Result<TruncationResidual> {
    if !(tau > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau and eps must be positive, got tau={tau}, eps={eps}"
        )));
    }
    let grid = ws.grid();
    let t_np1 = t_n + tau;
    let u_n = grid.sample(|x, y| exact.value(x, y, t_n));
    let u_np1 = grid.sample(|x, y| exact.value(x, y, t_np1));
    let ut = grid.sample(|x, y| exact.time_derivative(x, y, t_np1));
    let drift = (u_np1.mean() - u_n.mean()).abs();
    if drift > MEAN_MATCH_TOL {
        return Err(Error::InvalidArgument(format!(
            "exact solution does not conserve its mean: drift {drift:e}"
        )));
    }

    let quotient = u_np1.sub(&u_n)?.scaled(1.0 / tau).sub(&ut)?.project_mean_zero();
    let time_part = ws.inv_neumann_laplacian(&quotient)?.scaled(-1.0);
    let f_np1 = u_np1.map(|v| spec.f(v));
    let f_n = u_n.map(|v| spec.f(v));
    let potential_part = f_np1.sub(&f_n)?.scaled(1.0 / eps);
    let field = time_part.add_scaled(1.0, &potential_part)?;

    Ok(TruncationResidual {
        norm: ws.hm1_norm(&field.project_mean_zero())?,
        time_part_norm: ws.hm1_norm(&time_part.project_mean_zero())?,
        potential_part_norm: ws.hm1_norm(&potential_part.project_mean_zero())?,
        field,
    })
}

/// `||u_a - u_b||_{h,-1}` for two fields with matching means.
pub fn pairwise_diff_hm1(ws: &SolverWorkspace, u_a: &ScalarField, u_b: &ScalarField) -> Result<f64> {
    let d = u_a.sub(u_b)?;
    let m = d.mean();
    if m.abs() > MEAN_MATCH_TOL {
        return Err(Error::Precondition(format!(
            "fields differ in mean by {m:e}; H^-1 distance needs equal means"
        )));
    }
    ws.hm1_norm(&d.project_mean_zero())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub tau: f64,
    /// `||u_N(tau) - u_N(tau/2)||_{h,-1}`.
    pub diff_hm1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// `orders[k]` compares `rows[k]` with `rows[k + 1]`; NaN where a difference vanished.
    pub orders: Vec<f64>,
    /// Set when any order could not be formed because a difference was zero.
    pub degenerate: bool,
}

impl ConvergenceReport {
    fn from_finals(ws: &SolverWorkspace, taus: &[f64], finals: &[ScalarField]) -> Result<Self> {
        let mut rows = Vec::with_capacity(finals.len().saturating_sub(1));
        for (k, pair) in finals.windows(2).enumerate() {
            rows.push(ConvergenceRow {
                tau: taus[k],
                diff_hm1: pairwise_diff_hm1(ws, &pair[0], &pair[1])?,
            });
        }
        let mut degenerate = false;
        let orders = rows
            .windows(2)
            .map(|w| {
                order_of_convergence(w[0].diff_hm1, w[1].diff_hm1).unwrap_or_else(|_| {
                    degenerate = true;
                    f64::NAN
                })
            })
            .collect();
        Ok(Self {
            rows,
            orders,
            degenerate,
        })
    }

    /// Order from the finest three runs.
    pub fn finest_order(&self) -> Option<f64> {
        self.orders.last().copied()
    }

    /// `tau,diff_hm1,order`, the order column empty on the first row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau,diff_hm1,order")?;
        for (k, row) in self.rows.iter().enumerate() {
            write!(w, "{:.16e},{:.16e},", row.tau, row.diff_hm1)?;
            if k > 0 {
                write!(w, "{:.16e}", self.orders[k - 1])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs `run(tau)` for `tau0 / 2^k`, `k = 0..=n_halvings`, and compares the
/// returned final fields. `threads > 1` fans the runs out over scoped threads.
pub fn convergence_study_with<F>(
    grid: Grid,
    tau0: f64,
    n_halvings: usize,
    threads: usize,
    run: F,
) -> Result<ConvergenceReport>
where
    F: Fn(f64) -> Result<ScalarField> + Sync,
{
    if n_halvings < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 halvings to form an order, got {n_halvings}"
        )));
    }
    let taus: Vec<f64> = (0..=n_halvings).map(|k| tau0 / (1u64 << k) as f64).collect();
    let finals: Vec<ScalarField> = if threads <= 1 {
        taus.iter().map(|&t| run(t)).collect::<Result<_>>()?
    } else {
        let mut slots: Vec<Option<Result<ScalarField>>> = (0..taus.len()).map(|_| None).collect();
        for (chunk_taus, chunk_slots) in taus.chunks(threads).zip(slots.chunks_mut(threads)) {
            std::thread::scope(|s| {
                let run = &run;
                for (&t, slot) in chunk_taus.iter().zip(chunk_slots.iter_mut()) {
                    s.spawn(move || *slot = Some(run(t)));
                }
            });
        }
        slots
            .into_iter()
            .map(|s| s.expect("every run slot is filled"))
            .collect::<Result<_>>()?
    };
    let ws = SolverWorkspace::new(grid);
    ConvergenceReport::from_finals(&ws, &taus, &finals)
}

/// Final field of a full SAV run under `config`.
pub fn run_final_field(config: &RunConfig) -> Result<ScalarField> {
    let mut sim = Simulation::from_config(config)?;
    for _ in 0..config.steps() {
        sim.step()?;
    }
    Ok(sim.into_state().u)
}

/// Temporal convergence study of the SAV scheme starting from `base.tau`.
pub fn convergence_study(base: &RunConfig, n_halvings: usize) -> Result<ConvergenceReport> {
    convergence_study_threads(base, n_halvings, 0)
}

pub fn convergence_study_threads(
    base: &RunConfig,
    n_halvings: usize,
    threads: usize,
) -> Result<ConvergenceReport> {
    base.validate()?;
    convergence_study_with(base.grid()?, base.tau, n_halvings, threads, |tau| {
        let mut cfg = base.clone();
        cfg.tau = tau;
        run_final_field(&cfg)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        let seg = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let open: f64 = self.points.windows(2).map(|w| seg(w[0], w[1])).sum();
        match (self.closed, self.points.first(), self.points.last()) {
            (true, Some(&a), Some(&b)) => open + seg(b, a),
            _ => open,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelSetPolylines {
    pub polylines: Vec<Polyline>,
}

impl LevelSetPolylines {
    pub fn total_length(&self) -> f64 {
        self.polylines.iter().map(Polyline::length).sum()
    }

    /// `polyline_id,vertex_id,x,y,closed`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "polyline_id,vertex_id,x,y,closed")?;
        for (pid, line) in self.polylines.iter().enumerate() {
            for (vid, (x, y)) in line.points.iter().enumerate() {
                writeln!(w, "{pid},{vid},{x:.16e},{y:.16e},{}", line.closed as u8)?;
            }
        }
        Ok(())
    }
}

/// Edge of the dual mesh joining two cell centers: `(vertical, i, j)` joins
/// `(i, j)` with `(i + 1, j)` when horizontal and with `(i, j + 1)` when vertical.
type EdgeId = (bool, usize, usize);

/// Zero level set by marching squares on the mesh of cell centers.
///
/// Crossing points are linearly interpolated along dual edges. Saddle cells
/// are resolved by the sign of the mean of their four corner values.
pub fn extract_zero_level(u: &ScalarField) -> LevelSetPolylines {
    let g = *u.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let pos = |i: usize, j: usize| u.get(i, j) >= 0.0;

    let crossing = |e: EdgeId| -> (f64, f64) {
        let (vertical, i, j) = e;
        let (i1, j1) = if vertical { (i, j + 1) } else { (i + 1, j) };
        let (a, b) = (u.get(i, j), u.get(i1, j1));
        let t = a / (a - b);
        let (x0, y0) = (g.x(i), g.y(j));
        let (x1, y1) = (g.x(i1), g.y(j1));
        (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    };

    let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let bottom = (false, i, j);
            let right = (true, i + 1, j);
            let top = (false, i, j + 1);
            let left = (true, i, j);
            let (p00, p10, p11, p01) = (pos(i, j), pos(i + 1, j), pos(i + 1, j + 1), pos(i, j + 1));
            let mut crossed = Vec::with_capacity(4);
            if p00 != p10 {
                crossed.push(bottom);
            }
            if p10 != p11 {
                crossed.push(right);
            }
            if p11 != p01 {
                crossed.push(top);
            }
            if p01 != p00 {
                crossed.push(left);
            }
            match crossed.len() {
                2 => segments.push((crossed[0], crossed[1])),
                4 => {
                    let center = 0.25
                        * (u.get(i, j) + u.get(i + 1, j) + u.get(i + 1, j + 1) + u.get(i, j + 1));
                    if (center >= 0.0) == p00 {
                        // (i, j) and (i+1, j+1) connect through the center.
                        segments.push((bottom, right));
                        segments.push((top, left));
                    } else {
                        segments.push((bottom, left));
                        segments.push((top, right));
                    }
                }
                _ => {}
            }
        }
    }

    let mut at_edge: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (k, &(a, b)) in segments.iter().enumerate() {
        at_edge.entry(a).or_default().push(k);
        at_edge.entry(b).or_default().push(k);
    }

    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    let trace = |start: usize, from: EdgeId, used: &mut Vec<bool>| {
        used[start] = true;
        let (a, b) = segments[start];
        let mut cur = if a == from { b } else { a };
        let mut edges = vec![from, cur];
        loop {
            let next = at_edge[&cur].iter().copied().find(|&k| !used[k]);
            let Some(k) = next else { break };
            used[k] = true;
            let (a, b) = segments[k];
            cur = if a == cur { b } else { a };
            edges.push(cur);
        }
        let closed = edges.len() > 2 && edges.first() == edges.last();
        if closed {
            edges.pop();
        }
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(edges.len());
        for e in edges {
            let p = crossing(e);
            if points.last() != Some(&p) {
                points.push(p);
            }
        }
        if closed && points.len() > 1 && points.first() == points.last() {
            points.pop();
        }
        Polyline { points, closed }
    };

    // Open chains start at edges touched by a single segment.
    for k in 0..segments.len() {
        if used[k] {
            continue;
        }
        let (a, b) = segments[k];
        let start = if at_edge[&a].len() == 1 {
            Some(a)
        } else if at_edge[&b].len() == 1 {
            Some(b)
        } else {
            None
        };
        if let Some(from) = start {
            polylines.push(trace(k, from, &mut used));
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            let from = segments[k].0;
            polylines.push(trace(k, from, &mut used));
        }
    }
    LevelSetPolylines { polylines }
}
