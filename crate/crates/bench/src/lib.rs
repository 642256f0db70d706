//! Benchmark fixtures shared by the criterion targets.

use savch_core::{init_state, initial_condition, Grid, PotentialSpec, SavState};

/// Two-circle start on an `n x n` unit square at interface width `eps`.
pub fn two_circle_state(n: usize, eps: f64, spec: &PotentialSpec) -> SavState {
    let grid = Grid::unit_square(n).expect("benchmark grid");
    init_state(initial_condition(&grid, eps).expect("benchmark eps"), spec)
}
