//! Time grids on [0, T].

use crate::error::{Error, Result};

/// Uniform grid 0 = t_0 < t_1 < ... < t_n = T with `steps` intervals.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    assert!(steps >= 1 && horizon > 0.0);
    let mut grid: Vec<f64> = (0..=steps)
        .map(|k| k as f64 * horizon / steps as f64)
        .collect();
    grid[steps] = horizon; // exact endpoint regardless of rounding
    grid
}

/// Checks that a grid is finite, strictly increasing and has >= 2 nodes.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Grid("grid needs at least two nodes".into()));
    }
    if !grid.iter().all(|t| t.is_finite()) {
        return Err(Error::Grid("grid contains non-finite times".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Grid("grid times must be strictly increasing".into()));
    }
    Ok(())
}

/// Index of the grid node equal to `t` (within 1e-9), if any.
pub fn node_index(grid: &[f64], t: f64) -> Option<usize> {
    grid.iter().position(|&g| (g - t).abs() <= 1e-9)
}
