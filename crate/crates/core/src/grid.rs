//! Uniform size mesh on `[0, 1]` with composite trapezoid weights.

use crate::error::{Error, Result};

/// Smallest admissible number of cells.
pub const MIN_CELLS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Builds the uniform grid with `n` cells (`n + 1` nodes).
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_CELLS {
            return Err(Error::GridTooCoarse { got: n, min: MIN_CELLS });
        }
        let h = 1.0 / n as f64;
        let nodes = (0..=n).map(|i| i as f64 / n as f64).collect();
        let weights = (0..=n).map(|i| if i == 0 || i == n { 0.5 * h } else { h }).collect();
        Ok(Grid { nodes, weights })
    }

    /// Number of cells `N`.
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of nodes `N + 1`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Trapezoid quadrature of grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Weighted L¹ norm `Σ w_i |v_i|`.
    pub fn l1_norm(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v.abs()).sum()
    }

    /// Weighted L¹ distance between two grid functions.
    pub fn l1_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * (x - y).abs()).sum()
    }

    /// Piecewise-linear interpolation of grid values at `s` (clamped to `[0, 1]`).
    pub fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        let (lo, frac) = self.locate(s);
        if frac == 0.0 {
            values[lo]
        } else {
            (1.0 - frac) * values[lo] + frac * values[lo + 1]
        }
    }

    /// Cell index and fractional offset for `s`; `frac == 0` at the last node.
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let n = self.cells();
        let x = s.clamp(0.0, 1.0) * n as f64;
        let lo = (x.floor() as usize).min(n);
        if lo == n {
            (n, 0.0)
        } else {
            (lo, x - lo as f64)
        }
    }
}

/// Convenience constructor matching the `make_grid` operation.
pub fn make_grid(n: usize) -> Result<Grid> {
    Grid::new(n)
}
