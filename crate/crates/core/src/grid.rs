use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform discretization of `[0, T] × [0, 1]`.
///
/// Time nodes are `t_n = n·dt` for `n = 0..=nt`; space nodes are the interior
/// points `x_i = (i + 1)·dx` for `i = 0..nx`, so the Dirichlet boundary values
/// at `x = 0` and `x = 1` are implicit zeros.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    #[serde(rename = "T")]
    horizon: f64,
    nt: usize,
    nx: usize,
}

impl SpaceTimeGrid {
    pub fn new(horizon: f64, nt: usize, nx: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if nt == 0 || nx == 0 {
            return Err(Error::InvalidGrid(format!("need nt >= 1 and nx >= 1, got nt = {nt}, nx = {nx}")));
        }
        Ok(Self { horizon, nt, nx })
    }

    /// Desk-scale default: `T = 1`, `nt = 1024`, `nx = 64`.
    pub fn desk() -> Self {
        Self { horizon: 1.0, nt: 1024, nx: 64 }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.nx + 1) as f64
    }

    /// Time of node `n`.
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Position of interior node `i` (zero-based).
    pub fn x(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.dx()
    }

    pub fn space_nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    /// Interior node closest to `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let k = (x / self.dx()).round() as isize - 1;
        k.clamp(0, self.nx as isize - 1) as usize
    }

    pub fn ensure_same(&self, other: &SpaceTimeGrid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what}: {self:?} vs {other:?}")))
        }
    }
}
