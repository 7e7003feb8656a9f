//! Discretized space-time white noise and the Girsanov change of measure.
//!
//! Cell `(n, i)` covers `[t_n, t_{n+1}] × [x_i - dx/2, x_i + dx/2]`; its
//! increment is `N(0, dt·dx)`. Every path draws from its own ChaCha8 stream
//! selected by `(seed, path_index)` and fills cells in row-major order, so a
//! sample never depends on how paths are scheduled across workers.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;

const NOISE_MAGIC: &[u8; 4] = b"WNS1";
const SPLIT_STREAM_SALT: u64 = 0x5d58_39a1_c2f4_8e07;

#[derive(Clone, Debug, PartialEq)]
pub struct WhiteNoiseSample {
    grid: SpaceTimeGrid,
    seed: u64,
    path_index: u64,
    increments: Array2<f64>,
}

pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Independent `N(0, dt·dx)` increments for one ensemble member.
pub fn sample_white_noise(grid: &SpaceTimeGrid, seed: u64, path_index: u64) -> WhiteNoiseSample {
    let scale = (grid.dt() * grid.dx()).sqrt();
    let mut rng = path_rng(seed, path_index);
    let increments =
        Array2::from_shape_simple_fn((grid.nt(), grid.nx()), || scale * rng.sample::<f64, _>(StandardNormal));
    WhiteNoiseSample { grid: *grid, seed, path_index, increments }
}

impl WhiteNoiseSample {
    pub fn from_increments(grid: &SpaceTimeGrid, seed: u64, path_index: u64, increments: Array2<f64>) -> Result<Self> {
        if increments.dim() != (grid.nt(), grid.nx()) {
            return Err(Error::GridMismatch(format!(
                "increments have shape {:?}, grid needs ({}, {})",
                increments.dim(),
                grid.nt(),
                grid.nx()
            )));
        }
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("noise increments".into()));
        }
        Ok(Self { grid: *grid, seed, path_index, increments })
    }

    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self { grid: *grid, seed: 0, path_index: 0, increments: Array2::zeros((grid.nt(), grid.nx())) }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn increments(&self) -> &Array2<f64> {
        &self.increments
    }

    /// Sum of every cell increment, i.e. the sheet value `W(T, ·)` over the covered strip.
    pub fn total(&self) -> f64 {
        self.increments.iter().sum()
    }

    /// Cumulative sums `W[n][j] = Σ_{m<n} Σ_{i<j} ΔW(m,i)`, shape `(nt+1) × (nx+1)`.
    /// Summation runs time-major, then space.
    pub fn sheet(&self) -> Array2<f64> {
        cumulate(self.increments.view())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(NOISE_MAGIC)?;
        write_header(&mut out, &self.grid)?;
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&self.path_index.to_le_bytes())?;
        write_body(&mut out, self.increments.view())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        expect_magic(&mut input, NOISE_MAGIC)?;
        let grid = read_header(&mut input)?;
        let seed = read_u64(&mut input)?;
        let path_index = read_u64(&mut input)?;
        let increments = read_body(&mut input, grid.nt(), grid.nx())?;
        Self::from_increments(&grid, seed, path_index, increments)
    }
}

pub(crate) fn cumulate(cells: ArrayView2<'_, f64>) -> Array2<f64> {
    let (rows, cols) = cells.dim();
    let mut out = Array2::zeros((rows + 1, cols + 1));
    for n in 0..rows {
        for j in 0..cols {
            out[[n + 1, j + 1]] = out[[n, j + 1]] + out[[n + 1, j]] - out[[n, j]] + cells[[n, j]];
        }
    }
    out
}

pub(crate) fn write_header<W: Write>(out: &mut W, grid: &SpaceTimeGrid) -> Result<()> {
    out.write_all(&(grid.nt() as u64).to_le_bytes())?;
    out.write_all(&(grid.nx() as u64).to_le_bytes())?;
    out.write_all(&grid.horizon().to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(input: &mut R) -> Result<SpaceTimeGrid> {
    let nt = read_u64(input)? as usize;
    let nx = read_u64(input)? as usize;
    let horizon = f64::from_le_bytes(read_array(input)?);
    SpaceTimeGrid::new(horizon, nt, nx)
}

pub(crate) fn write_body<W: Write>(out: &mut W, values: ArrayView2<'_, f64>) -> Result<()> {
    for v in values.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_body<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut values = Array2::zeros((rows, cols));
    for v in values.iter_mut() {
        *v = f64::from_le_bytes(read_array(input)?);
    }
    Ok(values)
}

pub(crate) fn expect_magic<R: Read>(input: &mut R, magic: &[u8; 4]) -> Result<()> {
    let found: [u8; 4] = read_array(input)?;
    if &found != magic {
        return Err(Error::Format(format!("expected magic {magic:?}, found {found:?}")));
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(input)?))
}

fn read_array<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftKind {
    Deterministic,
    /// Row `n` depends only on noise rows `< n`.
    Adapted,
}

/// Girsanov drift `h(t_n, x_i)`, one row per time step (`nt × nx`).
#[derive(Clone, Debug, PartialEq)]
pub struct DriftField {
    grid: SpaceTimeGrid,
    values: Array2<f64>,
    kind: DriftKind,
}

impl DriftField {
    pub fn zero(grid: &SpaceTimeGrid) -> Self {
        Self { grid: *grid, values: Array2::zeros((grid.nt(), grid.nx())), kind: DriftKind::Deterministic }
    }

    pub fn deterministic<F: Fn(f64, f64) -> f64>(grid: &SpaceTimeGrid, h: F) -> Self {
        let values = Array2::from_shape_fn((grid.nt(), grid.nx()), |(n, i)| h(grid.t(n), grid.x(i)));
        Self { grid: *grid, values, kind: DriftKind::Deterministic }
    }

    pub fn constant(grid: &SpaceTimeGrid, c: f64) -> Self {
        Self::deterministic(grid, |_, _| c)
    }

    /// Builds an adapted drift row by row. `rule(n, past, row)` sees only the
    /// noise rows `0..n` and writes `h(t_n, ·)` into `row`.
    pub fn adapted<F>(noise: &WhiteNoiseSample, mut rule: F) -> Self
    where
        F: FnMut(usize, ArrayView2<'_, f64>, &mut [f64]),
    {
        let grid = *noise.grid();
        let mut values = Array2::zeros((grid.nt(), grid.nx()));
        let mut row = vec![0.0; grid.nx()];
        for n in 0..grid.nt() {
            let past = noise.increments().slice(ndarray::s![..n, ..]);
            row.iter_mut().for_each(|v| *v = 0.0);
            rule(n, past, &mut row);
            values.row_mut(n).iter_mut().zip(&row).for_each(|(v, r)| *v = *r);
        }
        Self { grid, values, kind: DriftKind::Adapted }
    }

    pub fn from_values(grid: &SpaceTimeGrid, values: Array2<f64>, kind: DriftKind) -> Result<Self> {
        if values.dim() != (grid.nt(), grid.nx()) {
            return Err(Error::GridMismatch(format!(
                "drift has shape {:?}, grid needs ({}, {})",
                values.dim(),
                grid.nt(),
                grid.nx()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("drift values".into()));
        }
        Ok(Self { grid: *grid, values, kind })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> DriftKind {
        self.kind
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { grid: self.grid, values: &self.values * factor, kind: self.kind }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `Σ_n Σ_i h²(t_n, x_i)·dt·dx`, time-major.
    pub fn energy(&self) -> f64 {
        let cell = self.grid.dt() * self.grid.dx();
        let mut total = 0.0;
        for row in self.values.rows() {
            for h in row {
                total += h * h * cell;
            }
        }
        total
    }
}

/// `ΔW̃(n,i) = ΔW(n,i) - h(t_n,x_i)·dt·dx`.
pub fn girsanov_shift(noise: &WhiteNoiseSample, drift: &DriftField) -> Result<WhiteNoiseSample> {
    noise.grid().ensure_same(drift.grid(), "girsanov shift")?;
    let cell = noise.grid().dt() * noise.grid().dx();
    let mut increments = noise.increments.clone();
    increments.zip_mut_with(&drift.values, |w, h| *w -= h * cell);
    Ok(WhiteNoiseSample { increments, ..noise.clone() })
}

/// `log M_T = Σ h·ΔW - ½ Σ h²·dt·dx`, time-major.
pub fn girsanov_log_density(noise: &WhiteNoiseSample, drift: &DriftField) -> Result<f64> {
    noise.grid().ensure_same(drift.grid(), "girsanov density")?;
    let mut linear = 0.0;
    for (w_row, h_row) in noise.increments.rows().into_iter().zip(drift.values.rows()) {
        for (w, h) in w_row.iter().zip(h_row) {
            linear += h * w;
        }
    }
    Ok(linear - 0.5 * drift.energy())
}

/// `½ × mean_r Σ h_r²·dt·dx` over Q-distributed drift realizations.
pub fn relative_entropy(realizations: &[DriftField]) -> Result<f64> {
    let first = realizations
        .first()
        .ok_or_else(|| Error::Empty("relative entropy needs at least one drift realization".into()))?;
    let mut total = 0.0;
    for h in realizations {
        first.grid().ensure_same(h.grid(), "relative entropy ensemble")?;
        total += h.energy();
    }
    Ok(0.5 * total / realizations.len() as f64)
}

/// Aggregates a fine sample onto a coarser grid driven by the same sheet.
///
/// Requires `fine.nt = r·coarse.nt` and `fine.nx = 2·coarse.nx + 1`, so that
/// coarse node `j` coincides with fine node `2j + 1` (zero-based). Coarse cell
/// `j` is the right half of fine cell `2j`, all of cell `2j + 1`, and the left
/// half of cell `2j + 2`; odd-width fine cells are split with an independent
/// Brownian-bridge draw from the `split_seed` stream.
pub fn coarsen(fine: &WhiteNoiseSample, coarse: &SpaceTimeGrid, split_seed: u64) -> Result<WhiteNoiseSample> {
    let fg = fine.grid();
    let nested =
        fg.nx() == 2 * coarse.nx() + 1 && fg.nt().is_multiple_of(coarse.nt()) && fg.horizon() == coarse.horizon();
    if !nested {
        return Err(Error::GridMismatch(format!(
            "cannot coarsen {fg:?} onto {coarse:?}: need nt multiple and nx = 2·nx' + 1"
        )));
    }
    let ratio = fg.nt() / coarse.nt();
    let half_sd = 0.5 * (fg.dt() * fg.dx()).sqrt();
    let mut rng = path_rng(split_seed ^ SPLIT_STREAM_SALT, fine.path_index);
    let mut increments = Array2::zeros((coarse.nt(), coarse.nx()));
    // Fine cells with even zero-based index straddle coarse cell edges.
    let mut left = vec![0.0; coarse.nx() + 1];
    let mut right = vec![0.0; coarse.nx() + 1];
    for n in 0..fg.nt() {
        let row = fine.increments.row(n);
        for (e, (l, r)) in left.iter_mut().zip(right.iter_mut()).enumerate() {
            let x = row[2 * e];
            let bridge: f64 = half_sd * rng.sample::<f64, _>(StandardNormal);
            *l = 0.5 * x + bridge;
            *r = 0.5 * x - bridge;
        }
        let target = n / ratio;
        for j in 0..coarse.nx() {
            increments[[target, j]] += right[j] + row[2 * j + 1] + left[j + 1];
        }
    }
    Ok(WhiteNoiseSample { grid: *coarse, seed: fine.seed, path_index: fine.path_index, increments })
}
