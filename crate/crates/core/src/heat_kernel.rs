//! Dirichlet heat kernel of `½Δ` on `[0, 1]`.
//!
//! Two representations are used, each where it converges fastest:
//!
//! ```text
//! eigen:  p_t(x,y) = Σ_{n≥1} 2 sin(nπx) sin(nπy) exp(-n²π²t/2)        (t ≥ switch)
//! image:  p_t(x,y) = Σ_{n∈ℤ} [g_t(x-y+2n) - g_t(x+y+2n)],  g_t = N(0,t) density   (t < switch)
//! ```
//!
//! The sine eigenbasis is also exposed as [`SineBasis`], which the convolution
//! operators use to apply `p_τ` at every lag `τ ≥ dt` without forming kernel
//! matrices.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::quadrature;

/// Truncation tolerance required of the eigen series at the switch time.
pub const KERNEL_TOLERANCE: f64 = 1e-13;

/// `C₂ = 1/√(2π)`, the constant in `∫ p_t(x,y)² dy ≤ C₂ t^{-1/2}`.
pub const C2: f64 = 0.398_942_280_401_432_7;

const QUADRATURE_REL_TOL: f64 = 1e-10;

/// Smallest `λ_K·dt` kept by [`SineBasis::for_grid`]; the first dropped mode
/// decays below `exp(-45)` over one step.
pub(crate) const MODAL_CUTOFF: f64 = 45.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    series_terms: usize,
    image_terms: usize,
    method_switch_time: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { series_terms: 64, image_terms: 8, method_switch_time: 0.05 }
    }
}

impl KernelParams {
    pub fn new(series_terms: usize, image_terms: usize, method_switch_time: f64) -> Result<Self> {
        if series_terms == 0 || image_terms == 0 {
            return Err(Error::InvalidArgument("truncation orders must be at least 1".into()));
        }
        if !(method_switch_time.is_finite() && method_switch_time > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "method_switch_time must be positive, got {method_switch_time}"
            )));
        }
        let n = series_terms as f64;
        let tail = 2.0 * (-n * n * PI * PI * method_switch_time / 2.0).exp();
        if tail >= KERNEL_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "{series_terms} eigen terms leave a tail of {tail:e} at t = {method_switch_time}"
            )));
        }
        Ok(Self { series_terms, image_terms, method_switch_time })
    }

    pub fn series_terms(&self) -> usize {
        self.series_terms
    }

    pub fn image_terms(&self) -> usize {
        self.image_terms
    }

    pub fn method_switch_time(&self) -> f64 {
        self.method_switch_time
    }
}

fn check_point(x: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {x} lies outside [0, 1]")))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("kernel time must be positive, got {t}")))
    }
}

/// Truncated eigenfunction expansion with `terms` modes.
pub fn eigen_form(t: f64, x: f64, y: f64, terms: usize) -> f64 {
    (1..=terms)
        .map(|n| {
            let k = n as f64 * PI;
            2.0 * (k * x).sin() * (k * y).sin() * (-k * k * t / 2.0).exp()
        })
        .sum()
}

/// Truncated reflection sum over `n ∈ [-terms, terms]`.
pub fn image_form(t: f64, x: f64, y: f64, terms: usize) -> f64 {
    let norm = 1.0 / (2.0 * PI * t).sqrt();
    let g = |z: f64| norm * (-z * z / (2.0 * t)).exp();
    let m = terms as i64;
    (-m..=m)
        .map(|n| {
            let shift = 2.0 * n as f64;
            g(x - y + shift) - g(x + y + shift)
        })
        .sum()
}

/// `p_t(x, y)` for the Dirichlet half-Laplacian.
pub fn kernel_value(t: f64, x: f64, y: f64, params: &KernelParams) -> Result<f64> {
    check_time(t)?;
    check_point(x, "x")?;
    check_point(y, "y")?;
    Ok(kernel_unchecked(t, x, y, params))
}

pub(crate) fn kernel_unchecked(t: f64, x: f64, y: f64, params: &KernelParams) -> f64 {
    if x == 0.0 || x == 1.0 || y == 0.0 || y == 1.0 {
        return 0.0;
    }
    // Canonical argument order makes the kernel bitwise symmetric.
    let (a, b) = if x <= y { (x, y) } else { (y, x) };
    let v = if t >= params.method_switch_time {
        eigen_form(t, a, b, params.series_terms)
    } else {
        image_form(t, a, b, params.image_terms)
    };
    v.max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelIntegrals {
    /// `∫_0^1 p_t(x,y) dy`
    pub mass: f64,
    /// `∫_0^1 p_t(x,y)² dy`
    pub l2: f64,
}

/// Mass and squared L² norm of `y ↦ p_t(x, y)` by adaptive quadrature.
pub fn kernel_integrals(t: f64, x: f64, params: &KernelParams) -> Result<KernelIntegrals> {
    check_time(t)?;
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::InvalidArgument(format!("x = {x} must lie in (0, 1)")));
    }
    // Panel edges at the peak and on the diffusive scale around it.
    let width = t.sqrt();
    let mut breaks = vec![0.0, x, 1.0];
    for c in [0.5, 2.0, 8.0] {
        breaks.extend([x - c * width, x + c * width].into_iter().filter(|y| *y > 0.0 && *y < 1.0));
    }
    breaks.sort_by(f64::total_cmp);
    let mass = quadrature::integrate_pieces(|y| kernel_unchecked(t, x, y, params), &breaks, QUADRATURE_REL_TOL, 1e-300);
    let l2 = quadrature::integrate_pieces(
        |y| {
            let p = kernel_unchecked(t, x, y, params);
            p * p
        },
        &breaks,
        QUADRATURE_REL_TOL,
        1e-300,
    );
    Ok(KernelIntegrals { mass, l2 })
}

/// Node matrix `K_ij = p_t(x_i, x_j)` on the interior nodes of a grid.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    t: f64,
    values: Array2<f64>,
}

impl KernelMatrix {
    pub fn new(grid: &SpaceTimeGrid, t: f64, params: &KernelParams) -> Result<Self> {
        check_time(t)?;
        let nx = grid.nx();
        let xs = grid.space_nodes();
        let mut values = Array2::zeros((nx, nx));
        for i in 0..nx {
            for j in i..nx {
                let v = kernel_unchecked(t, xs[i], xs[j], params);
                values[[i, j]] = v;
                values[[j, i]] = v;
            }
        }
        Ok(Self { t, values })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    /// `out_i = Σ_j K_ij v_j`.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.values.rows()) {
            *o = row.iter().zip(v).map(|(k, x)| k * x).sum();
        }
    }
}

/// `(P_t u0)(x_i) ≈ Σ_j dx·p_t(x_i,x_j)·u0(x_j)`; `t = 0` is the identity.
pub fn apply_semigroup(u0: &[f64], t: f64, grid: &SpaceTimeGrid, params: &KernelParams) -> Result<Vec<f64>> {
    if u0.len() != grid.nx() {
        return Err(Error::GridMismatch(format!(
            "initial row has {} values, grid has {} interior nodes",
            u0.len(),
            grid.nx()
        )));
    }
    if t == 0.0 {
        return Ok(u0.to_vec());
    }
    check_time(t)?;
    let kernel = KernelMatrix::new(grid, t, params)?;
    let dx = grid.dx();
    let weighted: Vec<f64> = u0.iter().map(|u| dx * u).collect();
    let mut out = vec![0.0; u0.len()];
    kernel.apply_into(&weighted, &mut out);
    Ok(out)
}

/// Sine eigenbasis `φ_k(x) = sin(kπx)` sampled at the interior nodes, with
/// eigenvalues `λ_k = k²π²/2`, so that on the nodes
///
/// ```text
/// p_τ(x_i, x_j) = Σ_k 2 φ_k(x_i) φ_k(x_j) exp(-λ_k τ)
/// ```
///
/// up to the truncation error `exp(-λ_{K+1} τ)`.
#[derive(Clone, Debug)]
pub struct SineBasis {
    sines: Array2<f64>,
    eigenvalues: Vec<f64>,
}

impl SineBasis {
    /// Enough modes that the truncation error at lag `dt` is below `exp(-45)`.
    pub fn for_grid(grid: &SpaceTimeGrid) -> Self {
        let needed = (2.0 * MODAL_CUTOFF / (PI * PI * grid.dt())).sqrt().ceil() as usize;
        Self::with_modes(grid, needed.max(grid.nx()))
    }

    pub fn with_modes(grid: &SpaceTimeGrid, modes: usize) -> Self {
        let xs = grid.space_nodes();
        let sines = Array2::from_shape_fn((modes, xs.len()), |(k, j)| ((k + 1) as f64 * PI * xs[j]).sin());
        let eigenvalues = (1..=modes).map(|k| 0.5 * (k as f64 * PI).powi(2)).collect();
        Self { sines, eigenvalues }
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }

    /// `(rows × nx) → (rows × modes)`: `c_k = Σ_j φ_k(x_j) g_j`.
    pub fn project(&self, g: ArrayView2<'_, f64>) -> Array2<f64> {
        g.dot(&self.sines.t())
    }

    /// `(rows × modes) → (rows × nx)`: `v_i = Σ_k 2 φ_k(x_i) c_k`.
    pub fn synthesize(&self, coeffs: ArrayView2<'_, f64>) -> Array2<f64> {
        coeffs.dot(&self.sines) * 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(t: f64, x: f64, y: f64) -> f64 {
        kernel_value(t, x, y, &KernelParams::default()).unwrap()
    }

    // Reference from a 200-term eigen series in 200-bit arithmetic.
    #[test]
    fn midpoint_value() {
        assert_relative_eq!(p(0.5, 0.5, 0.5), 0.169_609_945_395_983, max_relative = 1e-13);
    }

    #[test]
    fn boundary_is_zero() {
        assert_eq!(p(0.1, 0.0, 0.3), 0.0);
        assert_eq!(p(0.01, 1.0, 0.3), 0.0);
        assert_eq!(p(0.7, 0.2, 1.0), 0.0);
    }

    #[test]
    fn symmetric_bitwise() {
        assert_eq!(p(0.2, 0.3, 0.7), p(0.2, 0.7, 0.3));
        assert_eq!(p(0.01, 0.13, 0.21), p(0.01, 0.21, 0.13));
    }

    #[test]
    fn rejects_bad_input() {
        let kp = KernelParams::default();
        assert!(kernel_value(0.0, 0.5, 0.5, &kp).is_err());
        assert!(kernel_value(-1.0, 0.5, 0.5, &kp).is_err());
        assert!(kernel_value(0.1, -0.1, 0.5, &kp).is_err());
        assert!(kernel_value(0.1, 0.5, 1.5, &kp).is_err());
        assert!(kernel_integrals(0.0, 0.5, &kp).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(0, 8, 0.05).is_err());
        assert!(KernelParams::new(64, 0, 0.05).is_err());
        assert!(KernelParams::new(64, 8, 0.0).is_err());
        // Three eigen terms are far too few at t = 0.05.
        assert!(KernelParams::new(3, 8, 0.05).is_err());
        assert!(KernelParams::new(64, 8, 0.05).is_ok());
    }

    #[test]
    fn forms_agree_at_switch() {
        let kp = KernelParams::default();
        let s = kp.method_switch_time();
        for &x in &[0.05, 0.3, 0.5, 0.77, 0.99] {
            for &y in &[0.01, 0.25, 0.5, 0.9] {
                let e = eigen_form(s, x, y, kp.series_terms());
                let i = image_form(s, x, y, kp.image_terms());
                assert!((e - i).abs() < 1e-10, "x={x} y={y}: {e} vs {i}");
            }
        }
    }

    #[test]
    fn semigroup_zero_and_identity() {
        let g = SpaceTimeGrid::new(1.0, 4, 9).unwrap();
        let kp = KernelParams::default();
        let zero = apply_semigroup(&[0.0; 9], 0.3, &g, &kp).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let u0: Vec<f64> = (0..9).map(|i| (i as f64).cos()).collect();
        assert_eq!(apply_semigroup(&u0, 0.0, &g, &kp).unwrap(), u0);
        assert!(apply_semigroup(&u0[..8], 0.3, &g, &kp).is_err());
    }

    #[test]
    fn semigroup_on_first_eigenfunction() {
        let g = SpaceTimeGrid::new(1.0, 4, 31).unwrap();
        let kp = KernelParams::default();
        let u0: Vec<f64> = g.space_nodes().iter().map(|x| (PI * x).sin()).collect();
        let out = apply_semigroup(&u0, 0.3, &g, &kp).unwrap();
        let decay = (-PI * PI * 0.3 / 2.0).exp();
        for (o, u) in out.iter().zip(&u0) {
            assert!((o - decay * u).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_basis_reproduces_kernel_matrix() {
        let g = SpaceTimeGrid::new(1.0, 64, 12).unwrap();
        let basis = SineBasis::for_grid(&g);
        let kp = KernelParams::default();
        for lag in [1usize, 3, 40] {
            let tau = lag as f64 * g.dt();
            let km = KernelMatrix::new(&g, tau, &kp).unwrap();
            for i in 0..g.nx() {
                for j in 0..g.nx() {
                    let modal: f64 = (0..basis.modes())
                        .map(|k| 2.0 * basis.sines[[k, i]] * basis.sines[[k, j]] * (-basis.eigenvalue(k) * tau).exp())
                        .sum();
                    assert!((modal - km.values()[[i, j]]).abs() < 1e-12);
                }
            }
        }
    }
}
