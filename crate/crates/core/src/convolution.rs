//! Stochastic convolution against space-time white noise and the two
//! factorization operators.
//!
//! All three operators run in the sine eigenbasis of the grid, where the kernel
//! at lag `L·dt` is diagonal with entries `exp(-λ_k L dt)`. The basis carries
//! enough modes to reproduce `p_τ` at the nodes for every `τ ≥ dt`.
//!
//! Singular time weights are integrated exactly over each step:
//!
//! * `J_α` uses the cell average of `(t_n - r)^{-α}` with the kernel frozen at
//!   `p_{t_n - t_m}`;
//! * `J^{α-1}` uses product trapezoid weights for `(t_n - s)^{α-1}` against the
//!   linear interpolant of `s ↦ P_{t_n - s} f(s)` between the nodes.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};

use crate::constants::alpha_range;
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::heat_kernel::{SineBasis, MODAL_CUTOFF};
use crate::noise::WhiteNoiseSample;
use crate::solver::RandomField;

/// Factorization exponent and the moment order that fixes its admissible range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorizationParams {
    alpha: f64,
    p: f64,
}

impl FactorizationParams {
    pub fn new(alpha: f64, p: f64) -> Result<Self> {
        let (lo, hi) = alpha_range(p)?;
        if !(alpha > lo && alpha < hi) {
            return Err(Error::InadmissibleAlpha { alpha, p, lo, hi });
        }
        Ok(Self { alpha, p })
    }

    /// Midpoint of the admissible interval.
    pub fn midpoint(p: f64) -> Result<Self> {
        let (lo, hi) = alpha_range(p)?;
        Self::new(0.5 * (lo + hi), p)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `sin(πα)/π`
    pub fn prefactor(&self) -> f64 {
        (PI * self.alpha).sin() / PI
    }
}

/// Weight of `J_α` at lag `L ≥ 1`: mean of `u^{-α}` over `[(L-1)dt, L dt]`.
pub fn j_alpha_weight(lag: usize, alpha: f64, dt: f64) -> f64 {
    let l = lag as f64;
    dt.powf(-alpha) * (l.powf(1.0 - alpha) - (l - 1.0).powf(1.0 - alpha)) / (1.0 - alpha)
}

/// Product trapezoid weights of `u^{α-1}` on `[(L-1)dt, L dt]`: the first
/// multiplies the value at `u = L dt`, the second the value at `u = (L-1) dt`.
pub fn trapezoid_weights(lag: usize, alpha: f64, dt: f64) -> (f64, f64) {
    let a = (lag as f64 - 1.0) * dt;
    let b = lag as f64 * dt;
    let i0 = (b.powf(alpha) - a.powf(alpha)) / alpha;
    let i1 = (b.powf(alpha + 1.0) - a.powf(alpha + 1.0)) / (alpha + 1.0);
    ((i1 - a * i0) / dt, (b * i0 - i1) / dt)
}

/// Convolution operators for one grid; cheap to share across threads.
#[derive(Clone, Debug)]
pub struct ConvolutionEngine {
    grid: SpaceTimeGrid,
    basis: SineBasis,
}

impl ConvolutionEngine {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        Self { grid: *grid, basis: SineBasis::for_grid(grid) }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn basis(&self) -> &SineBasis {
        &self.basis
    }

    /// `(t_n, x_i) ↦ Σ_{m<n} Σ_j p_{t_n - t_m}(x_i, x_j) σ(t_m, x_j) ΔW(m, j)`.
    pub fn convolve_direct(&self, sigma: &RandomField, noise: &WhiteNoiseSample) -> Result<RandomField> {
        let coeffs = self.noise_coefficients(sigma, noise)?;
        let (nt, modes) = (self.grid.nt(), self.basis.modes());
        let dt = self.grid.dt();
        let mut out = Array2::zeros((nt + 1, modes));
        for k in 0..modes {
            let decay = (-self.basis.eigenvalue(k) * dt).exp();
            let mut z = 0.0;
            for n in 0..nt {
                z = decay * (z + coeffs[[k, n]]);
                out[[n + 1, k]] = z;
            }
        }
        self.to_field(out.view())
    }

    /// `(s_n, y_i) ↦ Σ_{m<n} Σ_j w_{n-m} p_{s_n - t_m}(y_i, x_j) σ(t_m, x_j) ΔW(m, j)`
    /// with `w` from [`j_alpha_weight`].
    pub fn apply_j_alpha(
        &self,
        sigma: &RandomField,
        noise: &WhiteNoiseSample,
        params: &FactorizationParams,
    ) -> Result<RandomField> {
        let coeffs = self.noise_coefficients(sigma, noise)?;
        let dt = self.grid.dt();
        let weights: Vec<f64> = (0..=self.grid.nt())
            .map(|lag| if lag == 0 { 0.0 } else { j_alpha_weight(lag, params.alpha, dt) })
            .collect();
        let out = self.lag_sum(coeffs.view(), |_, lag| weights[lag]);
        self.to_field(out.view())
    }

    /// `(t_n, x_i) ↦ (sin πα/π) ∫_0^{t_n} (t_n - s)^{α-1} (P_{t_n - s} f(s))(x_i) ds`
    /// by product trapezoid integration; `P` acts by the node Riemann sum in `y`.
    pub fn apply_j_alpha_minus_one(&self, f: &RandomField, params: &FactorizationParams) -> Result<RandomField> {
        self.grid.ensure_same(f.grid(), "J^(alpha-1) input")?;
        let nt = self.grid.nt();
        let dt = self.grid.dt();
        let dx = self.grid.dx();
        let alpha = params.alpha;
        let pairs: Vec<(f64, f64)> =
            (0..=nt + 1).map(|lag| if lag == 0 { (0.0, 0.0) } else { trapezoid_weights(lag, alpha, dt) }).collect();
        // Row m of f enters at lag n - m; the right-node weight of the next
        // cell joins it except at m = 0.
        let source = f.values().slice(ndarray::s![..nt, ..]);
        let coeffs = (self.basis.project(source) * dx).reversed_axes().as_standard_layout().to_owned();
        let modal = self.lag_sum(coeffs.view(), |n, lag| {
            let (left, _) = pairs[lag];
            if lag < n {
                left + pairs[lag + 1].1
            } else {
                left
            }
        });
        let mut values = self.basis.synthesize(modal.view());
        let r1 = pairs[1].1;
        for n in 1..=nt {
            let mut row = values.row_mut(n);
            row.scaled_add(r1, &f.values().row(n));
        }
        values *= params.prefactor();
        RandomField::from_values(&self.grid, values)
    }

    /// `J^{α-1}(J_α σ)` on the same noise.
    pub fn factorized(
        &self,
        sigma: &RandomField,
        noise: &WhiteNoiseSample,
        params: &FactorizationParams,
    ) -> Result<RandomField> {
        let inner = self.apply_j_alpha(sigma, noise, params)?;
        self.apply_j_alpha_minus_one(&inner, params)
    }

    /// Node supremum of `|direct - J^{α-1}(J_α σ)|`.
    pub fn factorization_residual(
        &self,
        sigma: &RandomField,
        noise: &WhiteNoiseSample,
        params: &FactorizationParams,
    ) -> Result<f64> {
        let direct = self.convolve_direct(sigma, noise)?;
        direct.sup_distance(&self.factorized(sigma, noise, params)?)
    }

    /// `modes × nt` coefficients of the cell sources `σ(t_m, x_j) ΔW(m, j)`.
    fn noise_coefficients(&self, sigma: &RandomField, noise: &WhiteNoiseSample) -> Result<Array2<f64>> {
        self.grid.ensure_same(sigma.grid(), "convolution integrand")?;
        self.grid.ensure_same(noise.grid(), "convolution noise")?;
        let nt = self.grid.nt();
        let source = &sigma.values().slice(ndarray::s![..nt, ..]) * noise.increments();
        Ok(self.basis.project(source.view()).reversed_axes().as_standard_layout().to_owned())
    }

    /// `out[n, k] = Σ_{L=1}^{n} weight(n, L)·exp(-λ_k L dt)·coeffs[k, n - L]`,
    /// dropping lags where the decay is below `exp(-MODAL_CUTOFF)`.
    fn lag_sum<F>(&self, coeffs: ArrayView2<'_, f64>, weight: F) -> Array2<f64>
    where
        F: Fn(usize, usize) -> f64,
    {
        let nt = self.grid.nt();
        let dt = self.grid.dt();
        let modes = self.basis.modes();
        let mut out = Array2::zeros((nt + 1, modes));
        let mut decay = Vec::with_capacity(nt + 1);
        for (k, row) in coeffs.axis_iter(Axis(0)).enumerate() {
            let lambda = self.basis.eigenvalue(k);
            let reach = ((MODAL_CUTOFF / (lambda * dt)).ceil() as usize).min(nt);
            decay.clear();
            decay.extend((0..=reach).map(|lag| (-lambda * lag as f64 * dt).exp()));
            for n in 1..=nt {
                let mut acc = 0.0;
                for lag in 1..=n.min(reach) {
                    acc += weight(n, lag) * decay[lag] * row[n - lag];
                }
                out[[n, k]] = acc;
            }
        }
        out
    }

    fn to_field(&self, modal: ArrayView2<'_, f64>) -> Result<RandomField> {
        RandomField::from_values(&self.grid, self.basis.synthesize(modal))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat_kernel::{kernel_integrals, KernelMatrix, KernelParams};
    use crate::noise::sample_white_noise;
    use crate::quadrature::integrate;

    #[test]
    fn admissible_interval() {
        let (lo, hi) = alpha_range(12.0).unwrap();
        assert!((lo - 0.125).abs() < 1e-15 && (hi - 1.0 / 6.0).abs() < 1e-15);
        assert!(matches!(alpha_range(10.0), Err(Error::EmptyAlphaRange(_))));
        assert!(matches!(FactorizationParams::new(0.0, 12.0), Err(Error::InadmissibleAlpha { .. })));
        assert!(FactorizationParams::new(0.15, 12.0).is_ok());
        let mid = FactorizationParams::midpoint(12.0).unwrap();
        assert!((mid.alpha() - (0.125 + 1.0 / 6.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn weights_integrate_singularity() {
        let (alpha, dt) = (0.15, 0.01);
        let total: f64 = (1..=100).map(|l| j_alpha_weight(l, alpha, dt) * dt).sum();
        assert!((total - 1.0 / (1.0 - alpha)).abs() < 1e-12);
        let total: f64 = (1..=100)
            .map(|l| {
                let (a, b) = trapezoid_weights(l, alpha, dt);
                a + b
            })
            .sum();
        assert!((total - 1.0 / alpha).abs() < 1e-12);
    }

    #[test]
    fn direct_matches_kernel_matrix_sum() {
        let g = SpaceTimeGrid::new(0.25, 12, 7).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let w = sample_white_noise(&g, 5, 1);
        let sigma = RandomField::from_fn(&g, |t, x| 1.0 + t * x);
        let got = engine.convolve_direct(&sigma, &w).unwrap();
        let kp = KernelParams::default();
        let n = g.nt();
        let mut expect = vec![0.0; g.nx()];
        let mut tmp = vec![0.0; g.nx()];
        for m in 0..n {
            let k = KernelMatrix::new(&g, (n - m) as f64 * g.dt(), &kp).unwrap();
            let src: Vec<f64> = (0..g.nx()).map(|j| sigma.values()[[m, j]] * w.increments()[[m, j]]).collect();
            k.apply_into(&src, &mut tmp);
            expect.iter_mut().zip(&tmp).for_each(|(e, t)| *e += t);
        }
        for (a, b) in got.row(n).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_inputs_give_zero() {
        let g = SpaceTimeGrid::new(1.0, 32, 9).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let params = FactorizationParams::new(0.15, 12.0).unwrap();
        let w = sample_white_noise(&g, 1, 0);
        let zero = RandomField::zeros(&g);
        assert_eq!(engine.convolve_direct(&zero, &w).unwrap().sup_abs(), 0.0);
        assert_eq!(engine.apply_j_alpha(&zero, &w, &params).unwrap().sup_abs(), 0.0);
        assert_eq!(engine.apply_j_alpha_minus_one(&zero, &params).unwrap().sup_abs(), 0.0);
        assert_eq!(engine.factorization_residual(&zero, &w, &params).unwrap(), 0.0);
        let still = WhiteNoiseSample::zeros(&g);
        let one = RandomField::constant(&g, 1.0);
        assert_eq!(engine.convolve_direct(&one, &still).unwrap().sup_abs(), 0.0);
        assert_eq!(engine.apply_j_alpha(&one, &still, &params).unwrap().sup_abs(), 0.0);
    }

    #[test]
    fn j_alpha_finite_everywhere() {
        let g = SpaceTimeGrid::new(1.0, 256, 32).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let params = FactorizationParams::midpoint(12.0).unwrap();
        let out =
            engine.apply_j_alpha(&RandomField::constant(&g, 1.0), &sample_white_noise(&g, 2, 0), &params).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn j_alpha_minus_one_matches_quadrature_for_unit_input() {
        let g = SpaceTimeGrid::new(1.0, 256, 63).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let params = FactorizationParams::new(0.15, 12.0).unwrap();
        let out = engine.apply_j_alpha_minus_one(&RandomField::constant(&g, 1.0), &params).unwrap();
        let kp = KernelParams::default();
        let alpha = params.alpha();
        for (n, i) in [(256, 31), (128, 31), (256, 10), (64, 20)] {
            let (t, x) = (g.t(n), g.x(i));
            // Substituting v = u^α removes the endpoint singularity.
            let oracle = params.prefactor() / alpha
                * integrate(
                    |v: f64| {
                        let u = v.powf(1.0 / alpha);
                        if u == 0.0 {
                            1.0
                        } else {
                            kernel_integrals(u, x, &kp).unwrap().mass
                        }
                    },
                    0.0,
                    t.powf(alpha),
                    1e-8,
                    1e-10,
                );
            let got = out.values()[[n, i]];
            assert!((got - oracle).abs() < 1e-3 * oracle, "({t}, {x}): {got} vs {oracle}");
        }
    }

    #[test]
    fn operators_are_linear() {
        let g = SpaceTimeGrid::new(1.0, 64, 15).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let params = FactorizationParams::midpoint(16.0).unwrap();
        let w = sample_white_noise(&g, 8, 0);
        let s1 = RandomField::from_fn(&g, |t, x| (3.0 * x + t).sin());
        let s2 = RandomField::from_fn(&g, |t, x| x * x - t);
        let combo = RandomField::from_values(&g, s1.values() * 2.0 - s2.values() * 0.5).unwrap();
        let check = |op: &dyn Fn(&RandomField) -> RandomField| {
            let lhs = op(&combo);
            let rhs = op(&s1).values() * 2.0 - op(&s2).values() * 0.5;
            let err = (lhs.values() - &rhs).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-12 * (1.0 + lhs.sup_abs()), "{err}");
        };
        check(&|s| engine.convolve_direct(s, &w).unwrap());
        check(&|s| engine.apply_j_alpha(s, &w, &params).unwrap());
        check(&|s| engine.apply_j_alpha_minus_one(s, &params).unwrap());
        let doubled = engine.apply_j_alpha_minus_one(&s1.scaled(2.0), &params).unwrap();
        let single = engine.apply_j_alpha_minus_one(&s1, &params).unwrap();
        assert_eq!(doubled, single.scaled(2.0));
    }

    #[test]
    fn outputs_are_adapted() {
        let g = SpaceTimeGrid::new(1.0, 40, 9).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let params = FactorizationParams::midpoint(12.0).unwrap();
        let w = sample_white_noise(&g, 3, 0);
        let sigma = RandomField::constant(&g, 1.0);
        let cut = 17;
        let mut late = sigma.values().clone();
        late.slice_mut(ndarray::s![cut.., ..]).fill(-4.0);
        let late = RandomField::from_values(&g, late).unwrap();
        let mut inc = w.increments().clone();
        inc.slice_mut(ndarray::s![cut.., ..]).fill(9.0);
        let w_late = WhiteNoiseSample::from_increments(&g, 3, 0, inc).unwrap();
        let a = engine.factorized(&sigma, &w, &params).unwrap();
        let b = engine.factorized(&late, &w_late, &params).unwrap();
        let c = engine.convolve_direct(&sigma, &w).unwrap();
        let d = engine.convolve_direct(&late, &w_late).unwrap();
        for n in 0..=cut {
            assert_eq!(a.row(n), b.row(n));
            assert_eq!(c.row(n), d.row(n));
        }
        assert_ne!(a.row(cut + 1), b.row(cut + 1));
    }

    #[test]
    fn factorization_residual_small_on_moderate_grid() {
        let g = SpaceTimeGrid::new(1.0, 256, 32).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let params = FactorizationParams::new(0.15, 12.0).unwrap();
        let sigma = RandomField::constant(&g, 1.0);
        let w = sample_white_noise(&g, 11, 0);
        let direct = engine.convolve_direct(&sigma, &w).unwrap();
        let residual = engine.factorization_residual(&sigma, &w, &params).unwrap();
        assert!(residual < 0.05 * direct.sup_abs(), "{residual} vs {}", direct.sup_abs());
    }
}
