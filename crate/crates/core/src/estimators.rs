//! Monte Carlo estimators and one-sided verification of the inequalities.
//!
//! Continuum suprema are node maxima. Every ensemble is reduced path by path
//! to scalars (or node-wise sums) and folded in path-index order, so reports
//! are bitwise reproducible for any worker count.

use std::f64::consts::LN_2;

use ndarray::Array2;
use statrs::function::gamma::gamma;

use crate::constants::{c_moment, c_small_p, c_small_p_eps, c_tci, SmallPReading};
use crate::convolution::{ConvolutionEngine, FactorizationParams};
use crate::ensemble::{for_each_path, map_paths, mean_and_se, Execution};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::noise::{coarsen, girsanov_shift, sample_white_noise, WhiteNoiseSample};
use crate::quadrature::integrate_pieces;
use crate::report::VerificationReport;
use crate::scenario::Scenario;
use crate::solver::{MildSolver, RandomField, ScalarFn};

/// Mean and standard error of `(max_nodes |field|)^p`.
pub fn sup_norm_moment(fields: &[RandomField], p: f64) -> Result<(f64, f64)> {
    if fields.is_empty() {
        return Err(Error::Empty("sup-norm moment of an empty ensemble".into()));
    }
    check_positive("p", p)?;
    let grid = fields[0].grid();
    let values = fields
        .iter()
        .map(|f| {
            grid.ensure_same(f.grid(), "sup-norm ensemble")?;
            Ok(f.sup_abs().powf(p))
        })
        .collect::<Result<Vec<_>>>()?;
    mean_and_se(&values)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} must be positive")))
    }
}

fn report_for(scn: &Scenario, report: VerificationReport) -> VerificationReport {
    report.with_context(scn.seed, Some(scn.grid), &scn.id)
}

/// Per-path σ-field `σ(u)` along the scenario's solution, and its stochastic
/// convolution, both on the same noise.
struct ConvolutionSampler {
    solver: Option<MildSolver>,
    engine: ConvolutionEngine,
    u0: Vec<f64>,
}

impl ConvolutionSampler {
    fn new(scn: &Scenario) -> Result<Self> {
        // A constant σ needs no solution path.
        let solver = match scn.coeffs.diffusion {
            ScalarFn::Zero | ScalarFn::Constant(_) => None,
            _ => Some(MildSolver::new(&scn.grid, &scn.kernel)?),
        };
        Ok(Self { solver, engine: ConvolutionEngine::new(&scn.grid), u0: scn.initial_row() })
    }

    fn sigma(&self, scn: &Scenario, noise: &WhiteNoiseSample) -> Result<RandomField> {
        match &self.solver {
            None => Ok(RandomField::constant(&scn.grid, scn.coeffs.diffusion.eval(0.0))),
            Some(solver) => {
                let u = solver.solve_mild(&self.u0, &scn.coeffs, noise)?;
                Ok(u.map(|v| scn.coeffs.diffusion.eval(v)))
            }
        }
    }

    fn sample(&self, scn: &Scenario, path: u64) -> Result<(RandomField, RandomField)> {
        let noise = sample_white_noise(&scn.grid, scn.seed, path);
        let sigma = self.sigma(scn, &noise)?;
        let conv = self.engine.convolve_direct(&sigma, &noise)?;
        Ok((sigma, conv))
    }
}

/// `max_i |σ(t_n, x_i)|` for `n < nt`, the rows that enter the convolution.
fn row_maxima(sigma: &RandomField) -> Vec<f64> {
    let nt = sigma.grid().nt();
    (0..nt).map(|n| sigma.row(n).iter().fold(0.0_f64, |m, v| m.max(v.abs()))).collect()
}

/// `Σ_{n<nt} dt·max_i |σ(t_n,x_i)|^p`
fn time_integral(row_max: &[f64], p: f64, dt: f64) -> f64 {
    row_max.iter().map(|m| dt * m.powf(p)).sum()
}

fn check_ensemble_size(scn: &Scenario) -> Result<()> {
    if scn.n_paths < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 paths, got {}", scn.n_paths)));
    }
    Ok(())
}

/// `E sup|Z|^p ≤ C_{T,p} ∫_0^T sup_y E|σ(s,y)|^p ds` with `Z` the stochastic
/// convolution of `σ(u)`. `bound_scale` multiplies the right side (use `1` for
/// the real check and a tiny factor for a falsification control).
pub fn verify_moment_bound(scn: &Scenario, exec: &Execution, p: f64, bound_scale: f64) -> Result<VerificationReport> {
    check_ensemble_size(scn)?;
    let constants = c_moment(scn.grid.horizon(), p)?;
    let sampler = ConvolutionSampler::new(scn)?;
    let (nt, nx) = (scn.grid.nt(), scn.grid.nx());
    let mut node_sums = Array2::<f64>::zeros((nt, nx));
    let mut lhs = Vec::with_capacity(scn.n_paths);
    for_each_path(
        scn.n_paths,
        exec,
        |k| {
            let (sigma, conv) = sampler.sample(scn, k)?;
            let powered = sigma.values().slice(ndarray::s![..nt, ..]).mapv(|v| v.abs().powf(p));
            Ok((conv.sup_abs().powf(p), powered))
        },
        |_, (sup_p, powered)| {
            lhs.push(sup_p);
            node_sums += &powered;
            Ok(())
        },
    )?;
    let n = scn.n_paths as f64;
    let dt = scn.grid.dt();
    let integral: f64 =
        node_sums.rows().into_iter().map(|row| dt * row.iter().fold(0.0_f64, |m, v| m.max(v / n))).sum();
    let bound = if integral == 0.0 { 0.0 } else { bound_scale * constants.c_moment() * integral };
    let (estimate, se) = mean_and_se(&lhs)?;
    let details = format!(
        "p={p}; alpha*={:.6}; C_(T,p)={:e}; int sup E|sigma|^p={integral:e}; bound scale={bound_scale:e}",
        constants.alpha_star,
        constants.c_moment()
    );
    Ok(report_for(
        scn,
        VerificationReport::one_sided("moment_bound", bound, estimate, se, scn.n_paths, exec.margin)
            .with_details(details),
    ))
}

/// Tail estimate at each `λ`:
/// `P(sup|Z| > λ) ≤ P(I_p > λ^p) + C_{T,p} λ^{-p} E min{λ^p, I_p}` with
/// `I_p = ∫_0^T sup_y |σ|^p ds` pathwise.
pub fn verify_tail_bound(scn: &Scenario, exec: &Execution, p: f64, lambdas: &[f64]) -> Result<Vec<VerificationReport>> {
    if lambdas.is_empty() {
        return Err(Error::Empty("tail check needs at least one level".into()));
    }
    for &l in lambdas {
        check_positive("lambda", l)?;
    }
    check_ensemble_size(scn)?;
    let constants = c_moment(scn.grid.horizon(), p)?;
    let sampler = ConvolutionSampler::new(scn)?;
    let dt = scn.grid.dt();
    let paths = map_paths(scn.n_paths, exec, |k| {
        let (sigma, conv) = sampler.sample(scn, k)?;
        Ok((conv.sup_abs(), time_integral(&row_maxima(&sigma), p, dt)))
    })?;
    let n = paths.len() as f64;
    let reports = lambdas
        .iter()
        .map(|&lambda| {
            let level = lambda.powf(p);
            let exceed = paths.iter().filter(|(s, _)| *s > lambda).count() as f64 / n;
            let se = (exceed * (1.0 - exceed) / n).sqrt();
            let outside = paths.iter().filter(|(_, i)| *i > level).count() as f64 / n;
            let truncated = paths.iter().map(|(_, i)| i.min(level)).sum::<f64>() / n;
            let factor = (constants.log_c_moment - p * lambda.ln()).exp();
            let bound = outside + if truncated == 0.0 { 0.0 } else { factor * truncated };
            let details = format!(
                "lambda={lambda}; p={p}; P(I_p > lambda^p)={outside}; E min(lambda^p, I_p)={truncated:e}; C_(T,p)={:e}",
                constants.c_moment()
            );
            report_for(
                scn,
                VerificationReport::one_sided(
                    format!("tail_bound[{lambda}]"),
                    bound,
                    exceed,
                    se,
                    scn.n_paths,
                    exec.margin,
                )
                .with_details(details),
            )
        })
        .collect();
    Ok(reports)
}

/// `σ̃(t_n) = σ(t_n)·1{Σ_{m<n} dt·max|σ(t_m)|^p ≤ λ^p}`.
pub fn truncate_sigma(sigma: &RandomField, p: f64, lambda: f64) -> RandomField {
    let grid = *sigma.grid();
    let level = lambda.powf(p);
    let mut values = sigma.values().clone();
    let mut running = 0.0;
    for (n, mut row) in values.rows_mut().into_iter().enumerate() {
        if running > level {
            row.fill(0.0);
        }
        if n < grid.nt() {
            running += grid.dt() * sigma.row(n).iter().fold(0.0_f64, |m, v| m.max(v.abs())).powf(p);
        }
    }
    RandomField::from_values(&grid, values).expect("same shape")
}

/// Which small-moment estimate to check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SmallPMode {
    /// `E sup|Z|^p ≤ C_{T,p,q} E[(∫ sup|σ|^q)^{p/q}]`
    ViaQ(f64),
    /// `E sup|Z|^p ≤ ε E sup|σ|^p + C_{T,p,ε} E ∫ sup|σ|^p`
    ViaEps(f64),
}

pub fn verify_small_p(scn: &Scenario, exec: &Execution, p: f64, mode: SmallPMode) -> Result<VerificationReport> {
    check_ensemble_size(scn)?;
    if !(p > 0.0 && p <= 10.0) {
        return Err(Error::InvalidArgument(format!("small moment order p = {p} must lie in (0, 10]")));
    }
    let horizon = scn.grid.horizon();
    let dt = scn.grid.dt();
    let aux = match mode {
        SmallPMode::ViaQ(q) => q,
        SmallPMode::ViaEps(eps) => {
            check_positive("eps", eps)?;
            p
        }
    };
    let sampler = ConvolutionSampler::new(scn)?;
    let paths = map_paths(scn.n_paths, exec, |k| {
        let (sigma, conv) = sampler.sample(scn, k)?;
        Ok((conv.sup_abs().powf(p), time_integral(&row_maxima(&sigma), aux, dt), sigma.sup_abs()))
    })?;
    let lhs: Vec<f64> = paths.iter().map(|(s, _, _)| *s).collect();
    let (estimate, se) = mean_and_se(&lhs)?;
    let n = paths.len() as f64;
    let (name, bound, details) = match mode {
        SmallPMode::ViaQ(q) => {
            let c = c_small_p(horizon, p, q, SmallPReading::AtQ)?;
            let moment = paths.iter().map(|(_, i, _)| i.powf(p / q)).sum::<f64>() / n;
            (
                format!("small_p[q={q}]"),
                c * moment,
                format!("p={p}; q={q}; C_(T,p,q)={c:e}; E[(int sup|sigma|^q)^(p/q)]={moment:e}"),
            )
        }
        SmallPMode::ViaEps(eps) => {
            let c = c_small_p_eps(horizon, p, eps)?;
            let sup_term = paths.iter().map(|(_, _, s)| s.powf(p)).sum::<f64>() / n;
            let int_term = paths.iter().map(|(_, i, _)| *i).sum::<f64>() / n;
            let bound = eps * sup_term + if int_term == 0.0 { 0.0 } else { c.value * int_term };
            (
                format!("small_p[eps={eps}]"),
                bound,
                format!(
                    "p={p}; eps={eps}; C_(T,p,eps)={:e} (grid minimum at q={}); E sup|sigma|^p={sup_term:e}; E int sup|sigma|^p={int_term:e}",
                    c.value, c.q_star
                ),
            )
        }
    };
    Ok(report_for(
        scn,
        VerificationReport::one_sided(name, bound, estimate, se, scn.n_paths, exec.margin).with_details(details),
    ))
}

/// Coupling estimate of the transportation inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct TciEstimate {
    /// `√(mean sup|u - v|²)`, an upper bound for `W₂(ν, μ)`.
    pub w2_upper: f64,
    pub w2_std_error: f64,
    /// `½·mean Σ h²·dt·dx`
    pub entropy: f64,
    pub entropy_std_error: f64,
    /// `ln` of the bound `√(2·C·H)`.
    pub log_bound: f64,
    pub report: VerificationReport,
}

/// Samples under `Q`: `W̃ = Z` is white noise, `W = Z + h·dt·dx`, and the
/// coupled pair `(v, u)` is driven by it.
pub fn estimate_w2_and_entropy(scn: &Scenario, exec: &Execution) -> Result<TciEstimate> {
    check_ensemble_size(scn)?;
    let solver = MildSolver::new(&scn.grid, &scn.kernel)?;
    let u0 = scn.initial_row();
    let paths = map_paths(scn.n_paths, exec, |k| {
        let z = sample_white_noise(&scn.grid, scn.seed, k);
        let h = scn.shift.realize(&z);
        let w = girsanov_shift(&z, &h.scaled(-1.0))?;
        let pair = solver.solve_coupled_pair(&u0, &scn.coeffs, &w, &h)?;
        let d = pair.u.sup_distance(&pair.v)?;
        Ok((d * d, h.energy()))
    })?;
    let sq: Vec<f64> = paths.iter().map(|(d, _)| *d).collect();
    let energy: Vec<f64> = paths.iter().map(|(_, e)| *e).collect();
    let (mean_sq, se_sq) = mean_and_se(&sq)?;
    let (mean_energy, se_energy) = mean_and_se(&energy)?;
    let w2_upper = mean_sq.sqrt();
    let w2_std_error = if w2_upper > 0.0 { se_sq / (2.0 * w2_upper) } else { 0.0 };
    let entropy = 0.5 * mean_energy;
    let c = &scn.coeffs;
    let tci = c_tci(scn.grid.horizon(), c.l_b, c.l_sigma, c.k_sigma)?;
    let log_bound = 0.5 * (LN_2 + tci.log_value() + entropy.ln());
    let bound = if entropy == 0.0 || tci.k_sigma_sq == 0.0 { 0.0 } else { log_bound.exp() };
    let mut details = format!(
        "entropy={entropy:e} (se {:e}); ln C_tci={:e}; ln bound={log_bound:e}; h={}",
        0.5 * se_energy,
        tci.log_value(),
        scn.shift
    );
    if entropy == 0.0 {
        details.push_str("; h vanishes on the grid, coupled paths coincide");
    }
    if !bound.is_finite() {
        details.push_str(
            "; bound exceeds the f64 range (L_sigma > 0 makes C_tci astronomically large), so the check is vacuous",
        );
    }
    let report = report_for(
        scn,
        VerificationReport::one_sided("tci", bound, w2_upper, w2_std_error, scn.n_paths, exec.margin)
            .with_details(details),
    );
    Ok(TciEstimate { w2_upper, w2_std_error, entropy, entropy_std_error: 0.5 * se_energy, log_bound, report })
}

/// 1-Lipschitz functionals of a field under the sup norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Functional {
    SupNorm,
    /// Value at the node nearest to `(t, x)`.
    PointEvaluation {
        t: f64,
        x: f64,
    },
}

impl Functional {
    pub fn apply(&self, field: &RandomField) -> f64 {
        match *self {
            Functional::SupNorm => field.sup_abs(),
            Functional::PointEvaluation { t, x } => {
                let g = field.grid();
                let n = ((t / g.dt()).round() as usize).min(g.nt());
                field.values()[[n, g.nearest_node(x)]]
            }
        }
    }
}

/// The functional on every solution path of the scenario.
pub fn sample_functional(scn: &Scenario, exec: &Execution, functional: Functional) -> Result<Vec<f64>> {
    let solver = MildSolver::new(&scn.grid, &scn.kernel)?;
    let u0 = scn.initial_row();
    map_paths(scn.n_paths, exec, |k| {
        let noise = sample_white_noise(&scn.grid, scn.seed, k);
        Ok(functional.apply(&solver.solve_mild(&u0, &scn.coeffs, &noise)?))
    })
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Empirical median `m` and `(P(F > m + r), count)` for each radius.
pub fn tail_curve(values: &[f64], radii: &[f64]) -> Result<(f64, Vec<(f64, usize)>)> {
    if values.is_empty() {
        return Err(Error::Empty("tail curve of an empty sample".into()));
    }
    let m = median(values);
    let n = values.len() as f64;
    let tails = radii
        .iter()
        .map(|r| {
            let count = values.iter().filter(|&&v| v > m + r).count();
            (count as f64 / n, count)
        })
        .collect();
    Ok((m, tails))
}

pub const MIN_EXCEEDANCES: usize = 5;
pub const MIN_CONCENTRATION_SAMPLES: usize = 100;

/// Least-squares fit of `ln P(F > m + r) = ln C - c·r²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFit {
    pub log_c: f64,
    pub c: f64,
    pub c_std_error: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationProfile {
    pub median: f64,
    pub radii: Vec<f64>,
    pub tails: Vec<f64>,
    pub exceedances: Vec<usize>,
    pub n_samples: usize,
    pub fit: Option<GaussianFit>,
}

pub fn concentration_profile(values: &[f64], radii: &[f64]) -> Result<ConcentrationProfile> {
    if values.len() < MIN_CONCENTRATION_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "concentration profile needs at least {MIN_CONCENTRATION_SAMPLES} samples, got {}",
            values.len()
        )));
    }
    let (median, curve) = tail_curve(values, radii)?;
    if curve.iter().all(|(_, c)| *c == 0) {
        return Err(Error::Empty("every tail probability is zero".into()));
    }
    let usable: Vec<(f64, f64)> = radii
        .iter()
        .zip(&curve)
        .filter(|(_, (_, count))| *count >= MIN_EXCEEDANCES)
        .map(|(r, (tail, _))| (r * r, tail.ln()))
        .collect();
    let fit = (usable.len() >= 2).then(|| {
        let m = usable.len() as f64;
        let mx = usable.iter().map(|(x, _)| x).sum::<f64>() / m;
        let my = usable.iter().map(|(_, y)| y).sum::<f64>() / m;
        let sxx: f64 = usable.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let c_std_error = if usable.len() > 2 {
            let sse: f64 = usable.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
            (sse / (m - 2.0) / sxx).sqrt()
        } else {
            0.0
        };
        GaussianFit { log_c: intercept, c: -slope, c_std_error, points: usable.len() }
    });
    Ok(ConcentrationProfile {
        median,
        radii: radii.to_vec(),
        tails: curve.iter().map(|(t, _)| *t).collect(),
        exceedances: curve.iter().map(|(_, c)| *c).collect(),
        n_samples: values.len(),
        fit,
    })
}

impl ConcentrationProfile {
    /// Passes when the fitted Gaussian rate is positive. Median tails of a
    /// Lipschitz functional stand in for enlargements of arbitrary sets.
    pub fn report(&self, check_name: &str) -> VerificationReport {
        let curve: Vec<String> = self.radii.iter().zip(&self.tails).map(|(r, t)| format!("{r}:{t}")).collect();
        let base =
            format!("median={}; tails [{}]; median-tail proxy for set enlargements", self.median, curve.join(" "));
        match self.fit {
            Some(fit) => {
                VerificationReport::one_sided(check_name, 0.0, -fit.c, 0.0, self.n_samples, 0.0).with_details(format!(
                    "{base}; C_fit={:e}; c_fit={} (se {}) over {} radii",
                    fit.log_c.exp(),
                    fit.c,
                    fit.c_std_error,
                    fit.points
                ))
            }
            None => VerificationReport::one_sided(check_name, 0.0, 0.0, 0.0, self.n_samples, 0.0)
                .with_details(base)
                .failed("fewer than two radii with enough exceedances to fit"),
        }
    }
}

/// Both sides of both layer-cake identities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerCakeSides {
    /// `E X^p`
    pub moment: f64,
    /// `∫_0^∞ p x^{p-1} P(X > x) dx`
    pub tail_integral: f64,
    /// `∫_0^∞ E min{x^q, X} x^{-q} p x^{p-1} dx`
    pub truncated_integral: f64,
    /// `q/(q-p)·E X^{p/q}`
    pub fractional_moment: f64,
}

pub const LAYER_CAKE_TOLERANCE: f64 = 1e-6;

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

impl LayerCakeSides {
    pub fn max_relative_gap(&self) -> f64 {
        relative_gap(self.moment, self.tail_integral).max(relative_gap(self.truncated_integral, self.fractional_moment))
    }

    pub fn report(&self, p: f64, q: f64, n: usize) -> VerificationReport {
        let gap = self.max_relative_gap();
        VerificationReport::one_sided("layer_cake", LAYER_CAKE_TOLERANCE, gap, 0.0, n, 0.0).with_details(format!(
            "p={p}; q={q}; E X^p={:e} vs tail integral {:e}; truncated integral {:e} vs q/(q-p) E X^(p/q) {:e}",
            self.moment, self.tail_integral, self.truncated_integral, self.fractional_moment
        ))
    }
}

fn check_orders(p: f64, q: f64) -> Result<()> {
    if p > 0.0 && q > p && q.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("need 0 < p < q, got p={p}, q={q}")))
    }
}

/// Layer-cake sides for the empirical law of `samples`; the tail integrals are
/// evaluated exactly piece by piece between order statistics.
pub fn layer_cake_sides(samples: &[f64], p: f64, q: f64) -> Result<LayerCakeSides> {
    check_orders(p, q)?;
    if samples.is_empty() {
        return Err(Error::Empty("layer-cake check of an empty sample".into()));
    }
    if samples.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidArgument("layer-cake samples must be finite and nonnegative".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let moment = sorted.iter().map(|x| x.powf(p)).sum::<f64>() / nf;
    let fractional_moment = q / (q - p) * sorted.iter().map(|x| x.powf(p / q)).sum::<f64>() / nf;

    // On [x_(k-1), x_(k)) exactly n - k + 1 samples exceed x.
    let mut tail_integral = 0.0;
    let mut prev = 0.0_f64;
    for (k, &x) in sorted.iter().enumerate() {
        tail_integral += (x.powf(p) - prev.powf(p)) * (n - k) as f64 / nf;
        prev = x;
    }

    // With y = x^{1/q}, on [y_(k-1), y_(k)): E min{x^q, X} = ((n-k+1)x^q + S_{k-1})/n.
    let mut truncated_integral = 0.0;
    let mut prev_y = 0.0_f64;
    let mut partial = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        let y = x.powf(1.0 / q);
        if y > prev_y {
            truncated_integral += (n - k) as f64 / nf * (y.powf(p) - prev_y.powf(p));
            if partial > 0.0 {
                truncated_integral += partial / nf * p * (y.powf(p - q) - prev_y.powf(p - q)) / (p - q);
            }
        }
        partial += x;
        prev_y = y;
    }
    if partial > 0.0 {
        truncated_integral += partial / nf * p * prev_y.powf(p - q) / (q - p);
    }
    Ok(LayerCakeSides { moment, tail_integral, truncated_integral, fractional_moment })
}

pub fn layer_cake_checks(samples: &[f64], p: f64, q: f64) -> Result<VerificationReport> {
    Ok(layer_cake_sides(samples, p, q)?.report(p, q, samples.len()))
}

/// Laws with closed-form moments and truncated means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticLaw {
    PointMass(f64),
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
}

impl AnalyticLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AnalyticLaw::PointMass(c) => c >= 0.0 && c.is_finite(),
            AnalyticLaw::Uniform { lo, hi } => lo >= 0.0 && hi > lo && hi.is_finite(),
            AnalyticLaw::Exponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid nonnegative law {self:?}")))
        }
    }

    /// `P(X > x)`
    pub fn survival(&self, x: f64) -> f64 {
        match *self {
            AnalyticLaw::PointMass(c) => f64::from(u8::from(x < c)),
            AnalyticLaw::Uniform { lo, hi } => ((hi - x) / (hi - lo)).clamp(0.0, 1.0),
            AnalyticLaw::Exponential { rate } => (-rate * x.max(0.0)).exp(),
        }
    }

    /// `E X^r` for `r > 0`.
    pub fn moment(&self, r: f64) -> f64 {
        match *self {
            AnalyticLaw::PointMass(c) => c.powf(r),
            AnalyticLaw::Uniform { lo, hi } => (hi.powf(r + 1.0) - lo.powf(r + 1.0)) / ((r + 1.0) * (hi - lo)),
            AnalyticLaw::Exponential { rate } => gamma(r + 1.0) / rate.powf(r),
        }
    }

    /// `E min{c, X} = ∫_0^c P(X > u) du`
    pub fn truncated_mean(&self, c: f64) -> f64 {
        match *self {
            AnalyticLaw::PointMass(m) => c.min(m),
            AnalyticLaw::Uniform { lo, hi } => {
                if c <= lo {
                    c
                } else if c <= hi {
                    lo + (c - lo) * (2.0 * hi - lo - c) / (2.0 * (hi - lo))
                } else {
                    0.5 * (lo + hi)
                }
            }
            AnalyticLaw::Exponential { rate } => -(-rate * c).exp_m1() / rate,
        }
    }

    /// A point beyond which `P(X > x)` is zero or below `e^{-60}`.
    fn effective_sup(&self, p: f64) -> f64 {
        match *self {
            AnalyticLaw::PointMass(c) => c,
            AnalyticLaw::Uniform { hi, .. } => hi,
            AnalyticLaw::Exponential { rate } => (60.0 + 4.0 * p) / rate,
        }
    }
}

/// Layer-cake sides for an analytic law; the integrals are computed by
/// adaptive quadrature, the tail beyond the support in closed form.
pub fn layer_cake_analytic(law: AnalyticLaw, p: f64, q: f64) -> Result<LayerCakeSides> {
    check_orders(p, q)?;
    law.validate()?;
    let top = law.effective_sup(p);
    let mean = law.moment(1.0);
    if top == 0.0 {
        return Ok(LayerCakeSides { moment: 0.0, tail_integral: 0.0, truncated_integral: 0.0, fractional_moment: 0.0 });
    }
    // In the variable v = x^p both integrands are bounded near the origin.
    let mut breaks = vec![0.0];
    if let AnalyticLaw::Uniform { lo, .. } = law {
        if lo > 0.0 {
            breaks.push(lo.powf(p));
        }
    }
    breaks.push(top.powf(p));
    let tail_integral = integrate_pieces(|v: f64| law.survival(v.powf(1.0 / p)), &breaks, 1e-13, 0.0);
    let y_top = top.powf(1.0 / q);
    let inner = integrate_pieces(
        |v: f64| {
            let c = v.powf(q / p);
            if c == 0.0 {
                1.0
            } else {
                law.truncated_mean(c) / c
            }
        },
        &breaks.iter().map(|b| b.powf(1.0 / q)).collect::<Vec<_>>(),
        1e-13,
        0.0,
    );
    let truncated_integral = inner + mean * p * y_top.powf(p - q) / (q - p);
    Ok(LayerCakeSides {
        moment: law.moment(p),
        tail_integral,
        truncated_integral,
        fractional_moment: q / (q - p) * law.moment(p / q),
    })
}

/// Vanishing event `V = {Σ_i ΔW(0, i) ≤ 0}` and `σ = 1{V^c}·σ_scn(u)` from the
/// second step on. On `V` the stochastic integral and the convolution must be
/// exactly zero; off `V` they are generically nonzero.
pub fn local_property_check(scn: &Scenario, exec: &Execution) -> Result<VerificationReport> {
    check_ensemble_size(scn)?;
    let solver = MildSolver::new(&scn.grid, &scn.kernel)?;
    let engine = ConvolutionEngine::new(&scn.grid);
    let u0 = scn.initial_row();
    let paths = map_paths(scn.n_paths, exec, |k| {
        let noise = sample_white_noise(&scn.grid, scn.seed, k);
        let vanishing = noise.increments().row(0).sum() <= 0.0;
        let indicator = if vanishing { 0.0 } else { 1.0 };
        let u = solver.solve_mild(&u0, &scn.coeffs, &noise)?;
        let mut values = u.values().mapv(|v| indicator * scn.coeffs.diffusion.eval(v));
        values.row_mut(0).fill(0.0);
        let sigma = RandomField::from_values(&scn.grid, values)?;
        let nt = scn.grid.nt();
        let integral: f64 =
            sigma.values().slice(ndarray::s![..nt, ..]).iter().zip(noise.increments()).map(|(s, w)| s * w).sum();
        let conv = engine.convolve_direct(&sigma, &noise)?;
        Ok((vanishing, integral.abs().max(conv.sup_abs())))
    })?;
    let on_event: Vec<f64> = paths.iter().filter(|(v, _)| *v).map(|(_, s)| *s).collect();
    let off_event: Vec<f64> = paths.iter().filter(|(v, _)| !*v).map(|(_, s)| *s).collect();
    let worst = on_event.iter().fold(0.0_f64, |m, v| m.max(*v));
    let nonzero_off = off_event.iter().filter(|v| **v != 0.0).count();
    let details = format!(
        "vanishing event on {}/{} paths, max |integral| there = {worst:e}; nonzero off the event on {nonzero_off}/{} paths",
        on_event.len(),
        paths.len(),
        off_event.len()
    );
    let mut report = report_for(
        scn,
        VerificationReport::one_sided("local_property", 0.0, worst, 0.0, scn.n_paths, 0.0).with_details(details),
    );
    report.passed = worst == 0.0;
    if on_event.is_empty() {
        report = report.failed("the vanishing event never occurred");
    }
    if nonzero_off == 0 && !off_event.is_empty() && !scn.coeffs.diffusion.is_zero() {
        report = report.failed("integral vanished off the event as well; the check has no power");
    }
    Ok(report)
}

/// Mean discrepancy at one refinement level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub nt: usize,
    pub nx: usize,
    pub residual: f64,
    pub residual_std_error: f64,
    /// Residual divided by the size of the reference field, path by path.
    pub relative: f64,
}

/// Factorization residual for `σ ≡ 1` at each grid, averaged over paths.
pub fn factorization_study(
    horizon: f64,
    levels: &[(usize, usize)],
    params: &FactorizationParams,
    n_paths: usize,
    seed: u64,
    exec: &Execution,
) -> Result<Vec<ConvergencePoint>> {
    levels
        .iter()
        .map(|&(nt, nx)| {
            let grid = SpaceTimeGrid::new(horizon, nt, nx)?;
            let engine = ConvolutionEngine::new(&grid);
            let one = RandomField::constant(&grid, 1.0);
            let per_path = map_paths(n_paths, exec, |k| {
                let noise = sample_white_noise(&grid, seed, k);
                let direct = engine.convolve_direct(&one, &noise)?;
                let residual = direct.sup_distance(&engine.factorized(&one, &noise, params)?)?;
                Ok((residual, residual / direct.sup_abs()))
            })?;
            let residuals: Vec<f64> = per_path.iter().map(|(r, _)| *r).collect();
            let relative: Vec<f64> = per_path.iter().map(|(_, r)| *r).collect();
            let (residual, residual_std_error) = mean_and_se(&residuals)?;
            Ok(ConvergencePoint { nt, nx, residual, residual_std_error, relative: mean_and_se(&relative)?.0 })
        })
        .collect()
}

/// Sup distance between consecutive levels on a shared sheet: the finest noise
/// is sampled and coarsened level by level, and each level is compared with
/// the next finer one on the coarse nodes. Point `i` compares levels `i` and `i + 1`.
pub fn solver_self_convergence(
    scn: &Scenario,
    levels: &[(usize, usize)],
    exec: &Execution,
) -> Result<Vec<ConvergencePoint>> {
    if levels.len() < 2 {
        return Err(Error::InvalidArgument("self-convergence needs at least two levels".into()));
    }
    let horizon = scn.grid.horizon();
    let grids = levels.iter().map(|&(nt, nx)| SpaceTimeGrid::new(horizon, nt, nx)).collect::<Result<Vec<_>>>()?;
    let solvers = grids.iter().map(|g| MildSolver::new(g, &scn.kernel)).collect::<Result<Vec<_>>>()?;
    let last = grids.len() - 1;
    let per_path = map_paths(scn.n_paths, exec, |k| {
        let mut noises = vec![sample_white_noise(&grids[last], scn.seed, k)];
        for level in (0..last).rev() {
            let finer = noises.last().unwrap();
            let split = scn.seed.wrapping_add(k).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ level as u64;
            noises.push(coarsen(finer, &grids[level], split)?);
        }
        noises.reverse();
        let fields = solvers
            .iter()
            .zip(&grids)
            .zip(&noises)
            .map(|((solver, g), noise)| solver.solve_mild(&scn.u0.nodes(g), &scn.coeffs, noise))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..last)
            .map(|l| {
                let (coarse, fine) = (&fields[l], &fields[l + 1]);
                let ratio = grids[l + 1].nt() / grids[l].nt();
                let mut diff = 0.0_f64;
                for n in 0..=grids[l].nt() {
                    for j in 0..grids[l].nx() {
                        let d = coarse.values()[[n, j]] - fine.values()[[n * ratio, 2 * j + 1]];
                        diff = diff.max(d.abs());
                    }
                }
                (diff, diff / fine.sup_abs().max(f64::MIN_POSITIVE))
            })
            .collect::<Vec<_>>())
    })?;
    (0..last)
        .map(|l| {
            let residuals: Vec<f64> = per_path.iter().map(|p| p[l].0).collect();
            let relative: Vec<f64> = per_path.iter().map(|p| p[l].1).collect();
            let (residual, residual_std_error) = mean_and_se(&residuals)?;
            Ok(ConvergencePoint {
                nt: levels[l].0,
                nx: levels[l].1,
                residual,
                residual_std_error,
                relative: mean_and_se(&relative)?.0,
            })
        })
        .collect()
}
