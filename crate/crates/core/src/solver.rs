//! Mild-form time stepping.
//!
//! One step of the exponential-Euler scheme with the exact Dirichlet kernel
//! matrix `K = p_dt(x_i, x_j)`:
//!
//! ```text
//! u^{n+1}_i = Σ_j K_ij [ dx·(u^n_j + b(u^n_j)·dt) + σ(u^n_j)·ΔW(n,j) ]
//! ```
//!
//! The noise term is evaluated at the left point (Itô).

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::heat_kernel::{KernelMatrix, KernelParams};
use crate::noise::{self, girsanov_shift, DriftField, WhiteNoiseSample};
use crate::report::VerificationReport;

/// Any `|u|` above this aborts the run.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

const FIELD_MAGIC: &[u8; 4] = b"RFD1";

/// `max_x 2x/(1+x²)² = 3√3/8`, the Lipschitz constant of `1/(1+x²)`.
const RATIONAL_LIPSCHITZ: f64 = 0.649_519_052_838_329;

/// Closed-form scalar maps used for the drift `b` and diffusion `σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarFn {
    Zero,
    Constant(f64),
    Affine {
        slope: f64,
        intercept: f64,
    },
    /// `a·sin(x)`
    Sine {
        amplitude: f64,
    },
    /// `s/(1 + x²)`
    BoundedRational {
        scale: f64,
    },
    /// `clamp(x, -K, K)`
    ClippedLinear {
        bound: f64,
    },
}

impl ScalarFn {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Constant(c) => c,
            ScalarFn::Affine { slope, intercept } => slope * x + intercept,
            ScalarFn::Sine { amplitude } => amplitude * x.sin(),
            ScalarFn::BoundedRational { scale } => scale / (1.0 + x * x),
            ScalarFn::ClippedLinear { bound } => x.clamp(-bound, bound),
        }
    }

    /// `sup |f|`, infinite for unbounded maps.
    pub fn sup_bound(&self) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Constant(c) => c.abs(),
            ScalarFn::Affine { slope, intercept } => {
                if slope == 0.0 {
                    intercept.abs()
                } else {
                    f64::INFINITY
                }
            }
            ScalarFn::Sine { amplitude } => amplitude.abs(),
            ScalarFn::BoundedRational { scale } => scale.abs(),
            ScalarFn::ClippedLinear { bound } => bound.abs(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            ScalarFn::Zero | ScalarFn::Constant(_) => 0.0,
            ScalarFn::Affine { slope, .. } => slope.abs(),
            ScalarFn::Sine { amplitude } => amplitude.abs(),
            ScalarFn::BoundedRational { scale } => scale.abs() * RATIONAL_LIPSCHITZ,
            ScalarFn::ClippedLinear { bound } => {
                if bound > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// A constant `L` with `|f(x)| ≤ L(1 + |x|)`.
    pub fn growth(&self) -> f64 {
        match *self {
            ScalarFn::Affine { slope, intercept } => slope.abs().max(intercept.abs()),
            ScalarFn::ClippedLinear { bound } => bound.abs().min(1.0),
            other => other.sup_bound(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_bound() == 0.0
    }

    pub fn is_constant(&self) -> bool {
        self.lipschitz() == 0.0
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Zero => write!(f, "zero"),
            ScalarFn::Constant(c) => write!(f, "constant({c})"),
            ScalarFn::Affine { slope, intercept } => write!(f, "affine({slope},{intercept})"),
            ScalarFn::Sine { amplitude } => write!(f, "sine({amplitude})"),
            ScalarFn::BoundedRational { scale } => write!(f, "bounded-rational({scale})"),
            ScalarFn::ClippedLinear { bound } => write!(f, "clipped-linear({bound})"),
        }
    }
}

/// Splits `name(a, b, ...)` into its name and numeric arguments.
pub(crate) fn parse_form(text: &str) -> Result<(String, Vec<f64>)> {
    let text = text.trim();
    let bad = || Error::InvalidArgument(format!("cannot parse form `{text}`"));
    let (name, args) = match text.find('(') {
        None => (text, Vec::new()),
        Some(open) => {
            let inner = text[open + 1..].strip_suffix(')').ok_or_else(bad)?;
            let args = inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            (&text[..open], args)
        }
    };
    Ok((name.trim().to_ascii_lowercase().replace('_', "-"), args))
}

pub(crate) fn arity(name: &str, args: &[f64], allowed: &[usize]) -> Result<()> {
    if allowed.contains(&args.len()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("`{name}` takes {allowed:?} arguments, got {}", args.len())))
    }
}

impl FromStr for ScalarFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_form(s)?;
        let first = |default: f64| args.first().copied().unwrap_or(default);
        match name.as_str() {
            "zero" => {
                arity(&name, &args, &[0])?;
                Ok(ScalarFn::Zero)
            }
            "constant" => {
                arity(&name, &args, &[1])?;
                Ok(ScalarFn::Constant(args[0]))
            }
            "affine" => {
                arity(&name, &args, &[2])?;
                Ok(ScalarFn::Affine { slope: args[0], intercept: args[1] })
            }
            "sine" => {
                arity(&name, &args, &[0, 1])?;
                Ok(ScalarFn::Sine { amplitude: first(1.0) })
            }
            "bounded-rational" => {
                arity(&name, &args, &[0, 1])?;
                Ok(ScalarFn::BoundedRational { scale: first(1.0) })
            }
            "clipped-linear" => {
                arity(&name, &args, &[0, 1])?;
                Ok(ScalarFn::ClippedLinear { bound: first(1.0) })
            }
            _ => Err(Error::InvalidArgument(format!("unknown coefficient form `{s}`"))),
        }
    }
}

/// Drift and diffusion with their declared constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub drift: ScalarFn,
    pub diffusion: ScalarFn,
    pub l_b: f64,
    pub k_sigma: f64,
    pub l_sigma: f64,
}

impl Coefficients {
    /// Constants derived from the closed forms.
    pub fn from_forms(drift: ScalarFn, diffusion: ScalarFn) -> Self {
        Self {
            drift,
            diffusion,
            l_b: drift.growth().max(drift.lipschitz()),
            k_sigma: diffusion.sup_bound(),
            l_sigma: diffusion.lipschitz(),
        }
    }

    pub fn declared(drift: ScalarFn, diffusion: ScalarFn, l_b: f64, k_sigma: f64, l_sigma: f64) -> Self {
        Self { drift, diffusion, l_b, k_sigma, l_sigma }
    }
}

/// Values on the grid nodes, `(nt + 1) × nx`, row 0 at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomField {
    grid: SpaceTimeGrid,
    values: Array2<f64>,
}

impl RandomField {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self { grid: *grid, values: Array2::zeros((grid.nt() + 1, grid.nx())) }
    }

    pub fn constant(grid: &SpaceTimeGrid, c: f64) -> Self {
        Self { grid: *grid, values: Array2::from_elem((grid.nt() + 1, grid.nx()), c) }
    }

    pub fn from_values(grid: &SpaceTimeGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.nt() + 1, grid.nx()) {
            return Err(Error::GridMismatch(format!(
                "field has shape {:?}, grid needs ({}, {})",
                values.dim(),
                grid.nt() + 1,
                grid.nx()
            )));
        }
        Ok(Self { grid: *grid, values })
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: &SpaceTimeGrid, f: F) -> Self {
        let values = Array2::from_shape_fn((grid.nt() + 1, grid.nx()), |(n, i)| f(grid.t(n), grid.x(i)));
        Self { grid: *grid, values }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, f64> {
        self.values.row(n)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self { grid: self.grid, values: self.values.mapv(f) }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| factor * v)
    }

    /// Node maximum of `|value|`.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `sup |self - other|` over all nodes.
    pub fn sup_distance(&self, other: &RandomField) -> Result<f64> {
        self.grid.ensure_same(&other.grid, "field distance")?;
        Ok(self.values.iter().zip(other.values.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// CSV with columns `t,x,value`, time-major.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,value")?;
        for (n, row) in self.values.rows().into_iter().enumerate() {
            let t = self.grid.t(n);
            for (i, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{:e}", t, self.grid.x(i), v)?;
            }
        }
        Ok(())
    }

    /// Same flat layout as [`WhiteNoiseSample::write_to`], with `nt + 1` rows.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(FIELD_MAGIC)?;
        noise::write_header(&mut out, &self.grid)?;
        noise::write_body(&mut out, self.values.view())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        noise::expect_magic(&mut input, FIELD_MAGIC)?;
        let grid = noise::read_header(&mut input)?;
        let values = noise::read_body(&mut input, grid.nt() + 1, grid.nx())?;
        Self::from_values(&grid, values)
    }
}

/// Checks node values of an initial condition: length, finiteness, and a
/// discrete continuity test at the boundary (the jump from the pinned zero to
/// the first and last node may not exceed four times the largest interior jump).
pub fn validate_initial(u0: &[f64], grid: &SpaceTimeGrid) -> Result<()> {
    if u0.len() != grid.nx() {
        return Err(Error::GridMismatch(format!(
            "initial row has {} values, grid has {} interior nodes",
            u0.len(),
            grid.nx()
        )));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial condition".into()));
    }
    let interior = u0.windows(2).fold(0.0_f64, |m, w| m.max((w[1] - w[0]).abs()));
    let edge = u0[0].abs().max(u0[u0.len() - 1].abs());
    if edge > 4.0 * interior + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "initial condition is not compatible with u(0) = u(1) = 0: boundary jump {edge} vs interior jumps ≤ {interior}"
        )));
    }
    Ok(())
}

/// The pair `(v, u)` driven by the same shifted noise `W̃`.
#[derive(Clone, Debug)]
pub struct CoupledPair {
    /// Mild solution against `W̃` without the Girsanov drift.
    pub v: RandomField,
    /// Mild solution against `W̃` plus the drift `σ(u)·h`, i.e. against `W`.
    pub u: RandomField,
}

/// Mild-form stepper for one grid; the step kernel is built once and shared.
#[derive(Clone, Debug)]
pub struct MildSolver {
    grid: SpaceTimeGrid,
    step_kernel: KernelMatrix,
}

impl MildSolver {
    pub fn new(grid: &SpaceTimeGrid, params: &KernelParams) -> Result<Self> {
        Ok(Self { grid: *grid, step_kernel: KernelMatrix::new(grid, grid.dt(), params)? })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn step_kernel(&self) -> &KernelMatrix {
        &self.step_kernel
    }

    pub fn solve_mild(&self, u0: &[f64], coeffs: &Coefficients, noise: &WhiteNoiseSample) -> Result<RandomField> {
        self.grid.ensure_same(noise.grid(), "solve_mild noise")?;
        self.march(u0, coeffs, noise, None)
    }

    /// Mild equation under `Q`: noise `W̃` plus the explicit drift
    /// `Σ_j K_ij·dx·σ(u_j)·h(t_n,x_j)·dt`.
    pub fn solve_shifted(
        &self,
        u0: &[f64],
        coeffs: &Coefficients,
        shifted: &WhiteNoiseSample,
        drift: &DriftField,
    ) -> Result<RandomField> {
        self.grid.ensure_same(shifted.grid(), "solve_shifted noise")?;
        self.grid.ensure_same(drift.grid(), "solve_shifted drift")?;
        self.march(u0, coeffs, shifted, Some(drift))
    }

    /// `v` against `W̃ = W - h·dt·dx` and `u` against `W`; the shifted noise plus
    /// the `σ(u)·h` drift recombine to the unshifted increments, so `u` is
    /// computed from `W` directly.
    pub fn solve_coupled_pair(
        &self,
        u0: &[f64],
        coeffs: &Coefficients,
        noise: &WhiteNoiseSample,
        drift: &DriftField,
    ) -> Result<CoupledPair> {
        self.grid.ensure_same(noise.grid(), "coupled pair noise")?;
        let shifted = girsanov_shift(noise, drift)?;
        let v = self.march(u0, coeffs, &shifted, None)?;
        let u = self.march(u0, coeffs, noise, None)?;
        Ok(CoupledPair { v, u })
    }

    fn march(
        &self,
        u0: &[f64],
        coeffs: &Coefficients,
        noise: &WhiteNoiseSample,
        drift: Option<&DriftField>,
    ) -> Result<RandomField> {
        validate_initial(u0, &self.grid)?;
        let (nt, nx) = (self.grid.nt(), self.grid.nx());
        let (dt, dx) = (self.grid.dt(), self.grid.dx());
        let mut values = Array2::zeros((nt + 1, nx));
        values.row_mut(0).iter_mut().zip(u0).for_each(|(v, u)| *v = *u);
        let mut current = u0.to_vec();
        let mut source = vec![0.0; nx];
        let mut next = vec![0.0; nx];
        for n in 0..nt {
            let increments = noise.increments().row(n);
            for j in 0..nx {
                let u = current[j];
                let mut g = dx * (u + coeffs.drift.eval(u) * dt);
                let s = coeffs.diffusion.eval(u);
                // Skipping σ = 0 keeps the output bitwise independent of W.
                if s != 0.0 {
                    g += s * increments[j];
                    if let Some(h) = drift {
                        g += dx * s * h.values()[[n, j]] * dt;
                    }
                }
                source[j] = g;
            }
            self.step_kernel.apply_into(&source, &mut next);
            for (j, &u) in next.iter().enumerate() {
                if !u.is_finite() || u.abs() > BLOW_UP_THRESHOLD {
                    return Err(Error::BlowUp { step: n + 1, value: u });
                }
                values[[n + 1, j]] = u;
            }
            std::mem::swap(&mut current, &mut next);
        }
        RandomField::from_values(&self.grid, values)
    }
}

/// A declared constant contradicted by the probe, with the evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub constant: &'static str,
    pub declared: f64,
    pub required: f64,
    pub x: f64,
    pub y: Option<f64>,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.y {
            Some(y) => write!(
                f,
                "{} declared {} but the pair ({}, {}) needs {}",
                self.constant, self.declared, self.x, y, self.required
            ),
            None => {
                write!(f, "{} declared {} but x = {} needs {}", self.constant, self.declared, self.x, self.required)
            }
        }
    }
}

/// Smallest constants consistent with the probe points, and any violations.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCheck {
    pub drift_growth: f64,
    pub drift_lipschitz: f64,
    pub diffusion_bound: f64,
    pub diffusion_lipschitz: f64,
    pub n_probe: usize,
    pub violations: Vec<Witness>,
}

impl HypothesisCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn report(&self, coeffs: &Coefficients) -> VerificationReport {
        let required = self.drift_growth.max(self.drift_lipschitz);
        let mut details = format!(
            "estimated L_b = {required}, K_sigma = {}, L_sigma = {} (declared {}, {}, {})",
            self.diffusion_bound, self.diffusion_lipschitz, coeffs.l_b, coeffs.k_sigma, coeffs.l_sigma
        );
        for w in &self.violations {
            details.push_str("; ");
            details.push_str(&w.to_string());
        }
        VerificationReport {
            check_name: "hypotheses".into(),
            theoretical_bound: 0.0,
            empirical_estimate: self.violations.len() as f64,
            std_error: 0.0,
            n_paths: self.n_probe,
            passed: self.passed(),
            seed: 0,
            grid: None,
            scenario_id: String::new(),
            details,
        }
    }
}

fn exceeds(required: f64, declared: f64) -> bool {
    required > declared * (1.0 + 1e-9) + 1e-12
}

/// Probes the growth, boundedness and Lipschitz hypotheses on `n_probe`
/// equally spaced points of `range` and on every pair of them.
pub fn check_hypotheses(coeffs: &Coefficients, range: (f64, f64), n_probe: usize) -> Result<HypothesisCheck> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!("empty probe range [{lo}, {hi}]")));
    }
    if n_probe < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 probe points, got {n_probe}")));
    }
    let xs: Vec<f64> = (0..n_probe).map(|k| lo + (hi - lo) * k as f64 / (n_probe - 1) as f64).collect();
    let b: Vec<f64> = xs.iter().map(|&x| coeffs.drift.eval(x)).collect();
    let s: Vec<f64> = xs.iter().map(|&x| coeffs.diffusion.eval(x)).collect();

    let argmax = |vals: &mut dyn Iterator<Item = (f64, f64, Option<f64>)>| {
        vals.fold((0.0_f64, f64::NAN, None), |best, cur| if cur.0 > best.0 { cur } else { best })
    };
    let growth = argmax(&mut xs.iter().zip(&b).map(|(&x, &v)| (v.abs() / (1.0 + x.abs()), x, None)));
    let bound = argmax(&mut xs.iter().zip(&s).map(|(&x, &v)| (v.abs(), x, None)));
    let pairs = |vals: &[f64]| {
        let mut best = (0.0_f64, f64::NAN, None);
        for i in 0..n_probe {
            for j in i + 1..n_probe {
                let q = (vals[j] - vals[i]).abs() / (xs[j] - xs[i]);
                if q > best.0 {
                    best = (q, xs[i], Some(xs[j]));
                }
            }
        }
        best
    };
    let b_lip = pairs(&b);
    let s_lip = pairs(&s);

    let mut violations = Vec::new();
    let mut record = |name: &'static str, declared: f64, found: (f64, f64, Option<f64>)| {
        if exceeds(found.0, declared) {
            violations.push(Witness { constant: name, declared, required: found.0, x: found.1, y: found.2 });
        }
    };
    record("L_b", coeffs.l_b, growth);
    record("L_b", coeffs.l_b, b_lip);
    record("K_sigma", coeffs.k_sigma, bound);
    record("L_sigma", coeffs.l_sigma, s_lip);

    Ok(HypothesisCheck {
        drift_growth: growth.0,
        drift_lipschitz: b_lip.0,
        diffusion_bound: bound.0,
        diffusion_lipschitz: s_lip.0,
        n_probe,
        violations,
    })
}
