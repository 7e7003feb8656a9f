//! Explicit constants of the moment, tail, small-moment and transportation
//! estimates. Everything is evaluated in log-space; `value` accessors
//! exponentiate and may return `+∞`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heat_kernel::C2;

/// Orders in `(10, 10 + MOMENT_ORDER_GAP]` are rejected.
pub const MOMENT_ORDER_GAP: f64 = 1e-3;

/// Largest log-value that still exponentiates to a finite `f64`.
pub const LOG_OVERFLOW: f64 = 709.0;

const GOLDEN_MARGIN: f64 = 1e-4;

/// `q ∈ {10 + Q_STEP·2^k : k = 0..=Q_DOUBLINGS}`.
pub const Q_STEP: f64 = 0.5;
pub const Q_DOUBLINGS: u32 = 24;

pub const TCI_EPS_POINTS: usize = 64;
/// The ε grid spans `ε_max·10^{-TCI_EPS_DECADES}` to just below `ε_max`.
pub const TCI_EPS_DECADES: f64 = 8.0;

/// `(3/(2p), 1/4 - 1/p)`
pub fn alpha_range(p: f64) -> Result<(f64, f64)> {
    if !(p.is_finite() && p > 10.0) {
        return Err(Error::EmptyAlphaRange(p));
    }
    Ok((1.5 / p, 0.25 - 1.0 / p))
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("horizon T = {horizon} must be positive")))
    }
}

fn check_moment_order(p: f64) -> Result<()> {
    alpha_range(p)?;
    if p <= 10.0 + MOMENT_ORDER_GAP {
        return Err(Error::InvalidArgument(format!("moment order p = {p} is within {MOMENT_ORDER_GAP} of 10")));
    }
    Ok(())
}

fn value_of(log: f64) -> f64 {
    log.exp()
}

/// `ln C′_{T,p,α}` and `ln C″_{T,p,α}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Components {
    pub log_c_prime: f64,
    pub log_c_double_prime: f64,
}

impl Components {
    pub fn c_prime(&self) -> f64 {
        value_of(self.log_c_prime)
    }

    pub fn c_double_prime(&self) -> f64 {
        value_of(self.log_c_double_prime)
    }

    pub fn log_product(&self) -> f64 {
        self.log_c_prime + self.log_c_double_prime
    }
}

/// ```text
/// C′  = |sin(πα)/π|^p · C₂ · ((p-1)/(αp - 3/2))^{p-1} · T^{αp - 1/2}
/// C″  = (4C₂p)^{p/2} · ((p-2)/(p/2 - 2 - 2αp))^{(p-2)/2} · T^{p/4 - 1 - αp}
/// ```
pub fn c_components(horizon: f64, p: f64, alpha: f64) -> Result<Components> {
    check_horizon(horizon)?;
    let (lo, hi) = alpha_range(p)?;
    if !(alpha > lo && alpha < hi) {
        return Err(Error::InadmissibleAlpha { alpha, p, lo, hi });
    }
    Ok(components_unchecked(horizon, p, alpha))
}

fn components_unchecked(horizon: f64, p: f64, alpha: f64) -> Components {
    let ln_t = horizon.ln();
    let log_c_prime = p * ((PI * alpha).sin() / PI).abs().ln()
        + C2.ln()
        + (p - 1.0) * ((p - 1.0) / (alpha * p - 1.5)).ln()
        + (alpha * p - 0.5) * ln_t;
    let log_c_double_prime = 0.5 * p * (4.0 * C2 * p).ln()
        + 0.5 * (p - 2.0) * ((p - 2.0) / (0.5 * p - 2.0 - 2.0 * alpha * p)).ln()
        + (0.25 * p - 1.0 - alpha * p) * ln_t;
    Components { log_c_prime, log_c_double_prime }
}

/// `ln` of the closed-form upper bound
/// `p^{p/2} T^{p/4-3/2} (2/π)^p C₂^{p/2+1} ((6p-8)/(p-10))^{3p/2-2}`.
pub fn log_closed_form(horizon: f64, p: f64) -> Result<f64> {
    check_horizon(horizon)?;
    alpha_range(p)?;
    Ok(0.5 * p * p.ln()
        + (0.25 * p - 1.5) * horizon.ln()
        + p * (2.0 / PI).ln()
        + (0.5 * p + 1.0) * C2.ln()
        + (1.5 * p - 2.0) * ((6.0 * p - 8.0) / (p - 10.0)).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentBoundConstants {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub p: f64,
    pub alpha_star: f64,
    pub log_c_prime: f64,
    pub log_c_double_prime: f64,
    pub log_c_moment: f64,
    pub log_c_closed_form: f64,
}

impl MomentBoundConstants {
    pub fn c_prime(&self) -> f64 {
        value_of(self.log_c_prime)
    }

    pub fn c_double_prime(&self) -> f64 {
        value_of(self.log_c_double_prime)
    }

    pub fn c_moment(&self) -> f64 {
        value_of(self.log_c_moment)
    }

    pub fn c_closed_form(&self) -> f64 {
        value_of(self.log_c_closed_form)
    }
}

/// `C_{T,p} = min_α C′_{T,p,α}·C″_{T,p,α}` by golden-section search on the
/// log-objective, inside the admissible interval shrunk by a small margin.
pub fn c_moment(horizon: f64, p: f64) -> Result<MomentBoundConstants> {
    check_horizon(horizon)?;
    check_moment_order(p)?;
    let (lo, hi) = alpha_range(p)?;
    let margin = GOLDEN_MARGIN.min(0.25 * (hi - lo));
    let objective = |a: f64| components_unchecked(horizon, p, a).log_product();
    let alpha_star = golden_section_min(objective, lo + margin, hi - margin);
    let comps = components_unchecked(horizon, p, alpha_star);
    Ok(MomentBoundConstants {
        horizon,
        p,
        alpha_star,
        log_c_prime: comps.log_c_prime,
        log_c_double_prime: comps.log_c_double_prime,
        log_c_moment: comps.log_product(),
        log_c_closed_form: log_closed_form(horizon, p)?,
    })
}

fn golden_section_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Which moment constant enters `C_{T,p,q} = 1 + C·q/(q-p)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum SmallPReading {
    /// `C = C_{T,q}`, the constant of the tail estimate at exponent `q`.
    #[default]
    AtQ,
    /// `C = C_{T,p}` as printed; defined only for `p > 10`, so it fails here.
    Literal,
}

fn check_small_orders(p: f64, q: f64) -> Result<()> {
    if !(p > 0.0 && p <= 10.0) {
        return Err(Error::InvalidArgument(format!("small moment order p = {p} must lie in (0, 10]")));
    }
    if !(q > 10.0 && q > p && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("auxiliary order q = {q} must exceed 10 and p")));
    }
    Ok(())
}

/// `ln C_{T,p,q}`.
pub fn log_c_small_p(horizon: f64, p: f64, q: f64, reading: SmallPReading) -> Result<f64> {
    check_small_orders(p, q)?;
    let log_c = match reading {
        SmallPReading::AtQ => c_moment(horizon, q)?.log_c_moment,
        SmallPReading::Literal => c_moment(horizon, p)?.log_c_moment,
    };
    Ok(ln_one_plus_exp(log_c + (q / (q - p)).ln()))
}

/// `C_{T,p,q} = 1 + C_{T,q}·q/(q-p)`; overflow is an error, not `+∞`.
pub fn c_small_p(horizon: f64, p: f64, q: f64, reading: SmallPReading) -> Result<f64> {
    let log_value = log_c_small_p(horizon, p, q, reading)?;
    if log_value > LOG_OVERFLOW {
        return Err(Error::Overflow { what: format!("C_(T,p,q) at T={horizon}, p={p}, q={q}"), log_value });
    }
    Ok(log_value.exp())
}

/// `ln(1 + e^x)` without overflow.
fn ln_one_plus_exp(x: f64) -> f64 {
    if x > 36.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmallPEpsConstant {
    pub log_value: f64,
    pub value: f64,
    /// Grid point where the minimum is attained.
    pub q_star: f64,
}

/// `ln C_{T,p,q}` precomputed on the `q` grid; the grid does not depend on `ε`.
#[derive(Clone, Debug)]
pub struct SmallPGrid {
    p: f64,
    points: Vec<(f64, f64)>,
}

impl SmallPGrid {
    pub fn new(horizon: f64, p: f64) -> Result<Self> {
        check_horizon(horizon)?;
        let points = (0..=Q_DOUBLINGS)
            .map(|k| {
                let q = 10.0 + Q_STEP * 2f64.powi(k as i32);
                Ok((q, log_c_small_p(horizon, p, q, SmallPReading::AtQ)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p, points })
    }

    pub fn qs(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|(q, _)| *q)
    }

    /// `ln(C_{T,p,q}·C_{T,p,q,ε})` at one grid point, with the Young constant
    /// `C_{T,p,q,ε} = p((q-p)C_{T,p,q}/ε)^{(q-p)/p} q^{-q/p}`.
    pub fn log_product_at(&self, index: usize, eps: f64) -> f64 {
        let p = self.p;
        let (q, log_c) = self.points[index];
        let log_young = p.ln() + (q - p) / p * ((q - p).ln() + log_c - eps.ln()) - q / p * q.ln();
        log_c + log_young
    }

    /// Grid minimum of `C_{T,p,q}·C_{T,p,q,ε}`, an upper bound for the infimum over `q > 10`.
    pub fn evaluate(&self, eps: f64) -> Result<SmallPEpsConstant> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
        }
        let (index, log_value) = (0..self.points.len())
            .map(|i| (i, self.log_product_at(i, eps)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        Ok(SmallPEpsConstant { log_value, value: value_of(log_value), q_star: self.points[index].0 })
    }
}

/// `C_{T,p,ε}` for `0 < p ≤ 10`.
pub fn c_small_p_eps(horizon: f64, p: f64, eps: f64) -> Result<SmallPEpsConstant> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
    }
    SmallPGrid::new(horizon, p)?.evaluate(eps)
}

/// `K_σ²·exp(log_rest)`; the prefactor is kept apart so scaling `K_σ` is exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TciConstant {
    pub k_sigma_sq: f64,
    pub log_rest: f64,
    /// Minimizing ε, absent when `L_σ = 0`.
    pub eps_star: Option<f64>,
}

impl TciConstant {
    pub fn value(&self) -> f64 {
        if self.k_sigma_sq == 0.0 {
            0.0
        } else {
            self.k_sigma_sq * value_of(self.log_rest)
        }
    }

    pub fn log_value(&self) -> f64 {
        self.k_sigma_sq.ln() + self.log_rest
    }
}

/// The ε grid used by [`c_tci`] for a given `L_σ > 0`.
pub fn tci_eps_grid(l_sigma: f64) -> Vec<f64> {
    let eps_max = 1.0 / (3.0 * l_sigma * l_sigma);
    (0..TCI_EPS_POINTS)
        .map(|j| {
            let frac = 1.0 - (j as f64 + 0.5) / TCI_EPS_POINTS as f64;
            eps_max * 10f64.powf(-TCI_EPS_DECADES * frac)
        })
        .collect()
}

/// ```text
/// K_σ² · min_ε 3/(1-3εL_σ²)·√(2T/π)·exp( 3L_b²T√(2T/π)/(1-3εL_σ²) + 3C_{T,2,ε}L_σ²T/(1-3εL_σ²) )
/// ```
/// over [`tci_eps_grid`]; for `L_σ = 0` the ε-dependence drops out.
pub fn c_tci(horizon: f64, l_b: f64, l_sigma: f64, k_sigma: f64) -> Result<TciConstant> {
    check_horizon(horizon)?;
    for (name, v) in [("L_b", l_b), ("L_sigma", l_sigma), ("K_sigma", k_sigma)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!("{name} = {v} must be finite and nonnegative")));
        }
    }
    let root = (2.0 * horizon / PI).sqrt();
    let drift = 3.0 * l_b * l_b * horizon * root;
    let k_sigma_sq = k_sigma * k_sigma;
    if l_sigma == 0.0 {
        return Ok(TciConstant { k_sigma_sq, log_rest: (3.0 * root).ln() + drift, eps_star: None });
    }
    let grid = SmallPGrid::new(horizon, 2.0)?;
    let l2 = l_sigma * l_sigma;
    let mut best = (f64::INFINITY, f64::NAN);
    for eps in tci_eps_grid(l_sigma) {
        let shrink = 1.0 - 3.0 * eps * l2;
        let c_eps = grid.evaluate(eps)?.value;
        let log_rest = (3.0 * root / shrink).ln() + drift / shrink + 3.0 * c_eps * l2 * horizon / shrink;
        if log_rest < best.0 || best.1.is_nan() {
            best = (log_rest, eps);
        }
    }
    Ok(TciConstant { k_sigma_sq, log_rest: best.0, eps_star: Some(best.1) })
}
