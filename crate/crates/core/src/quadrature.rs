//! Adaptive composite Gauss–Legendre quadrature.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

const RULE_DEGREE: usize = 10;
const MAX_DEPTH: usize = 48;
/// Panels refined per call before the remaining ones are accepted as they are.
const PANEL_BUDGET: usize = 1 << 16;

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(RULE_DEGREE).unwrap()))
}

/// Integrates `f` over `[a, b]` by bisection. The error budget is
/// `max(rel_tol·|I|, abs_floor)` with `I` the one-panel estimate, split evenly
/// between the halves at each level.
pub fn integrate<F>(f: F, a: f64, b: f64, rel_tol: f64, abs_floor: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    integrate_pieces(f, &[a, b], rel_tol, abs_floor)
}

/// [`integrate`] over consecutive breakpoints, so kinks and jumps can be placed
/// on panel boundaries. Every piece gets the budget computed from the sum of
/// the one-panel estimates.
pub fn integrate_pieces<F>(f: F, breakpoints: &[f64], rel_tol: f64, abs_floor: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    let first: Vec<f64> =
        breakpoints.windows(2).map(|w| if w[0] == w[1] { 0.0 } else { rule().integrate(w[0], w[1], &f) }).collect();
    let tol = (rel_tol * first.iter().sum::<f64>().abs()).max(abs_floor);
    let mut budget = PANEL_BUDGET;
    breakpoints
        .windows(2)
        .zip(first)
        .map(|(w, whole)| if w[0] == w[1] { 0.0 } else { refine(&f, w[0], w[1], whole, tol, 0, &mut budget) })
        .sum()
}

fn refine<F>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: usize, budget: &mut usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let mid = 0.5 * (a + b);
    let left = rule().integrate(a, mid, f);
    let right = rule().integrate(mid, b, f);
    let halves = left + right;
    if depth >= MAX_DEPTH || *budget == 0 || (halves - whole).abs() <= tol {
        return halves;
    }
    *budget -= 1;
    refine(f, a, mid, left, 0.5 * tol, depth + 1, budget) + refine(f, mid, b, right, 0.5 * tol, depth + 1, budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-14, 0.0);
        assert!((v - (64.0 / 6.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn sharp_gaussian() {
        let s: f64 = 1e-3;
        let v = integrate_pieces(
            |x| (-(x - 0.3) * (x - 0.3) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()),
            &[0.0, 0.29, 0.3, 0.31, 1.0],
            1e-12,
            1e-15,
        );
        assert!((v - 1.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn pieces_handle_kink() {
        let v = integrate_pieces(|x: f64| (x - 0.5).abs(), &[0.0, 0.5, 1.0], 1e-14, 0.0);
        assert!((v - 0.25).abs() < 1e-14);
    }
}
