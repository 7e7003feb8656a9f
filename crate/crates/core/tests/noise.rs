use spde_lab::ensemble::{map_paths, mean_and_se, Execution};
use spde_lab::grid::SpaceTimeGrid;
use spde_lab::noise::{coarsen, girsanov_log_density, girsanov_shift, sample_white_noise, DriftField};
use spde_lab::scenario::ShiftSpec;

#[test]
fn cell_increments_are_standardized_gaussians() {
    let grid = SpaceTimeGrid::desk();
    let w = sample_white_noise(&grid, 42, 0);
    let scale = (grid.dt() * grid.dx()).sqrt();
    let z: Vec<f64> = w.increments().iter().map(|v| v / scale).collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let kurt = z.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n / (var * var);
    assert!(mean.abs() < 4.0 / n.sqrt(), "{mean}");
    assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "{var}");
    assert!((kurt - 3.0).abs() < 4.0 * (24.0 / n).sqrt(), "{kurt}");
}

#[test]
fn total_variance_is_covered_measure() {
    // The cells cover [0, T] × [dx/2, 1 - dx/2], of measure T·nx·dx.
    let grid = SpaceTimeGrid::new(2.0, 32, 9).unwrap();
    let totals = map_paths(4000, &Execution::default(), |k| Ok(sample_white_noise(&grid, 7, k).total())).unwrap();
    let squares: Vec<f64> = totals.iter().map(|t| t * t).collect();
    let (var, se) = mean_and_se(&squares).unwrap();
    let exact = grid.horizon() * grid.nx() as f64 * grid.dx();
    assert!((var - exact).abs() < 3.0 * se, "{var} ± {se} vs {exact}");
}

#[test]
fn paths_are_uncorrelated_and_reproducible() {
    let grid = SpaceTimeGrid::new(1.0, 64, 15).unwrap();
    let a = sample_white_noise(&grid, 5, 10);
    let b = sample_white_noise(&grid, 5, 11);
    let c = sample_white_noise(&grid, 6, 10);
    assert_eq!(a, sample_white_noise(&grid, 5, 10));
    let corr = |x: &ndarray::Array2<f64>, y: &ndarray::Array2<f64>| {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        dot / (x.iter().map(|p| p * p).sum::<f64>() * y.iter().map(|q| q * q).sum::<f64>()).sqrt()
    };
    let bound = 4.0 / (a.increments().len() as f64).sqrt();
    assert!(corr(a.increments(), b.increments()).abs() < bound);
    assert!(corr(a.increments(), c.increments()).abs() < bound);
}

#[test]
fn sheet_rectangles_have_lebesgue_variance() {
    let grid = SpaceTimeGrid::new(1.0, 16, 7).unwrap();
    let values = map_paths(4000, &Execution::default(), |k| {
        let s = sample_white_noise(&grid, 13, k).sheet();
        Ok(s[[8, 4]])
    })
    .unwrap();
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    let (var, se) = mean_and_se(&squares).unwrap();
    let exact = grid.t(8) * 4.0 * grid.dx();
    assert!((var - exact).abs() < 3.0 * se, "{var} vs {exact}");
}

#[test]
fn density_has_unit_mean_for_adapted_drift() {
    let grid = SpaceTimeGrid::new(1.0, 32, 7).unwrap();
    let shift = ShiftSpec::Feedback { gain: 1.5 };
    let m = map_paths(20_000, &Execution::default(), |k| {
        let w = sample_white_noise(&grid, 21, k);
        Ok(girsanov_log_density(&w, &shift.realize(&w))?.exp())
    })
    .unwrap();
    let (mean, se) = mean_and_se(&m).unwrap();
    assert!((mean - 1.0).abs() < 3.0 * se, "{mean} ± {se}");
}

#[test]
fn reweighting_recovers_the_shifted_law() {
    // E_P[M_T f(W)] = E_P[f(W̃ + h dt dx)] for f = total increment, h ≡ c:
    // both sides equal c·T·nx·dx.
    let grid = SpaceTimeGrid::new(1.0, 16, 7).unwrap();
    let h = DriftField::constant(&grid, 0.7);
    let weighted = map_paths(40_000, &Execution::default(), |k| {
        let w = sample_white_noise(&grid, 3, k);
        Ok(girsanov_log_density(&w, &h)?.exp() * w.total())
    })
    .unwrap();
    let (mean, se) = mean_and_se(&weighted).unwrap();
    let exact = 0.7 * grid.horizon() * grid.nx() as f64 * grid.dx();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} ± {se} vs {exact}");
    let w = sample_white_noise(&grid, 3, 0);
    let back = girsanov_shift(&girsanov_shift(&w, &h).unwrap(), &h.scaled(-1.0)).unwrap();
    assert!(back.increments().iter().zip(w.increments()).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn coarsening_preserves_totals_and_law() {
    let fine_grid = SpaceTimeGrid::new(1.0, 64, 15).unwrap();
    let coarse_grid = SpaceTimeGrid::new(1.0, 16, 7).unwrap();
    let cells = map_paths(2000, &Execution::default(), |k| {
        let fine = sample_white_noise(&fine_grid, 31, k);
        let coarse = coarsen(&fine, &coarse_grid, 77)?;
        Ok(coarse.increments()[[5, 3]])
    })
    .unwrap();
    let squares: Vec<f64> = cells.iter().map(|v| v * v).collect();
    let (var, se) = mean_and_se(&squares).unwrap();
    let exact = coarse_grid.dt() * coarse_grid.dx();
    assert!((var - exact).abs() < 3.0 * se, "{var} vs {exact}");
}
