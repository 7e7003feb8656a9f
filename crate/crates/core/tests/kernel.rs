use std::f64::consts::PI;

use approx::assert_relative_eq;
use spde_lab::grid::SpaceTimeGrid;
use spde_lab::heat_kernel::{
    apply_semigroup, eigen_form, image_form, kernel_integrals, kernel_value, KernelMatrix, KernelParams, SineBasis,
};

/// `∫_0^1 p_t(x,y) dy` from the sine series integrated term by term.
fn mass_series(t: f64, x: f64) -> f64 {
    (1..=4000)
        .step_by(2)
        .map(|k| {
            let kp = k as f64 * PI;
            4.0 / kp * (kp * x).sin() * (-kp * kp * t / 2.0).exp()
        })
        .sum()
}

#[test]
fn centre_value_at_half() {
    let v = kernel_value(0.5, 0.5, 0.5, &KernelParams::default()).unwrap();
    // 2 Σ_k sin²(kπ/2) e^{-k²π²/4}, summed independently to convergence.
    let series: f64 = (1..50).step_by(2).map(|k| 2.0 * (-(k as f64 * PI).powi(2) / 4.0).exp()).sum();
    assert_relative_eq!(v, series, max_relative = 1e-14);
    assert_relative_eq!(v, 0.169_609_9, max_relative = 1e-6);
}

#[test]
fn mass_matches_term_by_term_series() {
    let params = KernelParams::default();
    for t in [0.01, 0.05, 0.3, 1.0] {
        for x in [0.1, 0.5, 0.83] {
            let m = kernel_integrals(t, x, &params).unwrap().mass;
            assert!((m - mass_series(t, x)).abs() < 1e-9, "t={t} x={x}: {m} vs {}", mass_series(t, x));
        }
    }
}

#[test]
fn representations_agree_across_the_switch() {
    for t in [0.02, 0.05, 0.08, 0.2] {
        for (x, y) in [(0.1, 0.2), (0.5, 0.5), (0.3, 0.95)] {
            let e = eigen_form(t, x, y, 200);
            let i = image_form(t, x, y, 20);
            assert!((e - i).abs() < 1e-12, "t={t}: {e} vs {i}");
        }
    }
}

#[test]
fn vanishes_on_the_boundary() {
    let params = KernelParams::default();
    for t in [1e-3, 0.5] {
        assert_eq!(kernel_value(t, 0.0, 0.4, &params).unwrap(), 0.0);
        assert_eq!(kernel_value(t, 0.4, 1.0, &params).unwrap(), 0.0);
    }
    assert!(kernel_value(0.0, 0.3, 0.4, &params).is_err());
    assert!(kernel_value(0.1, 1.2, 0.4, &params).is_err());
}

#[test]
fn semigroup_of_first_mode_decays_exactly() {
    // On the nodes, dx·Σ_j sin(kπx_j) sin(mπx_j) = δ_km/2, so P_t maps the
    // sampled first mode to itself times e^{-π²t/2} up to aliasing of high modes.
    let grid = SpaceTimeGrid::new(1.0, 8, 63).unwrap();
    let u0: Vec<f64> = grid.space_nodes().iter().map(|x| (PI * x).sin()).collect();
    let params = KernelParams::default();
    for t in [0.1, 0.5] {
        let out = apply_semigroup(&u0, t, &grid, &params).unwrap();
        for (o, u) in out.iter().zip(&u0) {
            assert!((o - u * (-PI * PI * t / 2.0).exp()).abs() < 1e-12);
        }
    }
    assert_eq!(apply_semigroup(&u0, 0.0, &grid, &params).unwrap(), u0);
}

#[test]
fn sine_basis_reproduces_step_kernel() {
    let grid = SpaceTimeGrid::new(1.0, 64, 20).unwrap();
    let basis = SineBasis::for_grid(&grid);
    let k = KernelMatrix::new(&grid, grid.dt(), &KernelParams::default()).unwrap();
    let decay: Vec<f64> = (0..basis.modes()).map(|m| (-basis.eigenvalue(m) * grid.dt()).exp()).collect();
    let identity = ndarray::Array2::<f64>::eye(grid.nx());
    let mut coeffs = basis.project(identity.view());
    for mut row in coeffs.rows_mut() {
        row.iter_mut().zip(&decay).for_each(|(c, d)| *c *= d);
    }
    let rebuilt = basis.synthesize(coeffs.view());
    let worst = (&rebuilt - k.values()).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-10, "{worst}");
}
