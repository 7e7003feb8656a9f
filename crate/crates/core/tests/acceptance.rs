//! Acceptance suite: one PASS/FAIL line per criterion on stderr, written past
//! the test harness capture so it shows up in plain `cargo test` output.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use spde_lab::constants::{alpha_range, c_components, c_moment, log_closed_form};
use spde_lab::convolution::FactorizationParams;
use spde_lab::ensemble::{mean_and_se, Execution};
use spde_lab::estimators::{
    estimate_w2_and_entropy, factorization_study, layer_cake_analytic, layer_cake_checks, local_property_check,
    verify_moment_bound, verify_small_p, verify_tail_bound, AnalyticLaw, SmallPMode,
};
use spde_lab::grid::SpaceTimeGrid;
use spde_lab::heat_kernel::{eigen_form, image_form, kernel_integrals, kernel_value, KernelParams, C2};
use spde_lab::noise::{girsanov_log_density, relative_entropy, sample_white_noise, DriftField};
use spde_lab::quadrature::integrate_pieces;
use spde_lab::report::VerificationReport;
use spde_lab::scenario::{Scenario, ShiftSpec};
use spde_lab::solver::{Coefficients, MildSolver, ScalarFn};
use statrs::function::erf::erfc;

struct Outcome {
    passed: bool,
    summary: String,
}

fn outcome(passed: bool, summary: impl Into<String>) -> Outcome {
    Outcome { passed, summary: summary.into() }
}

type Suite = (u32, &'static str, fn() -> Outcome);

fn announce(id: u32, name: &str, started: Instant, o: &Outcome) {
    let verdict = if o.passed { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "acceptance {id} {name}: {verdict} [{:.1}s] {}",
        started.elapsed().as_secs_f64(),
        o.summary
    );
}

fn exec() -> Execution {
    Execution::default()
}

fn scenario(id: &str, paths: usize) -> Scenario {
    Scenario::builtin(id).unwrap().with_paths(paths, 20_240_601)
}

fn brief(r: &VerificationReport) -> String {
    format!(
        "{} est={:.4e}±{:.1e} bound={:.4e} {}",
        r.check_name,
        r.empirical_estimate,
        r.std_error,
        r.theoretical_bound,
        if r.passed { "ok" } else { "VIOLATED" }
    )
}

fn kernel_suite() -> Outcome {
    let params = KernelParams::default();
    let points = [0.03, 0.2, 0.5, 0.71, 0.97];
    let times = [1e-3, 0.01, 0.049, 0.05, 0.2, 1.0, 3.0];
    let mut symmetry = 0.0_f64;
    let mut mass_ok = true;
    let mut unresolved = 0;
    let mut l2_ratio = 0.0_f64;
    let mut l2_diag = 0.0_f64;
    for &t in &times {
        for &x in &points {
            for &y in &points {
                let a = kernel_value(t, x, y, &params).unwrap();
                let b = kernel_value(t, y, x, &params).unwrap();
                symmetry = symmetry.max((a - b).abs());
            }
            let ki = kernel_integrals(t, x, &params).unwrap();
            // Exit probability is at least ½·erfc(d/√(2t)); below rounding the
            // mass is representable only as 1.
            let deficit = 0.5 * erfc(x.min(1.0 - x) / (2.0 * t).sqrt());
            if deficit > 1e-13 {
                mass_ok &= ki.mass > 0.0 && ki.mass < 1.0;
            } else {
                mass_ok &= ki.mass > 0.0 && ki.mass <= 1.0;
                unresolved += 1;
            }
            l2_ratio = l2_ratio.max(ki.l2 * t.sqrt() / C2);
            let diag = kernel_value(2.0 * t, x, x, &params).unwrap();
            l2_diag = l2_diag.max((ki.l2 - diag).abs() / diag);
        }
    }

    let mut ck = 0.0_f64;
    for (s, t) in [(0.01_f64, 0.02_f64), (0.03, 0.04), (0.1, 0.3), (0.5, 0.5)] {
        for (x, y) in [(0.2, 0.5), (0.5, 0.5), (0.1, 0.9)] {
            let w = s.max(t).sqrt();
            let mut breaks = vec![0.0, x, y, 1.0];
            for c in [1.0, 4.0] {
                breaks
                    .extend([x - c * w, x + c * w, y - c * w, y + c * w].into_iter().filter(|z| *z > 0.0 && *z < 1.0));
            }
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let lhs = integrate_pieces(
                |z| {
                    if z <= 0.0 || z >= 1.0 {
                        0.0
                    } else {
                        kernel_value(s, x, z, &params).unwrap() * kernel_value(t, z, y, &params).unwrap()
                    }
                },
                &breaks,
                1e-13,
                1e-300,
            );
            ck = ck.max((lhs - kernel_value(s + t, x, y, &params).unwrap()).abs());
        }
    }

    let mut crossover = 0.0_f64;
    let switch = params.method_switch_time();
    for &x in &points {
        for &y in &points {
            let e = eigen_form(switch, x, y, params.series_terms());
            let i = image_form(switch, x, y, params.image_terms());
            crossover = crossover.max((e - i).abs());
        }
    }
    let passed = symmetry < 1e-12 && ck < 1e-8 && mass_ok && l2_ratio <= 1.0 && l2_diag < 1e-8 && crossover < 1e-10;
    outcome(
        passed,
        format!(
            "symmetry {symmetry:.1e}; Chapman-Kolmogorov {ck:.1e}; mass in (0,1) {mass_ok} ({unresolved} points with deficit below rounding checked as <= 1); max l2·√t/C2 {l2_ratio:.4}; l2 vs p_2t(x,x) {l2_diag:.1e}; crossover {crossover:.1e}"
        ),
    )
}

fn factorization_suite() -> Outcome {
    let params = FactorizationParams::midpoint(12.0).unwrap();
    let levels = [(256, 32), (512, 48), (1024, 64)];
    let points = factorization_study(1.0, &levels, &params, 32, 2024, &exec()).unwrap();
    let monotone = points.windows(2).all(|w| w[1].residual < w[0].residual);
    let finest = points.last().unwrap().relative;
    let listing: Vec<String> = points
        .iter()
        .map(|p| format!("({},{}) {:.3e} rel {:.2}%", p.nt, p.nx, p.residual, 100.0 * p.relative))
        .collect();
    outcome(monotone && finest <= 0.05, format!("alpha={}; {}", params.alpha(), listing.join("; ")))
}

fn direct_log_constant(t: f64, p: f64, alpha: f64) -> f64 {
    let c_prime = ((PI * alpha).sin() / PI).abs().powf(p)
        * C2
        * ((p - 1.0) / (alpha * p - 1.5)).powf(p - 1.0)
        * t.powf(alpha * p - 0.5);
    let c_double_prime = (4.0 * C2 * p).powf(p / 2.0)
        * ((p - 2.0) / (p / 2.0 - 2.0 - 2.0 * alpha * p)).powf((p - 2.0) / 2.0)
        * t.powf(p / 4.0 - 1.0 - alpha * p);
    c_prime * c_double_prime
}

fn constants_suite() -> Outcome {
    let mut strict = true;
    let mut worst_gap = 0.0_f64;
    let mut worst_margin = f64::INFINITY;
    let mut compared = 0;
    for t in [0.5, 1.0, 2.0] {
        for p in [10.5, 12.0, 16.0, 20.0] {
            let c = c_moment(t, p).unwrap();
            let closed = log_closed_form(t, p).unwrap();
            strict &= c.log_c_moment < closed;
            worst_margin = worst_margin.min(closed - c.log_c_moment);
            let (lo, hi) = alpha_range(p).unwrap();
            for alpha in [c.alpha_star, 0.5 * (lo + hi), lo + 0.1 * (hi - lo)] {
                let direct = direct_log_constant(t, p, alpha);
                let logged = c_components(t, p, alpha).unwrap().log_product().exp();
                if direct.is_finite() && logged.is_finite() && direct > 0.0 {
                    worst_gap = worst_gap.max((direct - logged).abs() / direct);
                    compared += 1;
                }
            }
        }
    }
    let rejected = [10.0, 8.0, 2.0, -1.0].iter().all(|&p| c_moment(1.0, p).is_err());
    outcome(
        strict && worst_gap < 1e-10 && rejected && compared > 0,
        format!(
            "c_moment < closed form {strict} (min log gap {worst_margin:.3}); log vs direct {worst_gap:.1e} over {compared} points; p <= 10 rejected {rejected}"
        ),
    )
}

fn moment_suite() -> Outcome {
    let e = exec();
    let additive = verify_moment_bound(&scenario("additive", 2000), &e, 12.0, 1.0).unwrap();
    let multiplicative = verify_moment_bound(&scenario("multiplicative", 2000), &e, 12.0, 1.0).unwrap();
    let control = verify_moment_bound(&scenario("additive", 2000), &e, 12.0, 1e-30).unwrap();
    outcome(
        additive.passed && multiplicative.passed && !control.passed,
        format!("{}; {}; control {}", brief(&additive), brief(&multiplicative), brief(&control)),
    )
}

fn tail_suite() -> Outcome {
    let e = exec();
    let scn = scenario("multiplicative", 2000);
    let tails = verify_tail_bound(&scn, &e, 12.0, &[0.5, 1.0, 2.0]).unwrap();
    let small = [
        verify_small_p(&scn, &e, 2.0, SmallPMode::ViaQ(12.0)).unwrap(),
        verify_small_p(&scn, &e, 2.0, SmallPMode::ViaEps(0.1)).unwrap(),
        verify_small_p(&scn, &e, 2.0, SmallPMode::ViaEps(0.5)).unwrap(),
    ];
    let all: Vec<&VerificationReport> = tails.iter().chain(&small).collect();
    outcome(all.iter().all(|r| r.passed), all.iter().map(|r| brief(r)).collect::<Vec<_>>().join("; "))
}

fn girsanov_suite() -> Outcome {
    let grid = SpaceTimeGrid::desk();
    let params = KernelParams::default();
    let solver = MildSolver::new(&grid, &params).unwrap();
    let u0: Vec<f64> = grid.space_nodes().iter().map(|x| (PI * x).sin()).collect();
    let coeffs = Coefficients::from_forms(ScalarFn::Zero, ScalarFn::BoundedRational { scale: 1.0 });
    let zero = DriftField::zero(&grid);
    let identical = (0..4).all(|k| {
        let pair = solver.solve_coupled_pair(&u0, &coeffs, &sample_white_noise(&grid, 5, k), &zero).unwrap();
        pair.u == pair.v
    });

    let one = DriftField::constant(&grid, 1.0);
    let densities: Vec<f64> =
        (0..10_000).map(|k| girsanov_log_density(&sample_white_noise(&grid, 77, k), &one).unwrap().exp()).collect();
    let (mean, se) = mean_and_se(&densities).unwrap();
    let martingale = (mean - 1.0).abs() <= 1.96 * se;

    // The discrete noise lives on interior cells of total width nx·dx = 1 - dx,
    // so the grid entropy of h ≡ 1 is T(1 - dx)/2 and tends to T/2 as dx → 0.
    let entropy_on = |g: &SpaceTimeGrid| {
        let hs: Vec<DriftField> =
            (0..4).map(|k| ShiftSpec::Constant(1.0).realize(&sample_white_noise(g, 3, k))).collect();
        relative_entropy(&hs).unwrap()
    };
    let desk = entropy_on(&grid);
    let desk_exact = 0.5 * grid.horizon() * grid.nx() as f64 * grid.dx();
    let fine_grid = SpaceTimeGrid::new(1.0, 16, 2047).unwrap();
    let fine = entropy_on(&fine_grid);
    let discrete_ok = (desk - desk_exact).abs() <= 1e-12 * desk_exact;
    let fine_ok = (fine - 0.5).abs() / 0.5 <= 1e-3;
    outcome(
        identical && martingale && discrete_ok && fine_ok,
        format!(
            "h=0 gives u==v bitwise {identical}; E[M_T]={mean:.4}±{se:.4} (10^4 paths); entropy(h=1) desk grid {desk:.6} = T(1-dx)/2 {discrete_ok}, {:.2}% below T/2; nx=2047 grid {fine:.6}, rel gap to T/2 {:.1e}",
            100.0 * (0.5 - desk) / 0.5,
            (fine - 0.5).abs() / 0.5
        ),
    )
}

fn tci_suite() -> Outcome {
    let e = exec();
    let reports: Vec<VerificationReport> = ["additive", "multiplicative", "drifted"]
        .iter()
        .map(|id| estimate_w2_and_entropy(&scenario(id, 1000), &e).unwrap().report)
        .collect();
    outcome(
        reports.iter().all(|r| r.passed),
        reports.iter().map(|r| format!("{}: {}", r.scenario_id, brief(r))).collect::<Vec<_>>().join("; "),
    )
}

fn layer_cake_suite() -> Outcome {
    let mut worst = 0.0_f64;
    let mut all = true;
    for law in [
        AnalyticLaw::PointMass(1.7),
        AnalyticLaw::Uniform { lo: 0.0, hi: 2.0 },
        AnalyticLaw::Uniform { lo: 0.5, hi: 1.5 },
        AnalyticLaw::Exponential { rate: 1.0 },
        AnalyticLaw::Exponential { rate: 3.0 },
    ] {
        for (p, q) in [(0.5, 2.0), (2.0, 12.0), (1.0, 3.0)] {
            let sides = layer_cake_analytic(law, p, q).unwrap();
            worst = worst.max(sides.max_relative_gap());
            all &= sides.report(p, q, 0).passed;
        }
    }
    let grid = SpaceTimeGrid::desk();
    let scale = (grid.dt() * grid.dx()).sqrt();
    let samples: Vec<f64> = sample_white_noise(&grid, 11, 0).increments().iter().map(|w| (w / scale).abs()).collect();
    for (p, q) in [(0.5, 2.0), (2.0, 12.0)] {
        let r = layer_cake_checks(&samples, p, q).unwrap();
        worst = worst.max(r.empirical_estimate);
        all &= r.passed;
    }
    let local = local_property_check(&scenario("multiplicative", 200), &exec()).unwrap();
    outcome(
        all && worst < 1e-6 && local.passed,
        format!("layer cake max relative gap {worst:.1e}; local property: {}", local.details),
    )
}

fn determinism_suite() -> Outcome {
    let small = |id: &str| scenario(id, 96).with_grid(SpaceTimeGrid::new(1.0, 256, 32).unwrap());
    let run = |workers: usize| {
        let e = Execution::with_workers(workers);
        let mut out = vec![verify_moment_bound(&small("multiplicative"), &e, 12.0, 1.0).unwrap()];
        out.extend(verify_tail_bound(&small("additive"), &e, 12.0, &[0.5, 1.0]).unwrap());
        out.push(verify_small_p(&small("multiplicative"), &e, 2.0, SmallPMode::ViaEps(0.5)).unwrap());
        out.push(estimate_w2_and_entropy(&small("drifted"), &e).unwrap().report);
        out.push(local_property_check(&small("multiplicative"), &e).unwrap());
        out.iter().map(VerificationReport::to_json).collect::<Vec<_>>()
    };
    let reference = run(1);
    let identical = [4, 8].iter().all(|&w| run(w) == reference);
    outcome(identical, format!("{} reports bit-identical for workers 1, 4, 8: {identical}", reference.len()))
}

#[test]
fn acceptance() {
    let suites: [Suite; 9] = [
        (1, "kernel", kernel_suite),
        (2, "factorization", factorization_suite),
        (3, "constants", constants_suite),
        (4, "moment bound", moment_suite),
        (5, "tail and small moments", tail_suite),
        (6, "girsanov", girsanov_suite),
        (7, "transportation inequality", tci_suite),
        (8, "layer cake and local property", layer_cake_suite),
        (9, "determinism", determinism_suite),
    ];
    let _ = writeln!(std::io::stderr());
    let mut failed = Vec::new();
    for (id, name, suite) in suites {
        let started = Instant::now();
        let o = suite();
        announce(id, name, started, &o);
        if !o.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
