//! Table dumps, raw simulation output and convergence studies.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use spde_lab::constants::{c_moment, c_small_p_eps, c_tci, log_c_small_p, SmallPReading};
use spde_lab::convolution::FactorizationParams;
use spde_lab::ensemble::map_paths;
use spde_lab::estimators::{factorization_study, solver_self_convergence, ConvergencePoint};
use spde_lab::heat_kernel::{kernel_value, KernelParams};
use spde_lab::noise::sample_white_noise;
use spde_lab::solver::MildSolver;

use crate::config::RunConfig;
use crate::runner::{write_manifest, EXIT_PASSED};
use crate::CliError;

fn core<T>(r: spde_lab::error::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(e.to_string()))
}

fn io(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// CSV `t,x,y,value` on the points `k/(points+1)`.
pub fn kernel_table(times: &[f64], points: usize, out: &mut dyn Write) -> Result<(), CliError> {
    if points == 0 {
        return Err(CliError::Config("`points` must be at least 1".into()));
    }
    let params = KernelParams::default();
    let xs: Vec<f64> = (1..=points).map(|k| k as f64 / (points + 1) as f64).collect();
    writeln!(out, "t,x,y,value").map_err(io)?;
    for &t in times {
        for &x in &xs {
            for &y in &xs {
                let v = core(kernel_value(t, x, y, &params))?;
                writeln!(out, "{t},{x},{y},{v}").map_err(io)?;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantRow {
    pub name: String,
    pub value: f64,
    pub log_value: f64,
}

fn row(name: impl Into<String>, log_value: f64) -> ConstantRow {
    ConstantRow { name: name.into(), value: log_value.exp(), log_value }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantsQuery {
    pub horizon: f64,
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    pub l_b: f64,
    pub l_sigma: f64,
    pub k_sigma: f64,
}

/// Moment-bound constants for `p > 10`, small-moment constants for `p ≤ 10`,
/// and the transportation constant.
pub fn constants_table(query: &ConstantsQuery) -> Result<Vec<ConstantRow>, CliError> {
    let ConstantsQuery { horizon, p, q, eps, l_b, l_sigma, k_sigma } = *query;
    let mut rows = Vec::new();
    if p > 10.0 {
        let c = core(c_moment(horizon, p))?;
        rows.push(ConstantRow { name: "alpha_star".into(), value: c.alpha_star, log_value: c.alpha_star.ln() });
        rows.push(row("c_prime", c.log_c_prime));
        rows.push(row("c_double_prime", c.log_c_double_prime));
        rows.push(row("c_moment", c.log_c_moment));
        rows.push(row("c_closed_form", c.log_c_closed_form));
    } else {
        rows.push(row(format!("c_small_p[q={q}]"), core(log_c_small_p(horizon, p, q, SmallPReading::AtQ))?));
        // The literal reading needs C_{T,p}, which exists only for p > 10.
        if let Ok(v) = log_c_small_p(horizon, p, q, SmallPReading::Literal) {
            rows.push(row(format!("c_small_p_literal[q={q}]"), v));
        }
        let e = core(c_small_p_eps(horizon, p, eps))?;
        rows.push(row(format!("c_small_p_eps[eps={eps}]"), e.log_value));
        rows.push(ConstantRow { name: "q_star".into(), value: e.q_star, log_value: e.q_star.ln() });
    }
    let tci = core(c_tci(horizon, l_b, l_sigma, k_sigma))?;
    rows.push(row("c_tci", tci.log_value()));
    Ok(rows)
}

pub fn write_constants(rows: &[ConstantRow], json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if json {
        let body = serde_json::to_string_pretty(rows).expect("rows serialize");
        writeln!(out, "{body}").map_err(io)
    } else {
        writeln!(out, "name,value,log_value").map_err(io)?;
        for r in rows {
            writeln!(out, "{},{:e},{}", r.name, r.value, r.log_value).map_err(io)?;
        }
        Ok(())
    }
}

/// Solves the configured scenario path by path; writes each field as CSV,
/// the noise as binary when asked, and a per-path summary.
pub fn simulate(config: &RunConfig) -> Result<i32, CliError> {
    let started = Instant::now();
    let scn = &config.scenario;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("output directory {}: {e}", dir.display())))?;
    let solver = core(MildSolver::new(&scn.grid, &scn.kernel))?;
    let u0 = scn.initial_row();
    let exec = config.execution();
    let rows = map_paths(scn.n_paths, &exec, |k| {
        let noise = sample_white_noise(&scn.grid, scn.seed, k);
        let u = solver.solve_mild(&u0, &scn.coeffs, &noise)?;
        let field = create(&dir.join(format!("field_{k}.csv")))?;
        u.write_csv(field)?;
        if config.save_noise {
            noise.write_to(create(&dir.join(format!("noise_{k}.bin")))?)?;
        }
        let last = u.row(scn.grid.nt());
        Ok(format!("{k},{},{}", u.sup_abs(), last[scn.grid.nearest_node(0.5)]))
    })
    .map_err(|e| CliError::Io(e.to_string()))?;
    let mut summary = String::from("path,sup_abs,u_T_mid\n");
    for r in rows {
        summary.push_str(&r);
        summary.push('\n');
    }
    fs::write(dir.join("summary.csv"), summary).map_err(io)?;
    write_manifest(config, "simulate", started, EXIT_PASSED, json!({ "paths": scn.n_paths }))?;
    Ok(EXIT_PASSED)
}

fn create(path: &Path) -> spde_lab::error::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Parses `256x32,512x48`.
pub fn parse_levels(s: &str) -> Result<Vec<(usize, usize)>, CliError> {
    s.split(',')
        .map(|item| {
            let (a, b) = item
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| CliError::Config(format!("level `{item}` is not NTxNX")))?;
            let parse =
                |v: &str| v.trim().parse::<usize>().map_err(|_| CliError::Config(format!("bad level `{item}`")));
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

pub const FACTORIZATION_LEVELS: [(usize, usize); 3] = [(256, 32), (512, 48), (1024, 64)];
pub const SOLVER_LEVELS: [(usize, usize); 3] = [(64, 8), (256, 17), (1024, 35)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvergenceTarget {
    Factorization,
    Solver,
}

pub fn convergence(
    config: &RunConfig,
    target: ConvergenceTarget,
    levels: Option<Vec<(usize, usize)>>,
) -> Result<Vec<ConvergencePoint>, CliError> {
    let scn = &config.scenario;
    let exec = config.execution();
    match target {
        ConvergenceTarget::Factorization => {
            let levels = levels.unwrap_or_else(|| FACTORIZATION_LEVELS.to_vec());
            let params = match config.params.alpha {
                Some(a) => core(FactorizationParams::new(a, config.params.p))?,
                None => core(FactorizationParams::midpoint(config.params.p))?,
            };
            core(factorization_study(scn.grid.horizon(), &levels, &params, scn.n_paths, scn.seed, &exec))
        }
        ConvergenceTarget::Solver => {
            let levels = levels.unwrap_or_else(|| SOLVER_LEVELS.to_vec());
            core(solver_self_convergence(scn, &levels, &exec))
        }
    }
}

pub fn write_convergence(points: &[ConvergencePoint], out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(out, "nt,nx,residual,std_error,relative").map_err(io)?;
    for p in points {
        writeln!(out, "{},{},{},{},{}", p.nt, p.nx, p.residual, p.residual_std_error, p.relative).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_table_has_centre_row() {
        let mut buf = Vec::new();
        kernel_table(&[0.5], 9, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 81);
        let centre = text.lines().find(|l| l.starts_with("0.5,0.5,0.5,")).unwrap();
        let v: f64 = centre.rsplit(',').next().unwrap().parse().unwrap();
        assert!((v - 0.169_609_9).abs() < 1e-6, "{v}");
    }

    #[test]
    fn constants_rows_depend_on_order() {
        let q = ConstantsQuery { horizon: 1.0, p: 12.0, q: 12.0, eps: 0.5, l_b: 0.0, l_sigma: 0.0, k_sigma: 1.0 };
        let names: Vec<String> = constants_table(&q).unwrap().into_iter().map(|r| r.name).collect();
        for n in ["alpha_star", "c_moment", "c_closed_form", "c_tci"] {
            assert!(names.iter().any(|x| x == n), "{names:?}");
        }
        let small = constants_table(&ConstantsQuery { p: 2.0, ..q }).unwrap();
        assert!(small.iter().any(|r| r.name.starts_with("c_small_p_eps")));
        assert!(constants_table(&ConstantsQuery { p: 10.0, q: 10.0, ..q }).is_err());
    }

    #[test]
    fn levels_parse() {
        assert_eq!(parse_levels("256x32, 512X48").unwrap(), vec![(256, 32), (512, 48)]);
        assert!(parse_levels("256-32").is_err());
    }
}
