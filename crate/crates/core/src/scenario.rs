//! Named closed forms for initial conditions and Girsanov drifts, and the
//! scenario bundle every estimator runs on.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::heat_kernel::KernelParams;
use crate::noise::{DriftField, WhiteNoiseSample};
use crate::solver::{arity, check_hypotheses, parse_form, Coefficients, HypothesisCheck, ScalarFn};

pub const PROBE_RANGE: (f64, f64) = (-10.0, 10.0);
pub const PROBE_POINTS: usize = 201;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialCondition {
    Zero,
    /// `a·sin(πx)`
    Sine {
        amplitude: f64,
    },
    /// `1 - |2x - 1|`
    Tent,
}

impl InitialCondition {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialCondition::Zero => 0.0,
            InitialCondition::Sine { amplitude } => amplitude * (PI * x).sin(),
            InitialCondition::Tent => 1.0 - (2.0 * x - 1.0).abs(),
        }
    }

    pub fn nodes(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        grid.space_nodes().into_iter().map(|x| self.eval(x)).collect()
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Zero => write!(f, "zero"),
            InitialCondition::Sine { amplitude } => write!(f, "sine({amplitude})"),
            InitialCondition::Tent => write!(f, "tent"),
        }
    }
}

impl FromStr for InitialCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_form(s)?;
        match name.as_str() {
            "zero" => arity(&name, &args, &[0]).map(|_| InitialCondition::Zero),
            "sine" => {
                arity(&name, &args, &[0, 1])?;
                Ok(InitialCondition::Sine { amplitude: args.first().copied().unwrap_or(1.0) })
            }
            "tent" => arity(&name, &args, &[0]).map(|_| InitialCondition::Tent),
            _ => Err(Error::InvalidArgument(format!("unknown initial condition `{s}`"))),
        }
    }
}

/// Girsanov drift `h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShiftSpec {
    Zero,
    Constant(f64),
    /// `a·sin(πx)`
    SineBump {
        amplitude: f64,
    },
    /// `g·tanh(B_n(x_i)/√(t_n + dt))`, with `B_n(x_i)` the sum of the noise
    /// increments at node `i` over rows `< n`, divided by `√dx`.
    Feedback {
        gain: f64,
    },
}

impl ShiftSpec {
    /// The drift realization that goes with the noise `z`.
    pub fn realize(&self, z: &WhiteNoiseSample) -> DriftField {
        let grid = z.grid();
        match *self {
            ShiftSpec::Zero => DriftField::zero(grid),
            ShiftSpec::Constant(c) => DriftField::constant(grid, c),
            ShiftSpec::SineBump { amplitude } => DriftField::deterministic(grid, |_, x| amplitude * (PI * x).sin()),
            ShiftSpec::Feedback { gain } => {
                let (dt, scale) = (grid.dt(), grid.dx().sqrt());
                DriftField::adapted(z, |n, past, row| {
                    let norm = (grid.t(n) + dt).sqrt();
                    for (i, h) in row.iter_mut().enumerate() {
                        let b = past.column(i).sum() / scale;
                        *h = gain * (b / norm).tanh();
                    }
                })
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            ShiftSpec::Zero => true,
            ShiftSpec::Constant(c) => c == 0.0,
            ShiftSpec::SineBump { amplitude } => amplitude == 0.0,
            ShiftSpec::Feedback { gain } => gain == 0.0,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, ShiftSpec::Feedback { .. })
    }
}

impl fmt::Display for ShiftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftSpec::Zero => write!(f, "zero"),
            ShiftSpec::Constant(c) => write!(f, "constant({c})"),
            ShiftSpec::SineBump { amplitude } => write!(f, "sine-bump({amplitude})"),
            ShiftSpec::Feedback { gain } => write!(f, "feedback({gain})"),
        }
    }
}

impl FromStr for ShiftSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_form(s)?;
        let first = |default: f64| args.first().copied().unwrap_or(default);
        match name.as_str() {
            "zero" => arity(&name, &args, &[0]).map(|_| ShiftSpec::Zero),
            "constant" => {
                arity(&name, &args, &[1])?;
                Ok(ShiftSpec::Constant(args[0]))
            }
            "sine-bump" => {
                arity(&name, &args, &[0, 1])?;
                Ok(ShiftSpec::SineBump { amplitude: first(1.0) })
            }
            "feedback" => {
                arity(&name, &args, &[0, 1])?;
                Ok(ShiftSpec::Feedback { gain: first(1.0) })
            }
            _ => Err(Error::InvalidArgument(format!("unknown shift `{s}`"))),
        }
    }
}

/// Everything a verification run needs besides execution settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub grid: SpaceTimeGrid,
    pub u0: InitialCondition,
    pub coeffs: Coefficients,
    pub shift: ShiftSpec,
    pub kernel: KernelParams,
    pub n_paths: usize,
    pub seed: u64,
}

impl Scenario {
    /// Desk-scale default: `u0 = sin(πx)`, `b = 0`, `σ = 1/(1+x²)`, `h ≡ 1`.
    pub fn desk() -> Self {
        Self {
            id: "desk".into(),
            grid: SpaceTimeGrid::desk(),
            u0: InitialCondition::Sine { amplitude: 1.0 },
            coeffs: Coefficients::from_forms(ScalarFn::Zero, ScalarFn::BoundedRational { scale: 1.0 }),
            shift: ShiftSpec::Constant(1.0),
            kernel: KernelParams::default(),
            n_paths: 2000,
            seed: 20_240_601,
        }
    }

    /// Registry of named scenarios.
    pub fn builtin(id: &str) -> Result<Self> {
        let base = Self::desk();
        let with = |drift: ScalarFn, diffusion: ScalarFn| Scenario {
            id: id.to_string(),
            coeffs: Coefficients::from_forms(drift, diffusion),
            ..base.clone()
        };
        match id {
            "desk" | "multiplicative" => Ok(with(ScalarFn::Zero, ScalarFn::BoundedRational { scale: 1.0 })),
            "additive" => Ok(with(ScalarFn::Zero, ScalarFn::Constant(1.0))),
            "drifted" => Ok(with(ScalarFn::Affine { slope: 1.0, intercept: 0.5 }, ScalarFn::Constant(0.5))),
            "sine-noise" => Ok(with(ScalarFn::Sine { amplitude: 0.5 }, ScalarFn::Sine { amplitude: 1.0 })),
            _ => Err(Error::InvalidArgument(format!("unknown scenario `{id}`; known: {}", Self::BUILTIN.join(", ")))),
        }
    }

    pub const BUILTIN: &'static [&'static str] = &["desk", "additive", "multiplicative", "drifted", "sine-noise"];

    pub fn with_grid(mut self, grid: SpaceTimeGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_paths(mut self, n_paths: usize, seed: u64) -> Self {
        self.n_paths = n_paths;
        self.seed = seed;
        self
    }

    pub fn initial_row(&self) -> Vec<f64> {
        self.u0.nodes(&self.grid)
    }

    pub fn hypotheses(&self) -> Result<HypothesisCheck> {
        check_hypotheses(&self.coeffs, PROBE_RANGE, PROBE_POINTS)
    }

    /// One-line description used in report details and manifests.
    pub fn describe(&self) -> String {
        format!(
            "u0={} b={} sigma={} h={} L_b={} K_sigma={} L_sigma={}",
            self.u0,
            self.coeffs.drift,
            self.coeffs.diffusion,
            self.shift,
            self.coeffs.l_b,
            self.coeffs.k_sigma,
            self.coeffs.l_sigma
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_white_noise;

    #[test]
    fn forms_round_trip() {
        for s in ["zero", "sine(2)", "tent"] {
            assert_eq!(s.parse::<InitialCondition>().unwrap().to_string(), s);
        }
        for s in ["zero", "constant(1)", "sine-bump(0.5)", "feedback(2)"] {
            assert_eq!(s.parse::<ShiftSpec>().unwrap().to_string(), s);
        }
        assert!("tent(1)".parse::<InitialCondition>().is_err());
        assert!("wiggle".parse::<ShiftSpec>().is_err());
    }

    #[test]
    fn builtins_satisfy_hypotheses() {
        for id in Scenario::BUILTIN {
            let s = Scenario::builtin(id).unwrap();
            assert!(s.hypotheses().unwrap().passed(), "{id}");
        }
        assert!(Scenario::builtin("nope").is_err());
    }

    #[test]
    fn feedback_shift_is_adapted_and_bounded() {
        let g = SpaceTimeGrid::new(1.0, 16, 5).unwrap();
        let z = sample_white_noise(&g, 4, 0);
        let h = ShiftSpec::Feedback { gain: 0.7 }.realize(&z);
        assert!(h.values().row(0).iter().all(|&v| v == 0.0));
        assert!(h.values().iter().all(|v| v.abs() <= 0.7));
        let mut late = z.increments().clone();
        late.row_mut(9).fill(3.0);
        let z2 = WhiteNoiseSample::from_increments(&g, 4, 0, late).unwrap();
        let h2 = ShiftSpec::Feedback { gain: 0.7 }.realize(&z2);
        for n in 0..=9 {
            assert_eq!(h.values().row(n), h2.values().row(n));
        }
        assert_ne!(h.values().row(10), h2.values().row(10));
    }
}
