use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::grid::SpaceTimeGrid;

/// Outcome of one verification check.
///
/// One-sided inequality checks pass when
/// `empirical_estimate - margin·std_error ≤ theoretical_bound`; the default
/// margin is two standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_name: String,
    /// Non-finite bounds serialize as `null` and read back as `+∞`.
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_infinity")]
    pub theoretical_bound: f64,
    pub empirical_estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub passed: bool,
    pub seed: u64,
    pub grid: Option<SpaceTimeGrid>,
    pub scenario_id: String,
    pub details: String,
}

pub const DEFAULT_MARGIN: f64 = 2.0;

impl VerificationReport {
    pub fn one_sided(
        check_name: impl Into<String>,
        theoretical_bound: f64,
        empirical_estimate: f64,
        std_error: f64,
        n_paths: usize,
        margin: f64,
    ) -> Self {
        let passed = empirical_estimate - margin * std_error <= theoretical_bound;
        Self {
            check_name: check_name.into(),
            theoretical_bound,
            empirical_estimate,
            std_error,
            n_paths,
            passed,
            seed: 0,
            grid: None,
            scenario_id: String::new(),
            details: String::new(),
        }
    }

    pub fn with_context(mut self, seed: u64, grid: Option<SpaceTimeGrid>, scenario_id: &str) -> Self {
        self.seed = seed;
        self.grid = grid;
        self.scenario_id = scenario_id.to_string();
        self
    }

    pub fn with_details(mut self, details: impl Into<String>) -> Self {
        self.details = details.into();
        self
    }

    /// Forces a failure, e.g. when a structural condition of the check is violated.
    pub fn failed(mut self, reason: &str) -> Self {
        self.passed = false;
        if !self.details.is_empty() {
            self.details.push_str("; ");
        }
        self.details.push_str(reason);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str =
        "check_name,theoretical_bound,empirical_estimate,std_error,n_paths,passed,seed,T,nt,nx,scenario_id";

    pub fn to_csv_row(&self) -> String {
        let mut row = String::new();
        let (t, nt, nx) = match &self.grid {
            Some(g) => (g.horizon().to_string(), g.nt().to_string(), g.nx().to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        write!(
            row,
            "{},{:e},{:e},{:e},{},{},{},{},{},{},{}",
            self.check_name,
            self.theoretical_bound,
            self.empirical_estimate,
            self.std_error,
            self.n_paths,
            self.passed,
            self.seed,
            t,
            nt,
            nx,
            self.scenario_id
        )
        .unwrap();
        row
    }
}

/// CSV table of several reports, header included.
pub fn reports_to_csv(reports: &[VerificationReport]) -> String {
    let mut out = String::from(VerificationReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_infinity<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}
