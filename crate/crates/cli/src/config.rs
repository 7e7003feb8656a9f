//! Flat `key = value` run configuration. Keys mirror the command-line flags;
//! flags given on the command line are applied after the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use spde_lab::estimators::{AnalyticLaw, Functional};
use spde_lab::grid::SpaceTimeGrid;
use spde_lab::scenario::{InitialCondition, Scenario, ShiftSpec};
use spde_lab::solver::{Coefficients, ScalarFn};

use crate::CliError;

pub const OUT_ENV: &str = "SPDE_LAB_OUT";
pub const DEFAULT_OUT: &str = "spde-lab-out";

/// Every key the config understands, in manifest order.
pub const KEYS: &[&str] = &[
    "scenario",
    "u0",
    "drift",
    "diffusion",
    "shift",
    "l_b",
    "k_sigma",
    "l_sigma",
    "T",
    "nt",
    "nx",
    "paths",
    "seed",
    "workers",
    "margin",
    "checks",
    "out",
    "format",
    "p",
    "lambdas",
    "small_p",
    "q",
    "eps",
    "radii",
    "functional",
    "layer_law",
    "layer_p",
    "layer_q",
    "alpha",
    "save_noise",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CheckId {
    Moment,
    Tail,
    SmallP,
    Tci,
    Concentration,
    LayerCake,
    LocalProperty,
    Factorization,
}

impl CheckId {
    pub const ALL: [CheckId; 8] = [
        CheckId::Moment,
        CheckId::Tail,
        CheckId::SmallP,
        CheckId::Tci,
        CheckId::Concentration,
        CheckId::LayerCake,
        CheckId::LocalProperty,
        CheckId::Factorization,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CheckId::Moment => "moment",
            CheckId::Tail => "tail",
            CheckId::SmallP => "small-p",
            CheckId::Tci => "tci",
            CheckId::Concentration => "concentration",
            CheckId::LayerCake => "layer-cake",
            CheckId::LocalProperty => "local-property",
            CheckId::Factorization => "factorization",
        }
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckId {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let key = key.strip_suffix("-bound").or(key.strip_suffix("-check")).unwrap_or(&key);
        let key = key.strip_suffix("-checks").unwrap_or(key);
        CheckId::ALL.into_iter().find(|c| c.name() == key).ok_or_else(|| {
            let known: Vec<&str> = CheckId::ALL.iter().map(|c| c.name()).collect();
            CliError::Config(format!("unknown check `{s}`; known: {}", known.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Self { csv: true, json: true }
    }
}

impl FromStr for Formats {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let mut f = Formats { csv: false, json: false };
        for item in list(s) {
            match item.to_ascii_lowercase().as_str() {
                "csv" => f.csv = true,
                "json" => f.json = true,
                other => return Err(CliError::Config(format!("unknown format `{other}`; use csv and/or json"))),
            }
        }
        if !(f.csv || f.json) {
            return Err(CliError::Config("format list is empty".into()));
        }
        Ok(f)
    }
}

impl fmt::Display for Formats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.csv, self.json) {
            (true, true) => f.write_str("csv,json"),
            (true, false) => f.write_str("csv"),
            _ => f.write_str("json"),
        }
    }
}

/// Samples fed to the layer-cake check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSource {
    /// Sup norms of the scenario's solution paths.
    Sampled,
    Analytic(AnalyticLaw),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckParams {
    pub p: f64,
    pub lambdas: Vec<f64>,
    pub small_p: f64,
    pub q: f64,
    pub eps: Vec<f64>,
    pub radii: Vec<f64>,
    pub functional: Functional,
    pub layer: LayerSource,
    pub layer_p: f64,
    pub layer_q: f64,
    pub alpha: Option<f64>,
}

impl Default for CheckParams {
    fn default() -> Self {
        Self {
            p: 12.0,
            lambdas: vec![0.5, 1.0, 2.0],
            small_p: 2.0,
            q: 12.0,
            eps: vec![0.1, 0.5],
            radii: (1..=15).map(|k| 0.02 * k as f64).collect(),
            functional: Functional::SupNorm,
            layer: LayerSource::Sampled,
            layer_p: 2.0,
            layer_q: 12.0,
            alpha: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub checks: Vec<CheckId>,
    pub output_dir: PathBuf,
    pub formats: Formats,
    pub workers: usize,
    pub margin: f64,
    pub params: CheckParams,
    pub save_noise: bool,
    /// The effective key-value pairs, echoed into manifests.
    pub pairs: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn list(s: &str) -> impl Iterator<Item = &str> {
    s.split([',', ' ']).map(str::trim).filter(|x| !x.is_empty())
}

fn number<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim().parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn numbers(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    list(v).map(|x| number(key, x)).collect()
}

fn core<T>(key: &str, r: spde_lab::error::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(format!("`{key}`: {e}")))
}

/// `name(a, b)` into the name and its numeric arguments.
fn form(key: &str, s: &str) -> Result<(String, Vec<f64>), CliError> {
    let s = s.trim();
    match s.split_once('(') {
        None => Ok((s.to_ascii_lowercase().replace('_', "-"), Vec::new())),
        Some((name, rest)) => {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| CliError::Config(format!("`{key}`: unbalanced parentheses in `{s}`")))?;
            Ok((name.trim().to_ascii_lowercase().replace('_', "-"), numbers(key, inner)?))
        }
    }
}

fn parse_law(s: &str) -> Result<LayerSource, CliError> {
    let (name, args) = form("layer_law", s)?;
    let law = match (name.as_str(), args.as_slice()) {
        ("sampled", []) => return Ok(LayerSource::Sampled),
        ("point-mass", [c]) => AnalyticLaw::PointMass(*c),
        ("uniform", [lo, hi]) => AnalyticLaw::Uniform { lo: *lo, hi: *hi },
        ("exponential", [rate]) => AnalyticLaw::Exponential { rate: *rate },
        _ => {
            return Err(CliError::Config(format!(
                "`layer_law`: `{s}` is not one of sampled, point-mass(c), uniform(a,b), exponential(rate)"
            )))
        }
    };
    Ok(LayerSource::Analytic(law))
}

fn parse_functional(s: &str) -> Result<Functional, CliError> {
    let (name, args) = form("functional", s)?;
    match (name.as_str(), args.as_slice()) {
        ("sup", []) | ("sup-norm", []) => Ok(Functional::SupNorm),
        ("point", [t, x]) => Ok(Functional::PointEvaluation { t: *t, x: *x }),
        _ => Err(CliError::Config(format!("`functional`: `{s}` is not sup or point(t,x)"))),
    }
}

fn flag(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    /// Builds a configuration from pairs applied in order over the defaults
    /// (the desk scenario, every check).
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            let key = k.as_ref().trim();
            let key = if key.eq_ignore_ascii_case("t") || key.eq_ignore_ascii_case("horizon") { "T" } else { key };
            let key = key.replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown config key `{key}`; known: {}", KEYS.join(", "))));
            }
            map.insert(key, v.as_ref().trim().to_string());
        }
        let get = |k: &str| map.get(k).map(String::as_str);

        let mut scenario = match get("scenario") {
            Some(id) => core("scenario", Scenario::builtin(id))?,
            None => Scenario::desk(),
        };
        if let Some(v) = get("u0") {
            scenario.u0 = core("u0", v.parse::<InitialCondition>())?;
        }
        if let Some(v) = get("shift") {
            scenario.shift = core("shift", v.parse::<ShiftSpec>())?;
        }
        let drift = match get("drift") {
            Some(v) => core("drift", v.parse::<ScalarFn>())?,
            None => scenario.coeffs.drift,
        };
        let diffusion = match get("diffusion") {
            Some(v) => core("diffusion", v.parse::<ScalarFn>())?,
            None => scenario.coeffs.diffusion,
        };
        let derived = Coefficients::from_forms(drift, diffusion);
        let declared = |k: &str, fallback: f64| get(k).map_or(Ok(fallback), |v| number::<f64>(k, v));
        scenario.coeffs = Coefficients::declared(
            drift,
            diffusion,
            declared("l_b", derived.l_b)?,
            declared("k_sigma", derived.k_sigma)?,
            declared("l_sigma", derived.l_sigma)?,
        );

        let horizon = get("T").map_or(Ok(scenario.grid.horizon()), |v| number("T", v))?;
        let nt = get("nt").map_or(Ok(scenario.grid.nt()), |v| number("nt", v))?;
        let nx = get("nx").map_or(Ok(scenario.grid.nx()), |v| number("nx", v))?;
        scenario.grid = core("grid", SpaceTimeGrid::new(horizon, nt, nx))?;
        if let Some(v) = get("paths") {
            scenario.n_paths = number("paths", v)?;
        }
        if let Some(v) = get("seed") {
            scenario.seed = number("seed", v)?;
        }
        if scenario.n_paths == 0 {
            return Err(CliError::Config("`paths` must be at least 1".into()));
        }

        let checks = match get("checks") {
            Some(v) => list(v).map(str::parse).collect::<Result<Vec<CheckId>, _>>()?,
            None => CheckId::ALL.to_vec(),
        };
        let workers = match get("workers") {
            Some(v) => number("workers", v)?,
            None => spde_lab::ensemble::Execution::default().workers,
        };
        if workers == 0 {
            return Err(CliError::Config("`workers` must be at least 1".into()));
        }
        let margin = get("margin").map_or(Ok(spde_lab::report::DEFAULT_MARGIN), |v| number("margin", v))?;
        let output_dir = match get("out") {
            Some(v) => PathBuf::from(v),
            None => default_output_dir(),
        };
        let formats = get("format").map_or(Ok(Formats::default()), str::parse)?;

        let mut params = CheckParams::default();
        if let Some(v) = get("p") {
            params.p = number("p", v)?;
        }
        if let Some(v) = get("lambdas") {
            params.lambdas = numbers("lambdas", v)?;
        }
        if let Some(v) = get("small_p") {
            params.small_p = number("small_p", v)?;
        }
        if let Some(v) = get("q") {
            params.q = number("q", v)?;
        }
        if let Some(v) = get("eps") {
            params.eps = numbers("eps", v)?;
        }
        if let Some(v) = get("radii") {
            params.radii = numbers("radii", v)?;
        }
        if let Some(v) = get("functional") {
            params.functional = parse_functional(v)?;
        }
        if let Some(v) = get("layer_law") {
            params.layer = parse_law(v)?;
        }
        if let Some(v) = get("layer_p") {
            params.layer_p = number("layer_p", v)?;
        }
        if let Some(v) = get("layer_q") {
            params.layer_q = number("layer_q", v)?;
        }
        if let Some(v) = get("alpha") {
            params.alpha = Some(number("alpha", v)?);
        }
        let save_noise = get("save_noise").map_or(Ok(false), |v| flag("save_noise", v))?;

        let mut config = RunConfig {
            scenario,
            checks,
            output_dir,
            formats,
            workers,
            margin,
            params,
            save_noise,
            pairs: BTreeMap::new(),
        };
        config.pairs = config.effective_pairs();
        Ok(config)
    }

    /// Every key with its effective value; feeding these back reproduces the run.
    fn effective_pairs(&self) -> BTreeMap<String, String> {
        let s = &self.scenario;
        let p = &self.params;
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let functional = match p.functional {
            Functional::SupNorm => "sup".to_string(),
            Functional::PointEvaluation { t, x } => format!("point({t},{x})"),
        };
        let layer = match p.layer {
            LayerSource::Sampled => "sampled".to_string(),
            LayerSource::Analytic(AnalyticLaw::PointMass(c)) => format!("point-mass({c})"),
            LayerSource::Analytic(AnalyticLaw::Uniform { lo, hi }) => format!("uniform({lo},{hi})"),
            LayerSource::Analytic(AnalyticLaw::Exponential { rate }) => format!("exponential({rate})"),
        };
        let entries = [
            ("scenario", s.id.clone()),
            ("u0", s.u0.to_string()),
            ("drift", s.coeffs.drift.to_string()),
            ("diffusion", s.coeffs.diffusion.to_string()),
            ("shift", s.shift.to_string()),
            ("l_b", s.coeffs.l_b.to_string()),
            ("k_sigma", s.coeffs.k_sigma.to_string()),
            ("l_sigma", s.coeffs.l_sigma.to_string()),
            ("T", s.grid.horizon().to_string()),
            ("nt", s.grid.nt().to_string()),
            ("nx", s.grid.nx().to_string()),
            ("paths", s.n_paths.to_string()),
            ("seed", s.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("margin", self.margin.to_string()),
            ("checks", self.checks.iter().map(CheckId::name).collect::<Vec<_>>().join(",")),
            ("out", self.output_dir.display().to_string()),
            ("format", self.formats.to_string()),
            ("p", p.p.to_string()),
            ("lambdas", join(&p.lambdas)),
            ("small_p", p.small_p.to_string()),
            ("q", p.q.to_string()),
            ("eps", join(&p.eps)),
            ("radii", join(&p.radii)),
            ("functional", functional),
            ("layer_law", layer),
            ("layer_p", p.layer_p.to_string()),
            ("layer_q", p.layer_q.to_string()),
            ("alpha", p.alpha.map_or(String::new(), |a| a.to_string())),
            ("save_noise", self.save_noise.to_string()),
        ];
        entries.into_iter().filter(|(_, v)| !v.is_empty()).map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The configuration in config-file syntax, in [`KEYS`] order.
    pub fn to_config_text(&self) -> String {
        KEYS.iter().filter_map(|k| self.pairs.get(*k).map(|v| format!("{k} = {v}\n"))).collect()
    }
}

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
}
