//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::ScalarFn;
use crate::expr::Expr;
use crate::flow::{FlowError, Ibvp, DEFAULT_STEP_BUDGET};
use crate::geometry::{DomainSpec, Shape};
use crate::operator::{FlowParams, DEFAULT_CFL};

const SMOKE_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("boundary data and initial data disagree by {mismatch:e} at {point:?}")]
    Incompatible { mismatch: f64, point: [f64; 3] },
}

fn field(name: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: name.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Flow,
    Steady,
    Continuation,
    Barrier,
    Comparison,
    Viscosity,
    Liouville,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Flow,
        Experiment::Steady,
        Experiment::Continuation,
        Experiment::Barrier,
        Experiment::Comparison,
        Experiment::Viscosity,
        Experiment::Liouville,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Flow => "flow",
            Experiment::Steady => "steady",
            Experiment::Continuation => "continuation",
            Experiment::Barrier => "barrier",
            Experiment::Comparison => "comparison",
            Experiment::Viscosity => "viscosity",
            Experiment::Liouville => "liouville",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone)]
pub struct LiouvilleSettings {
    pub m: f64,
    pub lambda: f64,
    /// Defaults to `4 h`.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub domain: DomainSpec,
    pub spacing: f64,
    pub h: Expr,
    pub g: Expr,
    pub params: FlowParams,
    pub horizon: f64,
    pub snapshots: Vec<f64>,
    pub tol: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub eps_list: Vec<f64>,
    pub pairs: usize,
    pub liouville: Option<LiouvilleSettings>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn ibvp(&self) -> Result<Ibvp, FlowError> {
        Ibvp::new(self.domain.clone(), ScalarFn::from(self.h.clone()), ScalarFn::from(self.g.clone()))
    }
}

const KEYS: &[&str] = &[
    "experiment",
    "domain.kind",
    "domain.dim",
    "domain.center",
    "domain.radius",
    "domain.a",
    "domain.b",
    "domain.half_width",
    "domain.straight_half_length",
    "domain.corner_radius",
    "grid.spacing",
    "data.h",
    "data.g",
    "params.epsilon",
    "params.nu",
    "params.sigma",
    "params.cfl",
    "params.dt",
    "run.horizon",
    "run.snapshots",
    "run.tol",
    "run.max_steps",
    "run.seed",
    "run.eps_list",
    "run.pairs",
    "run.out",
    "liouville.m",
    "liouville.lambda",
    "liouville.delta",
];

struct Table(BTreeMap<String, String>);

impl Table {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("unknown key `{k}`") });
            }
            if v.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("empty value for `{k}`") });
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("duplicate key `{k}`") });
            }
        }
        Ok(Self(map))
    }

    fn str(&self, k: &str) -> Option<&str> {
        self.0.get(k).map(String::as_str)
    }

    fn num<T: FromStr>(&self, k: &str) -> Result<Option<T>, ConfigError> {
        self.str(k).map(|v| v.parse::<T>().map_err(|_| field(k, format!("cannot parse `{v}`")))).transpose()
    }

    fn need<T: FromStr>(&self, k: &str) -> Result<T, ConfigError> {
        self.num(k)?.ok_or_else(|| field(k, "missing"))
    }

    fn list(&self, k: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.str(k)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| field(k, format!("cannot parse `{s}`"))))
                    .collect()
            })
            .transpose()
    }
}

fn parse_domain(t: &Table) -> Result<DomainSpec, ConfigError> {
    let dim: usize = t.num("domain.dim")?.unwrap_or(2);
    let mut center = [0.0; 3];
    if let Some(c) = t.list("domain.center")? {
        if c.len() != dim {
            return Err(field("domain.center", format!("expected {dim} coordinates, got {}", c.len())));
        }
        center[..dim].copy_from_slice(&c);
    }
    let kind = t.str("domain.kind").ok_or_else(|| field("domain.kind", "missing"))?;
    let shape = match kind {
        "ball" => Shape::Ball { radius: t.need("domain.radius")? },
        "ellipse" => Shape::Ellipse { a: t.need("domain.a")?, b: t.need("domain.b")? },
        "stadium" => Shape::Stadium {
            half_width: t.need("domain.half_width")?,
            straight_half_length: t.need("domain.straight_half_length")?,
            corner_radius: t.need("domain.corner_radius")?,
        },
        other => return Err(field("domain.kind", format!("unknown kind `{other}`"))),
    };
    DomainSpec::new(shape, center, dim).map_err(|e| field("domain", e.to_string()))
}

fn parse_expr(t: &Table, k: &str, dim: usize) -> Result<Expr, ConfigError> {
    let text = t.str(k).ok_or_else(|| field(k, "missing"))?;
    let e = Expr::parse(text).map_err(|e| field(k, e.to_string()))?;
    if e.arity() > dim {
        return Err(field(k, format!("uses x{} in a {dim}-dimensional domain", e.arity())));
    }
    Ok(e)
}

/// Evaluates both expressions at random domain points; all must be finite.
fn smoke_test(domain: &DomainSpec, exprs: &[(&str, &Expr)], seed: u64) -> Result<(), ConfigError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = domain.center();
    let ext = domain.half_extents();
    let mut found = 0;
    for _ in 0..10_000 {
        let mut x = c;
        for a in 0..domain.dim() {
            x[a] += rng.gen_range(-1.0..1.0) * ext[a];
        }
        if !domain.contains(&x) {
            continue;
        }
        for (k, e) in exprs {
            let v = e.eval(&x);
            if !v.is_finite() {
                return Err(field(k, format!("evaluates to {v} at {x:?}")));
            }
        }
        found += 1;
        if found == SMOKE_POINTS {
            return Ok(());
        }
    }
    Err(field("domain", "could not sample interior points"))
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_as(text, None)
}

/// As `parse_config`; `experiment` replaces the file's `experiment` key,
/// which may then be omitted.
pub fn parse_config_as(text: &str, experiment: Option<Experiment>) -> Result<RunConfig, ConfigError> {
    let t = Table::parse(text)?;
    let from_file = t
        .str("experiment")
        .map(|s| s.parse::<Experiment>().map_err(|m| field("experiment", m)))
        .transpose()?;
    let experiment = experiment.or(from_file).ok_or_else(|| field("experiment", "missing"))?;
    let domain = parse_domain(&t)?;
    let spacing: f64 = t.need("grid.spacing")?;
    let h = parse_expr(&t, "data.h", domain.dim())?;
    let g = match t.str("data.g") {
        Some(_) => parse_expr(&t, "data.g", domain.dim())?,
        None => h.clone(),
    };
    let params = FlowParams {
        epsilon: t.need("params.epsilon")?,
        nu: t.num("params.nu")?.unwrap_or(0.0),
        sigma: t.num("params.sigma")?.unwrap_or(1.0),
        cfl_factor: t.num("params.cfl")?.unwrap_or(DEFAULT_CFL),
        dt_override: t.num("params.dt")?,
    };
    params.validate().map_err(|e| field("params", e.to_string()))?;
    let horizon: f64 = t.num("run.horizon")?.unwrap_or(0.0);
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(field("run.horizon", "must be non-negative"));
    }
    let needs_horizon = !matches!(experiment, Experiment::Steady);
    if needs_horizon && t.str("run.horizon").is_none() {
        return Err(field("run.horizon", "missing"));
    }
    let snapshots = t.list("run.snapshots")?.unwrap_or_default();
    if let Some(s) = snapshots.iter().find(|s| !(**s >= 0.0 && **s <= horizon)) {
        return Err(field("run.snapshots", format!("{s} outside [0, {horizon}]")));
    }
    let tol: f64 = t.num("run.tol")?.unwrap_or(1e-6);
    if !(tol > 0.0) {
        return Err(field("run.tol", "must be positive"));
    }
    let eps_list = t.list("run.eps_list")?.unwrap_or_default();
    if experiment == Experiment::Continuation {
        if eps_list.len() < 3 {
            return Err(field("run.eps_list", "needs at least 3 values"));
        }
        if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(field("run.eps_list", "must be strictly decreasing values in (0, 1)"));
        }
    }
    let liouville = if experiment == Experiment::Liouville {
        if !matches!(domain.shape(), Shape::Stadium { .. }) {
            return Err(field("domain.kind", "liouville runs need a stadium"));
        }
        Some(LiouvilleSettings {
            m: t.need("liouville.m")?,
            lambda: t.need("liouville.lambda")?,
            delta: t.num("liouville.delta")?,
        })
    } else {
        None
    };
    let seed = t.num("run.seed")?.unwrap_or(0);
    smoke_test(&domain, &[("data.h", &h), ("data.g", &g)], seed)?;
    let cfg = RunConfig {
        experiment,
        domain,
        spacing,
        h,
        g,
        params,
        horizon,
        snapshots,
        tol,
        max_steps: t.num("run.max_steps")?.unwrap_or(DEFAULT_STEP_BUDGET),
        seed,
        eps_list,
        pairs: t.num("run.pairs")?.unwrap_or(20),
        liouville,
        out: t.str("run.out").map(PathBuf::from),
    };
    crate::geometry::Grid::build(&cfg.domain, spacing).map_err(|e| field("grid.spacing", e.to_string()))?;
    match cfg.ibvp() {
        Ok(_) => Ok(cfg),
        Err(FlowError::Incompatible { mismatch, point }) => Err(ConfigError::Incompatible { mismatch, point }),
        Err(e) => Err(field("data", e.to_string())),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    load_config_as(path, None)
}

pub fn load_config_as(path: &Path, experiment: Option<Experiment>) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
    parse_config_as(&text, experiment)
}
