//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use leafflow::heatflow::TimeScheme;
use leafflow::leafgrid::{build_grid, GridSpec, LeafGrid, ScalarField};
use serde::{Deserialize, Serialize};

use crate::expr::Expr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

/// A number, or a constant expression such as `"2*pi"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Value(f64),
    Expr(String),
}

impl Number {
    pub fn resolve(&self, key: &str, params: &BTreeMap<String, f64>) -> Result<f64, ConfigError> {
        let v = match self {
            Number::Value(v) => *v,
            Number::Expr(s) => {
                let e = Expr::parse(s, params).map_err(|e| invalid(key, e.to_string()))?;
                e.eval(f64::NAN, f64::NAN)
            }
        };
        if !v.is_finite() {
            return Err(invalid(key, "must be a finite constant"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    Hopf {
        m: usize,
    },
    TorusBurgers {
        psi0: String,
    },
    TwistedProduct {
        f0: String,
        n: usize,
        #[serde(default)]
        phi: f64,
    },
    Custom {
        n: usize,
        phi: f64,
        beta_d: String,
        #[serde(default = "zero_expr")]
        t2: String,
        #[serde(default = "zero_expr")]
        hf2: String,
        u0: String,
    },
    Revolution {
        rho0: String,
        #[serde(default)]
        phi: f64,
    },
}

fn zero_expr() -> String {
    "0".into()
}

impl ScenarioConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioConfig::Hopf { .. } => "hopf",
            ScenarioConfig::TorusBurgers { .. } => "torus_burgers",
            ScenarioConfig::TwistedProduct { .. } => "twisted_product",
            ScenarioConfig::Custom { .. } => "custom",
            ScenarioConfig::Revolution { .. } => "revolution",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyName {
    #[default]
    Circle,
    Torus,
    Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub topology: TopologyName,
    /// Circle or interval length; a circle defaults to `2π`.
    pub length: Option<Number>,
    pub lx: Option<Number>,
    pub ly: Option<Number>,
    pub nx: usize,
    pub ny: Option<usize>,
    /// Interval boundary values.
    pub left: Option<Number>,
    pub right: Option<Number>,
}

impl GridConfig {
    fn circle(nx: usize) -> Self {
        GridConfig {
            topology: TopologyName::Circle,
            length: Some(Number::Expr("2*pi".into())),
            lx: None,
            ly: None,
            nx,
            ny: None,
            left: None,
            right: None,
        }
    }

    pub fn spec(&self, params: &BTreeMap<String, f64>) -> Result<GridSpec, ConfigError> {
        let need = |v: &Option<Number>, key: &str| -> Result<f64, ConfigError> {
            v.as_ref().ok_or_else(|| invalid(key, "missing"))?.resolve(key, params)
        };
        Ok(match self.topology {
            TopologyName::Circle => {
                let length = match &self.length {
                    Some(_) => need(&self.length, "grid.length")?,
                    None => std::f64::consts::TAU,
                };
                GridSpec::circle(length, self.nx)
            }
            TopologyName::Torus => GridSpec::torus(
                need(&self.lx, "grid.lx")?,
                need(&self.ly, "grid.ly")?,
                self.nx,
                self.ny.ok_or_else(|| invalid("grid.ny", "missing"))?,
            ),
            TopologyName::Interval => GridSpec::interval(
                need(&self.length, "grid.length")?,
                self.nx,
                need(&self.left, "grid.left")?,
                need(&self.right, "grid.right")?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Stride of the written snapshots.
    #[serde(default = "default_save_every")]
    pub save_every: usize,
    /// Stride of the snapshots used for post-processing; divides `save_every`.
    #[serde(default = "default_post_every")]
    pub post_every: usize,
    #[serde(default)]
    pub scheme: TimeScheme,
}

fn default_post_every() -> usize {
    1
}

fn default_save_every() -> usize {
    100
}

/// Which report sections to produce. Unset entries fall back to the
/// preset's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reports {
    pub envelope: Option<bool>,
    pub conservation: Option<bool>,
    pub burgers: Option<bool>,
    pub rate: Option<bool>,
    pub limit_curvature: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResolvedReports {
    pub envelope: bool,
    pub conservation: bool,
    pub burgers: bool,
    pub rate: bool,
    pub limit_curvature: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub stationarity: f64,
    pub stationarity_curvature: f64,
    /// Relative to `w+`.
    pub envelope: f64,
    pub conservation: f64,
    /// Relative to the size of `n ∇ Div H`.
    pub burgers: f64,
    pub rate_lower: f64,
    pub rate_upper: f64,
    pub limit_curvature: f64,
    pub revolution: f64,
    pub arc_length: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            stationarity: 1e-10,
            stationarity_curvature: 1e-8,
            envelope: 1e-6,
            conservation: 1e-6,
            burgers: 0.05,
            rate_lower: 0.9,
            rate_upper: 1.5,
            limit_curvature: 1e-3,
            revolution: 1e-4,
            arc_length: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub grid: Option<GridConfig>,
    pub time: TimeConfig,
    #[serde(default)]
    pub reports: Reports,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Named constants usable in every expression.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub output: OutputConfig,
}

const RESERVED: [&str; 4] = ["x", "y", "pi", "e"];

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (k, v) in &self.params {
            if RESERVED.contains(&k.as_str()) {
                return Err(invalid(&format!("params.{k}"), "name is reserved"));
            }
            if !v.is_finite() {
                return Err(invalid(&format!("params.{k}"), "must be finite"));
            }
        }
        let t = &self.time;
        if !(t.t_end > 0.0 && t.t_end.is_finite()) {
            return Err(invalid("time.t_end", "must be positive"));
        }
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return Err(invalid("time.dt", "must be positive"));
        }
        if t.save_every == 0 {
            return Err(invalid("time.save_every", "must be at least 1"));
        }
        if t.post_every == 0 || t.save_every % t.post_every != 0 {
            return Err(invalid("time.post_every", "must be at least 1 and divide time.save_every"));
        }
        match &self.scenario {
            ScenarioConfig::Hopf { m } if *m == 0 => return Err(invalid("scenario.m", "must be at least 1")),
            ScenarioConfig::TwistedProduct { n, .. } | ScenarioConfig::Custom { n, .. } if *n == 0 => {
                return Err(invalid("scenario.n", "must be at least 1"))
            }
            _ => {}
        }
        let grid = self.grid_config();
        let wants_circle = matches!(
            self.scenario,
            ScenarioConfig::Hopf { .. } | ScenarioConfig::TorusBurgers { .. }
        );
        if wants_circle && grid.topology != TopologyName::Circle {
            return Err(invalid("grid.topology", format!("preset `{}` needs a circle", self.scenario.name())));
        }
        let is_rev = matches!(self.scenario, ScenarioConfig::Revolution { .. });
        if is_rev != (grid.topology == TopologyName::Interval) {
            return Err(invalid("grid.topology", "interval grids are only used by the revolution preset"));
        }
        let spec = grid.spec(&self.params)?;
        let g = build_grid(&spec).map_err(|e| invalid("grid", e.to_string()))?;
        for (key, text) in self.expressions() {
            let e = Expr::parse(text, &self.params).map_err(|e| invalid(key, e.to_string()))?;
            if e.uses_y() && grid.topology != TopologyName::Torus {
                return Err(invalid(key, "`y` is only defined on torus leaves"));
            }
            field_on(&g, &e).map_err(|m| invalid(key, m))?;
        }
        Ok(())
    }

    fn expressions(&self) -> Vec<(&'static str, &String)> {
        match &self.scenario {
            ScenarioConfig::Hopf { .. } => vec![],
            ScenarioConfig::TorusBurgers { psi0 } => vec![("scenario.psi0", psi0)],
            ScenarioConfig::TwistedProduct { f0, .. } => vec![("scenario.f0", f0)],
            ScenarioConfig::Custom { beta_d, t2, hf2, u0, .. } => vec![
                ("scenario.beta_d", beta_d),
                ("scenario.t2", t2),
                ("scenario.hf2", hf2),
                ("scenario.u0", u0),
            ],
            ScenarioConfig::Revolution { rho0, .. } => vec![("scenario.rho0", rho0)],
        }
    }

    /// The configured grid, or the preset's default.
    pub fn grid_config(&self) -> GridConfig {
        if let Some(g) = &self.grid {
            return g.clone();
        }
        match self.scenario {
            ScenarioConfig::Revolution { .. } => GridConfig {
                topology: TopologyName::Interval,
                length: Some(Number::Value(2.0)),
                lx: None,
                ly: None,
                nx: 129,
                ny: None,
                left: Some(Number::Value(1.0)),
                right: Some(Number::Value(1.5)),
            },
            _ => GridConfig::circle(128),
        }
    }

    pub fn build_grid(&self) -> Result<Arc<LeafGrid>, ConfigError> {
        let spec = self.grid_config().spec(&self.params)?;
        build_grid(&spec).map_err(|e| invalid("grid", e.to_string()))
    }

    /// Evaluates an expression from this config on `grid`.
    pub fn field(&self, key: &str, text: &str, grid: &Arc<LeafGrid>) -> Result<ScalarField, ConfigError> {
        let e = Expr::parse(text, &self.params).map_err(|e| invalid(key, e.to_string()))?;
        field_on(grid, &e).map_err(|m| invalid(key, m))
    }

    pub fn reports(&self) -> ResolvedReports {
        let (env, cons, burg, rate, lim) = match self.scenario {
            ScenarioConfig::Hopf { .. } => (true, true, true, false, false),
            ScenarioConfig::TorusBurgers { .. } => (false, true, true, true, false),
            ScenarioConfig::TwistedProduct { .. } => (false, true, false, true, false),
            ScenarioConfig::Custom { .. } => (true, true, true, true, true),
            ScenarioConfig::Revolution { .. } => (false, false, false, false, false),
        };
        let r = &self.reports;
        ResolvedReports {
            envelope: r.envelope.unwrap_or(env),
            conservation: r.conservation.unwrap_or(cons),
            burgers: r.burgers.unwrap_or(burg),
            rate: r.rate.unwrap_or(rate),
            limit_curvature: r.limit_curvature.unwrap_or(lim),
        }
    }
}

fn field_on(grid: &Arc<LeafGrid>, e: &Expr) -> Result<ScalarField, String> {
    grid.sample(|x, y| e.eval(x, y)).map_err(|_| "does not evaluate to finite values on the grid".to_string())
}

/// Sets the dotted `key` in a TOML document to `value`, keeping integers
/// integral where the existing entry is an integer.
pub fn override_key(text: &str, key: &str, value: f64) -> Result<String, ConfigError> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().ok_or_else(|| invalid(key, "empty key"))?;
    let mut table = &mut doc;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{p}` is not a table")))?;
    }
    let integral = matches!(table.get(*last), Some(toml::Value::Integer(_)));
    let new = if integral {
        if value.fract() != 0.0 {
            return Err(invalid(key, format!("expects an integer, got {value}")));
        }
        toml::Value::Integer(value as i64)
    } else {
        toml::Value::Float(value)
    };
    table.insert(last.to_string(), new);
    toml::to_string(&doc).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub template: &'static str,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "hopf",
        summary: "Hopf fibration of S^{2m+1}: a fixed point of the flow",
        template: r#"[scenario]
preset = "hopf"
m = 1

[time]
t_end = 10.0
dt = 1e-3
save_every = 500
"#,
    },
    Preset {
        name: "torus_burgers",
        summary: "circle foliation of a flat torus; H obeys Burgers' equation and decays at λ1",
        template: r#"[scenario]
preset = "torus_burgers"
psi0 = "cos(x)"

[time]
t_end = 12.0
dt = 1e-3
save_every = 20
scheme = "imex_trapezoid"
"#,
    },
    Preset {
        name: "twisted_product",
        summary: "leaf factor of a twisted product; linear heat flow with potential Φ/n",
        template: r#"[scenario]
preset = "twisted_product"
f0 = "1 + 0.5*cos(x)"
n = 2
phi = 0.0

[time]
t_end = 12.0
dt = 1e-3
save_every = 20
scheme = "imex_trapezoid"
"#,
    },
    Preset {
        name: "custom",
        summary: "explicit β_D, ‖T‖², ‖h_F‖² and u0 given as expressions",
        template: r#"[scenario]
preset = "custom"
n = 2
phi = 0.2
beta_d = "0.3 + 0.2*cos(x)"
t2 = "0.02*(1 + 0.5*sin(x))"
hf2 = "0.3 + 0.1*cos(2*x)"
u0 = "1 + 0.2*sin(x)"

[time]
t_end = 15.0
dt = 5e-4
save_every = 40
scheme = "imex_trapezoid"
"#,
    },
    Preset {
        name: "revolution",
        summary: "surface of revolution dx² + ρ²dθ² with ρ fixed at both ends",
        template: r#"[scenario]
preset = "revolution"
rho0 = "1 + 0.25*x + 0.2*sin(pi*x/2)"

[grid]
topology = "interval"
length = 2.0
nx = 129
left = 1.0
right = 1.5

[time]
t_end = 20.0
dt = 1e-3
save_every = 250
"#,
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
