//! Experiment configuration: `[section]` headers followed by `key = value` lines.
//! `#` and `;` start comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oll_core::fields::DomainKind;
use oll_core::solver::ObstacleShape;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing key `{key}` in [{section}]")]
    Missing { section: String, key: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn syntax(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Syntax { line, message: message.into() }
}

/// Raw `section -> key -> (line, value)` table.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("domain", &["kind", "n", "nodes", "lower", "upper"]),
    ("exponents", &["p", "gamma", "alpha", "a", "epsilon", "delta", "r0", "upsilon"]),
    ("measure", &["atoms", "density", "mollify"]),
    ("obstacle", &["shape", "center", "height", "width"]),
    ("solver", &["tol", "max_iter", "eps_reg", "sola_levels"]),
    ("verify", &["checks", "kappa1", "kappa2", "balls", "boundary_balls", "lorentz", "band"]),
    ("sweep", &["lambda_grid", "eps_list", "resolutions", "masses"]),
    ("output", &["dir", "seed", "formats"]),
];

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut current: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| syntax(ln, "unterminated section header"))?.trim();
                if !KNOWN.iter().any(|(s, _)| *s == name) {
                    return Err(syntax(ln, format!("unknown section [{name}]")));
                }
                raw.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| syntax(ln, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let section = current.as_ref().ok_or_else(|| syntax(ln, "key outside of any section"))?;
            let known = KNOWN.iter().find(|(s, _)| s == section).map(|e| e.1).unwrap_or(&[]);
            if !known.contains(&key) {
                return Err(syntax(ln, format!("unknown key `{key}` in [{section}]")));
            }
            let table = raw.sections.get_mut(section).unwrap();
            if table.contains_key(key) {
                return Err(syntax(ln, format!("duplicate key `{key}`")));
            }
            table.insert(key.to_string(), (ln, value.trim().to_string()));
        }
        Ok(raw)
    }

    fn get(&self, section: &str, key: &str) -> Option<&(usize, String)> {
        self.sections.get(section).and_then(|t| t.get(key))
    }

    fn req<V: std::str::FromStr>(&self, section: &str, key: &str) -> Result<V, ConfigError> {
        self.num(section, key)?
            .ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    fn num<V: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<V>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some((ln, v)) => v.parse().map(Some).map_err(|_| syntax(*ln, format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn num_or<V: std::str::FromStr>(&self, section: &str, key: &str, default: V) -> Result<V, ConfigError> {
        Ok(self.num(section, key)?.unwrap_or(default))
    }

    fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some((ln, v)) => parse_floats(v).map(Some).map_err(|m| syntax(*ln, format!("`{key}`: {m}"))),
        }
    }
}

fn parse_floats(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("cannot parse `{s}` as a number")))
        .collect()
}

/// `x0, x1, ... : value` entries separated by `|`.
fn parse_points(v: &str, n: usize) -> Result<Vec<(Vec<f64>, f64)>, String> {
    v.split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (loc, w) = item.split_once(':').ok_or_else(|| format!("`{item}` needs the form `x, y : value`"))?;
            let loc = parse_floats(loc)?;
            if loc.len() != n {
                return Err(format!("`{item}` has {} coordinates, expected {n}", loc.len()));
            }
            let w = w.trim().parse::<f64>().map_err(|_| format!("cannot parse `{}`", w.trim()))?;
            Ok((loc, w))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn parse_list(s: &str) -> Result<Vec<Format>, String> {
        let mut out = Vec::new();
        for f in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let f = match f {
                "csv" => Format::Csv,
                "json" => Format::Json,
                "svg" => Format::Svg,
                other => return Err(format!("unknown format `{other}`")),
            };
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Names accepted in `[verify] checks`.
pub const CHECKS: &[&str] = &[
    "admissibility",
    "comparison",
    "comparison_boundary",
    "comparison_frozen",
    "gradient_reduction",
    "holder",
    "lemma_b1",
    "radial",
    "scheven",
    "small_v",
    "sola",
    "tech2",
    "theorem_a",
    "theorem_b",
];

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaGrid {
    Auto,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: DomainKind,
    pub n: usize,
    pub nodes: usize,
    pub lower: f64,
    pub upper: f64,
    pub p: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub a: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub r0: Option<f64>,
    pub upsilon: Option<f64>,
    pub atoms: Vec<(Vec<f64>, f64)>,
    pub density: f64,
    pub mollify: u32,
    pub obstacle: ObstacleShape<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub eps_reg: f64,
    pub sola_levels: u32,
    pub checks: Vec<String>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub balls: Vec<(Vec<f64>, f64)>,
    pub boundary_balls: Vec<(Vec<f64>, f64)>,
    pub lorentz: Vec<(f64, Option<f64>)>,
    pub band: f64,
    pub lambda_grid: LambdaGrid,
    pub eps_list: Vec<f64>,
    pub resolutions: Vec<usize>,
    pub masses: Vec<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub formats: Vec<Format>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw = RawConfig::parse(text)?;
        let (kl, kind_s) = raw.get("domain", "kind").cloned().unwrap_or((0, "box".into()));
        let kind = DomainKind::parse(&kind_s).ok_or_else(|| syntax(kl, format!("unknown domain kind `{kind_s}`")))?;
        let n: usize = raw.req("domain", "n")?;
        let nodes: usize = raw.num_or("domain", "nodes", 33)?;
        let lower = raw.num_or("domain", "lower", -1.0)?;
        let upper = raw.num_or("domain", "upper", 1.0)?;
        if upper.partial_cmp(&lower) != Some(std::cmp::Ordering::Greater) {
            let ln = raw.get("domain", "upper").map_or(0, |e| e.0);
            return Err(syntax(ln, "upper must exceed lower"));
        }
        let p: f64 = raw.req("exponents", "p")?;
        let gamma: f64 = raw.req("exponents", "gamma")?;
        let alpha = raw.num_or("exponents", "alpha", 0.0)?;

        let atoms = match raw.get("measure", "atoms") {
            None => Vec::new(),
            Some((ln, v)) => parse_points(v, n).map_err(|m| syntax(*ln, format!("`atoms`: {m}")))?,
        };
        let obstacle = parse_obstacle(&raw, n)?;
        let checks = match raw.get("verify", "checks") {
            None => Vec::new(),
            Some((ln, v)) => {
                let mut out = Vec::new();
                for c in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    if !CHECKS.contains(&c) {
                        return Err(syntax(*ln, format!("unknown check `{c}`")));
                    }
                    if !out.iter().any(|x| x == c) {
                        out.push(c.to_string());
                    }
                }
                out
            }
        };
        let balls = match raw.get("verify", "balls") {
            None => Vec::new(),
            Some((ln, v)) => parse_points(v, n).map_err(|m| syntax(*ln, format!("`balls`: {m}")))?,
        };
        let boundary_balls = match raw.get("verify", "boundary_balls") {
            None => Vec::new(),
            Some((ln, v)) => parse_points(v, n).map_err(|m| syntax(*ln, format!("`boundary_balls`: {m}")))?,
        };
        let lorentz = match raw.get("verify", "lorentz") {
            None => vec![(2.0, Some(2.0)), (2.0, None), (1.5, Some(3.0))],
            Some((ln, v)) => parse_lorentz(v).map_err(|m| syntax(*ln, format!("`lorentz`: {m}")))?,
        };
        let lambda_grid = match raw.get("sweep", "lambda_grid") {
            None => LambdaGrid::Auto,
            Some((_, v)) if v == "auto" => LambdaGrid::Auto,
            Some((ln, v)) => {
                let g = parse_floats(v).map_err(|m| syntax(*ln, format!("`lambda_grid`: {m}")))?;
                if g.is_empty() {
                    return Err(syntax(*ln, "`lambda_grid` is empty"));
                }
                LambdaGrid::Explicit(g)
            }
        };
        let resolutions = match raw.list("sweep", "resolutions")? {
            None => vec![nodes],
            Some(v) => {
                let ln = raw.get("sweep", "resolutions").unwrap().0;
                v.iter()
                    .map(|&x| {
                        if x >= 3.0 && x.fract() == 0.0 {
                            Ok(x as usize)
                        } else {
                            Err(syntax(ln, format!("resolution `{x}` must be an integer >= 3")))
                        }
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        let formats = match raw.get("output", "formats") {
            None => vec![Format::Csv, Format::Json],
            Some((ln, v)) => Format::parse_list(v).map_err(|m| syntax(*ln, m))?,
        };
        Ok(ExperimentConfig {
            kind,
            n,
            nodes,
            lower,
            upper,
            p,
            gamma,
            alpha,
            a: raw.num("exponents", "a")?,
            epsilon: raw.num("exponents", "epsilon")?,
            delta: raw.num("exponents", "delta")?,
            r0: raw.num("exponents", "r0")?,
            upsilon: raw.num("exponents", "upsilon")?,
            atoms,
            density: raw.num_or("measure", "density", 0.0)?,
            mollify: raw.num_or("measure", "mollify", 4)?,
            obstacle,
            tol: raw.num_or("solver", "tol", 1e-8)?,
            max_iter: raw.num_or("solver", "max_iter", 200_000)?,
            eps_reg: raw.num_or("solver", "eps_reg", oll_core::solver::EPS_REG)?,
            sola_levels: raw.num_or("solver", "sola_levels", 5)?,
            checks,
            kappa1: raw.num_or("verify", "kappa1", 0.1)?,
            kappa2: raw.num_or("verify", "kappa2", 0.1)?,
            balls,
            boundary_balls,
            lorentz,
            band: raw.num_or("verify", "band", oll_core::verifier::DEFAULT_BAND)?,
            lambda_grid,
            eps_list: raw.list("sweep", "eps_list")?.unwrap_or_else(|| vec![0.5, 0.25, 0.125]),
            resolutions,
            masses: raw.list("sweep", "masses")?.unwrap_or_else(|| vec![0.5, 1.0, 2.0]),
            out_dir: raw.get("output", "dir").map(|(_, v)| PathBuf::from(v)),
            seed: raw.num_or("output", "seed", 0)?,
            formats,
        })
    }

    pub fn has(&self, check: &str) -> bool {
        self.checks.iter().any(|c| c == check)
    }
}

fn parse_obstacle(raw: &RawConfig, n: usize) -> Result<ObstacleShape<f64>, ConfigError> {
    let Some((ln, shape)) = raw.get("obstacle", "shape") else {
        return Ok(ObstacleShape::None);
    };
    if shape == "none" {
        return Ok(ObstacleShape::None);
    }
    let center = match raw.list("obstacle", "center")? {
        Some(c) => c,
        None => vec![0.0; n],
    };
    if center.len() != n {
        let cl = raw.get("obstacle", "center").map_or(*ln, |e| e.0);
        return Err(syntax(cl, format!("obstacle centre needs {n} coordinates")));
    }
    let height = raw.num_or("obstacle", "height", 0.05)?;
    let width = raw.num_or("obstacle", "width", 0.5)?;
    match shape.as_str() {
        "paraboloid" => Ok(ObstacleShape::Paraboloid { center, height, width }),
        "cone" => Ok(ObstacleShape::Cone { center, height, width }),
        "plateau" => Ok(ObstacleShape::Plateau { center, height, width }),
        other => Err(syntax(*ln, format!("unknown obstacle shape `{other}`"))),
    }
}

/// `q:s` pairs separated by `|`; `s = inf` for the weak space.
fn parse_lorentz(v: &str) -> Result<Vec<(f64, Option<f64>)>, String> {
    v.split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (q, s) = item.split_once(':').ok_or_else(|| format!("`{item}` needs the form `q:s`"))?;
            let q = q.trim().parse::<f64>().map_err(|_| format!("cannot parse `{}`", q.trim()))?;
            let s = match s.trim() {
                "inf" | "oo" => None,
                t => Some(t.parse::<f64>().map_err(|_| format!("cannot parse `{t}`"))?),
            };
            Ok((q, s))
        })
        .collect()
}
