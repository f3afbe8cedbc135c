//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use lagmhd::diophantine::{DEFAULT_TAU, DEFAULT_TRUNCATION};
use lagmhd::{
    certify_direction, sample_direction, DiophantineError, Direction, DirectionKind, EvolutionError, PhysicalParams,
    Provenance, Scheme, SimConfig,
};
use thiserror::Error;

const KEYS: &[&str] = &[
    "grid_n",
    "dt",
    "t_end",
    "nu",
    "m",
    "rho",
    "mu",
    "lambda",
    "varpi",
    "omega",
    "tau",
    "truncation",
    "epsilon",
    "u_amplitude",
    "seed",
    "scheme",
    "pressure_tol",
    "pressure_max_iter",
    "project_cadence",
    "restore_tol",
    "guard",
    "hierarchy_s",
    "record_every",
    "checkpoint_every",
    "linear_only",
    "m_list",
    "out_dir",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    Duplicate(String),
    #[error("missing mandatory key {0:?}")]
    Missing(&'static str),
    #[error("{key}: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("direction not certified: {0}")]
    Certification(#[from] DiophantineError),
    #[error(transparent)]
    Sim(#[from] EvolutionError),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Certification(_) => "certification",
            _ => "config",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OmegaSpec {
    Algebraic,
    Random,
    Vector([f64; 3]),
}

/// Parsed but not yet certified configuration.
#[derive(Clone, Debug)]
pub struct RawConfig {
    /// Every recognized entry, trimmed, in key order.
    pub entries: BTreeMap<String, String>,
    pub omega: OmegaSpec,
    pub tau: f64,
    pub truncation: u32,
    pub seed: u64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub out_dir: PathBuf,
    pub m_list: Vec<f64>,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub entries: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

fn num<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &'static str) -> Result<Option<T>, ConfigError> {
    match entries.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| ConfigError::Invalid { key, msg: format!("cannot parse {v:?}") }),
    }
}

fn required<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &'static str) -> Result<T, ConfigError> {
    num(entries, key)?.ok_or(ConfigError::Missing(key))
}

fn parse_floats(key: &'static str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| ConfigError::Invalid { key, msg: format!("cannot parse {s:?}") }))
        .collect()
}

/// Splits lines into entries; `#` starts a comment.
pub fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    let mut entries = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1, msg: "expected key = value".into() });
        };
        let (k, v) = (k.trim(), v.trim().trim_matches('"'));
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        if v.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, msg: format!("empty value for {k}") });
        }
        if entries.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Duplicate(k.to_string()));
        }
    }
    let mut warnings = Vec::new();
    let omega = match entries.get("omega").map(String::as_str) {
        None | Some("algebraic") => OmegaSpec::Algebraic,
        Some("random") => OmegaSpec::Random,
        Some(v) => {
            let xs = parse_floats("omega", v)?;
            let [x, y, z] = xs[..] else {
                return Err(ConfigError::Invalid { key: "omega", msg: format!("expected three components, got {}", xs.len()) });
            };
            let norm = (x * x + y * y + z * z).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(ConfigError::Invalid { key: "omega", msg: "zero or non-finite vector".into() });
            }
            if (norm - 1.0).abs() > 1e-12 {
                warnings.push(format!("omega had norm {norm}; normalized"));
            }
            OmegaSpec::Vector([x / norm, y / norm, z / norm])
        }
    };
    let tau = num(&entries, "tau")?.unwrap_or(DEFAULT_TAU);
    let truncation = num(&entries, "truncation")?.unwrap_or(DEFAULT_TRUNCATION);
    let seed = num(&entries, "seed")?.unwrap_or(0);
    Ok(RawConfig { entries, omega, tau, truncation, seed, warnings })
}

impl RawConfig {
    /// Certifies the configured direction.
    pub fn direction(&self) -> Result<Direction, ConfigError> {
        let d = match self.omega {
            OmegaSpec::Algebraic => certify_direction(Direction::algebraic_omega(), self.tau, self.truncation)
                .map(|d| Direction { provenance: Provenance::Algebraic, ..d })?,
            OmegaSpec::Random => {
                let d = sample_direction(DirectionKind::Random, self.seed)?;
                certify_direction(d.omega, self.tau, self.truncation).map(|c| Direction { provenance: Provenance::Random, ..c })?
            }
            OmegaSpec::Vector(w) => certify_direction(w, self.tau, self.truncation)?,
        };
        Ok(d)
    }
}

/// Parses, certifies the direction and validates.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw = parse_raw(text)?;
    let e = &raw.entries;
    let n: usize = required(e, "grid_n")?;
    let dt: f64 = required(e, "dt")?;
    let t_end: f64 = required(e, "t_end")?;
    let direct = ["nu", "m"].iter().any(|k| e.contains_key(*k));
    let physical = ["rho", "mu", "lambda", "varpi"].iter().any(|k| e.contains_key(*k));
    let (nu, m, params) = match (direct, physical) {
        (true, true) => {
            return Err(ConfigError::Invalid { key: "m", msg: "give either nu and m or rho, mu, lambda and varpi".into() })
        }
        (false, true) => {
            let p = PhysicalParams {
                rho: required(e, "rho")?,
                mu: required(e, "mu")?,
                lambda: required(e, "lambda")?,
                varpi: required(e, "varpi")?,
            };
            if !(p.rho > 0.0) || !(p.lambda >= 0.0) {
                return Err(ConfigError::Invalid { key: "rho", msg: "rho must be positive and lambda nonnegative".into() });
            }
            (p.nu(), p.m(), Some(p))
        }
        _ => (required(e, "nu")?, required(e, "m")?, None),
    };
    let direction = raw.direction()?;
    let mut sim = SimConfig::new_unchecked(n, dt, t_end, nu, m, direction);
    sim.params = params;
    sim.seed = raw.seed;
    if let Some(v) = num(e, "epsilon")? {
        sim.epsilon = v;
    }
    if let Some(v) = num(e, "u_amplitude")? {
        sim.u_amplitude = v;
    }
    if let Some(v) = e.get("scheme") {
        sim.scheme = v.parse::<Scheme>().map_err(|msg| ConfigError::Invalid { key: "scheme", msg })?;
    }
    if let Some(v) = num(e, "pressure_tol")? {
        sim.pressure_tol = v;
    }
    if let Some(v) = num(e, "pressure_max_iter")? {
        sim.pressure_max_iter = v;
    }
    if let Some(v) = num(e, "project_cadence")? {
        sim.project_cadence = v;
    }
    if let Some(v) = num(e, "restore_tol")? {
        sim.restore_tol = v;
    }
    if let Some(v) = num(e, "guard")? {
        sim.guard = v;
    }
    if let Some(v) = num(e, "hierarchy_s")? {
        sim.hierarchy_s = v;
        if v == 0 {
            return Err(ConfigError::Invalid { key: "hierarchy_s", msg: "must be positive".into() });
        }
    }
    if let Some(v) = num(e, "record_every")? {
        sim.record_every = v;
    }
    if let Some(v) = num::<bool>(e, "linear_only")? {
        sim.nonlinear = !v;
    }
    sim.validate()?;
    let checkpoint_every = num(e, "checkpoint_every")?.unwrap_or(0);
    if checkpoint_every % sim.record_every != 0 {
        return Err(ConfigError::Invalid { key: "checkpoint_every", msg: "must be a multiple of record_every".into() });
    }
    let m_list = match e.get("m_list") {
        Some(v) => parse_floats("m_list", v)?,
        None => vec![8.0, 16.0, 32.0, 64.0],
    };
    if m_list.len() < 2 || m_list.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(ConfigError::Invalid { key: "m_list", msg: "need at least two positive values".into() });
    }
    let out_dir = PathBuf::from(e.get("out_dir").map(String::as_str).unwrap_or("out"));
    Ok(RunConfig { sim, out_dir, m_list, checkpoint_every, entries: raw.entries.clone(), warnings: raw.warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "grid_n = 16\ndt = 1e-3\nt_end = 5\nnu = 1\nm = 16\n";

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.sim.scheme, Scheme::IfRk2);
        assert_eq!(c.sim.hierarchy_s, 2);
        assert_eq!(c.sim.direction.provenance, Provenance::Algebraic);
        assert_eq!(c.sim.direction.omega, Direction::algebraic_omega());
        assert_eq!(c.m_list, vec![8.0, 16.0, 32.0, 64.0]);
        assert_eq!(c.sim, SimConfig::baseline());
    }

    #[test]
    fn algebraic_keyword() {
        let c = parse_config(&format!("{MINIMAL}omega = algebraic # pinned\n")).unwrap();
        assert_eq!(c.sim.direction.omega, Direction::algebraic_omega());
    }

    #[test]
    fn physical_parameters_normalize() {
        let text = format!(
            "grid_n = 16\ndt = 1e-3\nt_end = 1\nrho = 1\nlambda = {}\nvarpi = 16\nmu = 1\n",
            4.0 * std::f64::consts::PI
        );
        let c = parse_config(&text).unwrap();
        assert!((c.sim.m - 16.0).abs() < 1e-14);
        assert_eq!(c.sim.nu, 1.0);
        assert!(c.sim.params.is_some());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_config("grid_n = 16\n"), Err(ConfigError::Missing("dt"))));
        assert!(matches!(parse_config(&format!("{MINIMAL}colour = red\n")), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(parse_config(&format!("{MINIMAL}nu = 2\n")), Err(ConfigError::Duplicate(_))));
        assert!(matches!(parse_config("grid_n 16\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_config(&MINIMAL.replace("1e-3", "0.5")), Err(ConfigError::Sim(_))));
        assert!(matches!(parse_config(&format!("{MINIMAL}rho = 1\n")), Err(ConfigError::Invalid { .. })));
        let e = parse_config(&format!("{MINIMAL}omega = 1, 0, 0\n")).unwrap_err();
        assert_eq!(e.kind(), "certification");
    }

    #[test]
    fn non_unit_omega_is_normalized_with_warning() {
        let w = Direction::algebraic_omega().map(|x| 2.0 * x);
        let c = parse_config(&format!("{MINIMAL}omega = {}, {}, {}\n", w[0], w[1], w[2])).unwrap();
        assert_eq!(c.warnings.len(), 1);
        let n: f64 = c.sim.direction.omega.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-15);
    }
}
