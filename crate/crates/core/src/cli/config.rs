//! Key-value experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment and values may be
//! wrapped in double quotes. Recognized keys (defaults in parentheses):
//!
//! | key | meaning |
//! |-----|---------|
//! | `system.name` | `linear`, `cubic` or `pure_noise` (required) |
//! | `system.kappa0`, `system.a`, `system.btilde`, `system.s` | linear coefficients (0.1, 2, 0.25, 0.25) |
//! | `segment.value` | constant initial segment value (1) |
//! | `grid.tau`, `grid.T`, `grid.m` | delay, horizon, steps per delay (1, 20, 10) |
//! | `scheme.kind`, `scheme.alpha` | `tamed` or `classic`, taming exponent (tamed, 0.5) |
//! | `ensemble.N`, `ensemble.seed` | path count and seed (1000, 0) |
//! | `stability.lambda1`, `.lambda2`, `.lambda3` | sigma-condition constants (3, 1, 0.1) |
//! | `stability.K_tilde` | coercivity constant (0.1) |
//! | `stability.kappa` | contraction constant of `D` (the system's own) |
//! | `stability.window` | trailing window fraction for exponent fits (0.5) |
//! | `out.dir` | output directory (`out`) |

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use super::builtin::BuiltinSystem;
use crate::grid::TimeGrid;
use crate::model::StabilityParams;
use crate::scheme::{SchemeConfig, SchemeKind};
use crate::{Error, Result};

pub const KEYS: &[&str] = &[
    "system.name",
    "system.kappa0",
    "system.a",
    "system.btilde",
    "system.s",
    "segment.value",
    "grid.tau",
    "grid.T",
    "grid.m",
    "scheme.kind",
    "scheme.alpha",
    "ensemble.N",
    "ensemble.seed",
    "stability.lambda1",
    "stability.lambda2",
    "stability.lambda3",
    "stability.K_tilde",
    "stability.kappa",
    "stability.window",
    "out.dir",
];

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: BuiltinSystem,
    /// Constant value of the initial segment.
    pub segment_value: f64,
    pub grid: TimeGrid,
    pub scheme: SchemeConfig,
    pub paths: usize,
    pub seed: u64,
    pub stability: StabilityParams,
    pub k_tilde: f64,
    pub kappa: f64,
    pub window_fraction: f64,
    pub out_dir: PathBuf,
}

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("{key}: expected a finite number, got `{raw}`"))),
        }
    }

    fn int_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: expected a nonnegative integer, got `{raw}`"))),
        }
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        if map.insert(key.to_string(), unquote(value.trim()).to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    let mut e = Entries(map);

    let name = e
        .take("system.name")
        .ok_or_else(|| Error::Config("system.name is required".into()))?;
    let system = match name.as_str() {
        "linear" => BuiltinSystem::linear(
            e.f64_or("system.kappa0", 0.1)?,
            e.f64_or("system.a", 2.0)?,
            e.f64_or("system.btilde", 0.25)?,
            e.f64_or("system.s", 0.25)?,
        )?,
        "cubic" => BuiltinSystem::Cubic,
        "pure_noise" => BuiltinSystem::PureNoise,
        other => {
            return Err(Error::Config(format!(
                "system.name must be one of linear, cubic, pure_noise; got `{other}`"
            )))
        }
    };
    if !matches!(system, BuiltinSystem::Linear { .. }) {
        for key in ["system.kappa0", "system.a", "system.btilde", "system.s"] {
            if e.take(key).is_some() {
                return Err(Error::Config(format!("{key} only applies to the linear system")));
            }
        }
    }

    let segment_value = e.f64_or("segment.value", 1.0)?;
    let grid = TimeGrid::new(
        e.f64_or("grid.tau", 1.0)?,
        e.f64_or("grid.T", 20.0)?,
        e.int_or("grid.m", 10usize)?,
    )?;
    let kind: SchemeKind = e.take("scheme.kind").as_deref().unwrap_or("tamed").parse()?;
    let scheme = SchemeConfig::new(kind, e.f64_or("scheme.alpha", 0.5)?)?;

    let paths = e.int_or("ensemble.N", 1000usize)?;
    if paths < 2 {
        return Err(Error::Config(format!("ensemble.N must be at least 2, got {paths}")));
    }
    let seed = e.int_or("ensemble.seed", 0u64)?;

    let stability = StabilityParams::new(
        e.f64_or("stability.lambda1", 3.0)?,
        e.f64_or("stability.lambda2", 1.0)?,
        e.f64_or("stability.lambda3", 0.1)?,
    )?;
    let k_tilde = e.f64_or("stability.K_tilde", 0.1)?;
    if !(k_tilde > 0.0) {
        return Err(Error::Config(format!("stability.K_tilde must be positive, got {k_tilde}")));
    }
    let kappa = e.f64_or("stability.kappa", system.neutral_contraction())?;
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::Config(format!("stability.kappa must lie in [0, 1), got {kappa}")));
    }
    let window_fraction = e.f64_or("stability.window", 0.5)?;
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "stability.window must lie in (0, 1], got {window_fraction}"
        )));
    }
    let out_dir = PathBuf::from(e.take("out.dir").unwrap_or_else(|| "out".into()));
    debug_assert!(e.0.is_empty(), "unconsumed keys {:?}", e.0);

    Ok(ExperimentConfig {
        system,
        segment_value,
        grid,
        scheme,
        paths,
        seed,
        stability,
        k_tilde,
        kappa,
        window_fraction,
        out_dir,
    })
}

impl fmt::Display for ExperimentConfig {
    /// Resolved configuration in the input syntax.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "system.name = {}", self.system.name())?;
        if let BuiltinSystem::Linear { kappa0, a, btilde, s } = self.system {
            writeln!(f, "system.kappa0 = {kappa0}")?;
            writeln!(f, "system.a = {a}")?;
            writeln!(f, "system.btilde = {btilde}")?;
            writeln!(f, "system.s = {s}")?;
        }
        writeln!(f, "segment.value = {}", self.segment_value)?;
        writeln!(f, "grid.tau = {}", self.grid.tau())?;
        writeln!(f, "grid.T = {}", self.grid.t_end())?;
        writeln!(f, "grid.m = {}", self.grid.lag())?;
        writeln!(f, "scheme.kind = {}", self.scheme.kind())?;
        writeln!(f, "scheme.alpha = {}", self.scheme.alpha())?;
        writeln!(f, "ensemble.N = {}", self.paths)?;
        writeln!(f, "ensemble.seed = {}", self.seed)?;
        writeln!(f, "stability.lambda1 = {}", self.stability.lambda1)?;
        writeln!(f, "stability.lambda2 = {}", self.stability.lambda2)?;
        writeln!(f, "stability.lambda3 = {}", self.stability.lambda3)?;
        writeln!(f, "stability.K_tilde = {}", self.k_tilde)?;
        writeln!(f, "stability.kappa = {}", self.kappa)?;
        writeln!(f, "stability.window = {}", self.window_fraction)?;
        writeln!(f, "out.dir = {}", self.out_dir.display())
    }
}
