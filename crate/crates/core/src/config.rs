//! Flat `key = value` run configuration.
//!
//! ```text
//! # 64x64 cells, two-circle initial data
//! nx = 64
//! ny = 64
//! eps = 0.05
//! tau = 5e-7
//! t_end = 5e-5
//! snapshot_times = 0, 2.5e-5, 5e-5
//! ```
//!
//! Unknown keys are rejected, and the whole file is validated before a
//! config is returned.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::potential::{build_truncated_potential, PotentialSpec};
use crate::sav::initial_condition;

const KEYS: &[&str] = &[
    "nx",
    "ny",
    "lx",
    "ly",
    "eps",
    "tau",
    "t_end",
    "c0",
    "M",
    "solver_tol",
    "snapshot_times",
    "output_dir",
    "seed",
    "initial",
];

const REQUIRED: &[&str] = &["nx", "ny", "eps", "tau", "t_end"];

/// Initial data for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// Product of two tanh profiles around circles of radius 0.1 and 0.125.
    TwoCircles,
    Constant(f64),
    /// Uniform noise in `[-amp, amp]` drawn from the config seed.
    Random(f64),
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TwoCircles => write!(f, "two_circles"),
            Self::Constant(c) => write!(f, "constant:{c}"),
            Self::Random(a) => write!(f, "random:{a}"),
        }
    }
}

impl FromStr for InitialCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "two_circles" {
            return Ok(Self::TwoCircles);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `two_circles`, `constant:<c>` or `random:<amp>`, got `{s}`"))?;
        let x: f64 = arg
            .trim()
            .parse()
            .map_err(|_| format!("bad number `{}`", arg.trim()))?;
        if !x.is_finite() {
            return Err(format!("non-finite value `{arg}`"));
        }
        match kind.trim() {
            "constant" => Ok(Self::Constant(x)),
            "random" if x > 0.0 => Ok(Self::Random(x)),
            "random" => Err("random amplitude must be positive".into()),
            other => Err(format!("unknown initial condition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub eps: f64,
    pub tau: f64,
    pub t_end: f64,
    pub c0: f64,
    pub m: f64,
    pub solver_tol: f64,
    pub snapshot_times: Vec<f64>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub initial: InitialCondition,
}

impl RunConfig {
    /// A config with every optional key at its default.
    pub fn new(nx: usize, ny: usize, eps: f64, tau: f64, t_end: f64) -> Self {
        Self {
            nx,
            ny,
            lx: 1.0,
            ly: 1.0,
            eps,
            tau,
            t_end,
            c0: 1.0,
            m: 2.0,
            solver_tol: 1e-12,
            snapshot_times: Vec::new(),
            output_dir: PathBuf::from("output"),
            seed: 0,
            initial: InitialCondition::TwoCircles,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_err(key, format!("must be positive and finite, got {v}")))
            }
        };
        if self.nx < 2 {
            return Err(config_err("nx", format!("must be at least 2, got {}", self.nx)));
        }
        if self.ny < 2 {
            return Err(config_err("ny", format!("must be at least 2, got {}", self.ny)));
        }
        positive("lx", self.lx)?;
        positive("ly", self.ly)?;
        positive("eps", self.eps)?;
        positive("tau", self.tau)?;
        positive("t_end", self.t_end)?;
        positive("c0", self.c0)?;
        positive("solver_tol", self.solver_tol)?;
        if !(self.m.is_finite() && self.m > 1.0) {
            return Err(config_err("M", format!("must exceed 1, got {}", self.m)));
        }
        if self.steps() == 0 {
            return Err(config_err(
                "t_end",
                format!("t_end / tau = {} rounds to zero steps", self.t_end / self.tau),
            ));
        }
        for &t in &self.snapshot_times {
            if !(t.is_finite() && t >= 0.0 && t <= self.t_end * (1.0 + 1e-12)) {
                return Err(config_err(
                    "snapshot_times",
                    format!("time {t} outside [0, t_end]"),
                ));
            }
        }
        Ok(())
    }

    /// Number of time steps, `t_end / tau` rounded to the nearest integer.
    pub fn steps(&self) -> usize {
        (self.t_end / self.tau).round() as usize
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny, self.lx, self.ly)
    }

    pub fn potential(&self) -> Result<PotentialSpec> {
        build_truncated_potential(self.m, self.c0)
    }

    pub fn initial_field(&self) -> Result<ScalarField> {
        let grid = self.grid()?;
        Ok(match self.initial {
            InitialCondition::TwoCircles => initial_condition(&grid, self.eps)?,
            InitialCondition::Constant(c) => ScalarField::constant(grid, c),
            InitialCondition::Random(amp) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let v = (0..grid.len()).map(|_| rng.gen_range(-amp..amp)).collect();
                ScalarField::from_values(grid, v)?
            }
        })
    }

    /// Step indices at which snapshots are due, deduplicated and sorted.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .snapshot_times
            .iter()
            .map(|t| ((t / self.tau).round() as usize).min(self.steps()))
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn suggest(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .filter(|(d, k)| *d <= 2 || (k.len() >= 2 && key.starts_with(k)) || k.starts_with(key))
        .min_by_key(|(d, _)| *d)
        .map(|(_, k)| k)
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| config_err(key, format!("cannot parse `{raw}`")))
}

/// Parses config text. Nothing is returned unless the whole file is valid.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(0, 0, 0.0, 0.0, 0.0);
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = match line.find('#') {
            Some(p) => &line[..p],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, raw) = line.split_once('=').ok_or(Error::Parse {
            line: lineno + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let (key, raw) = (key.trim(), raw.trim());
        if !KEYS.contains(&key) {
            let hint = match suggest(key) {
                Some(k) => format!(" (did you mean `{k}`?)"),
                None => String::new(),
            };
            return Err(config_err(key, format!("unknown key{hint}")));
        }
        if !seen.insert(key.to_string()) {
            return Err(config_err(key, "given more than once"));
        }
        match key {
            "nx" => cfg.nx = parse_value(key, raw)?,
            "ny" => cfg.ny = parse_value(key, raw)?,
            "lx" => cfg.lx = parse_value(key, raw)?,
            "ly" => cfg.ly = parse_value(key, raw)?,
            "eps" => cfg.eps = parse_value(key, raw)?,
            "tau" => cfg.tau = parse_value(key, raw)?,
            "t_end" => cfg.t_end = parse_value(key, raw)?,
            "c0" => cfg.c0 = parse_value(key, raw)?,
            "M" => cfg.m = parse_value(key, raw)?,
            "solver_tol" => cfg.solver_tol = parse_value(key, raw)?,
            "seed" => cfg.seed = parse_value(key, raw)?,
            "output_dir" => cfg.output_dir = PathBuf::from(raw),
            "initial" => cfg.initial = raw.parse().map_err(|m: String| config_err(key, m))?,
            "snapshot_times" => {
                cfg.snapshot_times = raw
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect::<Result<_>>()?;
            }
            _ => unreachable!("key list and match arms disagree"),
        }
    }
    for key in REQUIRED {
        if !seen.contains(*key) {
            return Err(config_err(key, "required key is missing"));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "nx=64\nny=64\neps=0.05\ntau=5e-7\nt_end=5e-5\n";

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.nx, 64);
        assert_eq!(cfg.lx, 1.0);
        assert_eq!(cfg.ly, 1.0);
        assert_eq!(cfg.c0, 1.0);
        assert_eq!(cfg.m, 2.0);
        assert_eq!(cfg.solver_tol, 1e-12);
        assert_eq!(cfg.steps(), 100);
        assert_eq!(cfg.initial, InitialCondition::TwoCircles);
    }

    #[test]
    fn comments_and_lists() {
        let text = format!(
            "# header\n{MINIMAL}snapshot_times = 0, 2.5e-5 ,5e-5 # trailing\ninitial = constant:0.25\n"
        );
        let cfg = parse_config_str(&text).unwrap();
        assert_eq!(cfg.snapshot_times, vec![0.0, 2.5e-5, 5e-5]);
        assert_eq!(cfg.snapshot_steps(), vec![0, 50, 100]);
        assert_eq!(cfg.initial, InitialCondition::Constant(0.25));
    }

    #[test]
    fn negative_eps_names_key() {
        let text = MINIMAL.replace("eps=0.05", "eps=-1");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "eps");
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let text = format!("{MINIMAL}epsilon=0.1\n");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("epsilon") && err.contains("`eps`"), "{err}");

        let err = parse_config_str(&format!("{MINIMAL}t_edn=1\n")).unwrap_err().to_string();
        assert!(err.contains("`t_end`"), "{err}");

        let err = parse_config_str(&format!("{MINIMAL}banana=1\n")).unwrap_err().to_string();
        assert!(!err.contains("did you mean"), "{err}");
    }

    #[test]
    fn missing_and_unparsable() {
        let text = MINIMAL.replace("tau=5e-7\n", "");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "tau");
        let text = MINIMAL.replace("nx=64", "nx=sixty");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "nx");
        let text = format!("{MINIMAL}M=0.5\n");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "M");
        let text = format!("{MINIMAL}nx=32\n");
        assert_eq!(key_of(parse_config_str(&text).unwrap_err()), "nx");
        assert!(matches!(
            parse_config_str("nx 64").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn random_initial_is_seeded() {
        let text = format!("{MINIMAL}initial=random:0.1\nseed=7\n");
        let cfg = parse_config_str(&text).unwrap();
        let a = cfg.initial_field().unwrap();
        let b = cfg.initial_field().unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs() <= 0.1);
    }
}
