//! Run configuration files.
//!
//! The grammar is line based:
//!
//! ```text
//! # comment
//! key = value
//! ```
//!
//! Blank lines and lines starting with `#` are ignored, keys are
//! case-sensitive and may appear once. Relative paths are resolved against
//! the directory of the configuration file. Recognised keys:
//!
//! | key | value |
//! |-----|-------|
//! | `data`, `prevalence`, `out_dir` | paths |
//! | `seed`, `n_iter`, `burn_in`, `thin`, `chains` | non-negative integers |
//! | `a_theta`, `b_theta`, `a_q` | positive numbers |
//! | `a_alpha`, `a_r` | a number, or comma-separated numbers (one per source or type) |
//! | `fixed_r` | `true` or `false` |
//! | `sweep_order` | `fixed` or `random` |
//! | `interval` | `percentile` or `chen-shao` |
//! | `ci_alpha` | interval level is `1 - ci_alpha` |
//! | `data_sha256`, `prevalence_sha256` | expected file digests (hex) |
//! | `version` | program version that wrote the file (informational) |
//!
//! Run manifests are written in this grammar, so a manifest can be passed
//! back as `--config` to repeat a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use halddp::data::{Concentration, Priors};
use halddp::posterior::IntervalMethod;
use halddp::samplers::SweepOrder;
use halddp::{Error, Result};

const KEYS: [&str; 21] = [
    "data",
    "prevalence",
    "out_dir",
    "seed",
    "n_iter",
    "burn_in",
    "thin",
    "chains",
    "a_theta",
    "b_theta",
    "a_q",
    "a_alpha",
    "a_r",
    "fixed_r",
    "sweep_order",
    "interval",
    "ci_alpha",
    "data_sha256",
    "prevalence_sha256",
    "version",
    "removed_types",
];

/// Parsed key-value pairs with the line each came from.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub path: Option<PathBuf>,
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Validation(format!(
                    "line {}: expected `key = value`, found `{line}`",
                    n + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Validation(format!(
                    "line {}: unknown key `{key}`; valid keys are: {}",
                    n + 1,
                    KEYS.join(", ")
                )));
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (n + 1, value.to_string())) {
                return Err(Error::Validation(format!(
                    "line {}: key `{key}` already set on line {first}",
                    n + 1
                )));
            }
        }
        Ok(Self {
            path: None,
            entries,
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn context(&self, key: &str) -> String {
        let line = self.entries.get(key).map_or(0, |(n, _)| *n);
        match &self.path {
            Some(p) => format!("{}: line {line}", p.display()),
            None => format!("line {line}"),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Validation(format!("{}: `{key}` cannot be `{v}`", self.context(key)))
            }),
        }
    }

    pub fn path_value(&self, key: &str) -> Option<PathBuf> {
        let v = PathBuf::from(self.raw(key)?);
        if v.is_absolute() {
            return Some(v);
        }
        match self.path.as_ref().and_then(|p| p.parent()) {
            Some(dir) => Some(dir.join(v)),
            None => Some(v),
        }
    }

    pub fn concentration(&self, key: &str) -> Result<Option<Concentration>> {
        self.raw(key)
            .map(|v| {
                parse_concentration(v).map_err(|msg| {
                    Error::Validation(format!("{}: `{key}` {msg}", self.context(key)))
                })
            })
            .transpose()
    }
}

pub fn parse_concentration(v: &str) -> std::result::Result<Concentration, String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let nums = parts
        .iter()
        .map(|p| p.parse::<f64>())
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|_| format!("cannot be `{v}`"))?;
    Ok(if nums.len() == 1 {
        Concentration::Symmetric(nums[0])
    } else {
        Concentration::Vector(nums)
    })
}

pub fn parse_sweep_order(v: &str) -> std::result::Result<SweepOrder, String> {
    match v {
        "fixed" => Ok(SweepOrder::Fixed),
        "random" => Ok(SweepOrder::Random),
        _ => Err(format!(
            "unknown sweep order `{v}`; use `fixed` or `random`"
        )),
    }
}

fn sweep_order_name(o: SweepOrder) -> &'static str {
    match o {
        SweepOrder::Fixed => "fixed",
        SweepOrder::Random => "random",
    }
}

fn concentration_text(c: &Concentration) -> String {
    match c {
        Concentration::Symmetric(a) => format!("{a:?}"),
        Concentration::Vector(v) => v
            .iter()
            .map(|a| format!("{a:?}"))
            .collect::<Vec<_>>()
            .join(","),
    }
}

/// Everything needed to repeat a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub prevalence: PathBuf,
    pub out_dir: PathBuf,
    pub priors: Priors,
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: u64,
    pub thin: u64,
    pub chains: usize,
    pub fixed_r: bool,
    pub sweep_order: SweepOrder,
    pub interval: IntervalMethod,
    pub ci_alpha: f64,
}

/// Run manifest: the configuration plus provenance of the inputs.
pub struct Manifest<'a> {
    pub config: &'a RunConfig,
    pub data_sha256: String,
    pub prevalence_sha256: String,
    pub removed_types: Vec<String>,
}

impl Manifest<'_> {
    pub fn render(&self) -> String {
        let c = self.config;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("version", env!("CARGO_PKG_VERSION").to_string());
        kv("data", c.data.display().to_string());
        kv("data_sha256", self.data_sha256.clone());
        kv("prevalence", c.prevalence.display().to_string());
        kv("prevalence_sha256", self.prevalence_sha256.clone());
        kv("out_dir", c.out_dir.display().to_string());
        kv("seed", c.seed.to_string());
        kv("chains", c.chains.to_string());
        kv("n_iter", c.n_iter.to_string());
        kv("burn_in", c.burn_in.to_string());
        kv("thin", c.thin.to_string());
        kv("a_theta", format!("{:?}", c.priors.a_theta));
        kv("b_theta", format!("{:?}", c.priors.b_theta));
        kv("a_alpha", concentration_text(&c.priors.a_alpha));
        kv("a_r", concentration_text(&c.priors.a_r));
        kv("a_q", format!("{:?}", c.priors.a_q));
        kv("fixed_r", c.fixed_r.to_string());
        kv("sweep_order", sweep_order_name(c.sweep_order).to_string());
        kv("interval", c.interval.name().to_string());
        kv("ci_alpha", format!("{:?}", c.ci_alpha));
        kv("removed_types", self.removed_types.join(","));
        s
    }
}

/// SHA-256 of a file, as lowercase hex.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
