//! Flat `key = value` experiment configuration.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::diagnostics::ReferenceMode;
use crate::error::{Error, Result};
use crate::objective::DEFAULT_RHO;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub mu: f64,
    pub rho: f64,
    pub sigma_q2: f64,
    pub sigma_c2: f64,
    pub n_samples_per_agent: usize,
    pub batch_lo: usize,
    pub batch_hi: usize,
    pub epoch_lo: usize,
    pub epoch_hi: usize,
    pub iterations: usize,
    pub runs: usize,
    pub seed: u64,
    pub reference: ReferenceMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 20,
            l: 7,
            m: 2,
            mu: 0.1,
            rho: DEFAULT_RHO,
            sigma_q2: 0.0,
            sigma_c2: 0.1,
            n_samples_per_agent: 100,
            batch_lo: 10,
            batch_hi: 20,
            epoch_lo: 1,
            epoch_hi: 10,
            iterations: 1000,
            runs: 50,
            seed: 1,
            reference: ReferenceMode::Population,
        }
    }
}

pub const KEYS: [&str; 16] = [
    "k",
    "l",
    "m",
    "mu",
    "rho",
    "sigma_q2",
    "sigma_c2",
    "n_samples_per_agent",
    "batch_lo",
    "batch_hi",
    "epoch_lo",
    "epoch_hi",
    "iterations",
    "runs",
    "seed",
    "reference",
];

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str, what: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        key: key.to_string(),
        message: format!("expected {what}, found `{raw}`"),
    })
}

impl ExperimentConfig {
    fn set(&mut self, line: usize, key: &str, raw: &str) -> Result<()> {
        const INT: &str = "a non-negative integer";
        const REAL: &str = "a real number";
        match key {
            "k" => self.k = parse_value(line, key, raw, INT)?,
            "l" => self.l = parse_value(line, key, raw, INT)?,
            "m" => self.m = parse_value(line, key, raw, INT)?,
            "mu" => self.mu = parse_value(line, key, raw, REAL)?,
            "rho" => self.rho = parse_value(line, key, raw, REAL)?,
            "sigma_q2" => self.sigma_q2 = parse_value(line, key, raw, REAL)?,
            "sigma_c2" => self.sigma_c2 = parse_value(line, key, raw, REAL)?,
            "n_samples_per_agent" => self.n_samples_per_agent = parse_value(line, key, raw, INT)?,
            "batch_lo" => self.batch_lo = parse_value(line, key, raw, INT)?,
            "batch_hi" => self.batch_hi = parse_value(line, key, raw, INT)?,
            "epoch_lo" => self.epoch_lo = parse_value(line, key, raw, INT)?,
            "epoch_hi" => self.epoch_hi = parse_value(line, key, raw, INT)?,
            "iterations" => self.iterations = parse_value(line, key, raw, INT)?,
            "runs" => self.runs = parse_value(line, key, raw, INT)?,
            "seed" => self.seed = parse_value(line, key, raw, "a 64-bit unsigned integer")?,
            "reference" => {
                self.reference = raw.parse().map_err(|message| Error::Config {
                    line,
                    key: key.to_string(),
                    message,
                })?
            }
            other => {
                return Err(Error::Config {
                    line,
                    key: other.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Checks every invariant. `lines` maps keys to the line that set them so
    /// errors can point there; keys left at their default report line 0.
    fn check(&self, lines: &HashMap<String, usize>) -> Result<()> {
        let fail = |key: &str, message: String| {
            Err(Error::Config {
                line: lines.get(key).copied().unwrap_or(0),
                key: key.to_string(),
                message,
            })
        };
        if self.k == 0 {
            return fail("k", "need at least one agent (k >= 1)".into());
        }
        if self.l == 0 || self.l > self.k {
            return fail("l", format!("participants must satisfy 1 <= l <= k = {}", self.k));
        }
        if self.m == 0 {
            return fail("m", "model dimension must be positive".into());
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return fail("mu", "step size must be finite and non-negative".into());
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return fail("rho", "regularization must be finite and positive".into());
        }
        if !(self.sigma_q2 >= 0.0) || !self.sigma_q2.is_finite() {
            return fail("sigma_q2", "variance must be finite and non-negative".into());
        }
        if !(self.sigma_c2 >= 0.0) || !self.sigma_c2.is_finite() {
            return fail("sigma_c2", "variance must be finite and non-negative".into());
        }
        if self.n_samples_per_agent == 0 {
            return fail("n_samples_per_agent", "need at least one sample per agent".into());
        }
        if self.batch_lo == 0 {
            return fail("batch_lo", "batch sizes must be at least 1".into());
        }
        if self.batch_hi < self.batch_lo {
            return fail(
                "batch_hi",
                format!("empty batch range [{}, {}]", self.batch_lo, self.batch_hi),
            );
        }
        if self.batch_hi > self.n_samples_per_agent {
            return fail(
                "batch_hi",
                format!(
                    "batch size must not exceed n_samples_per_agent = {}",
                    self.n_samples_per_agent
                ),
            );
        }
        if self.epoch_lo == 0 {
            return fail("epoch_lo", "epoch counts must be at least 1".into());
        }
        if self.epoch_hi < self.epoch_lo {
            return fail(
                "epoch_hi",
                format!("empty epoch range [{}, {}]", self.epoch_lo, self.epoch_hi),
            );
        }
        if self.iterations == 0 {
            return fail("iterations", "need at least one iteration".into());
        }
        if self.runs == 0 {
            return fail("runs", "need at least one run".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check(&HashMap::new())
    }

    /// Renders the config as a document that [`parse_config`] reads back to an
    /// identical value. Reals use Rust's shortest round-trip formatting.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        put("k", self.k.to_string());
        put("l", self.l.to_string());
        put("m", self.m.to_string());
        put("mu", format!("{:?}", self.mu));
        put("rho", format!("{:?}", self.rho));
        put("sigma_q2", format!("{:?}", self.sigma_q2));
        put("sigma_c2", format!("{:?}", self.sigma_c2));
        put("n_samples_per_agent", self.n_samples_per_agent.to_string());
        put("batch_lo", self.batch_lo.to_string());
        put("batch_hi", self.batch_hi.to_string());
        put("epoch_lo", self.epoch_lo.to_string());
        put("epoch_hi", self.epoch_hi.to_string());
        put("iterations", self.iterations.to_string());
        put("runs", self.runs.to_string());
        put("seed", self.seed.to_string());
        put("reference", self.reference.to_string());
        out
    }
}

/// Parses a configuration document. Blank lines and `#` comments are ignored;
/// missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut lines: HashMap<String, usize> = HashMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                key: content.to_string(),
                message: "expected `key = value`".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(first) = lines.get(key) {
            return Err(Error::Config {
                line,
                key: key.to_string(),
                message: format!("duplicate key (first set on line {first})"),
            });
        }
        cfg.set(line, key, value)?;
        lines.insert(key.to_string(), line);
    }
    cfg.check(&lines)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_error(text: &str) -> (usize, String, String) {
        match parse_config(text) {
            Err(Error::Config { line, key, message }) => (line, key, message),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!((cfg.k, cfg.l, cfg.m), (20, 7, 2));
        assert_eq!(cfg.sigma_c2, 0.1);
        assert_eq!((cfg.batch_lo, cfg.batch_hi), (10, 20));
        assert_eq!((cfg.epoch_lo, cfg.epoch_hi), (1, 10));
        assert_eq!(cfg.runs, 50);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = parse_config("# header\n\nmu = 0.01   # small\n  runs=3\n").unwrap();
        assert_eq!(cfg.mu, 0.01);
        assert_eq!(cfg.runs, 3);
    }

    #[test]
    fn participants_above_population_is_rejected() {
        let (line, key, message) = config_error("k = 20\nl = 30\n");
        assert_eq!((line, key.as_str()), (2, "l"));
        assert!(message.contains("l <= k"), "{message}");
    }

    #[test]
    fn unknown_key_and_type_mismatch_name_the_line() {
        assert_eq!(config_error("mu = 0.1\nfoo = 3\n").0, 2);
        assert_eq!(config_error("mu = 0.1\nfoo = 3\n").1, "foo");
        let (line, key, _) = config_error("\n\nk = twenty\n");
        assert_eq!((line, key.as_str()), (3, "k"));
        assert_eq!(config_error("reference = other").1, "reference");
        assert_eq!(config_error("runs = -1").1, "runs");
        assert_eq!(config_error("just words").0, 1);
        assert_eq!(config_error("mu = 1\nmu = 2").0, 2);
    }

    #[test]
    fn invariants() {
        assert_eq!(config_error("batch_hi = 200").1, "batch_hi");
        assert_eq!(config_error("batch_lo = 15\nbatch_hi = 12").1, "batch_hi");
        assert_eq!(config_error("epoch_lo = 0").1, "epoch_lo");
        assert_eq!(config_error("rho = 0").1, "rho");
        assert_eq!(config_error("sigma_q2 = -1").1, "sigma_q2");
        assert_eq!(config_error("mu = NaN").1, "mu");
        // defaults that become invalid report line 0
        let (line, key, _) = config_error("n_samples_per_agent = 5");
        assert_eq!((line, key.as_str()), (0, "batch_hi"));
        let (line, key, _) = config_error("k = 3");
        assert_eq!((line, key.as_str()), (0, "l"));
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig {
            mu: 0.003_141_592_653_589_793,
            sigma_q2: 1e-7,
            seed: u64::MAX,
            reference: ReferenceMode::Minimizer,
            ..ExperimentConfig::default()
        };
        assert_eq!(parse_config(&cfg.to_document()).unwrap(), cfg);
        let d = ExperimentConfig::default();
        assert_eq!(parse_config(&d.to_document()).unwrap(), d);
        for key in KEYS {
            assert!(d.to_document().contains(&format!("{key} = ")));
        }
    }
}
