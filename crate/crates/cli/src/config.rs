//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `[section]` prefixes the keys that follow with
//! `section.`; `#` starts a comment. Every key must appear in [`KEYS`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Known keys with their defaults.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("data.source", "synthetic"),
    ("data.name", "rings"),
    ("data.n_train", "10000"),
    ("data.n_val", "1000"),
    ("data.n_test", "2000"),
    ("data.bins", "0"),
    ("data.path", ""),
    ("data.columns", ""),
    ("data.standardize", "false"),
    ("data.val_fraction", "0.1"),
    ("data.test_fraction", "0.2"),
    ("model.kind", "squared"),
    ("model.region_graph", "binary"),
    ("model.width", "8"),
    ("model.product", "hadamard"),
    ("model.family", "gaussian"),
    ("model.spline_order", "2"),
    ("model.spline_knots", "32"),
    ("model.domain_padding", "0.1"),
    ("model.path", ""),
    ("train.batch_size", "256"),
    ("train.learning_rate", "0.01"),
    ("train.max_epochs", "100"),
    ("train.patience", "3"),
    ("train.optimizer", "adam"),
    ("train.init", "uniform"),
    ("train.init_low", "0"),
    ("train.init_high", "1"),
    ("train.init_mean", "0"),
    ("train.init_std", "1"),
    ("train.l2", "0"),
    ("sample.count", "1000"),
    ("grid.size", "100"),
    ("grid.x_min", ""),
    ("grid.x_max", ""),
    ("grid.y_min", ""),
    ("grid.y_max", ""),
    ("psd.input", ""),
    ("psd.anchors", "5"),
    ("psd.dimension", "2"),
    ("psd.bandwidth", "1"),
    ("psd.points", "100"),
    ("mps.input", ""),
    ("mps.variables", "4"),
    ("mps.states", "2"),
    ("mps.rank", "2"),
    ("mps.cp_rank", "0"),
    ("mps.cp_iters", "5000"),
    ("mps.cp_tol", "1e-10"),
    ("mps.cp_restarts", "5"),
    ("udisj.graph", ""),
    ("udisj.matching", "3"),
    ("bench.widths", "32,64,128"),
    ("bench.batch_sizes", "64,256,1024"),
    ("bench.steps", "3"),
    ("bench.scaling_variables", "2,4,8,16,32,64,128"),
    ("bench.scaling_widths", "32,64,128"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Directory relative paths in the file are resolved against.
    base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            base: base.to_path_buf(),
        };
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected 'key = value'", i + 1)))?;
            let key = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            cfg.set(&key, value.trim()).map_err(|e| ConfigError(format!("line {}: {}", i + 1, e.0)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim_matches('"').to_string();
                Ok(())
            }
            None => Err(ConfigError(format!("unknown key '{key}'"))),
        }
    }

    /// Apply a `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse().map_err(|e| ConfigError(format!("{key} = '{raw}': {e}")))
    }

    /// `None` for an empty value.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.str(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| ConfigError(format!("{key}: '{s}': {e}"))))
            .collect()
    }

    /// Path value resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.str(key);
        if raw.is_empty() {
            None
        } else {
            Some(self.base.join(raw))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_overrides_and_unknown_keys() {
        let text = "seed = 4\n[model]\nwidth = 16 # units\nkind = monotonic\n\n[train]\nl2=0.5\n";
        let mut cfg = RunConfig::parse(text, Path::new("/tmp")).unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 4);
        assert_eq!(cfg.get::<usize>("model.width").unwrap(), 16);
        assert_eq!(cfg.str("model.kind"), "monotonic");
        cfg.apply("train.l2=0.25").unwrap();
        assert_eq!(cfg.get::<f64>("train.l2").unwrap(), 0.25);
        assert_eq!(cfg.list::<usize>("bench.widths").unwrap(), vec![32, 64, 128]);
        assert!(cfg.apply("train.momentum=1").is_err());
        assert!(RunConfig::parse("[model]\ncolour = red\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("seed 4\n", Path::new(".")).is_err());
        assert_eq!(cfg.opt::<f64>("grid.x_min").unwrap(), None);
    }
}
