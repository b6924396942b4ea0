//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{data, usage, CliResult};

/// Every key a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "aux_weights",
    "batch_size",
    "bench_items",
    "bench_warmup",
    "filters",
    "format",
    "input",
    "loss",
    "metric",
    "model",
    "noise_levels",
    "noise_seeds",
    "output",
    "phases",
    "schedule",
    "seed",
    "selection",
    "shape",
    "spec",
    "subset_k",
    "test_input",
    "threads",
    "train_fraction",
    "weights",
    "widths",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    base: PathBuf,
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown and repeated
    /// keys are rejected.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value, got {line:?}", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(usage(format!("config line {}: unknown key {k:?}", i + 1)));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(usage(format!("config line {}: key {k:?} set twice", i + 1)));
            }
        }
        Ok(RunConfig {
            values,
            base: base.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> CliResult<Self> {
        let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        Self::parse(&text, Path::new("."))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key).ok_or_else(|| usage(format!("config is missing {key:?}")))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| usage(format!("{key} = {v:?} is not valid"))),
        }
    }

    fn resolve(&self, v: &str) -> PathBuf {
        let p = Path::new(v);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// A path that must already exist.
    pub fn existing_path(&self, key: &str) -> CliResult<PathBuf> {
        let p = self.resolve(self.require(key)?);
        if !p.exists() {
            return Err(data(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn optional_existing_path(&self, key: &str) -> CliResult<Option<PathBuf>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.existing_path(key).map(Some),
        }
    }

    /// The output directory, created if missing.
    pub fn output_dir(&self) -> CliResult<PathBuf> {
        let p = self.resolve(self.require("output")?);
        std::fs::create_dir_all(&p).map_err(|e| data(format!("output {}: {e}", p.display())))?;
        Ok(p)
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.parse_or("seed", 0)
    }

    /// Comma-separated list, e.g. `widths = 128,256,512,1024`.
    pub fn list<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse().map_err(|_| usage(format!("{key}: {s:?} is not valid"))))
                    .collect()
            })
            .transpose()
    }
}

/// `AxB` or `AxBxC` shapes.
pub fn parse_shape(v: &str) -> CliResult<Vec<usize>> {
    let dims: Vec<usize> = v
        .split(['x', 'X', ','])
        .map(|s| s.trim().parse().map_err(|_| usage(format!("shape {v:?} is not AxB or AxBxC"))))
        .collect::<CliResult<_>>()?;
    if !(2..=3).contains(&dims.len()) || dims.contains(&0) {
        return Err(usage(format!("shape {v:?} is not AxB or AxBxC")));
    }
    Ok(dims)
}

/// `epochs@lr` phases, e.g. `20@1e-3,5@1e-4`.
pub fn parse_phases(v: &str) -> CliResult<Vec<(usize, f64)>> {
    v.split(',')
        .map(|p| {
            let (e, lr) = p.trim().split_once('@').ok_or_else(|| usage(format!("phase {p:?} is not epochs@lr")))?;
            let e = e.trim().parse().map_err(|_| usage(format!("phase {p:?}: bad epoch count")))?;
            let lr: f64 = lr.trim().parse().map_err(|_| usage(format!("phase {p:?}: bad learning rate")))?;
            if !(lr >= 0.0) {
                return Err(usage(format!("phase {p:?}: learning rate must be non-negative")));
            }
            Ok((e, lr))
        })
        .collect()
}
