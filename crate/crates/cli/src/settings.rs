//! Flat `key = value` run settings shared by spec files, flags and manifests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use amplitude_flow::bench::{BenchSpec, Experiment};
use amplitude_flow::init::{InitMethod, NormEstimator};
use amplitude_flow::solver::SolverMethod;
use amplitude_flow::Field;
use anyhow::{anyhow, bail, Context, Result};
use num_rational::Ratio;

/// Keys accepted in spec files. Each mirrors a command-line flag.
pub const KEYS: &[&str] = &[
    "experiment",
    "field",
    "n",
    "m",
    "ratios",
    "trials",
    "method",
    "init",
    "gamma",
    "step",
    "iters",
    "power-iters",
    "complement-fraction",
    "trunc-alpha",
    "norm-estimator",
    "stop-tol",
    "threshold",
    "sigma",
    "snr",
    "masks",
    "seed",
    "image",
];

/// Keys written to manifests for information only.
const INFORMATIONAL: &[&str] = &["version", "command"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{line}`", no + 1))?;
            let key = key.trim().replace('_', "-");
            if INFORMATIONAL.contains(&key.as_str()) {
                continue;
            }
            if !KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key `{key}`", no + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading spec file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in spec file {}", path.display()))
    }

    /// Overrides `key` when `value` is given.
    pub fn set(&mut self, key: &str, value: Option<impl ToString>) {
        debug_assert!(KEYS.contains(&key), "unknown key {key}");
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("invalid {key} `{v}`: {e}")))
            .transpose()
    }

    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse::<T>().map_err(|e| anyhow!("invalid {key} entry `{s}`: {e}")))
                    .collect()
            })
            .transpose()
    }

    pub fn grid(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.raw(key).map(|v| parse_grid(v).with_context(|| format!("invalid {key}"))).transpose()
    }

    /// Builds a bench spec on top of `base`, which carries per-command
    /// defaults.
    pub fn bench_spec(&self, base: BenchSpec) -> Result<BenchSpec> {
        let mut spec = base;
        if let Some(e) = self.get::<Experiment>("experiment")? {
            spec.experiment = e;
        }
        if let Some(f) = self.get::<Field>("field")? {
            spec.field = f;
        }
        if let Some(n) = self.get("n")? {
            spec.n = n;
        }
        if let Some(m) = self.get("m")? {
            spec.m_override = Some(m);
        }
        if let Some(r) = self.grid("ratios")? {
            spec.ratios = r;
        }
        if let Some(t) = self.get("trials")? {
            spec.trials = t;
        }
        if let Some(s) = self.list::<SolverMethod>("method")? {
            spec.solvers = s;
        }
        if let Some(i) = self.list::<InitMethod>("init")? {
            spec.inits = i;
        }
        if let Some(s) = self.get::<f64>("sigma")? {
            spec.sigma_rel = s;
        }
        if let Some(s) = self.grid("snr")? {
            spec.snr_grid = s;
        }
        if let Some(k) = self.get("masks")? {
            spec.masks = k;
        }
        if let Some(s) = self.get("seed")? {
            spec.master_seed = s;
        }
        let cfg = &mut spec.solver;
        if let Some(g) = self.get("gamma")? {
            cfg.gamma = g;
        }
        match self.raw("step") {
            None => {}
            Some("default") => cfg.step = None,
            Some(_) => cfg.step = self.get("step")?,
        }
        if let Some(t) = self.get("iters")? {
            cfg.max_iters = t;
        }
        if let Some(t) = self.get("stop-tol")? {
            cfg.stop_tol = t;
        }
        if let Some(t) = self.get("threshold")? {
            cfg.success_threshold = t;
        }
        if let Some(p) = self.get("power-iters")? {
            cfg.init.power_iters = p;
        }
        if let Some(f) = self.get::<Ratio<usize>>("complement-fraction")? {
            cfg.init.complement_fraction = f;
        }
        if let Some(a) = self.get("trunc-alpha")? {
            cfg.init.spectral_trunc_alpha = a;
        }
        if let Some(e) = self.get::<NormEstimator>("norm-estimator")? {
            cfg.init.norm_estimator = e;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Parses `start:stop:step` (stop included when it lands on the grid) or a
/// comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if !s.contains(':') {
        return s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("`{v}`: {e}")))
            .collect();
    }
    let parts: Vec<f64> = s
        .split(':')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("`{v}`: {e}")))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        bail!("range `{s}` must be start:stop:step");
    };
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        bail!("range `{s}` needs step > 0 and start <= stop");
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // snap to 1e-9 so that 0.1 steps print as 1.3 rather than 1.3000000000000003
    Ok((0..count).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect())
}
