//! Run configuration: built-in defaults, then a JSON file, then flags.
//!
//! The JSON file is one flat object holding solver fields next to the
//! run-level keys below. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use serde_json::{Map, Value};

use refsep::{MixtureSpec, SolverConfig};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunKeys {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub blur_sigma: Option<f64>,
    pub reflection_gain: Option<f64>,
    pub clip: Option<bool>,
}

const RUN_KEYS: [&str; 9] = [
    "input",
    "out_dir",
    "trace_path",
    "metrics_path",
    "dictionary",
    "jobs",
    "blur_sigma",
    "reflection_gain",
    "clip",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub run: RunKeys,
}

impl RunConfig {
    pub fn new(solver: SolverConfig) -> Self {
        RunConfig {
            solver,
            run: RunKeys::default(),
        }
    }

    /// Overlays a JSON object on `base`.
    pub fn overlay_json(base: SolverConfig, text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let Value::Object(all) = value else {
            bail!("config must be a JSON object");
        };
        let (mut run, mut solver) = (Map::new(), Map::new());
        for (k, v) in all {
            if RUN_KEYS.contains(&k.as_str()) {
                run.insert(k, v);
            } else {
                solver.insert(k, v);
            }
        }
        let mut merged = serde_json::to_value(&base)?;
        let target = merged.as_object_mut().expect("config serializes to an object");
        for (k, v) in solver {
            if !target.contains_key(&k) {
                bail!("unknown config key `{k}`");
            }
            target.insert(k, v);
        }
        Ok(RunConfig {
            solver: serde_json::from_value(merged).context("invalid solver settings")?,
            run: serde_json::from_value(Value::Object(run)).context("invalid run settings")?,
        })
    }

    pub fn load(base: SolverConfig, path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::new(base)),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                Self::overlay_json(base, &text).with_context(|| format!("in config {}", p.display()))
            }
        }
    }

    /// Mixture spec from the config with `seed` applied.
    pub fn mixture(&self) -> MixtureSpec {
        let d = MixtureSpec::default();
        MixtureSpec {
            blur_sigma: self.run.blur_sigma.unwrap_or(d.blur_sigma),
            reflection_gain: self.run.reflection_gain.unwrap_or(d.reflection_gain),
            clip: self.run.clip.unwrap_or(d.clip),
            seed: self.solver.seed,
        }
    }
}
