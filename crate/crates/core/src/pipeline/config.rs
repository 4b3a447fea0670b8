use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::filters::{FilterConfig, FilterRegistry};
use crate::gradients::GradientTable;
use crate::phantom::{BackgroundPhaseSpec, NoiseSpec, PhantomSpec};
use crate::phasecorr::CalibratorRegistry;

/// Environment variable consulted when the config names no output directory.
pub const OUTPUT_DIR_ENV: &str = "DWIPC_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    #[default]
    Both,
    On,
    Off,
}

impl Calibration {
    /// Calibrated flags to run, uncalibrated first.
    pub fn modes(self) -> &'static [bool] {
        match self {
            Calibration::Both => &[false, true],
            Calibration::On => &[true],
            Calibration::Off => &[false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Acquisition {
    pub n_b0: usize,
    pub n_directions: usize,
    pub b_value: f64,
    /// Overrides the generated scheme when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradients_file: Option<PathBuf>,
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition { n_b0: 3, n_directions: 30, b_value: 1000.0, gradients_file: None }
    }
}

impl Acquisition {
    pub fn gradient_table(&self) -> Result<GradientTable> {
        match &self.gradients_file {
            Some(path) => GradientTable::load(path),
            None => GradientTable::hemisphere_scheme(self.n_b0, self.n_directions, self.b_value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: PhantomSpec,
    pub noise: NoiseSpec,
    pub background_phase: BackgroundPhaseSpec,
    pub acquisition: Acquisition,
    pub filters: Vec<FilterConfig>,
    pub calibration: Calibration,
    /// Calibrator used for the `-new` variants.
    pub calibrator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Noise seed; copied into `noise.seed` by [`ExperimentConfig::resolve`].
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            phantom: PhantomSpec::default(),
            noise: NoiseSpec::default(),
            background_phase: BackgroundPhaseSpec::default(),
            acquisition: Acquisition::default(),
            filters: vec![FilterConfig::tv(), FilterConfig::cf(), FilterConfig::mppca()],
            calibration: Calibration::Both,
            calibrator: "quadrant".into(),
            output_dir: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config document, or a manifest carrying one under `config`,
    /// then applies `key=value` overrides on dotted paths.
    pub fn from_json(doc: Value, overrides: &[String]) -> Result<ExperimentConfig> {
        let mut doc = match doc {
            Value::Object(mut map) if map.contains_key("config") && map.contains_key("tool") => {
                map.remove("config").expect("checked")
            }
            other => other,
        };
        if !overrides.is_empty() {
            // Overrides act on the fully defaulted document.
            let base: ExperimentConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
            doc = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
            for o in overrides {
                apply_override(&mut doc, o)?;
            }
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        Self::from_json(doc, overrides)
    }

    /// Fills the output directory from `env_output_dir` when unset, copies
    /// the seed into the noise spec and validates.
    pub fn resolve(mut self, env_output_dir: Option<PathBuf>) -> Result<ExperimentConfig> {
        if self.output_dir.is_none() {
            self.output_dir = env_output_dir;
        }
        self.noise.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::Config("at least one filter must be listed".into()));
        }
        let registry = FilterRegistry::default();
        for f in &self.filters {
            f.validate()?;
            registry.build(f)?;
        }
        let mut names: Vec<&str> = self.filters.iter().map(FilterConfig::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("each filter may be listed once".into()));
        }
        CalibratorRegistry::default().build(&self.calibrator)?;
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = &self.acquisition.gradients_file {
            if !p.exists() {
                return Err(Error::Config(format!("gradients_file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| {
            Error::Config(format!("output_dir is not set (use --set output_dir=PATH or {OUTPUT_DIR_ENV})"))
        })
    }

    pub fn filter(&self, name: &str) -> Result<FilterConfig> {
        match self.filters.iter().find(|f| f.name() == name) {
            Some(f) => Ok(f.clone()),
            None => FilterRegistry::default().default_config(name),
        }
    }
}

/// Sets `doc[a][b]...` from `a.b...=value`; the value is parsed as JSON and
/// falls back to a plain string. Missing objects are created; array
/// elements are addressed by index.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("invalid override key '{key}'")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for part in key.split('.') {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => map.entry(part).or_insert(Value::Null),
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("'{part}' in '{key}' is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} in '{key}' out of range 0..{len}")))?
            }
            _ => return Err(Error::Config(format!("'{key}' descends into a scalar"))),
        };
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_roundtrip_through_json() {
        let cfg = ExperimentConfig::default();
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(v, &[]).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json(json!({}), &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::from_json(
            json!({}),
            &[
                "seed=9".into(),
                "noise.sigma0=0".into(),
                "phantom.dims=[8,8,2]".into(),
                "output_dir=/tmp/x".into(),
                "filters=[{\"kind\":\"TV\"}]".into(),
                "filters.0.lambda=0.5".into(),
                "calibration=on".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.noise.sigma0, 0.0);
        assert_eq!(cfg.phantom.dims, [8, 8, 2]);
        assert_eq!(cfg.output_dir, Some(PathBuf::from("/tmp/x")));
        assert_eq!(cfg.filters, vec![FilterConfig::TV { lambda: 0.5, iters: 10 }]);
        assert_eq!(cfg.calibration, Calibration::On);
    }

    #[test]
    fn bad_overrides() {
        let mut v = json!({"a": 1, "b": [1]});
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "a.b=1").is_err());
        assert!(apply_override(&mut v, "b.3=1").is_err());
        assert!(apply_override(&mut v, ".x=1").is_err());
        assert!(ExperimentConfig::from_json(json!({}), &["sed=1".into()]).is_err());
    }

    #[test]
    fn manifest_is_accepted() {
        let cfg = ExperimentConfig { seed: 4, ..Default::default() };
        let manifest = json!({"tool": "dwipc", "config": cfg});
        assert_eq!(ExperimentConfig::from_json(manifest, &[]).unwrap(), cfg);
    }

    #[test]
    fn resolve_and_validate() {
        let cfg = ExperimentConfig { seed: 11, ..Default::default() };
        let r = cfg.clone().resolve(Some("/tmp/env".into())).unwrap();
        assert_eq!(r.output_dir().unwrap(), Path::new("/tmp/env"));
        assert_eq!(r.noise.seed, 11);
        let explicit = ExperimentConfig { output_dir: Some("/a".into()), ..cfg.clone() };
        assert_eq!(explicit.resolve(Some("/b".into())).unwrap().output_dir, Some("/a".into()));
        assert!(cfg.clone().resolve(None).unwrap().output_dir().is_err());
        assert!(ExperimentConfig { filters: vec![], ..cfg.clone() }.resolve(None).is_err());
        assert!(ExperimentConfig { calibrator: "nope".into(), ..cfg.clone() }.resolve(None).is_err());
        let dup = ExperimentConfig { filters: vec![FilterConfig::tv(), FilterConfig::tv()], ..cfg.clone() };
        assert!(dup.resolve(None).is_err());
        let mut missing = cfg;
        missing.acquisition.gradients_file = Some("/nonexistent/grads.txt".into());
        assert!(matches!(missing.resolve(None), Err(Error::Config(_))));
    }

    #[test]
    fn filter_lookup_falls_back_to_registry_defaults() {
        let cfg = ExperimentConfig { filters: vec![FilterConfig::TV { lambda: 3.0, iters: 4 }], ..Default::default() };
        assert_eq!(cfg.filter("TV").unwrap(), FilterConfig::TV { lambda: 3.0, iters: 4 });
        assert_eq!(cfg.filter("CF").unwrap(), FilterConfig::cf());
        let err = cfg.filter("BM3D").unwrap_err().to_string();
        assert!(err.contains("{CF, MPPCA, TV}"), "{err}");
    }
}
