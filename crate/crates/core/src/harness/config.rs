//! Experiment configuration files.
//!
//! TOML, with an optional top-level `include = ["shared.toml", ...]` list.
//! Included files are merged first (in order); keys in the including file win.
//! Paths are resolved relative to the file that names them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{self, Dataset, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::optim::{Algorithm, ScheduleSpec};
use crate::quasirand::SearchSpace;

pub const CONFIG_SCHEMA: u32 = 1;

/// Environment variable naming the root directory for relative dataset paths.
pub const DATA_ROOT_ENV: &str = "KSTAR_DATA_ROOT";

pub const DEFAULT_MAX_STEPS: u64 = 40_000;
pub const DEFAULT_EVAL_INTERVAL_SMALL: u64 = 16;
pub const DEFAULT_EVAL_INTERVAL_IMAGE: u64 = 32;
pub const DEFAULT_BUDGET: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        classes: usize,
        dims: usize,
        per_class: usize,
        separation: f64,
        #[serde(default = "default_conditioning")]
        conditioning: f64,
        #[serde(default = "default_clusters")]
        clusters: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Use only the first `limit` samples.
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerTemplate {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// Momentum used when it is not searched.
    #[serde(default)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub id: String,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub optimizer: OptimizerTemplate,
    pub goal_error: f64,
    /// Defaults to 16, or 32 for inputs with three or more channels.
    #[serde(default)]
    pub eval_interval: Option<u64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Seed of the validation split.
    #[serde(default)]
    pub split_seed: u64,
}

fn default_conditioning() -> f64 {
    1.0
}

fn default_clusters() -> usize {
    1
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

impl WorkloadConfig {
    pub fn eval_interval(&self) -> u64 {
        self.eval_interval.unwrap_or_else(|| {
            let shape = &self.model.input_shape;
            if shape.len() == 3 && shape[0] >= 3 {
                DEFAULT_EVAL_INTERVAL_IMAGE
            } else {
                DEFAULT_EVAL_INTERVAL_SMALL
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::config("workload id must not be empty"));
        }
        if !(0.0..=1.0).contains(&self.goal_error) {
            return Err(Error::config(format!("goal_error must lie in [0, 1], got {}", self.goal_error)));
        }
        if self.eval_interval() == 0 || self.max_steps == 0 {
            return Err(Error::config("eval_interval and max_steps must be >= 1"));
        }
        self.model.validate()?;
        self.optimizer.schedule.validate()?;
        if let Some(m) = self.optimizer.momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::config(format!("momentum must lie in [0, 1), got {m}")));
            }
        }
        Ok(())
    }

    /// Loads (or synthesises) the dataset and applies the seeded validation split.
    pub fn load_split(&self, base_dir: &Path) -> Result<Split> {
        let raw = match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                dims,
                per_class,
                separation,
                conditioning,
                clusters,
                seed,
            } => {
                let spec = SynthSpec {
                    classes: *classes,
                    dims: *dims,
                    per_class: *per_class,
                    separation: *separation,
                    conditioning: *conditioning,
                    clusters: *clusters,
                };
                data::synth_dataset(&spec, *seed)?
            }
            DatasetConfig::Idx { images, labels, limit } => {
                let images = resolve_data_path(base_dir, images);
                let labels = resolve_data_path(base_dir, labels);
                for p in [&images, &labels] {
                    if !p.exists() {
                        return Err(Error::io(
                            p.clone(),
                            std::io::Error::new(
                                std::io::ErrorKind::NotFound,
                                format!("dataset file not found; set {DATA_ROOT_ENV} or fix the path"),
                            ),
                        ));
                    }
                }
                let ds = data::load_idx(&images, &labels)?;
                match limit {
                    Some(n) if *n < ds.len() => ds.subset(&(0..*n).collect::<Vec<_>>()),
                    _ => ds,
                }
            }
        };
        let raw = raw.reshaped(&self.model.input_shape)?;
        if raw.num_classes() > self.model.classes {
            return Err(Error::config(format!(
                "dataset has {} classes but the model predicts {}",
                raw.num_classes(),
                self.model.classes
            )));
        }
        let raw = Dataset::new(raw.inputs().clone(), raw.labels().to_vec(), self.model.classes)?;
        raw.split(data::VALIDATION_FRACTION, self.split_seed)
    }
}

fn resolve_data_path(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) => Path::new(&root).join(p),
        None => base_dir.join(p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_sparsities")]
    pub sparsities: Vec<f64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            batch_sizes: default_batch_sizes(),
            sparsities: default_sparsities(),
            budget: default_budget(),
        }
    }
}

fn default_batch_sizes() -> Vec<usize> {
    (1..=10).map(|r| 1usize << r).collect()
}

fn default_sparsities() -> Vec<f64> {
    vec![0.0, 0.9]
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

/// Settings for smoothness traces and the Δ/β/L decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothnessConfig {
    pub batch_size: usize,
    pub eta_bar: f64,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default = "default_trace_steps")]
    pub steps: u64,
    #[serde(default = "default_stride")]
    pub stride: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_smooth_sparsities")]
    pub sparsities: Vec<f64>,
}

fn default_trace_steps() -> u64 {
    2000
}

fn default_stride() -> u64 {
    100
}

fn default_delta() -> f64 {
    0.1
}

fn default_smooth_sparsities() -> Vec<f64> {
    vec![0.0, 0.5, 0.7, 0.9]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub study: StudyConfig,
    pub search: Vec<SearchSpace>,
    #[serde(default)]
    pub smoothness: Option<SmoothnessConfig>,
    /// Directory the config was loaded from; relative data paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA
}

fn default_workers() -> usize {
    1
}

/// Metaparameter names understood by the trial runner.
pub const KNOWN_METAPARAMS: [&str; 4] = ["eta_bar", "momentum", "decay_horizon", "floor_fraction"];

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let table = load_table(path, &mut Vec::new())?;
        let mut cfg: ExperimentConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("{}: {}", path.display(), e.message())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::config(format!(
                "unsupported config schema {} (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        self.workload.validate()?;
        let st = &self.study;
        if st.batch_sizes.is_empty() || st.batch_sizes.contains(&0) {
            return Err(Error::config("study.batch_sizes must be non-empty and >= 1"));
        }
        if st.sparsities.is_empty() || st.sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::config("study.sparsities must be non-empty and lie in [0, 1)"));
        }
        if st.budget == 0 {
            return Err(Error::config("study.budget must be >= 1"));
        }
        if self.search.is_empty() || self.search.len() > crate::quasirand::MAX_DIMENSION {
            return Err(Error::config(format!(
                "between 1 and {} search spaces are supported",
                crate::quasirand::MAX_DIMENSION
            )));
        }
        for s in &self.search {
            s.validate()?;
            if !KNOWN_METAPARAMS.contains(&s.name.as_str()) {
                return Err(Error::config(format!(
                    "unknown metaparameter '{}' (known: {})",
                    s.name,
                    KNOWN_METAPARAMS.join(", ")
                )));
            }
        }
        if !self.search.iter().any(|s| s.name == "eta_bar") {
            return Err(Error::config("the search must include eta_bar"));
        }
        let searches_momentum = self.search.iter().any(|s| s.name == "momentum");
        if self.workload.optimizer.algorithm.uses_momentum()
            && !searches_momentum
            && self.workload.optimizer.momentum.is_none()
        {
            return Err(Error::config("momentum optimizers need a momentum value or a momentum search space"));
        }
        if let Some(sm) = &self.smoothness {
            if sm.batch_size == 0 || sm.steps == 0 || sm.stride == 0 || !(sm.eta_bar > 0.0) {
                return Err(Error::config("smoothness needs batch_size, steps, stride >= 1 and eta_bar > 0"));
            }
            if !(sm.delta > 0.0 && sm.delta < 1.0) {
                return Err(Error::config("smoothness.delta must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

fn merge(base: &mut Table, overlay: Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Table> {
    let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(Error::config(format!("include cycle through {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config(format!("{}: {}", path.display(), e.message())))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(Error::config(format!("include entries must be strings, got {other}"))),
            })
            .collect::<Result<_>>()?,
        Some(other) => return Err(Error::config(format!("include must be a string or list, got {other}"))),
    };
    stack.push(canonical);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = Table::new();
    for inc in includes {
        let sub = load_table(&dir.join(inc), stack)?;
        merge(&mut merged, sub);
    }
    stack.pop();
    merge(&mut merged, table);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
seed = 3

[workload]
id = "w"
goal_error = 0.1

[workload.dataset]
kind = "synthetic"
classes = 2
dims = 2
per_class = 20
separation = 4.0

[workload.model]
arch = "simple-mlp"
widths = [4]
input_shape = [2]
classes = 2

[workload.optimizer]
algorithm = "sgd"

[[search]]
name = "eta_bar"
scale = "log10"
lower = 0.001
upper = 1.0
"#;

    #[test]
    fn defaults_follow_protocol() {
        let cfg = ExperimentConfig::from_toml_str(BASE, Path::new(".")).unwrap();
        assert_eq!(cfg.workload.max_steps, 40_000);
        assert_eq!(cfg.workload.eval_interval(), 16);
        assert_eq!(cfg.study.budget, 20);
        assert_eq!(cfg.study.batch_sizes, vec![2, 4, 8, 16, 32, 64, 128, 256, 512, 1024]);
        assert_eq!(cfg.study.sparsities, vec![0.0, 0.9]);
    }

    #[test]
    fn image_inputs_default_to_interval_32() {
        let mut cfg = ExperimentConfig::from_toml_str(BASE, Path::new(".")).unwrap();
        cfg.workload.model = ModelSpec::cnn_lite([3, 8, 8], [4, 4], 10, 0);
        assert_eq!(cfg.workload.eval_interval(), 32);
        cfg.workload.model = ModelSpec::cnn_lite([1, 8, 8], [4, 4], 10, 0);
        assert_eq!(cfg.workload.eval_interval(), 16);
    }

    #[test]
    fn rejects_unknown_metaparameter() {
        let text = BASE.replace("name = \"eta_bar\"", "name = \"eta_bar\"\n[[search]]\nname = \"dropout\"\nscale = \"linear\"\nlower = 0.0\nupper = 1.0\n#");
        assert!(ExperimentConfig::from_toml_str(&text, Path::new(".")).is_err());
    }

    #[test]
    fn momentum_needs_a_value() {
        let text = BASE.replace("algorithm = \"sgd\"", "algorithm = \"momentum\"");
        assert!(ExperimentConfig::from_toml_str(&text, Path::new(".")).is_err());
        let text = BASE.replace("algorithm = \"sgd\"", "algorithm = \"momentum\"\nmomentum = 0.9");
        assert!(ExperimentConfig::from_toml_str(&text, Path::new(".")).is_ok());
    }

    #[test]
    fn include_merges_with_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("shared.toml"), BASE).unwrap();
        std::fs::write(
            dir.path().join("main.toml"),
            "include = [\"shared.toml\"]\nname = \"main\"\n[workload]\ngoal_error = 0.3\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_file(&dir.path().join("main.toml")).unwrap();
        assert_eq!(cfg.name, "main");
        assert_eq!(cfg.workload.goal_error, 0.3);
        assert_eq!(cfg.workload.id, "w");
    }

    #[test]
    fn include_cycle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.toml"), "include = \"b.toml\"\n").unwrap();
        std::fs::write(dir.path().join("b.toml"), "include = \"a.toml\"\n").unwrap();
        let err = ExperimentConfig::from_file(&dir.path().join("a.toml")).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(BASE, Path::new(".")).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string(), Path::new(".")).unwrap();
        assert_eq!(cfg, again);
    }
}
