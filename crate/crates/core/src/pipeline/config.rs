use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::hash128_hex;
use crate::head::WeightInit;
use crate::kg::SampleSpec;
use crate::probe::{BackendConfig, ProbeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Dataset label used in statistics and table titles.
    pub name: String,
    pub triples: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub factscore: Option<PathBuf>,
    pub activations: Option<PathBuf>,
    pub fraction: f64,
    pub negatives: usize,
    pub splits: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "dataset".into(),
            triples: None,
            templates: None,
            factscore: None,
            activations: None,
            fraction: 0.001,
            negatives: 0,
            splits: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub backend: BackendKind,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            kind: ProbeKind::BinaryGeneration,
            backend: BackendKind::Http,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    #[default]
    Fixed,
    Beliefs,
}

/// Settings for the in-process backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub mode: MockMode,
    /// Reply of the fixed mode.
    pub response: String,
    /// JSON lines `{"text": ..., "p": ...}` giving the probability the mock
    /// believes each statement.
    pub beliefs: Option<PathBuf>,
    pub default_belief: f64,
    pub logprobs: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            mode: MockMode::Fixed,
            response: "yes".into(),
            beliefs: None,
            default_belief: 0.5,
            logprobs: true,
        }
    }
}

/// Hyperparameter grid for the linear heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainGrid {
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    /// Only used for real-valued probe targets.
    pub temperatures: Vec<f64>,
    pub batch_size: Option<usize>,
    pub bias: bool,
    pub init: WeightInit,
    /// L2-normalize embeddings before training.
    pub normalize: bool,
}

impl Default for TrainGrid {
    fn default() -> Self {
        TrainGrid {
            learning_rates: vec![1e-3, 1e-2],
            epochs: vec![20, 40],
            temperatures: vec![1.0, 5.0, 10.0],
            batch_size: None,
            bias: true,
            init: WeightInit::Zeros,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Negatives,
    Fraction,
    Temperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
}

/// Everything a run needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Name of the experimental setting (dataset, LLM, probe) in reports.
    pub setting: Option<String>,
    pub dataset: DatasetConfig,
    pub probe: ProbeConfig,
    pub backend: BackendConfig,
    pub mock: MockConfig,
    /// Embedding name -> vector file.
    pub embeddings: BTreeMap<String, PathBuf>,
    pub train: TrainGrid,
    pub sweep: SweepConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            setting: None,
            dataset: DatasetConfig::default(),
            probe: ProbeConfig::default(),
            backend: BackendConfig::default(),
            mock: MockConfig::default(),
            embeddings: BTreeMap::new(),
            train: TrainGrid::default(),
            sweep: SweepConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Sets `dotted.key = value` in a TOML table. The value is read as a TOML
/// literal when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Invalid(format!("bad override key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for part in parents {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Invalid(format!("override `{key}`: `{part}` is not a section")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

impl RunConfig {
    /// Parses a config file, applying `overrides` before deserializing.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let (mut table, base_dir) = match path {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
                let dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
                (table, dir)
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Invalid(format!("config: {e}")))?;
        cfg.base_dir = if base_dir.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            base_dir
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("config: {e}")))
    }

    /// Resolves a configured path against the config file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Hash of the effective config, excluding where outputs go.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        Ok(hash128_hex(&[&value.to_string()]))
    }

    pub fn sample_spec(&self) -> SampleSpec {
        let [train, val, test] = self.dataset.splits;
        SampleSpec {
            fraction: self.dataset.fraction,
            negatives_per_positive: self.dataset.negatives,
            seed: self.seed,
            splits: (train, val, test),
        }
    }

    /// Display name of the experimental setting.
    pub fn setting_name(&self) -> String {
        self.setting.clone().unwrap_or_else(|| {
            format!("{}/{}/{}", self.dataset.name, self.backend.model, self.probe.kind)
        })
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        self.sample_spec().validate()?;
        self.backend.validate()?;
        let grid = &self.train;
        if grid.learning_rates.is_empty() || grid.epochs.is_empty() {
            return Err(Error::Invalid("train grid needs learning rates and epochs".into()));
        }
        if !self.probe.kind.is_binary() && grid.temperatures.is_empty() {
            return Err(Error::Invalid("score targets need at least one temperature".into()));
        }
        for name in self.embeddings.keys() {
            let ok = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !ok || RESERVED_ROWS.contains(&name.as_str()) {
                return Err(Error::Invalid(format!("unusable embedding name `{name}`")));
            }
        }
        if !(0.0..=1.0).contains(&self.mock.default_belief) {
            return Err(Error::Invalid("mock default belief must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Fails unless `path` is configured and exists.
    pub(crate) fn require_file(&self, what: &str, path: Option<&PathBuf>) -> Result<PathBuf> {
        let path = path.ok_or_else(|| Error::Invalid(format!("no {what} file configured")))?;
        let resolved = self.resolve(path);
        if !resolved.is_file() {
            return Err(Error::Invalid(format!(
                "{what} file {} does not exist",
                resolved.display()
            )));
        }
        Ok(resolved)
    }
}

/// Row names taken by the baselines in comparison tables.
pub const RESERVED_ROWS: [&str; 3] = ["majority", "random", "mean"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let mut t: toml::Table = toml::from_str("seed = 1\n[dataset]\nfraction = 0.5\n").unwrap();
        apply_override(&mut t, "dataset.fraction", "0.25").unwrap();
        apply_override(&mut t, "backend.model", "llama-3.1-8b").unwrap();
        apply_override(&mut t, "train.epochs", "[20, 40]").unwrap();
        assert_eq!(t["dataset"]["fraction"].as_float(), Some(0.25));
        assert_eq!(t["backend"]["model"].as_str(), Some("llama-3.1-8b"));
        assert_eq!(t["train"]["epochs"].as_array().unwrap().len(), 2);
        assert!(apply_override(&mut t, "seed.x", "1").is_err());
        assert!(apply_override(&mut t, "a..b", "1").is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.dataset.negatives = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = a.clone();
        c.backend.max_parallel = 2;
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[backend]\napi_key = \"sk-123\"\n").unwrap();
        assert!(RunConfig::load(Some(&path), &[]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.embeddings.insert("nve2".into(), PathBuf::from("vec/nve2.jsonl"));
        cfg.dataset.triples = Some(PathBuf::from("kg.tsv"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, cfg.to_toml().unwrap()).unwrap();
        let back = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(back.base_dir, dir.path());
    }
}
