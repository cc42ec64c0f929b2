//! Run configuration: one TOML document, dotted-key overrides, defaults
//! for everything.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabelMap, RecordFormat};
use crate::expansion::ExpansionConfig;
use crate::llm::{RemoteConfig, SimProfile};
use crate::optimizer::{Mode, RunConfig};
use crate::selection::SelectionConfig;
use crate::templates::TaskPreset;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("override `{0}`: expected key=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Built-in initial prompt; ignored when `prompt_file` is set.
    pub preset: TaskPreset,
    pub prompt_file: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            preset: TaskPreset::Ethos,
            prompt_file: None,
        }
    }
}

/// Which split feeds minibatches and selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainSource {
    /// Everything not in dev or test.
    #[default]
    Remainder,
    Dev,
}

pub const DEFAULT_SYNTHETIC: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub format: RecordFormat,
    /// Generate this many synthetic examples instead of reading a file.
    /// With neither this nor `path`, the sim backend uses
    /// [`DEFAULT_SYNTHETIC`] examples.
    pub synthetic: Option<usize>,
    pub labels: LabelMap,
    pub n_dev: usize,
    pub n_test: usize,
    pub few_shot: usize,
    pub train_source: TrainSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: RecordFormat::Jsonl,
            synthetic: None,
            labels: LabelMap::default(),
            n_dev: 50,
            n_test: 150,
            few_shot: 2,
            train_source: TrainSource::Remainder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub beam_width: usize,
    pub depth: usize,
    pub include_parents: bool,
    pub patience: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let d = RunConfig::default();
        Self {
            beam_width: d.beam_width,
            depth: d.depth,
            include_parents: d.include_parents,
            patience: d.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Sim,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub cache_dir: Option<PathBuf>,
    pub remote: RemoteConfig,
    pub sim: SimProfile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Directory with `gradient.txt`, `edit.txt` and/or `paraphrase.txt`.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub mode: Mode,
    pub out_dir: PathBuf,
    /// Subdirectory of `out_dir`; defaults to `<mode>-seed<seed>`.
    pub run_name: Option<String>,
    pub replicates: usize,
    pub task: TaskConfig,
    pub data: DataConfig,
    pub search: SearchConfig,
    pub expansion: ExpansionConfig,
    pub selection: SelectionConfig,
    pub backend: BackendConfig,
    pub templates: TemplateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Protegi,
            out_dir: PathBuf::from("runs"),
            run_name: None,
            replicates: 1,
            task: TaskConfig::default(),
            data: DataConfig::default(),
            search: SearchConfig::default(),
            expansion: ExpansionConfig::default(),
            selection: SelectionConfig::default(),
            backend: BackendConfig::default(),
            templates: TemplateConfig::default(),
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, value) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl Config {
    /// Parses `text` (may be empty), applies `key=value` overrides in
    /// order, and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Config = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        match (&self.data.path, self.data.synthetic) {
            (None, None) if self.backend.kind == BackendKind::Remote => {
                return bad("the remote backend needs data.path".into())
            }
            (Some(_), Some(_)) => return bad("data.path and data.synthetic are mutually exclusive".into()),
            _ => {}
        }
        if let Some(name) = &self.run_name {
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                return bad(format!("run_name `{name}` must be a plain directory name"));
            }
        }
        self.run_config().validate().map_err(ConfigError::Invalid)?;
        if self.backend.kind == BackendKind::Sim {
            self.backend.sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            mode: self.mode,
            beam_width: self.search.beam_width,
            depth: self.search.depth,
            include_parents: self.search.include_parents,
            patience: self.search.patience,
            seed: self.seed,
            expansion: self.expansion.clone(),
            selection: self.selection.clone(),
        }
    }

    pub fn run_name(&self) -> String {
        self.run_name
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", self.mode.name(), self.seed))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
