//! Experiment configuration: one typed TOML tree, dotted-path overrides and a
//! resolved snapshot written beside every run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionConfig;
use crate::embeddings::EmbeddingConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::fusion::FusionConfig;
use crate::intent::IntentConfig;
use crate::training::{LossWeights, TrainConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "RECDIFF_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory written by `prepare` (holds `dataset.json`, `prompts.jsonl`).
    pub dir: PathBuf,
    /// Semantic matrix (binary directory or CSV). When absent, the
    /// pseudo-embedder is run over the prepared prompts.
    #[serde(default)]
    pub semantic: Option<PathBuf>,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default = "default_cold_threshold")]
    pub cold_threshold: usize,
}

fn default_tail_fraction() -> f64 {
    0.2
}

fn default_cold_threshold() -> usize {
    5
}

/// Named seeds, one per source of randomness, so that enabling or disabling
/// one component never shifts another component's draws.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub dropout: u64,
    pub diffusion: u64,
    pub augment: u64,
    pub cluster: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_base(0)
    }
}

impl Seeds {
    /// Distinct stream seeds derived from one number.
    pub fn from_base(base: u64) -> Self {
        let s = |k: u64| base.wrapping_mul(1_000).wrapping_add(k);
        Self { init: s(1), data: s(2), dropout: s(3), diffusion: s(4), augment: s(5), cluster: s(6) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    pub fusion: FusionConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub intent: IntentConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Defaults everywhere except the data directory and a gated fusion.
    pub fn with_data_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            data: DataConfig {
                dir: dir.into(),
                semantic: None,
                tail_fraction: default_tail_fraction(),
                cold_threshold: default_cold_threshold(),
            },
            embedding: EmbeddingConfig::default(),
            fusion: FusionConfig::default(),
            encoder: EncoderConfig::default(),
            intent: IntentConfig::default(),
            diffusion: DiffusionConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            seeds: Seeds::default(),
            eval: EvalConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parses TOML, applies `key=value` overrides, and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its folder.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.dir);
        if let Some(s) = &mut self.data.semantic {
            fix(s);
        }
        if let Some(d) = &mut self.output.dir {
            fix(d);
        }
    }

    /// Applies overrides to an already-built config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.tail_fraction > 0.0 && self.data.tail_fraction < 1.0) {
            return Err(Error::Config(format!("data.tail_fraction must lie in (0, 1), got {}", self.data.tail_fraction)));
        }
        if self.data.cold_threshold == 0 {
            return Err(Error::Config("data.cold_threshold must be at least 1".into()));
        }
        if self.embedding.dim == 0 || self.embedding.pseudo_dim == 0 {
            return Err(Error::Config("embedding.dim and embedding.pseudo_dim must be positive".into()));
        }
        if !(self.embedding.init_std > 0.0) {
            return Err(Error::Config("embedding.init_std must be positive".into()));
        }
        if !matches!(self.embedding.adapter_layers, 1 | 2) {
            return Err(Error::Config(format!(
                "embedding.adapter_layers must be 1 or 2, got {}",
                self.embedding.adapter_layers
            )));
        }
        self.fusion.validate(self.embedding.dim)?;
        if self.encoder.heads == 0 || self.embedding.dim % self.encoder.heads != 0 {
            return Err(Error::Config(format!(
                "encoder.heads = {} must divide embedding.dim = {}",
                self.encoder.heads, self.embedding.dim
            )));
        }
        if self.encoder.layers == 0 || self.encoder.max_len == 0 || !(0.0..1.0).contains(&self.encoder.dropout) {
            return Err(Error::Config("encoder.layers and encoder.max_len must be positive, encoder.dropout in [0, 1)".into()));
        }
        self.intent.validate()?;
        self.diffusion.schedule()?;
        if self.diffusion.time_dim == 0 || self.diffusion.time_dim % 2 != 0 || self.diffusion.hidden_width == 0 {
            return Err(Error::Config("diffusion.time_dim must be even and positive, diffusion.hidden_width positive".into()));
        }
        if self.diffusion.augment_interval == 0 {
            return Err(Error::Config("diffusion.augment_interval must be at least 1".into()));
        }
        self.loss.validate()?;
        if !self.fusion.strategy.uses_semantics() && self.loss.lambda_align > 0.0 {
            return Err(Error::Config(
                "loss.lambda_align must be 0 with fusion.strategy = \"id_only\" (no semantic view to align)".into(),
            ));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved snapshot as `config.resolved.toml` inside `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.resolved.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// `output.dir`, else `$RECDIFF_OUT`, else `runs`.
    pub fn output_root(&self) -> PathBuf {
        default_output_root(self.output.dir.as_deref())
    }
}

pub fn default_output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn from_table(table: toml::Table) -> Result<ExperimentConfig> {
    let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    let de = toml::Deserializer::new(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Config(format!("{path}: {}", inner.message().trim()))
    })
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal when
/// it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
