//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cxrnet::data::{read_synth_sidecar, OrderingMode, CHEST_XRAY_LABELS, IMAGE_DIR, LABELS_FILE, SIDECAR_FILE};
use cxrnet::encoder::EncoderConfig;
use cxrnet::model::{ModelConfig, ModelKind};
use cxrnet::training::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `--out` wins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root. Relative paths below resolve against it.
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_csv: Option<PathBuf>,
    /// Defaults to the synthetic sidecar's labels, else the 14 chest findings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// Must agree with the model kind when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<OrderingMode>,
    /// Contiguous split by file order: the first `train_count` rows, then
    /// `val_count`, then the rest. Without it the split is random 70/10/20.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_count: Option<usize>,
}

impl DataConfig {
    /// A dataset directory in the synthetic layout, split nowhere.
    pub fn from_dir(dir: PathBuf) -> Self {
        DataConfig {
            dir,
            images: None,
            labels_csv: None,
            labels: None,
            ordering: None,
            train_count: None,
            val_count: None,
        }
    }

    pub fn images_dir(&self) -> PathBuf {
        self.dir.join(self.images.as_deref().unwrap_or(Path::new(IMAGE_DIR)))
    }

    pub fn labels_csv(&self) -> PathBuf {
        self.dir.join(self.labels_csv.as_deref().unwrap_or(Path::new(LABELS_FILE)))
    }

    pub fn label_names(&self) -> CliResult<Vec<String>> {
        if let Some(names) = &self.labels {
            return Ok(names.clone());
        }
        if self.dir.join(SIDECAR_FILE).is_file() {
            return Ok(read_synth_sidecar(&self.dir)?.label_names);
        }
        Ok(CHEST_XRAY_LABELS.iter().map(|s| s.to_string()).collect())
    }

    pub fn check_paths(&self) -> CliResult<()> {
        if !self.dir.is_dir() {
            return Err(invalid("data.dir", format!("{} is not a directory", self.dir.display())));
        }
        if !self.images_dir().is_dir() {
            return Err(invalid("data.images", format!("{} is not a directory", self.images_dir().display())));
        }
        if !self.labels_csv().is_file() {
            return Err(invalid("data.labels_csv", format!("{} not found", self.labels_csv().display())));
        }
        if self.train_count.is_some() != self.val_count.is_some() {
            return Err(invalid("data.train_count", "give train_count and val_count together"));
        }
        if self.label_names()?.is_empty() {
            return Err(invalid("data.labels", "at least one label is required"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default)]
    pub scale: Scale,
    /// Replaces the preset encoder entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lstm_hidden: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub kind: Option<ModelKind>,
    pub max_updates: Option<usize>,
}

/// Relative paths in a config resolve against the file's directory; the
/// echoed copy stores them absolute so it runs from anywhere.
fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::path::absolute(path).map_err(|e| invalid("path", format!("{}: {e}", path.display())))
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("--config", format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.data.dir = absolute(&base.join(&config.data.dir))?;
        config.out = config.out.map(|o| absolute(&base.join(o))).transpose()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = Some(absolute(out).unwrap_or_else(|_| out.clone()));
        }
        if let Some(kind) = o.kind {
            self.model.kind = kind;
        }
        if let Some(n) = o.max_updates {
            self.train.max_updates = n;
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| invalid("out", "no output directory; set `out` or pass --out"))
    }

    pub fn model_config(&self, num_labels: usize) -> ModelConfig {
        let kind = self.model.kind;
        let mut config = match self.model.scale {
            Scale::Desk => ModelConfig::desk(kind, num_labels),
            Scale::Full => ModelConfig::full_scale(kind, num_labels),
        };
        if let Some(e) = &self.model.encoder {
            config.encoder = e.clone();
        }
        if let Some(h) = self.model.lstm_hidden {
            config.lstm_hidden = h;
        }
        config
    }

    pub fn resolution(&self) -> usize {
        self.model_config(1).encoder.input_resolution
    }

    /// Checks everything that can be checked without touching pixel data.
    pub fn validate(&self, needs_out: bool) -> CliResult<()> {
        self.data.check_paths()?;
        if let Some(ordering) = self.data.ordering {
            let expected = self.model.kind.ordering();
            if ordering != expected {
                return Err(invalid(
                    "data.ordering",
                    format!("model {} is trained under `{}`, not `{}`", self.model.kind, expected.id(), ordering.id()),
                ));
            }
        }
        let names = self.data.label_names()?;
        self.model_config(names.len()).validate().map_err(|e| invalid("model", e))?;
        self.train.validate().map_err(|e| invalid("train", e))?;
        if needs_out {
            let out = self.out_dir()?;
            if out.exists() && !out.is_dir() {
                return Err(invalid("out", format!("{} is not a directory", out.display())));
            }
        }
        Ok(())
    }
}
