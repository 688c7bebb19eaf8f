use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::AppError;
use crate::data::SynthSpec;
use crate::losses::{ClassTerm, DEFAULT_LAMBDA};
use crate::training::{TrainConfig, Variant};

/// One experiment, read from a TOML file. Relative paths are resolved
/// against the directory holding the file.
///
/// ```toml
/// seed = 1
/// sp = 20
/// train_fraction = 0.125
/// output = "run"
/// variants = ["cnn", "ro-cnn", "acgan", "mfegan"]
///
/// [data.synthetic]
/// height = 40
/// width = 40
/// bands = 16
/// sizes = [400, 200, 100, 8]
/// noise = 0.08
/// seed = 1
///
/// [training]
/// epochs = 20
/// ```
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sp: usize,
    #[serde(default)]
    pub train_fraction: Option<f64>,
    /// Exact per-class training counts; overrides `train_fraction`.
    #[serde(default)]
    pub train_counts: Option<Vec<usize>>,
    pub output: PathBuf,
    #[serde(default = "default_variants")]
    pub variants: Vec<VariantName>,
    pub data: DataSource,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub render: RenderSection,
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Cnn,
    RoCnn,
    Acgan,
    Mfegan,
    Knn,
}

impl VariantName {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::Cnn => "cnn",
            VariantName::RoCnn => "ro-cnn",
            VariantName::Acgan => "acgan",
            VariantName::Mfegan => "mfegan",
            VariantName::Knn => "knn",
        }
    }

    /// The network family trained, `None` for the nearest-neighbour baseline.
    pub fn family(self) -> Option<Variant> {
        match self {
            VariantName::Cnn | VariantName::RoCnn => Some(Variant::Cnn),
            VariantName::Acgan => Some(Variant::Acgan),
            VariantName::Mfegan => Some(Variant::Mfegan),
            VariantName::Knn => None,
        }
    }
}

fn default_variants() -> Vec<VariantName> {
    vec![VariantName::Mfegan]
}

fn default_knn_k() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub cube: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SynthSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassTermName {
    #[default]
    Logprob,
    Complement,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub d_steps: usize,
    /// Oversample the real stream of every variant (always on for `ro-cnn`).
    pub oversample: bool,
    pub class_term: ClassTermName,
    pub widths: [usize; 3],
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lambda: DEFAULT_LAMBDA,
            d_steps: 1,
            oversample: false,
            class_term: ClassTermName::Logprob,
            widths: [128, 256, 512],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Prediction files; defaults to those of every listed variant.
    #[serde(default)]
    pub predictions: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSection {
    /// Label raster to draw; defaults to the prepared ground truth.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Image path; defaults to `ground_truth.ppm` in the output directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> AppError {
    AppError::Input(format!("config key '{key}': {msg}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self, AppError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| AppError::Input(format!("config: {e}")))?;
        cfg.base = base.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AppError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    fn validate(&self) -> Result<(), AppError> {
        match (&self.train_fraction, &self.train_counts) {
            (None, None) => return Err(bad("train_fraction", "either train_fraction or train_counts is required")),
            (Some(f), None) if !(*f > 0.0 && *f < 1.0) => return Err(bad("train_fraction", format!("{f} is not in (0, 1)"))),
            _ => {}
        }
        let d = &self.data;
        match (&d.cube, &d.labels, &d.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            (Some(_), None, None) => return Err(bad("data.labels", "missing (a cube needs a label raster)")),
            (None, Some(_), None) => return Err(bad("data.cube", "missing (a label raster needs a cube)")),
            _ => return Err(bad("data", "give either cube and labels or a synthetic table, not both")),
        }
        if self.variants.is_empty() {
            return Err(bad("variants", "empty list"));
        }
        if self.knn_k == 0 {
            return Err(bad("knn_k", "must be at least 1"));
        }
        // the class count is only known once data is read
        let t = self.train_config(VariantName::Mfegan, 2);
        t.net_spec().map_err(|e| bad("sp", e))?;
        if t.batch_size < 2 {
            return Err(bad("training.batch_size", "must be at least 2"));
        }
        if !(0.0..=1.0).contains(&t.lambda) {
            return Err(bad("training.lambda", format!("{} is not in [0, 1]", t.lambda)));
        }
        if t.d_steps == 0 {
            return Err(bad("training.d_steps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }

    /// Training settings for one variant on `classes` classes.
    pub fn train_config(&self, variant: VariantName, classes: usize) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
            lambda: t.lambda,
            d_steps: t.d_steps,
            oversample: t.oversample || variant == VariantName::RoCnn,
            class_term: match t.class_term {
                ClassTermName::Logprob => ClassTerm::LogProb,
                ClassTermName::Complement => ClassTerm::Complement,
            },
            widths: t.widths,
            ..TrainConfig::new(self.sp, classes)
        }
    }
}
