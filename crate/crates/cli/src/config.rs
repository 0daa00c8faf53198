//! Run configuration: TOML file, presets and validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vo_core::frontend::ExtractorConfig;
use vo_core::geometry::Intrinsics;
use vo_core::model_runtime::Device;
use vo_core::tracker::{TrackerConfig, TrackerMode};

/// Environment variable naming the directory relative model paths resolve
/// against.
pub const MODEL_DIR_ENV: &str = "VO_MODEL_DIR";

pub const PRESETS: [&str; 5] = [
    "selm",
    "baseline-1000f",
    "baseline-750f",
    "baseline-900f",
    "baseline-1200f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Tum,
    Icl,
    TartanairConverted,
}

impl DatasetKind {
    pub fn default_intrinsics(self) -> Intrinsics {
        match self {
            DatasetKind::Tum => Intrinsics::tum_freiburg1(),
            DatasetKind::Icl => Intrinsics::icl_nuim(),
            DatasetKind::TartanairConverted => Intrinsics::tartanair(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Implementation {
    Builtin,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSection {
    pub implementation: Implementation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub grid: ExtractorConfig,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        Self {
            implementation: Implementation::Builtin,
            model_path: None,
            grid: ExtractorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherSection {
    pub implementation: Implementation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Distance ratio of the builtin mutual nearest neighbour matcher.
    pub ratio: f32,
    pub min_confidence: f32,
}

impl Default for MatcherSection {
    fn default() -> Self {
        Self {
            implementation: Implementation::Builtin,
            model_path: None,
            ratio: 0.9,
            min_confidence: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub dataset_kind: DatasetKind,
    pub sequence: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Timestamp association tolerance, seconds.
    pub max_difference: f64,
    /// 0 processes the whole sequence.
    pub max_frames: usize,
    pub device: Device,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    pub tracker: TrackerConfig,
    pub extractor: ExtractorSection,
    pub matcher: MatcherSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "selm".into(),
            dataset_kind: DatasetKind::Tum,
            sequence: PathBuf::new(),
            output_dir: PathBuf::from("run"),
            seed: 0,
            max_difference: vo_core::dataset::DEFAULT_MAX_DIFFERENCE,
            max_frames: 0,
            device: Device::Cpu,
            intrinsics: None,
            tracker: TrackerConfig::default(),
            extractor: ExtractorSection::default(),
            matcher: MatcherSection::default(),
        }
    }
}

/// Built-in starting points. `baseline-*` presets use the constant-velocity
/// comparator with an 8-level, 1.2-scale pyramid and the named feature
/// budget.
pub fn preset(name: &str) -> Option<RunConfig> {
    let mut cfg = RunConfig {
        preset: name.to_string(),
        ..RunConfig::default()
    };
    let budget = match name {
        "selm" => return Some(cfg),
        "baseline-1000f" => 1000,
        "baseline-750f" => 750,
        "baseline-900f" => 900,
        "baseline-1200f" => 1200,
        _ => return None,
    };
    cfg.tracker.mode = TrackerMode::Baseline;
    cfg.extractor.grid.max_features = budget;
    cfg.extractor.grid.levels = 8;
    cfg.extractor.grid.scale_factor = 1.2;
    Some(cfg)
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses a config document on top of its preset. Relative paths are
    /// taken relative to `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        // Typed parse first so errors point at the offending line and field.
        let _: RunConfig = toml::from_str(text).context("invalid run configuration")?;
        let user: toml::Table = toml::from_str(text).context("invalid run configuration")?;
        let preset_name = user
            .get("preset")
            .and_then(|v| v.as_str())
            .unwrap_or("selm")
            .to_string();
        let Some(base) = preset(&preset_name) else {
            bail!("unknown preset `{preset_name}`; available: {}", PRESETS.join(", "));
        };
        let mut table = toml::Table::try_from(&base).context("serializing preset")?;
        merge(&mut table, user);
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid run configuration")?;
        cfg.resolve_paths(base_dir);
        cfg.materialize();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, dir).with_context(|| format!("in {}", path.display()))
    }

    fn resolve_paths(&mut self, base_dir: &Path) {
        let rel = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base_dir.join(&*p);
            }
        };
        rel(&mut self.sequence);
        rel(&mut self.output_dir);
        let model_root = std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from);
        for p in [&mut self.extractor.model_path, &mut self.matcher.model_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = model_root.as_deref().unwrap_or(base_dir).join(&*p);
            }
        }
    }

    /// Fills every derived default so the echo is complete.
    pub fn materialize(&mut self) {
        if self.intrinsics.is_none() {
            self.intrinsics = Some(self.dataset_kind.default_intrinsics());
        }
        self.tracker.seed = self.seed;
        self.tracker.ransac.seed = self.seed;
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
            .unwrap_or_else(|| self.dataset_kind.default_intrinsics())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequence.as_os_str().is_empty() {
            bail!("`sequence` must name a dataset directory");
        }
        if !self.sequence.is_dir() {
            bail!("dataset directory {} does not exist", self.sequence.display());
        }
        self.intrinsics()
            .validate()
            .map_err(|e| anyhow::anyhow!("intrinsics: {e}"))?;
        self.tracker.validate().map_err(|e| anyhow::anyhow!("tracker: {e}"))?;
        self.extractor
            .grid
            .validate()
            .map_err(|e| anyhow::anyhow!("extractor.grid: {e}"))?;
        if !(self.matcher.ratio > 0.0 && self.matcher.ratio <= 1.0) {
            bail!("matcher.ratio must lie in (0, 1], got {}", self.matcher.ratio);
        }
        if !(self.max_difference > 0.0) {
            bail!("max_difference must be positive");
        }
        for (name, section) in [
            ("extractor", (self.extractor.implementation, &self.extractor.model_path)),
            ("matcher", (self.matcher.implementation, &self.matcher.model_path)),
        ] {
            if section.0 == Implementation::Model && section.1.is_none() {
                bail!("{name}.implementation = \"model\" requires {name}.model_path");
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }
}
