//! Run configuration: a TOML file plus dotted `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use maxvqa_core::fragments::FragmentParams;
use maxvqa_core::prompts::ContextMode;
use maxvqa_core::training::{TrainConfig, MAXWELL_TEST_SIZE};
use serde::{Deserialize, Serialize};

use crate::error::{CliResult, Failure, Kind, Tag};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub fragments: FragmentSection,
    pub backbones: BackboneConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of clips, images or frame directories.
    pub videos: Option<PathBuf>,
    pub cache: PathBuf,
    /// Raw opinions: `video_id,axis_code,subject_id,opinion`.
    pub annotations: Option<PathBuf>,
    /// Subject ids kept after screening, one per line.
    pub accepted_subjects: Option<PathBuf>,
    /// Ready-made targets: `video_id` plus one column per axis code.
    pub targets: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            videos: None,
            cache: "cache".into(),
            annotations: None,
            accepted_subjects: None,
            targets: None,
            checkpoint: "checkpoint".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FragmentSection {
    pub grid: usize,
    pub patch: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for FragmentSection {
    fn default() -> Self {
        let p = FragmentParams::default();
        Self {
            grid: p.grid,
            patch: p.patch,
            frames: p.frames,
            seed: 0,
        }
    }
}

impl FragmentSection {
    pub fn params(&self) -> FragmentParams {
        FragmentParams {
            grid: self.grid,
            patch: self.patch,
            frames: self.frames,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisualKind {
    #[default]
    Stub,
    ClipRn50,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextKind {
    #[default]
    Stub,
    Precomputed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FragmentKind {
    #[default]
    Stub,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub visual: VisualKind,
    /// safetensors file for `clip-rn50`.
    pub visual_weights: Option<PathBuf>,
    pub weights_prefix: String,
    pub text: TextKind,
    /// JSON embedding table for `precomputed`.
    pub text_table: Option<PathBuf>,
    pub fragment: FragmentKind,
    /// Seed of the stub encoders.
    pub seed: u64,
    pub embed_dim: usize,
    pub stub_width: usize,
    pub heads: usize,
    pub fragment_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            visual: VisualKind::Stub,
            visual_weights: None,
            weights_prefix: "visual.".into(),
            text: TextKind::Stub,
            text_table: None,
            fragment: FragmentKind::Stub,
            seed: 1,
            embed_dim: 64,
            stub_width: 64,
            heads: 4,
            fragment_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub context_mode: ContextMode,
    pub dropout: f64,
    /// Hidden width of the fusion MLP; defaults to the feature width.
    pub hidden: Option<usize>,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            context_mode: ContextMode::Shared,
            dropout: 0.5,
            hidden: None,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    #[default]
    Fixed,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Fixed split: explicit test ids, one per line.
    pub test_list: Option<PathBuf>,
    /// Fixed split without a list: size of the seeded holdout.
    pub test_size: usize,
    /// Random splits.
    pub count: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            kind: SplitKind::Fixed,
            test_list: None,
            test_size: MAXWELL_TEST_SIZE,
            count: 10,
            train_fraction: 0.8,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Applies `section.key=value`; the value is parsed as a TOML literal, else taken as a string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cursor = table;
    for s in sections {
        cursor = cursor
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::usage(format!("`{s}` in `{key}` is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads `file` (if any), applies overrides, and resolves relative paths
    /// against the config file's directory.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match file {
            Some(f) => {
                let text = fs::read_to_string(f).tag(Kind::Usage, || format!("reading config {}", f.display()))?;
                text.parse::<toml::Table>()
                    .tag(Kind::Usage, || format!("parsing config {}", f.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .tag(Kind::Usage, || "invalid configuration".to_string())?;
        let base = file
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let p = &mut config.paths;
        for path in [&mut p.cache, &mut p.checkpoint, &mut p.output] {
            rebase(&base, path);
        }
        for path in [
            &mut p.videos,
            &mut p.annotations,
            &mut p.accepted_subjects,
            &mut p.targets,
            &mut config.split.test_list,
            &mut config.backbones.visual_weights,
            &mut config.backbones.text_table,
        ]
        .into_iter()
        .flatten()
        {
            rebase(&base, path);
        }
        config.validate()?;
        Ok(config)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> CliResult<()> {
        self.train.axes()?;
        let f = &self.fragments;
        if f.grid == 0 || f.patch == 0 || f.frames == 0 {
            return Err(Failure::usage("fragments.grid, patch and frames must be >= 1"));
        }
        let s = &self.split;
        if s.kind == SplitKind::Random {
            if s.count == 0 {
                return Err(Failure::usage("split.count must be >= 1"));
            }
            if (s.train_fraction + s.test_fraction - 1.0).abs() > 1e-9 {
                return Err(Failure::usage(format!(
                    "split fractions {} + {} do not sum to 1",
                    s.train_fraction, s.test_fraction
                )));
            }
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Failure::usage("model.dropout must be in [0, 1)"));
        }
        let b = &self.backbones;
        if b.visual == VisualKind::ClipRn50 && b.visual_weights.is_none() {
            return Err(Failure::usage("backbones.visual = \"clip-rn50\" needs backbones.visual_weights"));
        }
        if b.text == TextKind::Precomputed && b.text_table.is_none() {
            return Err(Failure::usage("backbones.text = \"precomputed\" needs backbones.text_table"));
        }
        for path in [&b.visual_weights, &b.text_table, &s.test_list, &self.paths.accepted_subjects]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(Failure::usage(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn videos_dir(&self) -> CliResult<&Path> {
        let dir = self
            .paths
            .videos
            .as_deref()
            .ok_or_else(|| Failure::usage("no video directory configured (paths.videos or --videos)"))?;
        if !dir.is_dir() {
            return Err(Failure::usage(format!("video directory {} does not exist", dir.display())));
        }
        Ok(dir)
    }
}
