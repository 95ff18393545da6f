//! Targets, splits and cached samples shared by the commands.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::Path;

use maxvqa_core::analytics::{AnnotationTable, ScoreTable};
use maxvqa_core::backbones::cache::FeatureCache;
use maxvqa_core::dimensions::{registry, AXIS_COUNT};
use maxvqa_core::training::{fixed_split, random_splits, rescale_mos, Sample, Split, TrainTarget};
use ndarray::Array2;

use crate::config::{RunConfig, SplitKind};
use crate::encoders::Extractors;
use crate::error::{CliResult, CoreContext, Failure, Kind, Tag};

pub fn read_id_list(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).tag(Kind::Data, || format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub fn annotations(config: &RunConfig) -> CliResult<AnnotationTable> {
    let path = config
        .paths
        .annotations
        .as_deref()
        .ok_or_else(|| Failure::usage("no annotation file configured (paths.annotations or --annotations)"))?;
    let accepted = match &config.paths.accepted_subjects {
        Some(p) => Some(read_id_list(p)?.into_iter().collect::<BTreeSet<String>>()),
        None => None,
    };
    let file = File::open(path).tag(Kind::Data, || format!("opening {}", path.display()))?;
    AnnotationTable::from_csv(file, accepted).context(|| format!("reading {}", path.display()))
}

/// Training targets in `[0, 1]`: a ready-made target table if configured,
/// else per-axis MOS from the annotations mapped from `[-1, 1]`.
pub fn targets(config: &RunConfig) -> CliResult<BTreeMap<String, TrainTarget>> {
    if let Some(path) = &config.paths.targets {
        let file = File::open(path).tag(Kind::Data, || format!("opening {}", path.display()))?;
        let table = ScoreTable::read_csv(file).context(|| format!("reading {}", path.display()))?;
        return table
            .ids
            .iter()
            .zip(table.values.rows())
            .map(|(id, row)| {
                let values: BTreeMap<String, f64> = registry()
                    .iter()
                    .zip(row)
                    .filter(|(_, v)| v.is_finite())
                    .map(|(s, v)| (s.code.to_string(), *v))
                    .collect();
                Ok((id.clone(), TrainTarget::new(id.clone(), &values)?))
            })
            .collect::<maxvqa_core::Result<_>>()
            .context(|| format!("targets in {}", path.display()));
    }
    if config.paths.annotations.is_none() {
        return Err(Failure::usage(
            "no targets: configure paths.targets or paths.annotations (or pass --targets/--annotations)",
        ));
    }
    let table = annotations(config)?;
    let mut per_video: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for spec in registry() {
        for (video, mos) in table.axis_mos(spec.code)? {
            per_video
                .entry(video)
                .or_default()
                .insert(spec.code.to_string(), rescale_mos(mos)?);
        }
    }
    Ok(per_video
        .into_iter()
        .map(|(id, values)| Ok((id.clone(), TrainTarget::new(id, &values)?)))
        .collect::<maxvqa_core::Result<_>>()?)
}

pub fn target_table(targets: &BTreeMap<String, TrainTarget>, ids: &[String]) -> CliResult<ScoreTable> {
    let mut values = Array2::from_elem((ids.len(), AXIS_COUNT), f64::NAN);
    for (k, id) in ids.iter().enumerate() {
        let t = targets
            .get(id)
            .ok_or_else(|| Failure::data(format!("no targets for `{id}`")))?;
        for a in 0..AXIS_COUNT {
            if let Some(v) = t.get(a) {
                values[[k, a]] = v;
            }
        }
    }
    Ok(ScoreTable::new(ids.to_vec(), values)?)
}

/// The configured splits: one for a fixed holdout, `count` for random splits.
pub fn splits(config: &RunConfig, ids: &[String]) -> CliResult<Vec<Split>> {
    let s = &config.split;
    match s.kind {
        SplitKind::Fixed => {
            let list = s.test_list.as_deref().map(read_id_list).transpose()?;
            Ok(vec![fixed_split(ids, list.as_deref(), s.test_size, s.seed)?])
        }
        SplitKind::Random => Ok(random_splits(ids, s.count, s.train_fraction, s.seed)?),
    }
}

/// Per-split subdirectory name, empty for a single fixed split.
pub fn split_dir(config: &RunConfig, base: &Path, index: usize) -> std::path::PathBuf {
    match config.split.kind {
        SplitKind::Fixed => base.to_path_buf(),
        SplitKind::Random => base.join(format!("split-{index:02}")),
    }
}

pub fn write_split(split: &Split, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).tag(Kind::Data, || format!("creating {}", path.display()))?;
    let write = |w: &mut csv::Writer<File>| -> csv::Result<()> {
        w.write_record(["video_id", "set"])?;
        for id in &split.train {
            w.write_record([id.as_str(), "train"])?;
        }
        for id in &split.test {
            w.write_record([id.as_str(), "test"])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).tag(Kind::Data, || format!("writing {}", path.display()))
}

pub fn samples(
    ids: &[String],
    targets: &BTreeMap<String, TrainTarget>,
    cache: &FeatureCache,
    extractors: &Extractors,
) -> CliResult<Vec<Sample>> {
    ids.iter()
        .map(|id| {
            let bundle = cache
                .load(id, &extractors.key)
                .context(|| format!("features for `{id}` (run extract-features first)"))?;
            let target = targets
                .get(id)
                .cloned()
                .ok_or_else(|| Failure::data(format!("no targets for `{id}`")))?;
            Ok(Sample { bundle, target })
        })
        .collect()
}

/// Ids that have targets and cached features, sorted.
pub fn labeled_cached_ids(
    targets: &BTreeMap<String, TrainTarget>,
    cache: &FeatureCache,
    extractors: &Extractors,
) -> CliResult<Vec<String>> {
    let (have, missing): (Vec<&String>, Vec<&String>) =
        targets.keys().partition(|id| cache.contains(id, &extractors.key));
    if !missing.is_empty() {
        log::warn!(
            "{} labeled videos have no cached features and are left out (first: `{}`)",
            missing.len(),
            missing[0]
        );
    }
    if have.is_empty() {
        return Err(Failure::data(format!(
            "none of the {} labeled videos has cached features in {}",
            targets.len(),
            cache.dir().display()
        )));
    }
    Ok(have.into_iter().cloned().collect())
}
