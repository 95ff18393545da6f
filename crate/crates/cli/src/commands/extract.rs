//! Feature pre-extraction into the cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use maxvqa_core::backbones::cache::FeatureCache;
use maxvqa_core::backbones::{extract_bundle, FragmentBranch};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::encoders::Extractors;
use crate::error::{CliResult, Kind, Tag};
use crate::ingest::{ingest, list_videos, video_id};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    Skip,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub video_id: String,
    pub path: PathBuf,
    pub status: Status,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn count(&self, f: impl Fn(&Status) -> bool) -> usize {
        self.rows.iter().filter(|r| f(&r.status)).count()
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.count(|s| matches!(s, Status::Error(_))) == self.rows.len()
    }

    pub fn write_csv(&self, path: &Path) -> CliResult<()> {
        let write = || -> anyhow::Result<()> {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["video_id", "status", "detail"])?;
            for r in &self.rows {
                let (status, detail) = match &r.status {
                    Status::Ok => ("ok", String::new()),
                    Status::Skip => ("skip", String::new()),
                    Status::Error(e) => ("error", e.clone()),
                };
                w.write_record([r.video_id.as_str(), status, &detail])?;
            }
            w.flush()?;
            Ok(())
        };
        write().tag(Kind::Data, || format!("writing {}", path.display()))
    }
}

fn extract_one(path: &Path, cache: &FeatureCache, ex: &Extractors, seed: u64) -> Status {
    let id = video_id(path);
    if cache.contains(&id, &ex.key) {
        return Status::Skip;
    }
    let params = ex.key.fragment_params;
    let run = || -> anyhow::Result<()> {
        let (clip, _) = ingest(path, Some(params.frames))?;
        let branch = ex.fragment.as_deref().map(|encoder| FragmentBranch { encoder, seed });
        let bundle = extract_bundle(&clip, ex.visual.as_ref(), params, branch)?;
        cache.store(&bundle, &ex.key)?;
        Ok(())
    };
    match run() {
        Ok(()) => Status::Ok,
        Err(e) => Status::Error(format!("{e:#}")),
    }
}

/// Extracts every video under the configured directory that is not cached yet.
pub fn extract_features(config: &RunConfig, jobs: usize) -> CliResult<Report> {
    let videos = list_videos(config.videos_dir()?).tag(Kind::Data, || "listing videos".into())?;
    let ex = Extractors::build(&config.backbones, &config.fragments)?;
    let cache = FeatureCache::open(&config.paths.cache)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .tag(Kind::Usage, || "building the worker pool".into())?;

    let mut first_path: BTreeMap<String, &PathBuf> = BTreeMap::new();
    let mut unique = Vec::new();
    let mut rows = Vec::new();
    for p in &videos {
        let id = video_id(p);
        match first_path.get(&id) {
            Some(prev) => rows.push(ReportRow {
                video_id: id,
                path: p.clone(),
                status: Status::Error(format!("duplicate video id, already taken by {}", prev.display())),
            }),
            None => {
                first_path.insert(id, p);
                unique.push(p.clone());
            }
        }
    }
    let seed = config.fragments.seed;
    let done: Vec<ReportRow> = pool.install(|| {
        unique
            .par_iter()
            .map(|p| {
                let status = extract_one(p, &cache, &ex, seed);
                if let Status::Error(e) = &status {
                    log::warn!("{e}");
                }
                ReportRow {
                    video_id: video_id(p),
                    path: p.clone(),
                    status,
                }
            })
            .collect()
    });
    rows.extend(done);
    rows.sort_by(|a, b| (&a.video_id, &a.path).cmp(&(&b.video_id, &b.path)));
    Ok(Report { rows })
}
