//! Scoring: trained predictions, zero-shot scores and local quality maps.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::RgbImage;
use maxvqa_core::analytics::{evaluate_metrics, write_benchmark_csv, write_benchmark_text, ScoreTable};
use maxvqa_core::backbones::cache::FeatureCache;
use maxvqa_core::backbones::{extract_bundle, FeatureBundle, FragmentBranch, TextEncoder};
use maxvqa_core::dimensions::{lookup, AXIS_COUNT};
use maxvqa_core::evaluator::{resolve_bundle, score_grid, ModelState, Predictor, QualityReport};
use maxvqa_core::fragments::{temporal_indices, VideoClip};
use maxvqa_core::prompts::{ContextEmbedding, ContextMode, PromptSet};
use maxvqa_core::training::load_checkpoint;
use ndarray::{Array2, Axis};

use super::ensure_dir;
use crate::config::RunConfig;
use crate::data;
use crate::encoders::{self, check_dims, Extractors};
use crate::error::{CliResult, CoreContext, Failure, Kind, Tag};
use crate::figures;
use crate::ingest::{ingest, list_videos, video_id};

/// A clip on disk, or an id already in the feature cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    Path(PathBuf),
    Id(String),
}

impl Input {
    pub fn id(&self) -> String {
        match self {
            Input::Path(p) => video_id(p),
            Input::Id(id) => id.clone(),
        }
    }
}

/// Explicit inputs, or every video in the configured directory.
pub fn resolve_inputs(config: &RunConfig, inputs: &[String]) -> CliResult<Vec<Input>> {
    if inputs.is_empty() {
        let dir = config.videos_dir()?;
        return Ok(list_videos(dir)
            .tag(Kind::Data, || "listing videos".into())?
            .into_iter()
            .map(Input::Path)
            .collect());
    }
    Ok(inputs
        .iter()
        .map(|s| {
            let p = Path::new(s);
            if p.exists() {
                Input::Path(p.to_path_buf())
            } else {
                Input::Id(s.clone())
            }
        })
        .collect())
}

/// Features for `input` plus the decoded clip when `want_clip` or when extraction was needed.
fn load(
    input: &Input,
    cache: &FeatureCache,
    ex: &Extractors,
    seed: u64,
    want_clip: bool,
) -> CliResult<(FeatureBundle, Option<VideoClip>)> {
    let id = input.id();
    let params = ex.key.fragment_params;
    let clip = match input {
        Input::Path(p) if want_clip || !cache.contains(&id, &ex.key) => {
            Some(ingest(p, Some(params.frames)).kind(Kind::Data)?.0)
        }
        _ => None,
    };
    let bundle = resolve_bundle(&id, Some((cache, &ex.key)), clip.as_ref(), |c| {
        let branch = ex.fragment.as_deref().map(|encoder| FragmentBranch { encoder, seed });
        extract_bundle(c, ex.visual.as_ref(), params, branch)
    })
    .context(|| format!("features for `{id}`"))?;
    Ok((bundle, clip))
}

pub fn load_model(config: &RunConfig, dir: &Path, text: &dyn TextEncoder) -> CliResult<ModelState> {
    let (state, manifest) = load_checkpoint(dir).context(|| format!("checkpoint {}", dir.display()))?;
    if manifest.text_encoder != text.id() {
        return Err(Failure::new(
            Kind::Backbone,
            anyhow::anyhow!(
                "checkpoint was trained with text encoder `{}` but `{}` is configured",
                manifest.text_encoder,
                text.id()
            ),
        ));
    }
    if state.mlp.is_some() != (config.backbones.fragment != crate::config::FragmentKind::None) {
        return Err(Failure::usage("checkpoint and configuration disagree on the fragment branch"));
    }
    Ok(state)
}

/// Scores with either a trained state or the zero-shot setup.
enum Scorer<'a> {
    Trained(Predictor<'a>),
    ZeroShot(maxvqa_core::prompts::PromptEmbeddings),
}

impl Scorer<'_> {
    fn zero_shot(text: &dyn TextEncoder) -> CliResult<Self> {
        let prompts = PromptSet::standard();
        let context = ContextEmbedding::initial(text, &prompts.vocab, ContextMode::Shared)?;
        Ok(Scorer::ZeroShot(prompts.embed(text, &context)?))
    }

    fn score(&self, bundle: &FeatureBundle, maps: bool) -> CliResult<QualityReport> {
        Ok(match self {
            Scorer::Trained(p) => p.predict(bundle, maps)?,
            Scorer::ZeroShot(e) => score_grid(&bundle.source_id, &bundle.local, e, maps)?,
        })
    }
}

fn write_report(report: &QualityReport, path: &Path) -> CliResult<()> {
    let file = File::create(path).tag(Kind::Data, || format!("creating {}", path.display()))?;
    Ok(report.write_csv(BufWriter::new(file))?)
}

/// Raw grid plus one grey image per frame for each axis in `codes`.
fn write_maps(report: &QualityReport, codes: &[String], dir: &Path) -> CliResult<()> {
    ensure_dir(dir)?;
    for code in codes {
        let map = report
            .local_map(code)
            .ok_or_else(|| Failure::usage(format!("no map for `{code}`")))?;
        let stem = code.replace('-', "_");
        figures::write_map_csv(map.view(), &dir.join(format!("{stem}.csv"))).kind(Kind::Data)?;
        for (t, frame) in map.axis_iter(Axis(0)).enumerate() {
            figures::gray_map(frame, 16, &dir.join(format!("{stem}_t{t:03}.png"))).kind(Kind::Data)?;
        }
    }
    Ok(())
}

fn all_codes() -> Vec<String> {
    maxvqa_core::dimensions::codes().map(String::from).collect()
}

pub struct PredictOptions<'a> {
    pub inputs: &'a [String],
    pub checkpoint: Option<&'a Path>,
    pub maps: bool,
}

/// Scores every input and writes `<prefix>predictions.csv` plus per-video reports.
/// Returns the prediction table.
pub fn run(config: &RunConfig, opts: &PredictOptions<'_>) -> CliResult<ScoreTable> {
    let text = encoders::text(&config.backbones)?;
    let ex = Extractors::build(&config.backbones, &config.fragments)?;
    check_dims(ex.visual.as_ref(), text.as_ref())?;
    let cache = FeatureCache::open(&config.paths.cache)?;
    let state;
    let (scorer, prefix) = match opts.checkpoint {
        Some(dir) => {
            state = load_model(config, dir, text.as_ref())?;
            (Scorer::Trained(Predictor::new(&state, text.as_ref())?), "")
        }
        None => (Scorer::zero_shot(text.as_ref())?, "zero_shot_"),
    };
    let inputs = resolve_inputs(config, opts.inputs)?;
    if inputs.is_empty() {
        return Err(Failure::data("no videos to score"));
    }
    let out = &config.paths.output;
    let reports_dir = out.join(format!("{prefix}reports"));
    ensure_dir(&reports_dir)?;
    let mut ids = Vec::new();
    let mut values = Array2::zeros((inputs.len(), AXIS_COUNT));
    for (k, input) in inputs.iter().enumerate() {
        let (bundle, _) = load(input, &cache, &ex, config.fragments.seed, false)?;
        let report = scorer.score(&bundle, opts.maps)?;
        write_report(&report, &reports_dir.join(format!("{}.csv", report.video_id)))?;
        if opts.maps {
            write_maps(&report, &all_codes(), &out.join(format!("{prefix}maps")).join(&report.video_id))?;
        }
        values.row_mut(k).assign(&report.scores());
        ids.push(report.video_id);
    }
    let table = ScoreTable::new(ids, values)?;
    let path = out.join(format!("{prefix}predictions.csv"));
    let file = File::create(&path).tag(Kind::Data, || format!("creating {}", path.display()))?;
    table.write_csv(BufWriter::new(file))?;
    Ok(table)
}

/// Zero-shot scores for every input; metrics too when targets are configured.
pub fn zero_shot(config: &RunConfig, inputs: &[String], maps: bool) -> CliResult<Option<String>> {
    let table = run(
        config,
        &PredictOptions {
            inputs,
            checkpoint: None,
            maps,
        },
    )?;
    if config.paths.targets.is_none() && config.paths.annotations.is_none() {
        return Ok(None);
    }
    let targets = data::targets(config)?;
    let ids: Vec<String> = table.ids.iter().filter(|id| targets.contains_key(*id)).cloned().collect();
    if ids.len() < 2 {
        log::warn!("fewer than two scored videos have targets; skipping metrics");
        return Ok(None);
    }
    let metrics = evaluate_metrics(&table, &data::target_table(&targets, &ids)?)?;
    let rows = vec![("zero-shot".to_string(), metrics)];
    let out = &config.paths.output;
    let csv_path = out.join("zero_shot_metrics.csv");
    write_benchmark_csv(&rows, BufWriter::new(File::create(&csv_path)?))?;
    let mut text = Vec::new();
    write_benchmark_text(&rows, &mut text)?;
    std::fs::write(out.join("zero_shot_metrics.txt"), &text)?;
    Ok(Some(String::from_utf8_lossy(&text).into_owned()))
}

pub struct MapOptions<'a> {
    pub input: &'a str,
    pub codes: &'a [String],
    pub frame: Option<usize>,
    pub checkpoint: Option<&'a Path>,
}

/// Maps for the requested axes and an overlay figure of one frame.
pub fn quality_map(config: &RunConfig, opts: &MapOptions<'_>) -> CliResult<PathBuf> {
    for c in opts.codes {
        lookup(c)?;
    }
    let text = encoders::text(&config.backbones)?;
    let ex = Extractors::build(&config.backbones, &config.fragments)?;
    check_dims(ex.visual.as_ref(), text.as_ref())?;
    let cache = FeatureCache::open(&config.paths.cache)?;
    let state;
    let scorer = match opts.checkpoint {
        Some(dir) => {
            state = load_model(config, dir, text.as_ref())?;
            Scorer::Trained(Predictor::new(&state, text.as_ref())?)
        }
        None => Scorer::zero_shot(text.as_ref())?,
    };
    let input = resolve_inputs(config, &[opts.input.to_string()])?.remove(0);
    let (bundle, clip) = load(&input, &cache, &ex, config.fragments.seed, true)?;
    let report = scorer.score(&bundle, true)?;
    let dir = config.paths.output.join("maps").join(&report.video_id);
    write_maps(&report, opts.codes, &dir)?;

    let frames = bundle.frames();
    let t = opts.frame.unwrap_or(frames / 2);
    if t >= frames {
        return Err(Failure::usage(format!("frame {t} out of range, clip has {frames} sampled frames")));
    }
    let picked: Vec<(String, Array2<f64>)> = opts
        .codes
        .iter()
        .map(|c| {
            let m = report.local_map(c).expect("maps requested");
            (c.clone(), m.index_axis(Axis(0), t).to_owned())
        })
        .collect();
    let views: Vec<(&str, ndarray::ArrayView2<'_, f64>)> = picked.iter().map(|(c, m)| (c.as_str(), m.view())).collect();
    let background: Option<&RgbImage> = clip
        .as_ref()
        .map(|c| &c.frames[temporal_indices(c.frame_count(), frames)[t]]);
    let path = dir.join(format!("overlay_t{t:03}.png"));
    figures::overlays(background, &views, &path).kind(Kind::Data)?;
    write_report(&report, &dir.join("report.csv"))?;
    Ok(path)
}
