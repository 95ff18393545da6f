//! Test-split metrics for trained checkpoints.

use std::fs::{self, File};
use std::io::BufWriter;

use maxvqa_core::analytics::{evaluate_metrics, write_benchmark_csv, write_benchmark_text, MetricsResult};
use maxvqa_core::backbones::cache::FeatureCache;
use maxvqa_core::training::predict_table;

use super::ensure_dir;
use super::predict::load_model;
use crate::config::{RunConfig, SplitKind};
use crate::data;
use crate::encoders::{self, check_dims, Extractors};
use crate::error::{CliResult, Kind, Tag};

/// Per-split metrics (plus their mean for random splits), as benchmark rows.
pub fn run(config: &RunConfig) -> CliResult<Vec<(String, MetricsResult)>> {
    let text = encoders::text(&config.backbones)?;
    let ex = Extractors::build(&config.backbones, &config.fragments)?;
    check_dims(ex.visual.as_ref(), text.as_ref())?;
    let cache = FeatureCache::open(&config.paths.cache)?;
    let targets = data::targets(config)?;
    let ids = data::labeled_cached_ids(&targets, &cache, &ex)?;
    let splits = data::splits(config, &ids)?;

    let mut rows = Vec::new();
    for (s, split) in splits.iter().enumerate() {
        let state = load_model(config, &data::split_dir(config, &config.paths.checkpoint, s), text.as_ref())?;
        let test = data::samples(&split.test, &targets, &cache, &ex)?;
        let predictions = predict_table(&state, text.as_ref(), &test)?;
        let metrics = evaluate_metrics(&predictions, &data::target_table(&targets, &split.test)?)?;
        let out_dir = data::split_dir(config, &config.paths.output, s);
        ensure_dir(&out_dir)?;
        let path = out_dir.join("test_predictions.csv");
        let file = File::create(&path).tag(Kind::Data, || format!("creating {}", path.display()))?;
        predictions.write_csv(BufWriter::new(file))?;
        let label = match config.split.kind {
            SplitKind::Fixed => "maxvqa".to_string(),
            SplitKind::Random => format!("split-{s:02}"),
        };
        rows.push((label, metrics));
    }
    if config.split.kind == SplitKind::Random {
        let results: Vec<MetricsResult> = rows.iter().map(|(_, m)| m.clone()).collect();
        rows.push(("mean".to_string(), MetricsResult::mean(&results)?));
    }
    let out = &config.paths.output;
    ensure_dir(out)?;
    write_benchmark_csv(&rows, BufWriter::new(File::create(out.join("metrics.csv"))?))?;
    let mut text_table = Vec::new();
    write_benchmark_text(&rows, &mut text_table)?;
    fs::write(out.join("metrics.txt"), &text_table)?;
    Ok(rows)
}
