//! Training on cached features, one model per configured split.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use maxvqa_core::backbones::TextEncoder;
use maxvqa_core::evaluator::ModelState;
use maxvqa_core::training::{save_checkpoint, train, write_history_csv, FreezeAudit, Sample};

use super::ensure_dir;
use crate::config::{RunConfig, TextKind};
use crate::data;
use crate::encoders::{self, check_dims, Extractors};
use crate::error::{CliResult, Failure, Kind, Tag};
use maxvqa_core::backbones::cache::FeatureCache;

#[derive(Debug, Clone)]
pub struct SplitSummary {
    pub checkpoint: PathBuf,
    pub train_size: usize,
    pub test_size: usize,
    pub final_loss: f64,
    pub steps: usize,
}

pub fn initial_state(config: &RunConfig, text: &dyn TextEncoder, ex: &Extractors) -> CliResult<ModelState> {
    Ok(ModelState::initial(
        text,
        ex.fragment.as_ref().map(|f| f.embed_dim()),
        config.model.hidden,
        config.model.dropout,
        config.model.init_seed,
        config.model.context_mode,
    )?)
}

pub fn run(config: &RunConfig) -> CliResult<Vec<SplitSummary>> {
    if config.backbones.text == TextKind::Precomputed {
        return Err(Failure::usage(
            "training needs a text encoder with a context gradient; a precomputed table only supports zero-shot",
        ));
    }
    let text = encoders::text(&config.backbones)?;
    let ex = Extractors::build(&config.backbones, &config.fragments)?;
    check_dims(ex.visual.as_ref(), text.as_ref())?;
    let cache = FeatureCache::open(&config.paths.cache)?;
    let targets = data::targets(config)?;
    let ids = data::labeled_cached_ids(&targets, &cache, &ex)?;
    let splits = data::splits(config, &ids)?;

    let mut out = Vec::new();
    for (s, split) in splits.iter().enumerate() {
        let train_set: Vec<Sample> = data::samples(&split.train, &targets, &cache, &ex)?;
        let test_set: Vec<Sample> = data::samples(&split.test, &targets, &cache, &ex)?;
        let before = FreezeAudit::capture(Some(ex.visual.as_ref()), text.as_ref(), ex.fragment.as_deref());
        let state = initial_state(config, text.as_ref(), &ex)?;
        log::info!("split {s}: {} train / {} test videos", train_set.len(), test_set.len());
        let outcome = train(state, text.as_ref(), &train_set, Some(&test_set), &config.train)?;
        let after = FreezeAudit::capture(Some(ex.visual.as_ref()), text.as_ref(), ex.fragment.as_deref());
        let changed = after.changed_since(&before);
        if !changed.is_empty() {
            return Err(Failure::new(Kind::Backbone, anyhow::anyhow!("frozen encoders changed: {changed:?}")));
        }

        let ckpt = data::split_dir(config, &config.paths.checkpoint, s);
        save_checkpoint(&ckpt, &outcome.state, text.as_ref(), outcome.steps, config.train.epochs)?;
        let out_dir = data::split_dir(config, &config.paths.output, s);
        ensure_dir(&out_dir)?;
        let history = out_dir.join("history.csv");
        let file = File::create(&history).tag(Kind::Data, || format!("creating {}", history.display()))?;
        write_history_csv(&outcome.history, BufWriter::new(file))?;
        data::write_split(split, &out_dir.join("split.csv"))?;
        out.push(SplitSummary {
            checkpoint: ckpt,
            train_size: train_set.len(),
            test_size: test_set.len(),
            final_loss: outcome.history.last().map_or(f64::NAN, |r| r.loss),
            steps: outcome.steps,
        });
    }
    Ok(out)
}
