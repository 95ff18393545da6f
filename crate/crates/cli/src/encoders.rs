//! Building the frozen encoders named in the configuration.

use std::fs::File;

use maxvqa_core::backbones::cache::ExtractionKey;
use maxvqa_core::backbones::{
    ClipResNetConfig, ClipResNetEncoder, FragmentEncoder, PrecomputedTextEncoder, StubFragmentEncoder,
    StubTextEncoder, StubVisualEncoder, TextEncoder, VisualEncoder,
};
use maxvqa_core::prompts::Vocabulary;

use crate::config::{BackboneConfig, FragmentKind, FragmentSection, TextKind, VisualKind};
use crate::error::{CliResult, Failure, Kind, Tag};

const STUB_TOKEN_DIM: usize = 32;
const STUB_TEXT_HIDDEN: usize = 64;
const STUB_CONTEXT_LENGTH: usize = 16;

pub fn visual(cfg: &BackboneConfig) -> CliResult<Box<dyn VisualEncoder>> {
    match cfg.visual {
        VisualKind::Stub => Ok(Box::new(
            StubVisualEncoder::new(cfg.seed, cfg.stub_width, cfg.embed_dim, cfg.heads)
                .tag(Kind::Backbone, || "building the stub visual encoder".into())?,
        )),
        VisualKind::ClipRn50 => {
            let path = cfg.visual_weights.as_deref().expect("validated");
            Ok(Box::new(
                ClipResNetEncoder::load(path, ClipResNetConfig::rn50(), &cfg.weights_prefix)
                    .tag(Kind::Backbone, || format!("loading {}", path.display()))?,
            ))
        }
    }
}

pub fn text(cfg: &BackboneConfig) -> CliResult<Box<dyn TextEncoder>> {
    let vocab = Vocabulary::standard();
    match cfg.text {
        TextKind::Stub => Ok(Box::new(StubTextEncoder::new(
            vocab.len(),
            STUB_TOKEN_DIM,
            STUB_TEXT_HIDDEN,
            cfg.embed_dim,
            STUB_CONTEXT_LENGTH,
            cfg.seed.wrapping_add(1),
        ))),
        TextKind::Precomputed => {
            let path = cfg.text_table.as_deref().expect("validated");
            let file = File::open(path).tag(Kind::Backbone, || format!("opening {}", path.display()))?;
            Ok(Box::new(
                PrecomputedTextEncoder::from_json(file, vocab)
                    .tag(Kind::Backbone, || format!("reading {}", path.display()))?,
            ))
        }
    }
}

pub fn fragment(cfg: &BackboneConfig, fragments: &FragmentSection) -> Option<Box<dyn FragmentEncoder>> {
    match cfg.fragment {
        FragmentKind::None => None,
        FragmentKind::Stub => Some(Box::new(StubFragmentEncoder::with_geometry(
            cfg.seed.wrapping_add(2),
            cfg.fragment_dim,
            fragments.grid * fragments.patch,
            fragments.patch,
        ))),
    }
}

/// Encoders needed to read or write the feature cache.
pub struct Extractors {
    pub visual: Box<dyn VisualEncoder>,
    pub fragment: Option<Box<dyn FragmentEncoder>>,
    pub key: ExtractionKey,
}

impl Extractors {
    pub fn build(cfg: &BackboneConfig, fragments: &FragmentSection) -> CliResult<Self> {
        let visual = visual(cfg)?;
        let fragment = fragment(cfg, fragments);
        let key = ExtractionKey {
            visual_backbone: visual.id(),
            fragment_backbone: fragment.as_ref().map(|f| f.id()),
            fragment_params: fragments.params(),
            fragment_seed: fragments.seed,
        };
        Ok(Self { visual, fragment, key })
    }
}

pub fn check_dims(visual: &dyn VisualEncoder, text: &dyn TextEncoder) -> CliResult<()> {
    if visual.embed_dim() != text.embed_dim() {
        return Err(Failure::new(
            Kind::Backbone,
            anyhow::anyhow!(
                "visual embedding width {} differs from text embedding width {}",
                visual.embed_dim(),
                text.embed_dim()
            ),
        ));
    }
    Ok(())
}
