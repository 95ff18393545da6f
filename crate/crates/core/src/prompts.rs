//! Per-axis positive/negative prompts with a single learnable context token.
//!
//! Every prompt reads `"A " + Ctx + " " + template`, where the template is
//! `"<desc> photo."` for technical and aggregate axes and
//! `"<desc> <name> photo."` for aesthetic factor axes. `Ctx` starts out as
//! the literal token `X`; only its embedding is ever trained.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::backbones::TextEncoder;
use crate::dimensions::{registry, DimensionSpec, AXIS_COUNT};
use crate::error::{Error, Result};

pub const START_TOKEN: &str = "<start>";
pub const END_TOKEN: &str = "<end>";
pub const CONTEXT_LITERAL: &str = "X";
const PREFIX: &str = "A";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

/// How the aggregate axes (T-all, A-all, O) build their templates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbstractForm {
    /// `"<desc> photo."`, as for technical factors.
    #[default]
    Plain,
    /// `"<desc> <name> photo."`, as for aesthetic factors (ablation).
    Named,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    /// One context embedding shared by all axes and both polarities.
    #[default]
    Shared,
    /// One context embedding per axis (ablation).
    PerAxis,
}

pub fn build_initial(spec: &DimensionSpec) -> (String, String) {
    build_initial_with(spec, AbstractForm::Plain)
}

pub fn build_initial_with(spec: &DimensionSpec, form: AbstractForm) -> (String, String) {
    let named = spec.is_aesthetic_factor() || (spec.is_abstract && form == AbstractForm::Named);
    let render = |desc: &str| {
        if named {
            format!("{desc} {} photo.", spec.name)
        } else {
            format!("{desc} photo.")
        }
    };
    (render(spec.positive_desc), render(spec.negative_desc))
}

fn words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        match w.strip_suffix('.') {
            Some(stem) if !stem.is_empty() => {
                out.push(stem);
                out.push(".");
            }
            _ => out.push(w),
        }
    }
    out
}

/// Word-level vocabulary covering every prompt the registry can produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn standard() -> Self {
        let mut words_set = BTreeSet::new();
        for form in [AbstractForm::Plain, AbstractForm::Named] {
            for spec in registry() {
                let (p, n) = build_initial_with(spec, form);
                for t in [p, n] {
                    words_set.extend(words(&t).into_iter().map(str::to_string));
                }
            }
        }
        words_set.insert(PREFIX.to_string());
        words_set.insert(CONTEXT_LITERAL.to_string());
        let mut tokens = vec![START_TOKEN.to_string(), END_TOKEN.to_string()];
        tokens.extend(words_set);
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<u32> {
        self.tokens
            .iter()
            .position(|t| t == token)
            .map(|i| i as u32)
            .ok_or_else(|| Error::InvalidArgument(format!("token `{token}` not in vocabulary")))
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokenizes `text`, wrapping it in start/end markers.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = vec![self.id(START_TOKEN)?];
        for w in words(text) {
            ids.push(self.id(w)?);
        }
        ids.push(self.id(END_TOKEN)?);
        Ok(ids)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).unwrap_or("<unk>");
            if tok == START_TOKEN || tok == END_TOKEN {
                continue;
            }
            if !out.is_empty() && tok != "." {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Position whose embedding is replaced by the learnable context vector.
    pub context_slot: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub axis_code: &'static str,
    pub positive_template: String,
    pub negative_template: String,
    pub positive_text: String,
    pub negative_text: String,
    pub positive_tokens: TokenSequence,
    pub negative_tokens: TokenSequence,
}

impl PromptPair {
    pub fn text(&self, polarity: Polarity) -> &str {
        match polarity {
            Polarity::Positive => &self.positive_text,
            Polarity::Negative => &self.negative_text,
        }
    }

    pub fn tokens(&self, polarity: Polarity) -> &TokenSequence {
        match polarity {
            Polarity::Positive => &self.positive_tokens,
            Polarity::Negative => &self.negative_tokens,
        }
    }
}

/// Prepends `"A " + Ctx + " "` to both templates and tokenizes them.
pub fn contextualize(
    axis_code: &'static str,
    templates: (String, String),
    vocab: &Vocabulary,
) -> Result<PromptPair> {
    let render = |t: &str| format!("{PREFIX} {CONTEXT_LITERAL} {t}");
    let positive_text = render(&templates.0);
    let negative_text = render(&templates.1);
    // <start> A Ctx ...
    let context_slot = 2;
    let tokenize = |text: &str| -> Result<TokenSequence> {
        let ids = vocab.encode(text)?;
        debug_assert_eq!(vocab.token(ids[context_slot]), Some(CONTEXT_LITERAL));
        Ok(TokenSequence { ids, context_slot })
    };
    Ok(PromptPair {
        axis_code,
        positive_tokens: tokenize(&positive_text)?,
        negative_tokens: tokenize(&negative_text)?,
        positive_template: templates.0,
        negative_template: templates.1,
        positive_text,
        negative_text,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub pairs: Vec<PromptPair>,
    pub vocab: Vocabulary,
    pub abstract_form: AbstractForm,
}

impl PromptSet {
    pub fn standard() -> Self {
        Self::with_form(AbstractForm::Plain)
    }

    pub fn with_form(abstract_form: AbstractForm) -> Self {
        let vocab = Vocabulary::standard();
        let pairs = registry()
            .iter()
            .map(|spec| contextualize(spec.code, build_initial_with(spec, abstract_form), &vocab))
            .collect::<Result<Vec<_>>>()
            .expect("registry prompts are covered by the standard vocabulary");
        Self {
            pairs,
            vocab,
            abstract_form,
        }
    }

    /// All 32 prompt strings, positive then negative per axis, registry order.
    pub fn texts(&self) -> Vec<&str> {
        self.pairs
            .iter()
            .flat_map(|p| [p.positive_text.as_str(), p.negative_text.as_str()])
            .collect()
    }

    /// Encodes all prompts with the given context embedding.
    pub fn embed(&self, encoder: &dyn TextEncoder, context: &ContextEmbedding) -> Result<PromptEmbeddings> {
        let d = encoder.embed_dim();
        let mut positive = Array2::zeros((self.pairs.len(), d));
        let mut negative = Array2::zeros((self.pairs.len(), d));
        for (a, pair) in self.pairs.iter().enumerate() {
            let ctx = context.for_axis(a);
            positive.row_mut(a).assign(&encoder.encode(&pair.positive_tokens, ctx)?);
            negative.row_mut(a).assign(&encoder.encode(&pair.negative_tokens, ctx)?);
        }
        Ok(PromptEmbeddings { positive, negative })
    }

    /// Writes `axis_code, polarity, text, token_ids` rows for audit.
    pub fn export<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["axis_code", "polarity", "text", "token_ids"])?;
        for pair in &self.pairs {
            for pol in [Polarity::Positive, Polarity::Negative] {
                let ids = pair
                    .tokens(pol)
                    .ids
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(" ");
                w.write_record([pair.axis_code, pol.as_str(), pair.text(pol), &ids])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Text embeddings for every axis, one row per axis in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbeddings {
    pub positive: Array2<f64>,
    pub negative: Array2<f64>,
}

/// The trainable context vector(s) substituted at the context slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding {
    pub mode: ContextMode,
    /// One row when shared, one row per axis otherwise.
    pub vectors: Array2<f64>,
}

impl ContextEmbedding {
    /// Context initialized to the encoder's embedding of the literal `X`.
    pub fn initial(encoder: &dyn TextEncoder, vocab: &Vocabulary, mode: ContextMode) -> Result<Self> {
        let x = encoder.token_embedding(vocab.id(CONTEXT_LITERAL)?)?;
        let rows = match mode {
            ContextMode::Shared => 1,
            ContextMode::PerAxis => AXIS_COUNT,
        };
        let mut vectors = Array2::zeros((rows, x.len()));
        for mut r in vectors.rows_mut() {
            r.assign(&x);
        }
        Ok(Self { mode, vectors })
    }

    pub fn for_axis(&self, axis: usize) -> ArrayView1<'_, f64> {
        match self.mode {
            ContextMode::Shared => self.vectors.row(0),
            ContextMode::PerAxis => self.vectors.row(axis),
        }
    }

    pub fn row_for_axis(&self, axis: usize) -> usize {
        match self.mode {
            ContextMode::Shared => 0,
            ContextMode::PerAxis => axis,
        }
    }

    pub fn width(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn zeros_like(&self) -> Array2<f64> {
        Array2::zeros(self.vectors.raw_dim())
    }
}
