use std::collections::HashMap;
use std::io::Read;

use ndarray::{Array1, ArrayView1};
use serde::Deserialize;

use super::TextEncoder;
use crate::error::{Error, Result};
use crate::prompts::{TokenSequence, Vocabulary};

/// Lookup table of prompt embeddings exported from an external text encoder.
///
/// Only usable with the untrained context (the literal `X`), i.e. for
/// zero-shot scoring; it has no gradient path into the context slot.
#[derive(Debug, Clone)]
pub struct PrecomputedTextEncoder {
    name: String,
    embeddings: HashMap<String, Array1<f64>>,
    embed_dim: usize,
    vocab: Vocabulary,
}

#[derive(Deserialize)]
struct TableFile {
    encoder: String,
    embeddings: HashMap<String, Vec<f64>>,
}

impl PrecomputedTextEncoder {
    pub fn new(name: impl Into<String>, embeddings: HashMap<String, Vec<f64>>, vocab: Vocabulary) -> Result<Self> {
        let embed_dim = embeddings
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::Empty("embedding table".into()))?;
        if embeddings.values().any(|v| v.len() != embed_dim) {
            return Err(Error::Shape("embedding table rows differ in width".into()));
        }
        Ok(Self {
            name: name.into(),
            embeddings: embeddings.into_iter().map(|(k, v)| (k, Array1::from(v))).collect(),
            embed_dim,
            vocab,
        })
    }

    /// Reads `{"encoder": "...", "embeddings": {"A X Sharp photo.": [..], ...}}`.
    pub fn from_json<R: Read>(reader: R, vocab: Vocabulary) -> Result<Self> {
        let table: TableFile = serde_json::from_reader(reader)?;
        Self::new(table.encoder, table.embeddings, vocab)
    }
}

impl TextEncoder for PrecomputedTextEncoder {
    fn id(&self) -> String {
        format!("precomputed:{}", self.name)
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn token_dim(&self) -> usize {
        1
    }

    fn context_length(&self) -> usize {
        77
    }

    fn token_embedding(&self, _id: u32) -> Result<Array1<f64>> {
        Ok(Array1::zeros(1))
    }

    fn encode(&self, tokens: &TokenSequence, context: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        if context.len() != 1 || context[0] != 0.0 {
            return Err(Error::Unsupported(
                "precomputed prompt embeddings only cover the untrained context".into(),
            ));
        }
        let text = self.vocab.decode(&tokens.ids);
        self.embeddings
            .get(&text)
            .cloned()
            .ok_or_else(|| Error::Backbone(format!("no precomputed embedding for `{text}`")))
    }

    fn context_gradient(
        &self,
        _tokens: &TokenSequence,
        _context: ArrayView1<'_, f64>,
        _grad_output: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        Err(Error::Unsupported("precomputed prompt embeddings are not differentiable".into()))
    }

    fn parameter_digest(&self) -> String {
        let mut keys: Vec<_> = self.embeddings.keys().collect();
        keys.sort();
        let rows: Vec<_> = keys
            .iter()
            .map(|k| self.embeddings[*k].view().insert_axis(ndarray::Axis(0)))
            .collect();
        super::digest_arrays("precomputed-text", rows)
    }
}
