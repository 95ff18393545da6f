//! Deterministic stand-in encoders built from fixed random projections.

use image::RgbImage;
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{digest_arrays, AttentionPool, FeatureGrid, FragmentEncoder, FrameEncoding, Linear, TextEncoder, VisualEncoder};
use crate::error::{Error, Result};
use crate::fragments::FragmentView;
use crate::prompts::TokenSequence;

const SUB_BLOCKS: usize = 4;
const BLOCK_MEANS: usize = SUB_BLOCKS * SUB_BLOCKS * 3;

/// Length of the vector returned by [`patch_statistics`].
pub const PATCH_STATISTICS: usize = BLOCK_MEANS + 3;

fn block_means(frame: &RgbImage, row0: usize, col0: usize, size: usize, out: &mut [f64]) {
    let sub = size / SUB_BLOCKS;
    let norm = 1.0 / (255.0 * (sub * sub) as f64);
    for bi in 0..SUB_BLOCKS {
        for bj in 0..SUB_BLOCKS {
            let mut acc = [0u64; 3];
            for r in row0 + bi * sub..row0 + (bi + 1) * sub {
                for c in col0 + bj * sub..col0 + (bj + 1) * sub {
                    let p = frame.get_pixel(c as u32, r as u32).0;
                    for ch in 0..3 {
                        acc[ch] += p[ch] as u64;
                    }
                }
            }
            for ch in 0..3 {
                out[(bi * SUB_BLOCKS + bj) * 3 + ch] = acc[ch] as f64 * norm;
            }
        }
    }
}

/// Per-patch statistics: 4x4 sub-block channel means in `[0, 1]`, followed
/// by the mean absolute horizontal+vertical gradient per channel (a
/// sharpness cue that drops when the patch is blurred).
pub fn patch_statistics(frame: &RgbImage, row0: usize, col0: usize, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; PATCH_STATISTICS];
    block_means(frame, row0, col0, size, &mut out[..BLOCK_MEANS]);
    let mut grad = [0.0f64; 3];
    let mut count = 0usize;
    for r in row0..row0 + size - 1 {
        for c in col0..col0 + size - 1 {
            let p = frame.get_pixel(c as u32, r as u32).0;
            let right = frame.get_pixel(c as u32 + 1, r as u32).0;
            let down = frame.get_pixel(c as u32, r as u32 + 1).0;
            for ch in 0..3 {
                grad[ch] += (p[ch] as f64 - right[ch] as f64).abs() + (p[ch] as f64 - down[ch] as f64).abs();
            }
            count += 1;
        }
    }
    for ch in 0..3 {
        out[BLOCK_MEANS + ch] = grad[ch] / (255.0 * count.max(1) as f64);
    }
    out
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Patch-statistics trunk followed by a real attention-pooling layer.
#[derive(Debug, Clone)]
pub struct StubVisualEncoder {
    input_size: u32,
    grid: usize,
    pub trunk: Linear,
    pub pool: AttentionPool,
    seed: Option<u64>,
}

impl StubVisualEncoder {
    /// 224x224 input, 7x7 grid of 32x32 patches.
    pub fn new(seed: u64, width: usize, embed_dim: usize, heads: usize) -> Result<Self> {
        let grid = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = Linear::uniform(PATCH_STATISTICS, width, &mut rng);
        let pos_std = 1.0 / (width as f64).sqrt();
        let pool = AttentionPool::new(
            normal_matrix(grid * grid + 1, width, pos_std, &mut rng),
            Linear::uniform(width, width, &mut rng),
            Linear::uniform(width, width, &mut rng),
            Linear::uniform(width, width, &mut rng),
            Linear::uniform(width, embed_dim, &mut rng),
            heads,
        )?;
        Ok(Self {
            input_size: 224,
            grid,
            trunk,
            pool,
            seed: Some(seed),
        })
    }

    pub fn from_parts(input_size: u32, grid: usize, trunk: Linear, pool: AttentionPool) -> Result<Self> {
        let patch = input_size as usize / grid.max(1);
        if grid == 0 || patch * grid != input_size as usize || !patch.is_multiple_of(SUB_BLOCKS) {
            return Err(Error::Shape(format!(
                "input {input_size} must split into {grid} patches divisible by {SUB_BLOCKS}"
            )));
        }
        if trunk.input_dim() != PATCH_STATISTICS || trunk.output_dim() != pool.width() {
            return Err(Error::Shape("trunk does not connect statistics to the pool width".into()));
        }
        if pool.cells() != grid * grid {
            return Err(Error::Shape("pool positional table does not match grid".into()));
        }
        Ok(Self {
            input_size,
            grid,
            trunk,
            pool,
            seed: None,
        })
    }
}

impl VisualEncoder for StubVisualEncoder {
    fn id(&self) -> String {
        match self.seed {
            Some(s) => format!("stub-visual:{}x{}:seed{s}", self.pool.width(), self.pool.output_dim()),
            None => format!("stub-visual:custom:{}", &self.parameter_digest()[..12]),
        }
    }

    fn input_size(&self) -> u32 {
        self.input_size
    }

    fn embed_dim(&self) -> usize {
        self.pool.output_dim()
    }

    fn grid(&self) -> usize {
        self.grid
    }

    fn encode_image(&self, frame: &RgbImage) -> Result<FrameEncoding> {
        if frame.dimensions() != (self.input_size, self.input_size) {
            return Err(Error::Geometry(format!(
                "visual stub expects {0}x{0} input",
                self.input_size
            )));
        }
        let patch = self.input_size as usize / self.grid;
        let mut stats = Array2::zeros((self.grid * self.grid, PATCH_STATISTICS));
        for i in 0..self.grid {
            for j in 0..self.grid {
                let v = patch_statistics(frame, i * patch, j * patch, patch);
                stats.row_mut(i * self.grid + j).assign(&ArrayView1::from(&v));
            }
        }
        let pre_pool = self.trunk.forward(stats.view())?;
        let (global, local) = self.pool.forward(pre_pool.view())?;
        Ok(FrameEncoding {
            global,
            local,
            pre_pool,
            grid: self.grid,
        })
    }

    fn parameter_digest(&self) -> String {
        let p = &self.pool;
        let bias = |l: &Linear| l.bias.view().insert_axis(ndarray::Axis(0)).to_owned();
        let biases = [&self.trunk, &p.query, &p.key, &p.value, &p.output].map(bias);
        digest_arrays(
            "stub-visual",
            [
                self.trunk.weight.view(),
                p.positional.view(),
                p.query.weight.view(),
                p.key.weight.view(),
                p.value.weight.view(),
                p.output.weight.view(),
            ]
            .into_iter()
            .chain(biases.iter().map(|b| b.view())),
        )
    }
}

/// Token embeddings plus positions, a tanh layer, mean pooling over the
/// sequence and a final projection. Differentiable in the context slot.
#[derive(Debug, Clone)]
pub struct StubTextEncoder {
    pub token_embedding: Array2<f64>,
    pub positional: Array2<f64>,
    pub hidden: Linear,
    /// `embed_dim x hidden`, no bias.
    pub projection: Array2<f64>,
    seed: u64,
}

impl StubTextEncoder {
    pub fn new(
        vocab_size: usize,
        token_dim: usize,
        hidden: usize,
        embed_dim: usize,
        context_length: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let token_embedding = normal_matrix(vocab_size, token_dim, 1.0, &mut rng);
        let positional = normal_matrix(context_length, token_dim, 0.1, &mut rng);
        let hidden = Linear::uniform(token_dim, hidden, &mut rng);
        let proj_std = 1.0 / (hidden.output_dim() as f64).sqrt();
        let projection = normal_matrix(embed_dim, hidden.output_dim(), proj_std, &mut rng);
        Self {
            token_embedding,
            positional,
            hidden,
            projection,
            seed,
        }
    }

    fn check(&self, tokens: &TokenSequence, context: ArrayView1<'_, f64>) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        if tokens.len() > self.context_length() {
            return Err(Error::TokenOverflow {
                len: tokens.len(),
                limit: self.context_length(),
            });
        }
        if tokens.context_slot >= tokens.len() {
            return Err(Error::InvalidArgument("context slot outside the sequence".into()));
        }
        if context.len() != self.token_dim() {
            return Err(Error::Shape(format!(
                "context width {} but token width {}",
                context.len(),
                self.token_dim()
            )));
        }
        if let Some(&bad) = tokens.ids.iter().find(|&&id| id as usize >= self.token_embedding.nrows()) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Hidden activations, one row per token.
    fn hidden_states(&self, tokens: &TokenSequence, context: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((tokens.len(), self.token_dim()));
        for (k, &id) in tokens.ids.iter().enumerate() {
            let mut row = x.row_mut(k);
            if k == tokens.context_slot {
                row.assign(&context);
            } else {
                row.assign(&self.token_embedding.row(id as usize));
            }
            row += &self.positional.row(k);
        }
        Ok(self.hidden.forward(x.view())?.mapv_into(f64::tanh))
    }
}

impl TextEncoder for StubTextEncoder {
    fn id(&self) -> String {
        format!(
            "stub-text:{}x{}x{}:seed{}",
            self.token_dim(),
            self.hidden.output_dim(),
            self.embed_dim(),
            self.seed
        )
    }

    fn embed_dim(&self) -> usize {
        self.projection.nrows()
    }

    fn token_dim(&self) -> usize {
        self.token_embedding.ncols()
    }

    fn context_length(&self) -> usize {
        self.positional.nrows()
    }

    fn token_embedding(&self, id: u32) -> Result<Array1<f64>> {
        if id as usize >= self.token_embedding.nrows() {
            return Err(Error::InvalidArgument(format!("token id {id} outside vocabulary")));
        }
        Ok(self.token_embedding.row(id as usize).to_owned())
    }

    fn encode(&self, tokens: &TokenSequence, context: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check(tokens, context)?;
        let h = self.hidden_states(tokens, context)?;
        let pooled = h.mean_axis(ndarray::Axis(0)).expect("non-empty");
        Ok(self.projection.dot(&pooled))
    }

    fn context_gradient(
        &self,
        tokens: &TokenSequence,
        context: ArrayView1<'_, f64>,
        grad_output: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        self.check(tokens, context)?;
        if grad_output.len() != self.embed_dim() {
            return Err(Error::Shape("gradient width differs from embedding width".into()));
        }
        let h = self.hidden_states(tokens, context)?;
        let grad_pooled = self.projection.t().dot(&grad_output) / tokens.len() as f64;
        let slot = h.row(tokens.context_slot);
        let grad_pre = &grad_pooled * &slot.mapv(|v| 1.0 - v * v);
        Ok(self.hidden.weight.t().dot(&grad_pre))
    }

    fn parameter_digest(&self) -> String {
        let bias = self.hidden.bias.view().insert_axis(ndarray::Axis(0));
        digest_arrays(
            "stub-text",
            [
                self.token_embedding.view(),
                self.positional.view(),
                self.hidden.weight.view(),
                bias,
                self.projection.view(),
            ],
        )
    }
}

/// Linear stand-in for a windowed video transformer: tubes of two frames by
/// `stride x stride` pixels are reduced to sub-block means and projected.
/// Output lattice is `ceil(T/2) x (side/stride) x (side/stride)`.
#[derive(Debug, Clone)]
pub struct StubFragmentEncoder {
    input_size: usize,
    stride: usize,
    pub projection: Linear,
    seed: u64,
}

pub const FRAGMENT_TEMPORAL_STRIDE: usize = 2;

impl StubFragmentEncoder {
    pub fn new(seed: u64, embed_dim: usize) -> Self {
        Self::with_geometry(seed, embed_dim, 224, 32)
    }

    pub fn with_geometry(seed: u64, embed_dim: usize, input_size: usize, stride: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = FRAGMENT_TEMPORAL_STRIDE * BLOCK_MEANS;
        let mut projection = Linear::uniform(input, embed_dim, &mut rng);
        // Keep the bias clearly non-zero so it is identifiable in tests.
        projection.bias.mapv_inplace(|b| b + rng.random_range(0.5..1.0));
        Self {
            input_size,
            stride,
            projection,
            seed,
        }
    }

    /// Native output lattice `(frames, grid)` for `frames` input frames.
    pub fn output_geometry(&self, frames: usize) -> (usize, usize) {
        (frames.div_ceil(FRAGMENT_TEMPORAL_STRIDE), self.input_size / self.stride)
    }
}

impl FragmentEncoder for StubFragmentEncoder {
    fn id(&self) -> String {
        format!("stub-fragment:{}:seed{}", self.embed_dim(), self.seed)
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn embed_dim(&self) -> usize {
        self.projection.output_dim()
    }

    fn encode(&self, view: &FragmentView) -> Result<FeatureGrid> {
        if view.frames.iter().any(|f| f.dimensions() != (self.input_size as u32, self.input_size as u32)) {
            return Err(Error::Geometry(format!(
                "fragment encoder expects {0}x{0} frames",
                self.input_size
            )));
        }
        let (frames, grid) = self.output_geometry(view.frames.len());
        let mut tubes = Array2::zeros((frames * grid * grid, FRAGMENT_TEMPORAL_STRIDE * BLOCK_MEANS));
        for tt in 0..frames {
            for dt in 0..FRAGMENT_TEMPORAL_STRIDE {
                // Missing trailing frames stay zero (black padding).
                let Some(frame) = view.frames.get(tt * FRAGMENT_TEMPORAL_STRIDE + dt) else {
                    continue;
                };
                for i in 0..grid {
                    for j in 0..grid {
                        let mut row = tubes.row_mut((tt * grid + i) * grid + j);
                        let slice = row.as_slice_mut().expect("contiguous row");
                        block_means(
                            frame,
                            i * self.stride,
                            j * self.stride,
                            self.stride,
                            &mut slice[dt * BLOCK_MEANS..(dt + 1) * BLOCK_MEANS],
                        );
                    }
                }
            }
        }
        FeatureGrid::new(frames, grid, self.projection.forward(tubes.view())?)
    }

    fn parameter_digest(&self) -> String {
        let bias = self.projection.bias.view().insert_axis(ndarray::Axis(0));
        digest_arrays("stub-fragment", [self.projection.weight.view(), bias])
    }
}
