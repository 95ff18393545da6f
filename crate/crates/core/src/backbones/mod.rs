//! Frozen encoders and the trainable fusion MLP.
//!
//! Three encoder families plug in behind traits: a visual tower whose final
//! attention pooling yields both a global token and per-cell local tokens,
//! a text encoder with one substitutable context slot, and a fragment video
//! encoder. Deterministic stub implementations back the test suite; the
//! CLIP ResNet tower loads real weights from a safetensors file.

mod attention_pool;
pub mod cache;
mod clip_resnet;
mod fusion;
mod linear;
mod precomputed;
mod stub;

use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use sha2::{Digest, Sha256};

pub use attention_pool::AttentionPool;
pub use clip_resnet::{ClipResNetConfig, ClipResNetEncoder};
pub use fusion::{ForwardMode, FusionGrads, FusionMlp, FusionTape};
pub use linear::Linear;
pub use precomputed::PrecomputedTextEncoder;
pub use stub::{patch_statistics, StubFragmentEncoder, StubTextEncoder, StubVisualEncoder, PATCH_STATISTICS};

use crate::error::{Error, Result};
use crate::fragments::{sample_fragments, temporal_indices, FragmentParams, FragmentView, VideoClip};
use crate::prompts::TokenSequence;

/// Per-cell features over `frames x grid x grid` cells, one row per cell.
/// Row index is `(t * grid + i) * grid + j`; `new` stores rows contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub frames: usize,
    pub grid: usize,
    pub data: Array2<f64>,
}

impl FeatureGrid {
    pub fn new(frames: usize, grid: usize, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != frames * grid * grid {
            return Err(Error::Shape(format!(
                "{} rows for a {frames}x{grid}x{grid} grid",
                data.nrows()
            )));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self { frames, grid, data })
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn cells_per_frame(&self) -> usize {
        self.grid * self.grid
    }

    pub fn index(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.grid + i) * self.grid + j
    }

    pub fn cell(&self, t: usize, i: usize, j: usize) -> ArrayView1<'_, f64> {
        self.data.row(self.index(t, i, j))
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        let n = self.cells_per_frame();
        self.data.slice(s![t * n..(t + 1) * n, ..])
    }

    /// Nearest-cell resampling onto a `frames x grid x grid` lattice
    /// (cell centres mapped back onto the source lattice).
    pub fn resample(&self, frames: usize, grid: usize) -> FeatureGrid {
        if frames == self.frames && grid == self.grid {
            return self.clone();
        }
        let nearest = |k: usize, dst: usize, src: usize| ((2 * k + 1) * src / (2 * dst)).min(src - 1);
        let mut data = Array2::zeros((frames * grid * grid, self.dim()));
        for t in 0..frames {
            let st = nearest(t, frames, self.frames);
            for i in 0..grid {
                let si = nearest(i, grid, self.grid);
                for j in 0..grid {
                    let sj = nearest(j, grid, self.grid);
                    data.row_mut((t * grid + i) * grid + j).assign(&self.cell(st, si, sj));
                }
            }
        }
        FeatureGrid { frames, grid, data }
    }
}

/// Output of the visual tower for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEncoding {
    pub global: Array1<f64>,
    /// `grid*grid x d` attended per-cell outputs.
    pub local: Array2<f64>,
    /// `grid*grid x width` tokens entering the attention pooling.
    pub pre_pool: Array2<f64>,
    pub grid: usize,
}

pub trait VisualEncoder: Send + Sync {
    fn id(&self) -> String;
    /// Square input side expected by [`VisualEncoder::encode_image`].
    fn input_size(&self) -> u32;
    fn embed_dim(&self) -> usize;
    fn grid(&self) -> usize;
    fn encode_image(&self, frame: &RgbImage) -> Result<FrameEncoding>;
    fn parameter_digest(&self) -> String;
}

pub trait TextEncoder: Send + Sync {
    fn id(&self) -> String;
    fn embed_dim(&self) -> usize;
    /// Width of token embeddings, i.e. of the context vector.
    fn token_dim(&self) -> usize;
    fn context_length(&self) -> usize;
    fn token_embedding(&self, id: u32) -> Result<Array1<f64>>;
    /// Encodes `tokens` with `context` substituted at the context slot.
    fn encode(&self, tokens: &TokenSequence, context: ArrayView1<'_, f64>) -> Result<Array1<f64>>;
    /// Vector-Jacobian product of [`TextEncoder::encode`] with respect to the context vector.
    fn context_gradient(
        &self,
        tokens: &TokenSequence,
        context: ArrayView1<'_, f64>,
        grad_output: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>>;
    fn parameter_digest(&self) -> String;
}

pub trait FragmentEncoder: Send + Sync {
    fn id(&self) -> String;
    /// Side of the spliced frames the encoder accepts.
    fn input_size(&self) -> usize;
    fn embed_dim(&self) -> usize;
    /// Features on the encoder's native `frames x grid x grid` lattice.
    fn encode(&self, view: &FragmentView) -> Result<FeatureGrid>;
    fn parameter_digest(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatures {
    pub global: Array2<f64>,
    pub local: FeatureGrid,
    pub pre_pool: FeatureGrid,
}

/// Runs the visual tower on every frame, resizing to its input size first.
pub fn encode_frames(frames: &[RgbImage], encoder: &dyn VisualEncoder) -> Result<VisualFeatures> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames to encode".into()));
    }
    let size = encoder.input_size();
    let encoded = frames
        .iter()
        .map(|f| {
            if f.dimensions() == (size, size) {
                encoder.encode_image(f)
            } else {
                encoder.encode_image(&imageops::resize(f, size, size, FilterType::Triangle))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = encoded[0].grid;
    let stack = |rows: Vec<ArrayView2<'_, f64>>| -> Result<Array2<f64>> {
        ndarray::concatenate(ndarray::Axis(0), &rows).map_err(|e| Error::Shape(e.to_string()))
    };
    let global = stack(encoded.iter().map(|e| e.global.view().insert_axis(ndarray::Axis(0))).collect())?;
    let local = stack(encoded.iter().map(|e| e.local.view()).collect())?;
    let pre_pool = stack(encoded.iter().map(|e| e.pre_pool.view()).collect())?;
    Ok(VisualFeatures {
        global,
        local: FeatureGrid::new(frames.len(), grid, local)?,
        pre_pool: FeatureGrid::new(frames.len(), grid, pre_pool)?,
    })
}

/// Encodes a fragment view and aligns the result onto a `frames x grid x grid` lattice.
pub fn encode_fragments(
    view: &FragmentView,
    encoder: &dyn FragmentEncoder,
    frames: usize,
    grid: usize,
) -> Result<FeatureGrid> {
    if view.side() != encoder.input_size() {
        return Err(Error::Geometry(format!(
            "fragment side {} but encoder expects {}",
            view.side(),
            encoder.input_size()
        )));
    }
    Ok(encoder.encode(view)?.resample(frames, grid))
}

/// Everything the scorer needs for one video; the fused grid is computed on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub source_id: String,
    /// `frames x d` global tokens.
    pub global: Array2<f64>,
    pub local: FeatureGrid,
    /// Fragment-branch features aligned to `local`.
    pub fragment: Option<FeatureGrid>,
}

impl FeatureBundle {
    pub fn frames(&self) -> usize {
        self.local.frames
    }

    pub fn grid(&self) -> usize {
        self.local.grid
    }

    pub fn embed_dim(&self) -> usize {
        self.local.dim()
    }

    pub fn fragment_dim(&self) -> usize {
        self.fragment.as_ref().map_or(0, FeatureGrid::dim)
    }
}

/// Fragment branch configuration for [`extract_bundle`].
pub struct FragmentBranch<'a> {
    pub encoder: &'a dyn FragmentEncoder,
    pub seed: u64,
}

/// Runs both branches on `clip`. The visual tower sees the same `params.frames`
/// source frames the fragment sampler splices.
pub fn extract_bundle(
    clip: &VideoClip,
    visual: &dyn VisualEncoder,
    params: FragmentParams,
    fragment: Option<FragmentBranch<'_>>,
) -> Result<FeatureBundle> {
    if params.frames == 0 {
        return Err(Error::InvalidArgument("frame count must be >= 1".into()));
    }
    let indices = temporal_indices(clip.frame_count(), params.frames);
    let frames: Vec<RgbImage> = indices.iter().map(|&t| clip.frames[t].clone()).collect();
    let vis = encode_frames(&frames, visual)?;
    let fragment = match fragment {
        Some(branch) => {
            let view = sample_fragments(clip, params, branch.seed)?;
            debug_assert_eq!(view.plan.frame_indices, indices);
            Some(encode_fragments(&view, branch.encoder, vis.local.frames, vis.local.grid)?)
        }
        None => None,
    };
    Ok(FeatureBundle {
        source_id: clip.source_id.clone(),
        global: vis.global,
        local: vis.local,
        fragment,
    })
}

/// SHA-256 over the little-endian bytes of every array, in order.
pub(crate) fn digest_arrays<'a>(label: &str, arrays: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> String {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    for a in arrays {
        h.update((a.nrows() as u64).to_le_bytes());
        h.update((a.ncols() as u64).to_le_bytes());
        for v in a.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
