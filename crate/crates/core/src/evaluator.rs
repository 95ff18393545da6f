//! Prompt similarities, two-class softmax scores and local quality maps.

use std::io::Write;

use ndarray::{Array1, Array3, ArrayView1};

use crate::backbones::cache::{ExtractionKey, FeatureCache};
use crate::backbones::{extract_bundle, FeatureBundle, FeatureGrid, ForwardMode, FusionMlp, TextEncoder, VisualEncoder};
use crate::dimensions::{axis_index, registry, AXIS_COUNT};
use crate::error::{Error, Result};
use crate::fragments::{FragmentParams, VideoClip};
use crate::prompts::{ContextEmbedding, ContextMode, PromptEmbeddings, PromptSet};

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of width {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `e^{s+} / (e^{s+} + e^{s-})`, evaluated as a logistic of the difference.
pub fn softmax_score(s_pos: f64, s_neg: f64) -> f64 {
    let d = s_pos - s_neg;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Cosine of `embedding` against every cell, in grid row order.
pub fn cell_cosines(grid: &FeatureGrid, embedding: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if grid.data.nrows() == 0 {
        return Err(Error::Empty("feature grid has no cells".into()));
    }
    grid.data.rows().into_iter().map(|row| cosine(embedding, row)).collect()
}

fn frame_average(grid: &FeatureGrid, cos: &Array1<f64>) -> f64 {
    let cells = grid.cells_per_frame();
    let per_frame: f64 = (0..grid.frames)
        .map(|t| cos.slice(ndarray::s![t * cells..(t + 1) * cells]).sum() / cells as f64)
        .sum();
    per_frame / grid.frames as f64
}

/// `(S+, S-)`: frame mean of the spatial mean of per-cell cosines.
pub fn axis_similarities(
    fused: &FeatureGrid,
    positive: ArrayView1<'_, f64>,
    negative: ArrayView1<'_, f64>,
) -> Result<(f64, f64)> {
    let pos = cell_cosines(fused, positive)?;
    let neg = cell_cosines(fused, negative)?;
    Ok((frame_average(fused, &pos), frame_average(fused, &neg)))
}

/// Per-cell differences `cos+ - cos-` shaped `(T, G, G)`.
pub fn similarity_difference_map(
    fused: &FeatureGrid,
    positive: ArrayView1<'_, f64>,
    negative: ArrayView1<'_, f64>,
) -> Result<Array3<f64>> {
    let diff = cell_cosines(fused, positive)? - cell_cosines(fused, negative)?;
    Ok(diff
        .into_shape_with_order((fused.frames, fused.grid, fused.grid))
        .expect("grid layout"))
}

/// `(T, G, G)` map of per-cell scores `sigma(cos+ - cos-)`.
pub fn local_quality_map(
    fused: &FeatureGrid,
    positive: ArrayView1<'_, f64>,
    negative: ArrayView1<'_, f64>,
) -> Result<Array3<f64>> {
    Ok(similarity_difference_map(fused, positive, negative)?.mapv_into(|d| softmax_score(d, 0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisScore {
    pub code: &'static str,
    pub score: f64,
    pub s_pos: f64,
    pub s_neg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub video_id: String,
    /// All 16 axes in registry order.
    pub axes: Vec<AxisScore>,
    /// `(T, G, G)` maps in registry order, when requested.
    pub local_maps: Option<Vec<Array3<f64>>>,
}

impl QualityReport {
    pub fn get(&self, code: &str) -> Option<&AxisScore> {
        self.axes.iter().find(|a| a.code == code)
    }

    pub fn score(&self, code: &str) -> Option<f64> {
        self.get(code).map(|a| a.score)
    }

    pub fn local_map(&self, code: &str) -> Option<&Array3<f64>> {
        let a = axis_index(code).ok()?;
        self.local_maps.as_ref().map(|m| &m[a])
    }

    pub fn scores(&self) -> Array1<f64> {
        self.axes.iter().map(|a| a.score).collect()
    }

    /// One row per axis: `code,score,s_pos,s_neg`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["code", "score", "s_pos", "s_neg"])?;
        for a in &self.axes {
            w.write_record([
                a.code.to_string(),
                a.score.to_string(),
                a.s_pos.to_string(),
                a.s_neg.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores all axes for an already fused grid.
pub fn score_grid(
    video_id: &str,
    fused: &FeatureGrid,
    embeddings: &PromptEmbeddings,
    with_maps: bool,
) -> Result<QualityReport> {
    if fused.frames == 0 || fused.grid == 0 {
        return Err(Error::Empty(format!("no features for `{video_id}`")));
    }
    if embeddings.positive.nrows() != AXIS_COUNT || embeddings.negative.nrows() != AXIS_COUNT {
        return Err(Error::Shape("prompt embeddings must cover all 16 axes".into()));
    }
    let mut axes = Vec::with_capacity(AXIS_COUNT);
    let mut maps = with_maps.then(Vec::new);
    for (a, spec) in registry().iter().enumerate() {
        let (pos, neg) = (embeddings.positive.row(a), embeddings.negative.row(a));
        let (s_pos, s_neg) = axis_similarities(fused, pos, neg)?;
        axes.push(AxisScore {
            code: spec.code,
            score: softmax_score(s_pos, s_neg),
            s_pos,
            s_neg,
        });
        if let Some(m) = maps.as_mut() {
            m.push(local_quality_map(fused, pos, neg)?);
        }
    }
    Ok(QualityReport {
        video_id: video_id.to_string(),
        axes,
        local_maps: maps,
    })
}

/// The trainable part of the model: fusion MLP and context embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// `None` runs without the fragment branch.
    pub mlp: Option<FusionMlp>,
    pub context: ContextEmbedding,
    pub prompts: PromptSet,
}

impl ModelState {
    /// Untrained state: zero `fc2`, context at its literal initialization.
    /// `hidden` defaults to the local feature width.
    pub fn initial(
        text: &dyn TextEncoder,
        fragment_dim: Option<usize>,
        hidden: Option<usize>,
        dropout: f64,
        seed: u64,
        mode: ContextMode,
    ) -> Result<Self> {
        let prompts = PromptSet::standard();
        let context = ContextEmbedding::initial(text, &prompts.vocab, mode)?;
        let d = text.embed_dim();
        let mlp = fragment_dim
            .map(|df| FusionMlp::new(d, df, hidden.unwrap_or(d), dropout, seed))
            .transpose()?;
        Ok(Self { mlp, context, prompts })
    }

    pub fn fuse(&self, bundle: &FeatureBundle, mode: ForwardMode<'_>) -> Result<FeatureGrid> {
        match (&self.mlp, &bundle.fragment) {
            (None, _) => Ok(bundle.local.clone()),
            (Some(mlp), Some(fragment)) => mlp.forward(&bundle.local, fragment, mode),
            (Some(_), None) => Err(Error::InvalidArgument(format!(
                "`{}` has no fragment features but the model fuses them",
                bundle.source_id
            ))),
        }
    }
}

/// A model snapshot with its prompt embeddings computed once.
pub struct Predictor<'a> {
    pub state: &'a ModelState,
    pub embeddings: PromptEmbeddings,
}

impl<'a> Predictor<'a> {
    pub fn new(state: &'a ModelState, text: &dyn TextEncoder) -> Result<Self> {
        let embeddings = state.prompts.embed(text, &state.context)?;
        Ok(Self { state, embeddings })
    }

    /// Eval-mode scores for every axis.
    pub fn predict(&self, bundle: &FeatureBundle, with_maps: bool) -> Result<QualityReport> {
        let fused = self.state.fuse(bundle, ForwardMode::Eval)?;
        score_grid(&bundle.source_id, &fused, &self.embeddings, with_maps)
    }
}

pub fn predict(
    bundle: &FeatureBundle,
    state: &ModelState,
    text: &dyn TextEncoder,
    with_maps: bool,
) -> Result<QualityReport> {
    Predictor::new(state, text)?.predict(bundle, with_maps)
}

/// Local features only, prompts with the untrained context literal.
pub fn zero_shot_predict(bundle: &FeatureBundle, text: &dyn TextEncoder, with_maps: bool) -> Result<QualityReport> {
    let prompts = PromptSet::standard();
    let context = ContextEmbedding::initial(text, &prompts.vocab, ContextMode::Shared)?;
    let embeddings = prompts.embed(text, &context)?;
    score_grid(&bundle.source_id, &bundle.local, &embeddings, with_maps)
}

/// Zero-shot scoring straight from a clip; no fragment encoder is involved.
pub fn zero_shot_clip(
    clip: &VideoClip,
    visual: &dyn VisualEncoder,
    text: &dyn TextEncoder,
    params: FragmentParams,
    with_maps: bool,
) -> Result<QualityReport> {
    let bundle = extract_bundle(clip, visual, params, None)?;
    zero_shot_predict(&bundle, text, with_maps)
}

/// Cached features for `source_id`, or a fresh extraction when a clip is given.
pub fn resolve_bundle<F>(
    source_id: &str,
    cache: Option<(&FeatureCache, &ExtractionKey)>,
    clip: Option<&VideoClip>,
    extract: F,
) -> Result<FeatureBundle>
where
    F: FnOnce(&VideoClip) -> Result<FeatureBundle>,
{
    if let Some((cache, key)) = cache {
        match cache.load(source_id, key) {
            Ok(b) => return Ok(b),
            Err(Error::CacheMiss(_)) => {}
            Err(e) => return Err(e),
        }
    }
    match clip {
        Some(c) => extract(c),
        None => Err(Error::CacheMiss(source_id.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use image::{imageops, Rgb, RgbImage};
    use ndarray::{array, s, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::backbones::{AttentionPool, Linear, StubFragmentEncoder, StubTextEncoder, StubVisualEncoder, FragmentBranch};
    use crate::prompts::Vocabulary;

    fn random_grid(frames: usize, g: usize, d: usize, seed: u64) -> FeatureGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureGrid::new(
            frames,
            g,
            Array2::from_shape_simple_fn((frames * g * g, d), || rng.random_range(-1.0..1.0)),
        )
        .unwrap()
    }

    fn random_embeddings(d: usize, seed: u64) -> PromptEmbeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PromptEmbeddings {
            positive: Array2::from_shape_simple_fn((16, d), || rng.random_range(-1.0..1.0)),
            negative: Array2::from_shape_simple_fn((16, d), || rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn cosine_examples() {
        let v = array![0.3, -1.2, 2.0];
        assert_abs_diff_eq!(cosine(v.view(), v.view()).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine(array![1.0, 0.0].view(), array![0.0, 2.0].view()).unwrap(), 0.0);
        let v3 = &v * 3.0;
        assert_abs_diff_eq!(cosine(v.view(), v3.view()).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            cosine(v.view(), Array1::zeros(3).view()),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_score(0.3, 0.3), 0.5);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(softmax_score(1.0, 0.0), e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(softmax_score(1.0, 0.0), 0.731_058_578_630_004_9, epsilon = 1e-15);
        assert_abs_diff_eq!(softmax_score(-1.0, 1.0), 0.119_202_922_022_117_57, epsilon = 1e-15);
        assert_eq!(softmax_score(-800.0, 800.0), 0.0);
        assert_eq!(softmax_score(800.0, -800.0), 1.0);
    }

    #[test]
    fn similarity_examples() {
        let pos = array![1.0, 2.0, 0.5];
        let neg = array![-1.0, 0.0, 0.5];
        let data = Array2::from_shape_fn((8, 3), |(_, c)| pos[c] * 2.0);
        let g = FeatureGrid::new(2, 2, data).unwrap();
        let (sp, _) = axis_similarities(&g, pos.view(), neg.view()).unwrap();
        assert_abs_diff_eq!(sp, 1.0, epsilon = 1e-15);

        // frame 0 cells all have cosine 0.2 with e0, frame 1 cells 0.6
        let row = |c: f64| [c, (1.0 - c * c).sqrt()];
        let mut data = Array2::zeros((2, 2));
        data.row_mut(0).assign(&ArrayView1::from(&row(0.2)));
        data.row_mut(1).assign(&ArrayView1::from(&row(0.6)));
        let g = FeatureGrid::new(2, 1, data).unwrap();
        let (s, _) = axis_similarities(&g, array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap();
        assert_abs_diff_eq!(s, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn frame_permutation_invariance() {
        let g = random_grid(3, 2, 5, 1);
        let e = random_embeddings(5, 2);
        let mut permuted = g.clone();
        let cells = 4;
        for (dst, src) in [(0, 2), (1, 0), (2, 1)] {
            permuted
                .data
                .slice_mut(s![dst * cells..(dst + 1) * cells, ..])
                .assign(&g.data.slice(s![src * cells..(src + 1) * cells, ..]));
        }
        let a = axis_similarities(&g, e.positive.row(0), e.negative.row(0)).unwrap();
        let b = axis_similarities(&permuted, e.positive.row(0), e.negative.row(0)).unwrap();
        assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-15);
    }

    #[test]
    fn uniform_features_give_constant_map() {
        let data = Array2::from_shape_fn((2 * 9, 4), |(_, c)| c as f64 - 1.5);
        let g = FeatureGrid::new(2, 3, data).unwrap();
        let e = random_embeddings(4, 3);
        let report = score_grid("u", &g, &e, true).unwrap();
        for (a, axis) in report.axes.iter().enumerate() {
            let map = &report.local_maps.as_ref().unwrap()[a];
            assert_eq!(map.dim(), (2, 3, 3));
            for v in map.iter() {
                assert_abs_diff_eq!(*v, axis.score, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn report_covers_registry() {
        let report = score_grid("r", &random_grid(1, 2, 4, 1), &random_embeddings(4, 2), false).unwrap();
        let codes: Vec<_> = report.axes.iter().map(|a| a.code).collect();
        assert_eq!(codes, crate::dimensions::codes().collect::<Vec<_>>());
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.starts_with("code,score,s_pos,s_neg\nT-1,"));
    }

    #[test]
    fn empty_bundle_is_rejected() {
        let g = FeatureGrid::new(0, 2, Array2::zeros((0, 3))).unwrap();
        assert!(matches!(score_grid("e", &g, &random_embeddings(3, 1), false), Err(Error::Empty(_))));
    }

    proptest! {
        #[test]
        fn score_is_monotone_in_positive_similarity(sn in -1.0f64..1.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            prop_assume!(a < b);
            prop_assert!(softmax_score(a, sn) < softmax_score(b, sn));
        }

        #[test]
        fn swapping_prompts_complements_score(seed in 0u64..1000) {
            let g = random_grid(2, 3, 6, seed);
            let e = random_embeddings(6, seed + 1);
            let swapped = PromptEmbeddings { positive: e.negative.clone(), negative: e.positive.clone() };
            let a = score_grid("p", &g, &e, false).unwrap();
            let b = score_grid("p", &g, &swapped, false).unwrap();
            for (x, y) in a.axes.iter().zip(&b.axes) {
                prop_assert!((x.score - (1.0 - y.score)).abs() < 1e-12);
            }
        }

        #[test]
        fn positive_rescaling_changes_nothing(seed in 0u64..1000, scales in proptest::collection::vec(0.01f64..100.0, 18)) {
            let g = random_grid(2, 3, 5, seed);
            let e = random_embeddings(5, seed + 7);
            let mut scaled = g.clone();
            for (mut row, k) in scaled.data.rows_mut().into_iter().zip(&scales) {
                row *= *k;
            }
            let a = score_grid("p", &g, &e, true).unwrap();
            let b = score_grid("p", &scaled, &e, true).unwrap();
            for (x, y) in a.axes.iter().zip(&b.axes) {
                prop_assert!((x.score - y.score).abs() < 1e-12);
            }
            for (x, y) in a.local_maps.unwrap().iter().zip(b.local_maps.unwrap().iter()) {
                for (p, q) in x.iter().zip(y.iter()) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn map_mean_recovers_similarity_gap(seed in 0u64..1000, frames in 1usize..4, g in 1usize..5) {
            let grid = random_grid(frames, g, 4, seed);
            let e = random_embeddings(4, seed + 3);
            for a in 0..16 {
                let (pos, neg) = (e.positive.row(a), e.negative.row(a));
                let (sp, sn) = axis_similarities(&grid, pos, neg).unwrap();
                let diff = similarity_difference_map(&grid, pos, neg).unwrap();
                prop_assert!((diff.mean().unwrap() - (sp - sn)).abs() < 1e-6);
            }
        }

        #[test]
        fn scores_stay_inside_cosine_bounds(seed in 0u64..1000) {
            let report = score_grid("b", &random_grid(1, 3, 4, seed), &random_embeddings(4, seed), false).unwrap();
            let (lo, hi) = (softmax_score(-1.0, 1.0), softmax_score(1.0, -1.0));
            for a in &report.axes {
                prop_assert!(a.score >= lo && a.score <= hi);
            }
        }
    }

    fn stub_text() -> StubTextEncoder {
        StubTextEncoder::new(Vocabulary::standard().len(), 8, 12, 6, 77, 5)
    }

    fn noise_clip(frames: usize, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..frames)
            .map(|_| RgbImage::from_fn(240, 320, |_, _| Rgb([rng.random(), rng.random(), rng.random()])))
            .collect();
        VideoClip::new(frames, 30.0, format!("clip{seed}")).unwrap()
    }

    #[test]
    fn untrained_model_matches_zero_shot() {
        let visual = StubVisualEncoder::new(1, 16, 6, 2).unwrap();
        let text = stub_text();
        let frag = StubFragmentEncoder::new(2, 5);
        let params = FragmentParams { frames: 4, ..Default::default() };
        let state = ModelState::initial(&text, Some(5), None, 0.5, 3, ContextMode::Shared).unwrap();
        for seed in 0..3 {
            let clip = noise_clip(6, seed);
            let branch = FragmentBranch { encoder: &frag, seed: 11 };
            let bundle = extract_bundle(&clip, &visual, params, Some(branch)).unwrap();
            let a = predict(&bundle, &state, &text, true).unwrap();
            let b = zero_shot_predict(&bundle, &text, true).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, predict(&bundle, &state, &text, true).unwrap());
            let c = zero_shot_clip(&clip, &visual, &text, params, true).unwrap();
            assert_eq!(a.axes, c.axes);
        }
    }

    #[test]
    fn fusing_model_needs_fragments() {
        let visual = StubVisualEncoder::new(1, 16, 6, 2).unwrap();
        let text = stub_text();
        let params = FragmentParams { frames: 2, ..Default::default() };
        let bundle = extract_bundle(&noise_clip(2, 1), &visual, params, None).unwrap();
        let state = ModelState::initial(&text, Some(5), None, 0.5, 3, ContextMode::Shared).unwrap();
        assert!(matches!(predict(&bundle, &state, &text, false), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cache_miss_without_clip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::open(dir.path()).unwrap();
        let key = ExtractionKey {
            visual_backbone: "v".into(),
            fragment_backbone: None,
            fragment_params: FragmentParams::default(),
            fragment_seed: 0,
        };
        let res = resolve_bundle("nothing", Some((&cache, &key)), None, |_| unreachable!());
        assert!(matches!(res, Err(Error::CacheMiss(id)) if id == "nothing"));
    }

    /// Stub whose local token `(i, j)` only attends to itself and carries
    /// `[sharpness, brightness, 1]` of its own patch.
    fn self_attending_stub() -> StubVisualEncoder {
        let cells = 49;
        let width = cells + 1 + 3;
        let (sharp, bright, one) = (cells + 1, cells + 2, cells + 3);
        let mut trunk = Linear::zeros(crate::backbones::PATCH_STATISTICS, width);
        for ch in 0..3 {
            trunk.weight[[sharp, 48 + ch]] = 1.0 / 3.0;
        }
        for k in 0..48 {
            trunk.weight[[bright, k]] = 1.0 / 48.0;
        }
        trunk.bias[one] = 1.0;
        let mut positional = Array2::zeros((cells + 1, width));
        for k in 0..=cells {
            positional[[k, k]] = 10.0;
        }
        let mut select_pos = Linear::zeros(width, width);
        for k in 0..=cells {
            select_pos.weight[[k, k]] = 1.0;
        }
        let mut select_feat = Linear::zeros(width, width);
        for k in sharp..width {
            select_feat.weight[[k, k]] = 1.0;
        }
        let mut output = Linear::zeros(width, 3);
        output.weight[[0, sharp]] = 10.0;
        output.weight[[1, bright]] = 1.0;
        output.weight[[2, one]] = 1.0;
        let pool = AttentionPool::new(positional, select_pos.clone(), select_pos, select_feat, output, 1).unwrap();
        StubVisualEncoder::from_parts(224, 7, trunk, pool).unwrap()
    }

    #[test]
    fn blurred_half_scores_lower_on_sharpness_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut frame = RgbImage::from_fn(224, 224, |_, _| {
            let v = rng.random_range(60..200u8);
            Rgb([v, v, v])
        });
        let right = imageops::crop_imm(&frame, 112, 0, 112, 224).to_image();
        imageops::replace(&mut frame, &imageops::blur(&right, 3.0), 112, 0);
        let clip = VideoClip::new(vec![frame], 1.0, "half").unwrap();

        let visual = self_attending_stub();
        let params = FragmentParams { frames: 1, ..Default::default() };
        let bundle = extract_bundle(&clip, &visual, params, None).unwrap();
        let mut emb = PromptEmbeddings {
            positive: Array2::from_elem((16, 3), 0.0),
            negative: Array2::from_elem((16, 3), 0.0),
        };
        emb.positive.row_mut(0).assign(&array![1.0, 0.0, 0.0]);
        emb.negative.row_mut(0).assign(&array![0.0, 0.0, 1.0]);
        emb.positive.row_mut(15).assign(&array![0.0, 1.0, 0.0]);
        emb.negative.row_mut(15).assign(&array![0.0, 0.0, 1.0]);
        for a in 1..15 {
            emb.positive[[a, 2]] = 1.0;
            emb.negative[[a, 2]] = 1.0;
        }
        let report = score_grid("half", &bundle.local, &emb, true).unwrap();
        let t1 = report.local_map("T-1").unwrap();
        let o = report.local_map("O").unwrap();
        // columns 0..3 are sharp, 4..6 blurred; column 3 straddles the edge
        let sharp = t1.slice(s![0, .., 0..3]).mean().unwrap();
        let blurred = t1.slice(s![0, .., 4..7]).mean().unwrap();
        assert!(blurred < sharp, "blurred {blurred} vs sharp {sharp}");
        for i in 0..7 {
            for j in 0..3 {
                assert!(t1[[0, i, j + 4]] < t1[[0, i, j]]);
            }
        }
        let gap = (t1 - o).mapv(f64::abs).sum();
        assert!(gap > 1e-3);
    }
}
