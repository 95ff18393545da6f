//! Temporally aligned fragment sampling.
//!
//! A frame is cut into a `grid x grid` uniform partition, one `patch x patch`
//! mini-patch is drawn from every cell at original resolution, and the
//! mini-patches are spliced back at their cell positions. The same patch
//! positions are reused for every sampled frame so that temporal artefacts
//! stay visible to the fragment encoder.

use std::io::{BufRead, Write};

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<RgbImage>,
    pub frame_rate: f64,
    pub source_id: String,
}

impl VideoClip {
    pub fn new(frames: Vec<RgbImage>, frame_rate: f64, source_id: impl Into<String>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Empty("video clip has no frames".into()))?;
        let dims = first.dimensions();
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.dimensions() != dims) {
            return Err(Error::Geometry(format!(
                "frame {t} is {}x{}, expected {}x{}",
                f.width(),
                f.height(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self {
            frames,
            frame_rate,
            source_id: source_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.frames[0].height() as usize
    }

    pub fn width(&self) -> usize {
        self.frames[0].width() as usize
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentParams {
    pub grid: usize,
    pub patch: usize,
    pub frames: usize,
}

impl Default for FragmentParams {
    fn default() -> Self {
        Self {
            grid: 7,
            patch: 32,
            frames: 32,
        }
    }
}

impl FragmentParams {
    /// Side of a spliced frame.
    pub fn output_size(&self) -> usize {
        self.grid * self.patch
    }
}

/// Half-open pixel bounds of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl Cell {
    pub fn height(&self) -> usize {
        self.row_end - self.row_start
    }

    pub fn width(&self) -> usize {
        self.col_end - self.col_start
    }
}

fn boundaries(extent: usize, grid: usize) -> Vec<usize> {
    (0..=grid).map(|i| i * extent / grid).collect()
}

/// Uniform `grid x grid` partition using floor boundaries, row-major.
pub fn partition_grid(height: usize, width: usize, grid: usize, patch: usize) -> Result<Vec<Cell>> {
    if grid == 0 || patch == 0 {
        return Err(Error::InvalidArgument("grid and patch size must be positive".into()));
    }
    let rows = boundaries(height, grid);
    let cols = boundaries(width, grid);
    let mut cells = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let cell = Cell {
                row_start: rows[i],
                row_end: rows[i + 1],
                col_start: cols[j],
                col_end: cols[j + 1],
            };
            if cell.height() < patch || cell.width() < patch {
                return Err(Error::FrameTooSmall {
                    cell_height: cell.height(),
                    cell_width: cell.width(),
                    patch,
                });
            }
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// `count` indices spread with a uniform stride over `[0, frame_count)`, first frame included.
pub fn temporal_indices(frame_count: usize, count: usize) -> Vec<usize> {
    (0..count).map(|t| t * frame_count / count).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub grid: usize,
    pub patch: usize,
    /// Source geometry the plan was drawn for.
    pub height: usize,
    pub width: usize,
    /// Absolute top-left `(row, col)` of the mini-patch drawn in each cell,
    /// row-major. One table shared by every frame.
    pub offsets: Vec<(usize, usize)>,
    pub frame_indices: Vec<usize>,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn offset(&self, i: usize, j: usize) -> (usize, usize) {
        self.offsets[i * self.grid + j]
    }
}

pub fn make_plan(clip: &VideoClip, params: FragmentParams, seed: u64) -> Result<SamplingPlan> {
    if params.frames == 0 {
        return Err(Error::InvalidArgument("fragment frame count must be >= 1".into()));
    }
    let (height, width) = (clip.height(), clip.width());
    let cells = partition_grid(height, width, params.grid, params.patch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = cells
        .iter()
        .map(|c| {
            let row = c.row_start + rng.random_range(0..=c.height() - params.patch);
            let col = c.col_start + rng.random_range(0..=c.width() - params.patch);
            (row, col)
        })
        .collect();
    Ok(SamplingPlan {
        grid: params.grid,
        patch: params.patch,
        height,
        width,
        offsets,
        frame_indices: temporal_indices(clip.frame_count(), params.frames),
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct FragmentView {
    pub frames: Vec<RgbImage>,
    pub plan: SamplingPlan,
    pub source_id: String,
}

impl FragmentView {
    pub fn side(&self) -> usize {
        self.plan.grid * self.plan.patch
    }
}

pub fn splice(clip: &VideoClip, plan: &SamplingPlan) -> Result<FragmentView> {
    if clip.height() != plan.height || clip.width() != plan.width {
        return Err(Error::Geometry(format!(
            "clip is {}x{} but plan was drawn for {}x{}",
            clip.height(),
            clip.width(),
            plan.height,
            plan.width
        )));
    }
    if let Some(&bad) = plan.frame_indices.iter().find(|&&t| t >= clip.frame_count()) {
        return Err(Error::Geometry(format!(
            "plan references frame {bad} of a {}-frame clip",
            clip.frame_count()
        )));
    }
    let (s, g) = (plan.patch, plan.grid);
    let side = (g * s) as u32;
    let frames = plan
        .frame_indices
        .iter()
        .map(|&t| {
            let src = &clip.frames[t];
            let mut out = RgbImage::new(side, side);
            for i in 0..g {
                for j in 0..g {
                    let (r0, c0) = plan.offset(i, j);
                    for dr in 0..s {
                        let src_row = &src.as_raw()[((r0 + dr) * plan.width + c0) * 3..][..s * 3];
                        let dst_start = ((i * s + dr) * side as usize + j * s) * 3;
                        out.as_mut()[dst_start..dst_start + s * 3].copy_from_slice(src_row);
                    }
                }
            }
            out
        })
        .collect();
    Ok(FragmentView {
        frames,
        plan: plan.clone(),
        source_id: clip.source_id.clone(),
    })
}

/// Bilinearly upscales `clip` so both sides are at least `min_side`, keeping aspect ratio.
/// Returns the clip unchanged when it is already large enough.
pub fn upscale_to_min(clip: &VideoClip, min_side: usize) -> VideoClip {
    let (h, w) = (clip.height(), clip.width());
    if h >= min_side && w >= min_side {
        return clip.clone();
    }
    let short = h.min(w);
    let new_h = (h * min_side).div_ceil(short);
    let new_w = (w * min_side).div_ceil(short);
    log::warn!(
        "{}: upscaling {}x{} to {}x{} for fragment sampling",
        clip.source_id,
        h,
        w,
        new_h,
        new_w
    );
    let frames = clip
        .frames
        .iter()
        .map(|f| imageops::resize(f, new_w as u32, new_h as u32, FilterType::Triangle))
        .collect();
    VideoClip {
        frames,
        frame_rate: clip.frame_rate,
        source_id: clip.source_id.clone(),
    }
}

/// Plans and splices in one go, upscaling clips that are too small for the grid.
pub fn sample_fragments(clip: &VideoClip, params: FragmentParams, seed: u64) -> Result<FragmentView> {
    let clip = upscale_to_min(clip, params.output_size());
    let plan = make_plan(&clip, params, seed)?;
    splice(&clip, &plan)
}

const RECORD_MAGIC: &str = "MAXVQA-FRAGMENTS 1";

#[derive(Debug, Serialize, Deserialize)]
struct FragmentHeader {
    source_id: String,
    grid: usize,
    patch: usize,
    frames: usize,
    seed: u64,
    source_height: usize,
    source_width: usize,
    frame_indices: Vec<usize>,
    offsets: Vec<(usize, usize)>,
    payload_bytes: usize,
}

/// Writes a fragment cache record: a magic line, a JSON header line, then
/// row-major 8-bit RGB pixels for every spliced frame.
pub fn write_fragment_record<W: Write>(view: &FragmentView, mut out: W) -> Result<()> {
    let side = view.side();
    let header = FragmentHeader {
        source_id: view.source_id.clone(),
        grid: view.plan.grid,
        patch: view.plan.patch,
        frames: view.frames.len(),
        seed: view.plan.seed,
        source_height: view.plan.height,
        source_width: view.plan.width,
        frame_indices: view.plan.frame_indices.clone(),
        offsets: view.plan.offsets.clone(),
        payload_bytes: view.frames.len() * side * side * 3,
    };
    writeln!(out, "{RECORD_MAGIC}")?;
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out)?;
    for f in &view.frames {
        out.write_all(f.as_raw())?;
    }
    Ok(())
}

pub fn read_fragment_record<R: BufRead>(mut input: R) -> Result<FragmentView> {
    let bad = |reason: &str| Error::format("<fragment record>", reason);
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim_end() != RECORD_MAGIC {
        return Err(bad("missing magic line"));
    }
    line.clear();
    input.read_line(&mut line)?;
    let header: FragmentHeader = serde_json::from_str(line.trim_end())?;
    let side = header.grid * header.patch;
    if header.payload_bytes != header.frames * side * side * 3 {
        return Err(bad("payload size disagrees with geometry"));
    }
    let mut frames = Vec::with_capacity(header.frames);
    for _ in 0..header.frames {
        let mut buf = vec![0u8; side * side * 3];
        input.read_exact(&mut buf)?;
        frames.push(RgbImage::from_raw(side as u32, side as u32, buf).ok_or_else(|| bad("pixel buffer"))?);
    }
    Ok(FragmentView {
        frames,
        plan: SamplingPlan {
            grid: header.grid,
            patch: header.patch,
            height: header.source_height,
            width: header.source_width,
            offsets: header.offsets,
            frame_indices: header.frame_indices,
            seed: header.seed,
        },
        source_id: header.source_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_clip(frames: usize, h: u32, w: u32, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..frames)
            .map(|_| RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()])))
            .collect();
        VideoClip::new(frames, 30.0, "noise").unwrap()
    }

    #[test]
    fn even_grid_cells_are_64() {
        let cells = partition_grid(448, 448, 7, 32).unwrap();
        assert_eq!(cells.len(), 49);
        assert!(cells.iter().all(|c| c.height() == 64 && c.width() == 64));
    }

    #[test]
    fn uneven_rows_tile_exactly() {
        let cells = partition_grid(450, 448, 7, 32).unwrap();
        let rows: Vec<usize> = (0..7).map(|i| cells[i * 7].row_start).chain([450]).collect();
        assert_eq!(rows, [0, 64, 128, 192, 257, 321, 385, 450]);

        // Brute force: every pixel row/col is covered by exactly one cell.
        let mut cover = vec![vec![0u8; 448]; 450];
        for c in &cells {
            for row in cover.iter_mut().take(c.row_end).skip(c.row_start) {
                for v in row.iter_mut().take(c.col_end).skip(c.col_start) {
                    *v += 1;
                }
            }
        }
        assert!(cover.iter().flatten().all(|&v| v == 1));
    }

    #[test]
    fn too_small_frame_is_rejected() {
        match partition_grid(200, 448, 7, 32) {
            Err(Error::FrameTooSmall { cell_height, patch, .. }) => {
                assert_eq!((cell_height, patch), (28, 32));
            }
            other => panic!("expected frame-too-small, got {other:?}"),
        }
    }

    #[test]
    fn plan_is_seeded() {
        let clip = noise_clip(4, 64, 80, 1);
        let p = FragmentParams { grid: 2, patch: 16, frames: 4 };
        assert_eq!(make_plan(&clip, p, 9).unwrap(), make_plan(&clip, p, 9).unwrap());
    }

    #[test]
    fn exact_cell_width_forces_left_edge() {
        let clip = noise_clip(1, 64, 32, 2);
        let plan = make_plan(&clip, FragmentParams { grid: 2, patch: 16, frames: 1 }, 5).unwrap();
        assert_eq!(plan.offset(0, 0).1, 0);
        assert_eq!(plan.offset(0, 1).1, 16);
        assert_eq!(plan.offset(1, 1).1, 16);
    }

    #[test]
    fn default_geometry_is_224() {
        let clip = noise_clip(2, 240, 320, 3);
        let view = sample_fragments(&clip, FragmentParams { frames: 2, ..Default::default() }, 0).unwrap();
        assert_eq!(view.frames[0].dimensions(), (224, 224));
    }

    #[test]
    fn constant_frame_stays_constant() {
        let frame = RgbImage::from_pixel(300, 260, image::Rgb([12, 200, 77]));
        let clip = VideoClip::new(vec![frame], 25.0, "flat").unwrap();
        let view = sample_fragments(&clip, FragmentParams { frames: 1, ..Default::default() }, 4).unwrap();
        assert_eq!(view.frames.len(), 1);
        assert!(view.frames[0].pixels().all(|p| p.0 == [12, 200, 77]));
    }

    #[test]
    fn small_clip_is_upscaled() {
        let clip = noise_clip(1, 120, 160, 4);
        let view = sample_fragments(&clip, FragmentParams { frames: 1, ..Default::default() }, 1).unwrap();
        assert_eq!(view.plan.height, 224);
        assert_eq!(view.plan.width, 299);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let a = noise_clip(1, 64, 64, 5);
        let b = noise_clip(1, 64, 96, 5);
        let plan = make_plan(&a, FragmentParams { grid: 2, patch: 16, frames: 1 }, 0).unwrap();
        assert!(matches!(splice(&b, &plan), Err(Error::Geometry(_))));
    }

    #[test]
    fn temporal_stride_includes_first_frame() {
        assert_eq!(temporal_indices(100, 4), [0, 25, 50, 75]);
        assert_eq!(temporal_indices(3, 6), [0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn record_round_trip() {
        let clip = noise_clip(3, 48, 48, 6);
        let view = sample_fragments(&clip, FragmentParams { grid: 2, patch: 8, frames: 3 }, 11).unwrap();
        let mut buf = Vec::new();
        write_fragment_record(&view, &mut buf).unwrap();
        let back = read_fragment_record(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.plan, view.plan);
        assert_eq!(back.source_id, "noise");
        assert!(back.frames.iter().zip(&view.frames).all(|(a, b)| a == b));
    }
}
