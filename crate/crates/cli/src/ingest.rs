//! Decoding clips into frames: Y4M, still images, frame directories, and any
//! other container through an `ffmpeg` pipe when one is on `PATH`.

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use anyhow::{anyhow, bail, Context};
use image::{Rgb, RgbImage};
use maxvqa_core::fragments::{temporal_indices, VideoClip};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];
const CONTAINER_EXTENSIONS: [&str; 7] = ["mp4", "mkv", "mov", "avi", "webm", "m4v", "mpg"];

/// Facts about the source, before any frame selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceInfo {
    pub frame_count: usize,
    pub frame_rate: f64,
    pub width: u32,
    pub height: u32,
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

fn is_image(path: &Path) -> bool {
    IMAGE_EXTENSIONS.contains(&extension(path).as_str())
}

pub fn is_ingestible(path: &Path) -> bool {
    let ext = extension(path);
    path.is_dir() || ext == "y4m" || is_image(path) || CONTAINER_EXTENSIONS.contains(&ext.as_str())
}

/// Video id of a path: the file stem, or the directory name.
pub fn video_id(path: &Path) -> String {
    let name = if path.is_dir() { path.file_name() } else { path.file_stem() };
    name.map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Ingestible entries of `dir`, sorted by path.
pub fn list_videos(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_ingestible(p))
        .collect();
    out.sort();
    Ok(out)
}

fn sample_rgb(yv: u8, u: u8, v: u8) -> Rgb<u8> {
    // BT.601, limited range
    let c = 1.164 * (f32::from(yv) - 16.0);
    let d = f32::from(u) - 128.0;
    let e = f32::from(v) - 128.0;
    let clamp = |x: f32| x.round().clamp(0.0, 255.0) as u8;
    Rgb([
        clamp(c + 1.596 * e),
        clamp(c - 0.392 * d - 0.813 * e),
        clamp(c + 2.017 * d),
    ])
}

fn to_8bit(plane: &[u8], bytes: usize, depth: usize) -> Vec<u8> {
    if bytes == 1 {
        return plane.to_vec();
    }
    plane
        .chunks_exact(2)
        .map(|c| (u16::from_le_bytes([c[0], c[1]]) >> (depth - 8)) as u8)
        .collect()
}

fn frame_to_rgb(frame: &y4m::Frame<'_>, width: usize, height: usize, cs: y4m::Colorspace) -> anyhow::Result<RgbImage> {
    use y4m::Colorspace as C;
    let (bytes, depth) = (cs.get_bytes_per_sample(), cs.get_bit_depth());
    let y = to_8bit(frame.get_y_plane(), bytes, depth);
    let (sx, sy) = match cs {
        C::Cmono | C::Cmono12 => {
            return Ok(RgbImage::from_fn(width as u32, height as u32, |x, yy| {
                let g = y[yy as usize * width + x as usize];
                sample_rgb(g, 128, 128)
            }))
        }
        C::C420 | C::C420p10 | C::C420p12 | C::C420jpeg | C::C420paldv | C::C420mpeg2 => (2, 2),
        C::C422 | C::C422p10 | C::C422p12 => (2, 1),
        C::C444 | C::C444p10 | C::C444p12 => (1, 1),
        other => bail!("unsupported colorspace {other:?}"),
    };
    let u = to_8bit(frame.get_u_plane(), bytes, depth);
    let v = to_8bit(frame.get_v_plane(), bytes, depth);
    let cw = width.div_ceil(sx);
    Ok(RgbImage::from_fn(width as u32, height as u32, |x, yy| {
        let (x, yy) = (x as usize, yy as usize);
        let ci = (yy / sy) * cw + x / sx;
        sample_rgb(y[yy * width + x], u[ci], v[ci])
    }))
}

/// Streams a Y4M source, converting the frames `keep` selects. Returns them with the total frame count.
fn decode_y4m<R: Read>(reader: R, keep: &dyn Fn(usize) -> bool) -> anyhow::Result<(Vec<RgbImage>, SourceInfo)> {
    let mut dec = y4m::decode(reader).map_err(|e| anyhow!("bad Y4M header: {e}"))?;
    let (w, h, cs) = (dec.get_width(), dec.get_height(), dec.get_colorspace());
    let rate = dec.get_framerate();
    let frame_rate = if rate.den == 0 { 0.0 } else { rate.num as f64 / rate.den as f64 };
    let mut frames = Vec::new();
    let mut count = 0;
    loop {
        match dec.read_frame() {
            Ok(f) => {
                if keep(count) {
                    frames.push(frame_to_rgb(&f, w, h, cs)?);
                }
                count += 1;
            }
            Err(y4m::Error::EOF) => break,
            Err(e) => bail!("frame {count}: {e}"),
        }
    }
    Ok((
        frames,
        SourceInfo {
            frame_count: count,
            frame_rate,
            width: w as u32,
            height: h as u32,
        },
    ))
}

fn ffmpeg_stream(path: &Path) -> anyhow::Result<std::process::Child> {
    Command::new("ffmpeg")
        .args(["-v", "error", "-nostdin", "-i"])
        .arg(path)
        .args(["-f", "yuv4mpegpipe", "-pix_fmt", "yuv444p", "-"])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => anyhow!("no decoder for this container (ffmpeg not found on PATH)"),
            _ => anyhow!("starting ffmpeg: {e}"),
        })
}

fn decode_ffmpeg(path: &Path, keep: &dyn Fn(usize) -> bool) -> anyhow::Result<(Vec<RgbImage>, SourceInfo)> {
    let mut child = ffmpeg_stream(path)?;
    let stdout = child.stdout.take().expect("piped stdout");
    let decoded = decode_y4m(BufReader::new(stdout), keep);
    let output = child.wait_with_output()?;
    if !output.status.success() {
        bail!("ffmpeg failed: {}", String::from_utf8_lossy(&output.stderr).trim());
    }
    decoded
}

fn decode_source(path: &Path, keep: &dyn Fn(usize) -> bool) -> anyhow::Result<(Vec<RgbImage>, SourceInfo)> {
    if path.is_dir() {
        let files: Vec<PathBuf> = {
            let mut v: Vec<PathBuf> = fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_image(p))
                .collect();
            v.sort();
            v
        };
        let mut frames = Vec::new();
        for (k, f) in files.iter().enumerate() {
            if keep(k) {
                frames.push(image::open(f).with_context(|| format!("decoding {}", f.display()))?.to_rgb8());
            }
        }
        let (width, height) = frames.first().map_or((0, 0), RgbImage::dimensions);
        return Ok((
            frames,
            SourceInfo {
                frame_count: files.len(),
                frame_rate: 30.0,
                width,
                height,
            },
        ));
    }
    match extension(path).as_str() {
        "y4m" => decode_y4m(BufReader::new(File::open(path)?), keep),
        ext if IMAGE_EXTENSIONS.contains(&ext) => {
            let img = image::open(path)?.to_rgb8();
            let (width, height) = img.dimensions();
            let frames = if keep(0) { vec![img] } else { Vec::new() };
            Ok((
                frames,
                SourceInfo {
                    frame_count: 1,
                    frame_rate: 1.0,
                    width,
                    height,
                },
            ))
        }
        _ => decode_ffmpeg(path, keep),
    }
}

/// Decodes `path`. With `max_frames`, only the frames the uniform temporal
/// sampler would pick are kept, so a `max_frames`-frame sampler over the
/// result selects exactly the same frames as over the full clip.
pub fn ingest(path: &Path, max_frames: Option<usize>) -> anyhow::Result<(VideoClip, SourceInfo)> {
    let run = || -> anyhow::Result<(VideoClip, SourceInfo)> {
        let (frames, info) = match max_frames {
            None => decode_source(path, &|_| true)?,
            Some(t) => {
                let total = decode_source(path, &|_| false)?.1.frame_count;
                if total <= t {
                    decode_source(path, &|_| true)?
                } else {
                    let wanted: std::collections::BTreeSet<usize> = temporal_indices(total, t).into_iter().collect();
                    decode_source(path, &|k| wanted.contains(&k))?
                }
            }
        };
        if frames.is_empty() {
            bail!("source has zero frames");
        }
        let clip = VideoClip::new(frames, info.frame_rate, video_id(path))?;
        Ok((clip, info))
    };
    run().with_context(|| format!("cannot decode {}", path.display()))
}
