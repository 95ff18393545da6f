//! Raster figures. Each one is written with a CSV sidecar of the exact numbers drawn.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use maxvqa_core::analytics::write_matrix_csv;
use ndarray::{ArrayView2, ArrayView3};

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const PANEL: u32 = 224;

pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> Rgb<u8> {
    let c = |k: usize| (a[k] + (b[k] - a[k]) * t).round().clamp(0.0, 255.0) as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Blue, white, red over `[-1, 1]`.
pub fn diverging(v: f64) -> Rgb<u8> {
    let v = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
    if v < 0.0 {
        lerp([255.0; 3], [33.0, 102.0, 172.0], -v)
    } else {
        lerp([255.0; 3], [178.0, 24.0, 43.0], v)
    }
}

/// Dark blue, cyan, yellow, red over `[0, 1]`.
pub fn sequential(v: f64) -> Rgb<u8> {
    let stops = [[0.0, 0.0, 131.0], [0.0, 200.0, 255.0], [255.0, 230.0, 0.0], [200.0, 0.0, 0.0]];
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let x = v * (stops.len() - 1) as f64;
    let k = (x.floor() as usize).min(stops.len() - 2);
    lerp(stops[k], stops[k + 1], x - k as f64)
}

fn save(img: &RgbImage, path: &Path) -> anyhow::Result<()> {
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Square-cell heatmap of a matrix with values in `[-1, 1]`.
pub fn heatmap(matrix: ArrayView2<'_, f64>, path: &Path) -> anyhow::Result<()> {
    let cell = 20u32;
    let (r, c) = matrix.dim();
    let img = RgbImage::from_fn(c as u32 * cell, r as u32 * cell, |x, y| {
        diverging(matrix[[(y / cell) as usize, (x / cell) as usize]])
    });
    save(&img, path)?;
    write_matrix_csv(matrix, BufWriter::new(File::create(sidecar(path))?))?;
    Ok(())
}

/// Two bars per label, both on a `[0, 1]` scale.
pub fn paired_bars(labels: &[&str], first: &[f64], second: &[f64], names: [&str; 2], path: &Path) -> anyhow::Result<()> {
    let (bar, gap, height) = (12u32, 10u32, 200u32);
    let width = labels.len() as u32 * (2 * bar + gap) + gap;
    let mut img = RgbImage::from_pixel(width, height + 1, BACKGROUND);
    let colors = [Rgb([33, 102, 172]), Rgb([244, 109, 67])];
    for (k, (a, b)) in first.iter().zip(second).enumerate() {
        for (j, v) in [a, b].into_iter().enumerate() {
            let h = (v.clamp(0.0, 1.0) * f64::from(height)).round() as u32;
            let x0 = gap + k as u32 * (2 * bar + gap) + j as u32 * bar;
            for x in x0..x0 + bar {
                for y in height - h..height {
                    img.put_pixel(x, y, colors[j]);
                }
            }
        }
    }
    for x in 0..width {
        img.put_pixel(x, height, Rgb([0, 0, 0]));
    }
    save(&img, path)?;
    let mut w = csv_writer(&sidecar(path))?;
    w.write_record(["code", names[0], names[1]])?;
    for ((l, a), b) in labels.iter().zip(first).zip(second) {
        w.write_record([l.to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Grey-level rendering of one `grid x grid` map, values in `[0, 1]`.
pub fn gray_map(map: ArrayView2<'_, f64>, cell: u32, path: &Path) -> anyhow::Result<()> {
    let (r, c) = map.dim();
    let img = RgbImage::from_fn(c as u32 * cell, r as u32 * cell, |x, y| {
        let v = map[[(y / cell) as usize, (x / cell) as usize]];
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([g, g, g])
    });
    save(&img, path)
}

/// Side-by-side panels, one per axis: the frame (if any) with the map blended on top.
pub fn overlays(frame: Option<&RgbImage>, maps: &[(&str, ArrayView2<'_, f64>)], path: &Path) -> anyhow::Result<()> {
    let gap = 4u32;
    let width = (maps.len() as u32 * (PANEL + gap)).saturating_sub(gap);
    let mut img = RgbImage::from_pixel(width.max(1), PANEL, BACKGROUND);
    let base = match frame {
        Some(f) => imageops::resize(f, PANEL, PANEL, FilterType::Triangle),
        None => RgbImage::from_pixel(PANEL, PANEL, Rgb([128, 128, 128])),
    };
    for (k, (_, map)) in maps.iter().enumerate() {
        let (r, c) = map.dim();
        let x0 = k as u32 * (PANEL + gap);
        for y in 0..PANEL {
            for x in 0..PANEL {
                let i = (y as usize * r / PANEL as usize).min(r - 1);
                let j = (x as usize * c / PANEL as usize).min(c - 1);
                let heat = sequential(map[[i, j]]).0;
                let under = base.get_pixel(x, y).0;
                let mix = |n: usize| ((f64::from(under[n]) + f64::from(heat[n])) / 2.0).round() as u8;
                img.put_pixel(x0 + x, y, Rgb([mix(0), mix(1), mix(2)]));
            }
        }
    }
    save(&img, path)?;
    let mut w = csv_writer(&sidecar(path))?;
    w.write_record(["code", "row", "col", "value"])?;
    for (code, map) in maps {
        for ((i, j), v) in map.indexed_iter() {
            w.write_record([code.to_string(), i.to_string(), j.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `frame,row,col,value` rows of a `frames x grid x grid` map.
pub fn write_map_csv(map: ArrayView3<'_, f64>, path: &Path) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["frame", "row", "col", "value"])?;
    for ((t, i, j), v) in map.indexed_iter() {
        w.write_record([t.to_string(), i.to_string(), j.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;

    #[test]
    fn colormaps_hit_their_ends() {
        assert_eq!(diverging(0.0), Rgb([255, 255, 255]));
        assert_eq!(diverging(-1.0), Rgb([33, 102, 172]));
        assert_eq!(diverging(2.0), Rgb([178, 24, 43]));
        assert_eq!(sequential(0.0), Rgb([0, 0, 131]));
        assert_eq!(sequential(1.0), Rgb([200, 0, 0]));
    }

    #[test]
    fn figures_come_with_sidecars() {
        let dir = tempfile::tempdir().unwrap();
        let m = Array2::from_shape_fn((16, 16), |(i, j)| if i == j { 1.0 } else { -0.25 });
        let hm = dir.path().join("corr.png");
        heatmap(m.view(), &hm).unwrap();
        assert_eq!(image::open(&hm).unwrap().to_rgb8().dimensions(), (320, 320));
        assert_eq!(std::fs::read_to_string(sidecar(&hm)).unwrap().lines().count(), 17);

        let bars = dir.path().join("bars.png");
        paired_bars(&["A", "B"], &[0.5, 0.25], &[0.75, 1.0], ["amr", "arr"], &bars).unwrap();
        let text = std::fs::read_to_string(sidecar(&bars)).unwrap();
        assert_eq!(text, "code,amr,arr\nA,0.5,0.75\nB,0.25,1\n");

        let ov = dir.path().join("ov.png");
        let a = array![[0.0, 1.0], [0.5, 0.25]];
        overlays(None, &[("O", a.view()), ("T-1", a.view())], &ov).unwrap();
        assert_eq!(image::open(&ov).unwrap().to_rgb8().dimensions(), (452, 224));
        assert_eq!(std::fs::read_to_string(sidecar(&ov)).unwrap().lines().count(), 9);
    }
}
