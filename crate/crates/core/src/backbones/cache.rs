//! On-disk feature cache, one record per video.
//!
//! Record layout: a magic line, one JSON header line, then little-endian
//! `f32` payloads for the `global`, `local` and (optional) `fragment` blocks
//! in that order, each row-major.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeatureBundle, FeatureGrid};
use crate::error::{Error, Result};
use crate::fragments::FragmentParams;

const MAGIC: &str = "MAXVQA-FEATURES 1";

/// Identity of the extraction setup; changes whenever any input to extraction changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionKey {
    pub visual_backbone: String,
    pub fragment_backbone: Option<String>,
    pub fragment_params: FragmentParams,
    pub fragment_seed: u64,
}

impl ExtractionKey {
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("key serializes"));
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub source_id: String,
    pub frames: usize,
    pub grid: usize,
    pub embed_dim: usize,
    pub fragment_dim: usize,
    #[serde(flatten)]
    pub key: ExtractionKey,
    pub blocks: Vec<BlockInfo>,
}

fn write_block<W: Write>(out: &mut W, a: &Array2<f64>) -> Result<()> {
    for v in a.iter() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_block<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut buf = vec![0u8; rows * cols * 4];
    input.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("block shape"))
}

pub fn write_record<W: Write>(bundle: &FeatureBundle, key: &ExtractionKey, mut out: W) -> Result<()> {
    let mut blocks = vec![
        BlockInfo {
            name: "global".into(),
            rows: bundle.global.nrows(),
            cols: bundle.global.ncols(),
        },
        BlockInfo {
            name: "local".into(),
            rows: bundle.local.data.nrows(),
            cols: bundle.local.dim(),
        },
    ];
    if let Some(f) = &bundle.fragment {
        blocks.push(BlockInfo {
            name: "fragment".into(),
            rows: f.data.nrows(),
            cols: f.dim(),
        });
    }
    let header = CacheHeader {
        source_id: bundle.source_id.clone(),
        frames: bundle.frames(),
        grid: bundle.grid(),
        embed_dim: bundle.embed_dim(),
        fragment_dim: bundle.fragment_dim(),
        key: key.clone(),
        blocks,
    };
    writeln!(out, "{MAGIC}")?;
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out)?;
    write_block(&mut out, &bundle.global)?;
    write_block(&mut out, &bundle.local.data)?;
    if let Some(f) = &bundle.fragment {
        write_block(&mut out, &f.data)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_record<R: BufRead>(mut input: R) -> Result<(CacheHeader, FeatureBundle)> {
    let bad = |reason: &str| Error::format("<feature record>", reason);
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad("missing magic line"));
    }
    line.clear();
    input.read_line(&mut line)?;
    let header: CacheHeader = serde_json::from_str(line.trim_end())?;
    let cells = header.frames * header.grid * header.grid;
    let mut global = None;
    let mut local = None;
    let mut fragment = None;
    for b in &header.blocks {
        let block = read_block(&mut input, b.rows, b.cols)?;
        match b.name.as_str() {
            "global" if b.rows == header.frames && b.cols == header.embed_dim => global = Some(block),
            "local" if b.rows == cells && b.cols == header.embed_dim => {
                local = Some(FeatureGrid::new(header.frames, header.grid, block)?)
            }
            "fragment" if b.rows == cells && b.cols == header.fragment_dim => {
                fragment = Some(FeatureGrid::new(header.frames, header.grid, block)?)
            }
            other => return Err(bad(&format!("unexpected block `{other}` of {}x{}", b.rows, b.cols))),
        }
    }
    let bundle = FeatureBundle {
        source_id: header.source_id.clone(),
        global: global.ok_or_else(|| bad("missing global block"))?,
        local: local.ok_or_else(|| bad("missing local block"))?,
        fragment,
    };
    Ok((header, bundle))
}

/// Directory of feature records named `<source_id>.<key digest>.feat`.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

impl FeatureCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, source_id: &str, key: &ExtractionKey) -> PathBuf {
        self.dir.join(format!("{}.{}.feat", sanitize(source_id), key.digest()))
    }

    pub fn contains(&self, source_id: &str, key: &ExtractionKey) -> bool {
        self.path(source_id, key).is_file()
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn store(&self, bundle: &FeatureBundle, key: &ExtractionKey) -> Result<PathBuf> {
        let path = self.path(&bundle.source_id, key);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        {
            let file = fs::File::create(&tmp)?;
            write_record(bundle, key, BufWriter::new(file))?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(&self, source_id: &str, key: &ExtractionKey) -> Result<FeatureBundle> {
        let path = self.path(source_id, key);
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::CacheMiss(source_id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let (header, bundle) = read_record(BufReader::new(file)).map_err(|e| match e {
            Error::Format { reason, .. } => Error::format(&path, reason),
            other => other,
        })?;
        if &header.key != key {
            return Err(Error::format(&path, "extraction key in header does not match"));
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(with_fragment: bool) -> FeatureBundle {
        let local = FeatureGrid::new(2, 2, Array2::from_shape_fn((8, 3), |(r, c)| (r * 3 + c) as f64 * 0.25)).unwrap();
        FeatureBundle {
            source_id: "clip/01".into(),
            global: Array2::from_elem((2, 3), -1.5),
            fragment: with_fragment
                .then(|| FeatureGrid::new(2, 2, Array2::from_elem((8, 5), 0.125)).unwrap()),
            local,
        }
    }

    fn key(seed: u64) -> ExtractionKey {
        ExtractionKey {
            visual_backbone: "v".into(),
            fragment_backbone: Some("f".into()),
            fragment_params: FragmentParams::default(),
            fragment_seed: seed,
        }
    }

    #[test]
    fn store_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::open(dir.path()).unwrap();
        let b = bundle(true);
        assert!(!cache.contains(&b.source_id, &key(1)));
        cache.store(&b, &key(1)).unwrap();
        assert!(cache.contains(&b.source_id, &key(1)));
        // values are exactly representable in f32
        assert_eq!(cache.load(&b.source_id, &key(1)).unwrap(), b);
    }

    #[test]
    fn key_depends_on_seed() {
        assert_ne!(key(1).digest(), key(2).digest());
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::open(dir.path()).unwrap();
        cache.store(&bundle(false), &key(1)).unwrap();
        assert!(matches!(cache.load("clip/01", &key(2)), Err(Error::CacheMiss(_))));
    }

    #[test]
    fn header_is_plain_json() {
        let mut buf = Vec::new();
        write_record(&bundle(false), &key(3), &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf);
        let header_line = text.lines().nth(1).unwrap();
        let v: serde_json::Value = serde_json::from_str(header_line).unwrap();
        assert_eq!(v["fragment_seed"], 3);
        assert_eq!(v["frames"], 2);
        assert_eq!(v["fragment_dim"], 0);
        // header + 2x3 global + 8x3 local floats
        let payload = buf.len() - MAGIC.len() - header_line.len() - 2;
        assert_eq!(payload, (6 + 24) * 4);
    }
}
