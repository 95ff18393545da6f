//! CLIP's modified ResNet visual tower, inference only.
//!
//! Weights are read from a safetensors file using the OpenCLIP state-dict
//! names (`visual.conv1.weight`, `visual.layer1.0.bn2.running_var`, ...).
//! Batch norms are folded into the preceding convolutions at load time.
//! The final attention pooling keeps every output token, so the tower
//! returns per-cell local features next to the usual global embedding.

use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use ndarray::{s, Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use super::{AttentionPool, FrameEncoding, Linear, VisualEncoder};
use crate::error::{Error, Result};

const MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
const STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];
const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipResNetConfig {
    pub layers: [usize; 4],
    pub width: usize,
    pub heads: usize,
    pub output_dim: usize,
    pub input_size: u32,
}

impl ClipResNetConfig {
    pub fn rn50() -> Self {
        Self {
            layers: [3, 4, 6, 3],
            width: 64,
            heads: 32,
            output_dim: 1024,
            input_size: 224,
        }
    }

    pub fn embed_width(&self) -> usize {
        self.width * 32
    }

    pub fn grid(&self) -> usize {
        self.input_size as usize / 32
    }
}

/// Convolution with a folded batch norm, no padding mode other than zeros.
#[derive(Debug, Clone)]
struct Conv {
    /// `out x (in * k * k)`
    weight: Array2<f32>,
    bias: Array1<f32>,
    in_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Conv {
    fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_ch);
        let k = self.kernel;
        let ho = (h + 2 * self.padding - k) / self.stride + 1;
        let wo = (w + 2 * self.padding - k) / self.stride + 1;
        let mut cols = Array2::<f32>::zeros((c * k * k, ho * wo));
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    let mut dst = cols.row_mut(row);
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = x[[ch, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        let mut out = self.weight.dot(&cols);
        for (mut row, &b) in out.rows_mut().into_iter().zip(self.bias.iter()) {
            row += b;
        }
        out.into_shape_with_order((self.weight.nrows(), ho, wo))
            .expect("conv output shape")
    }
}

fn avg_pool(x: Array3<f32>, k: usize) -> Array3<f32> {
    if k == 1 {
        return x;
    }
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f32;
    Array3::from_shape_fn((c, ho, wo), |(ch, y, xx)| {
        x.slice(s![ch, y * k..(y + 1) * k, xx * k..(xx + 1) * k]).sum() * norm
    })
}

fn relu(mut x: Array3<f32>) -> Array3<f32> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv,
    conv2: Conv,
    conv3: Conv,
    stride: usize,
    downsample: Option<Conv>,
}

impl Bottleneck {
    fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let out = relu(self.conv1.forward(x));
        let out = relu(self.conv2.forward(&out));
        let out = avg_pool(out, self.stride);
        let mut out = self.conv3.forward(&out);
        match &self.downsample {
            Some(ds) => out += &ds.forward(&avg_pool(x.clone(), self.stride)),
            None => out += x,
        }
        relu(out)
    }
}

trait WeightSource {
    /// Returns the tensor and its shape, converted to f32.
    fn get(&mut self, name: &str) -> Result<(Vec<f32>, Vec<usize>)>;
}

struct SafeTensorSource<'a> {
    tensors: SafeTensors<'a>,
    prefix: String,
}

impl WeightSource for SafeTensorSource<'_> {
    fn get(&mut self, name: &str) -> Result<(Vec<f32>, Vec<usize>)> {
        let full = format!("{}{name}", self.prefix);
        let view = self
            .tensors
            .tensor(&full)
            .map_err(|e| Error::Backbone(format!("{full}: {e}")))?;
        let bytes = view.data();
        let data = match view.dtype() {
            Dtype::F32 => bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
            Dtype::F16 => bytes
                .chunks_exact(2)
                .map(|b| half::f16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
            Dtype::BF16 => bytes
                .chunks_exact(2)
                .map(|b| half::bf16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")) as f32)
                .collect(),
            other => return Err(Error::Backbone(format!("{full}: unsupported dtype {other:?}"))),
        };
        Ok((data, view.shape().to_vec()))
    }
}

/// Random weights with identity batch-norm statistics, for shape tests.
struct RandomSource {
    rng: ChaCha8Rng,
    shapes: HashMap<String, (Vec<usize>, Init)>,
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Ones,
    Zeros,
}

impl WeightSource for RandomSource {
    fn get(&mut self, name: &str) -> Result<(Vec<f32>, Vec<usize>)> {
        let (shape, init) = self
            .shapes
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Backbone(format!("no random shape for {name}")))?;
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Ones => vec![1.0; n],
            Init::Zeros => vec![0.0; n],
            Init::Normal => {
                let fan_in = if shape.len() > 1 { n / shape[0] } else { shape[0] };
                let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite");
                (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
            }
        };
        Ok((data, shape))
    }
}

struct Builder<'s> {
    source: &'s mut dyn WeightSource,
    hasher: Sha256,
}

impl Builder<'_> {
    fn tensor(&mut self, name: &str, expected: &[usize]) -> Result<Vec<f32>> {
        let (data, shape) = self.source.get(name)?;
        if shape != expected {
            return Err(Error::Backbone(format!("{name}: shape {shape:?}, expected {expected:?}")));
        }
        self.hasher.update(name.as_bytes());
        for v in &data {
            self.hasher.update(v.to_le_bytes());
        }
        Ok(data)
    }

    fn conv_bn(&mut self, conv: &str, bn: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Result<Conv> {
        let w = self.tensor(&format!("{conv}.weight"), &[out_ch, in_ch, kernel, kernel])?;
        let gamma = self.tensor(&format!("{bn}.weight"), &[out_ch])?;
        let beta = self.tensor(&format!("{bn}.bias"), &[out_ch])?;
        let mean = self.tensor(&format!("{bn}.running_mean"), &[out_ch])?;
        let var = self.tensor(&format!("{bn}.running_var"), &[out_ch])?;
        let per = in_ch * kernel * kernel;
        let mut weight = Array2::from_shape_vec((out_ch, per), w).expect("conv weight shape");
        let mut bias = Array1::zeros(out_ch);
        for o in 0..out_ch {
            let scale = gamma[o] / (var[o] + BN_EPS).sqrt();
            weight.row_mut(o).mapv_inplace(|v| v * scale);
            bias[o] = beta[o] - mean[o] * scale;
        }
        Ok(Conv {
            weight,
            bias,
            in_ch,
            kernel,
            stride,
            padding: kernel / 2,
        })
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) -> Result<Linear> {
        let w = self.tensor(&format!("{name}.weight"), &[output, input])?;
        let b = self.tensor(&format!("{name}.bias"), &[output])?;
        Linear::new(
            Array2::from_shape_vec((output, input), w.into_iter().map(f64::from).collect()).expect("shape"),
            b.into_iter().map(f64::from).collect(),
        )
    }
}

fn tensor_shapes(config: &ClipResNetConfig) -> HashMap<String, (Vec<usize>, Init)> {
    let mut shapes = HashMap::new();
    let mut conv_bn = |conv: String, bn: String, i: usize, o: usize, k: usize| {
        shapes.insert(format!("{conv}.weight"), (vec![o, i, k, k], Init::Normal));
        for (p, init) in [
            ("weight", Init::Ones),
            ("bias", Init::Zeros),
            ("running_mean", Init::Zeros),
            ("running_var", Init::Ones),
        ] {
            shapes.insert(format!("{bn}.{p}"), (vec![o], init));
        }
    };
    let w = config.width;
    conv_bn("conv1".into(), "bn1".into(), 3, w / 2, 3);
    conv_bn("conv2".into(), "bn2".into(), w / 2, w / 2, 3);
    conv_bn("conv3".into(), "bn3".into(), w / 2, w, 3);
    let mut inplanes = w;
    for (li, &blocks) in config.layers.iter().enumerate() {
        let planes = w << li;
        for b in 0..blocks {
            let p = format!("layer{}.{b}", li + 1);
            let stride = if b == 0 && li > 0 { 2 } else { 1 };
            conv_bn(format!("{p}.conv1"), format!("{p}.bn1"), inplanes, planes, 1);
            conv_bn(format!("{p}.conv2"), format!("{p}.bn2"), planes, planes, 3);
            conv_bn(format!("{p}.conv3"), format!("{p}.bn3"), planes, planes * 4, 1);
            if stride > 1 || inplanes != planes * 4 {
                conv_bn(format!("{p}.downsample.0"), format!("{p}.downsample.1"), inplanes, planes * 4, 1);
            }
            inplanes = planes * 4;
        }
    }
    let e = config.embed_width();
    let g = config.grid();
    shapes.insert("attnpool.positional_embedding".into(), (vec![g * g + 1, e], Init::Normal));
    for n in ["q_proj", "k_proj", "v_proj"] {
        shapes.insert(format!("attnpool.{n}.weight"), (vec![e, e], Init::Normal));
        shapes.insert(format!("attnpool.{n}.bias"), (vec![e], Init::Zeros));
    }
    shapes.insert("attnpool.c_proj.weight".into(), (vec![config.output_dim, e], Init::Normal));
    shapes.insert("attnpool.c_proj.bias".into(), (vec![config.output_dim], Init::Zeros));
    shapes
}

pub struct ClipResNetEncoder {
    config: ClipResNetConfig,
    stem: [Conv; 3],
    layers: Vec<Vec<Bottleneck>>,
    pool: AttentionPool,
    name: String,
    digest: String,
}

impl std::fmt::Debug for ClipResNetEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClipResNetEncoder")
            .field("config", &self.config)
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl ClipResNetEncoder {
    /// Loads weights stored under `prefix` (usually `"visual."`).
    pub fn load(path: &Path, config: ClipResNetConfig, prefix: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Backbone(format!("{}: {e}", path.display())))?;
        let tensors =
            SafeTensors::deserialize(&bytes).map_err(|e| Error::Backbone(format!("{}: {e}", path.display())))?;
        let mut source = SafeTensorSource {
            tensors,
            prefix: prefix.to_string(),
        };
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::build(config, &mut source, name)
    }

    /// Randomly initialized tower (identity batch norms).
    pub fn random(config: ClipResNetConfig, seed: u64) -> Result<Self> {
        let mut source = RandomSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            shapes: tensor_shapes(&config),
        };
        Self::build(config, &mut source, format!("random-seed{seed}"))
    }

    fn build(config: ClipResNetConfig, source: &mut dyn WeightSource, name: String) -> Result<Self> {
        if !config.input_size.is_multiple_of(32) || !config.width.is_multiple_of(2) {
            return Err(Error::Backbone("input size must be a multiple of 32 and width even".into()));
        }
        let mut b = Builder {
            source,
            hasher: Sha256::new(),
        };
        let w = config.width;
        let stem = [
            b.conv_bn("conv1", "bn1", 3, w / 2, 3, 2)?,
            b.conv_bn("conv2", "bn2", w / 2, w / 2, 3, 1)?,
            b.conv_bn("conv3", "bn3", w / 2, w, 3, 1)?,
        ];
        let mut inplanes = w;
        let mut layers = Vec::new();
        for (li, &blocks) in config.layers.iter().enumerate() {
            let planes = w << li;
            let mut layer = Vec::new();
            for bi in 0..blocks {
                let p = format!("layer{}.{bi}", li + 1);
                let stride = if bi == 0 && li > 0 { 2 } else { 1 };
                let downsample = if stride > 1 || inplanes != planes * 4 {
                    Some(b.conv_bn(
                        &format!("{p}.downsample.0"),
                        &format!("{p}.downsample.1"),
                        inplanes,
                        planes * 4,
                        1,
                        1,
                    )?)
                } else {
                    None
                };
                layer.push(Bottleneck {
                    conv1: b.conv_bn(&format!("{p}.conv1"), &format!("{p}.bn1"), inplanes, planes, 1, 1)?,
                    conv2: b.conv_bn(&format!("{p}.conv2"), &format!("{p}.bn2"), planes, planes, 3, 1)?,
                    conv3: b.conv_bn(&format!("{p}.conv3"), &format!("{p}.bn3"), planes, planes * 4, 1, 1)?,
                    stride,
                    downsample,
                });
                inplanes = planes * 4;
            }
            layers.push(layer);
        }
        let e = config.embed_width();
        let g = config.grid();
        let pos = b.tensor("attnpool.positional_embedding", &[g * g + 1, e])?;
        let positional =
            Array2::from_shape_vec((g * g + 1, e), pos.into_iter().map(f64::from).collect()).expect("shape");
        let pool = AttentionPool::new(
            positional,
            b.linear("attnpool.q_proj", e, e)?,
            b.linear("attnpool.k_proj", e, e)?,
            b.linear("attnpool.v_proj", e, e)?,
            b.linear("attnpool.c_proj", e, config.output_dim)?,
            config.heads,
        )?;
        let digest = b.hasher.finalize().iter().map(|x| format!("{x:02x}")).collect();
        Ok(Self {
            config,
            stem,
            layers,
            pool,
            name,
            digest,
        })
    }

    fn preprocess(&self, frame: &RgbImage) -> Array3<f32> {
        let (w, h) = frame.dimensions();
        let raw = frame.as_raw();
        Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            let v = raw[(y * w as usize + x) * 3 + c] as f32 / 255.0;
            (v - MEAN[c]) / STD[c]
        })
    }

    /// Trunk output before attention pooling, `channels x grid x grid`.
    fn trunk(&self, frame: &RgbImage) -> Array3<f32> {
        let mut x = self.preprocess(frame);
        for conv in &self.stem {
            x = relu(conv.forward(&x));
        }
        x = avg_pool(x, 2);
        for layer in &self.layers {
            for block in layer {
                x = block.forward(&x);
            }
        }
        x
    }
}

impl VisualEncoder for ClipResNetEncoder {
    fn id(&self) -> String {
        format!("clip-resnet:{}:{}", self.name, &self.digest[..12])
    }

    fn input_size(&self) -> u32 {
        self.config.input_size
    }

    fn embed_dim(&self) -> usize {
        self.config.output_dim
    }

    fn grid(&self) -> usize {
        self.config.grid()
    }

    fn encode_image(&self, frame: &RgbImage) -> Result<FrameEncoding> {
        let size = self.config.input_size;
        if frame.dimensions() != (size, size) {
            return Err(Error::Geometry(format!("CLIP tower expects {size}x{size} input")));
        }
        let features = self.trunk(frame);
        let (c, h, w) = features.dim();
        if h != self.config.grid() || w != self.config.grid() {
            return Err(Error::Shape(format!("trunk produced a {h}x{w} grid")));
        }
        // channels x cells -> cells x channels
        let tokens: Array2<f64> = features
            .into_shape_with_order((c, h * w))
            .expect("flatten")
            .t()
            .mapv(f64::from);
        let (global, local) = self.pool.forward(tokens.view())?;
        Ok(FrameEncoding {
            global,
            local,
            pre_pool: tokens,
            grid: h,
        })
    }

    fn parameter_digest(&self) -> String {
        self.digest.clone()
    }
}
