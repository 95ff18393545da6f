//! Tiny CLIP ResNet checked against a PyTorch float64 reference
//! (`tests/fixtures/make_clip_fixture.py`).

use std::path::PathBuf;

use maxvqa_core::backbones::{ClipResNetConfig, ClipResNetEncoder, VisualEncoder};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn tiny() -> ClipResNetConfig {
    ClipResNetConfig {
        layers: [1, 1, 1, 1],
        width: 8,
        heads: 2,
        output_dim: 16,
        input_size: 64,
    }
}

fn close(got: &[f64], want: &[f64], what: &str) {
    assert_eq!(got.len(), want.len(), "{what} length");
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= 1e-4 * scale.max(1.0), "{what}[{i}]: {g} vs {w}");
    }
}

#[test]
fn matches_torch_reference() {
    let encoder = ClipResNetEncoder::load(&fixture("clip_tiny.safetensors"), tiny(), "visual.").unwrap();
    let frame = image::open(fixture("clip_tiny_input.png")).unwrap().to_rgb8();
    let enc = encoder.encode_image(&frame).unwrap();
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("clip_tiny_expected.json")).unwrap()).unwrap();
    let vec = |v: &serde_json::Value| -> Vec<f64> { v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect() };

    assert_eq!(enc.grid, 2);
    close(enc.global.as_slice().unwrap(), &vec(&expected["global"]), "global");
    let rows = expected["local"].as_array().unwrap();
    assert_eq!(enc.local.nrows(), rows.len());
    for (r, row) in rows.iter().enumerate() {
        close(&enc.local.row(r).to_vec(), &vec(row), &format!("local row {r}"));
    }
}
