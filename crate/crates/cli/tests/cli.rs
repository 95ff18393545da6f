use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CODES: [&str; 16] = [
    "T-1", "T-2", "T-3", "T-4", "T-5", "T-6", "T-7", "T-8", "T-all", "A-1", "A-2", "A-3", "A-4", "A-5", "A-all", "O",
];

fn write_y4m(path: &Path, frames: usize, w: usize, h: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut enc = y4m::encode(w, h, y4m::Ratio::new(25, 1))
        .with_colorspace(y4m::Colorspace::C420)
        .write_header(&mut out)
        .unwrap();
    let level: u8 = rng.random_range(40..200);
    for _ in 0..frames {
        let y: Vec<u8> = (0..w * h).map(|_| level.saturating_add(rng.random_range(0..40))).collect();
        let c: Vec<u8> = (0..w.div_ceil(2) * h.div_ceil(2)).map(|_| rng.random_range(100..156)).collect();
        enc.write_frame(&y4m::Frame::new([&y, &c, &c], None)).unwrap();
    }
    fs::write(path, out).unwrap();
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new(videos: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::create_dir(root.join("videos")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut targets = String::from("video_id");
        let mut opinions = String::from("video_id,axis_code,subject_id,opinion\n");
        for c in CODES {
            targets.push(',');
            targets.push_str(c);
        }
        targets.push('\n');
        for v in 0..videos {
            let id = format!("vid{v:02}");
            write_y4m(&root.join("videos").join(format!("{id}.y4m")), 6, 80, 64, v as u64);
            targets.push_str(&id);
            for c in CODES {
                targets.push_str(&format!(",{}", rng.random_range(0.0..1.0f64)));
                for s in 0..3 {
                    let o: i8 = rng.random_range(-1..=1);
                    opinions.push_str(&format!("{id},{c},s{s},{o}\n"));
                }
            }
            targets.push('\n');
        }
        fs::write(root.join("targets.csv"), targets).unwrap();
        fs::write(root.join("opinions.csv"), opinions).unwrap();
        fs::write(
            root.join("run.toml"),
            r#"
[paths]
videos = "videos"
cache = "cache"
targets = "targets.csv"
annotations = "opinions.csv"
checkpoint = "ckpt"
output = "out"

[fragments]
grid = 7
patch = 32
frames = 4
seed = 3

[backbones]
embed_dim = 24
stub_width = 32
heads = 4
fragment_dim = 16

[train]
epochs = 2
batch_size = 4

[split]
test_size = 3
"#,
        )
        .unwrap();
        Self { _dir: dir, root }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_maxvqa"))
            .current_dir(&self.root)
            .arg("--config")
            .arg(self.root.join("run.toml"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).into_owned()
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.root.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

#[test]
fn full_workflow() {
    let ws = Workspace::new(10);
    let first = ws.ok(&["extract-features", "--jobs", "2"]);
    assert!(first.contains("extracted 10, skipped 0, failed 0"), "{first}");
    let report = ws.read("out/extract_report.csv");
    assert_eq!(report.lines().count(), 11);
    let again = ws.ok(&["extract-features"]);
    assert!(again.contains("extracted 0, skipped 10"), "{again}");

    ws.ok(&["train"]);
    assert!(ws.root.join("ckpt/manifest.json").is_file());
    let history = ws.read("out/history.csv");
    assert_eq!(history.lines().count(), 3);
    assert_eq!(ws.read("out/split.csv").matches(",test").count(), 3);

    let table = ws.ok(&["evaluate"]);
    assert!(table.contains("SRCC") && table.contains("maxvqa"), "{table}");
    let metrics = ws.read("out/metrics.csv");
    assert!(metrics.starts_with("method,metric,A-1"), "{metrics}");

    ws.ok(&["predict", "--maps"]);
    assert_eq!(ws.read("out/predictions.csv").lines().count(), 11);
    assert!(ws.root.join("out/maps/vid00/T_1_t000.png").is_file());
    assert_eq!(ws.read("out/maps/vid00/O.csv").lines().count(), 1 + 4 * 49);

    let overlay = ws.ok(&["quality-map", "videos/vid03.y4m", "--frame", "1"]);
    assert!(overlay.trim().ends_with("overlay_t001.png"), "{overlay}");
    let sidecar = ws.read("out/maps/vid03/overlay_t001.csv");
    assert_eq!(sidecar.lines().count(), 1 + 3 * 49);

    let zs = ws.ok(&["zero-shot", "vid01", "vid02", "vid04"]);
    assert!(zs.contains("zero-shot"), "{zs}");
    assert_eq!(ws.read("out/zero_shot_predictions.csv").lines().count(), 4);

    let written = ws.ok(&["analyze-opinions", "--predictions", "out/predictions.csv"]);
    for f in ["amr_arr.png", "tendency.csv", "mos.csv", "correlation.png", "cross_dimension.png"] {
        assert!(written.contains(f), "{f} missing from {written}");
    }
    assert_eq!(ws.read("out/correlation.csv").lines().count(), 17);
    assert_eq!(ws.read("out/amr_arr.csv").lines().count(), 17);

    let prompts = ws.ok(&["export-prompts"]);
    assert!(prompts.contains("A X Sharp photo."));
    assert_eq!(prompts.lines().count(), 33);
}

#[test]
fn numeric_outputs_are_reproducible() {
    let ws = Workspace::new(8);
    let mut seen = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(ws.root.join("cache"));
        ws.ok(&["extract-features"]);
        ws.ok(&["train"]);
        ws.ok(&["predict"]);
        seen.push((ws.read("out/history.csv"), ws.read("out/predictions.csv")));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn random_splits_train_and_evaluate_per_split() {
    let ws = Workspace::new(8);
    ws.ok(&["extract-features"]);
    let split = ["--set", "split.kind=random", "--set", "split.count=2", "--set", "split.train_fraction=0.75", "--set", "split.test_fraction=0.25"];
    ws.ok(&[&split[..], &["train", "--epochs", "1"]].concat());
    assert!(ws.root.join("ckpt/split-01/manifest.json").is_file());
    let table = ws.ok(&[&split[..], &["evaluate"]].concat());
    for label in ["split-00", "split-01", "mean"] {
        assert!(table.contains(label), "{table}");
    }
}

#[test]
fn exit_codes() {
    let ws = Workspace::new(4);
    let code = |args: &[&str]| ws.run(args).status.code().unwrap();

    assert_eq!(code(&["train", "--axes", "O,Z-9"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["--set", "split.kind=sideways", "train"]), 1);
    assert_eq!(code(&["--help"]), 0);

    // nothing extracted yet
    assert_eq!(code(&["train"]), 2);
    assert_eq!(code(&["zero-shot", "missing-id"]), 2);

    fs::write(ws.root.join("bogus.safetensors"), b"not weights").unwrap();
    assert_eq!(
        code(&["--set", "backbones.visual=clip-rn50", "--set", "backbones.visual_weights=bogus.safetensors", "extract-features"]),
        3
    );
    assert_eq!(code(&["--set", "backbones.heads=3", "extract-features"]), 3);
}

#[test]
fn corrupt_video_is_reported_not_fatal() {
    let ws = Workspace::new(3);
    fs::write(ws.root.join("videos/broken.y4m"), b"YUV4MPEG2 garbage").unwrap();
    let out = ws.ok(&["extract-features"]);
    assert!(out.contains("extracted 3, skipped 0, failed 1"), "{out}");
    let report = ws.read("out/extract_report.csv");
    let broken = report.lines().find(|l| l.starts_with("broken,")).unwrap();
    assert!(broken.contains("error") && broken.contains("broken.y4m"), "{broken}");
}
