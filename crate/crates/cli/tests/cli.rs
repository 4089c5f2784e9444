use std::path::Path;
use std::process::{Command, Output};

fn hsicd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsicd"))
        .args(args)
        .env("FFCAE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hsicd(args);
    assert!(
        out.status.success(),
        "hsicd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_small(dir: &Path, seed: &str) {
    ok(&[
        "synth", "--height", "24", "--width", "24", "--bands", "8", "--seed", seed, "--out", s(dir),
    ]);
}

#[test]
fn synth_writes_reproducible_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_small(a.path(), "4");
    synth_small(b.path(), "4");
    for name in ["image1.json", "image1.raw", "image2.json", "image2.raw", "ground_truth.pgm"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let cube = hsicd_core::io::load_cube(a.path().join("image2.json")).unwrap();
    assert_eq!((cube.height(), cube.width(), cube.bands()), (24, 24, 8));
}

#[test]
fn out_of_range_fraction_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsicd(&["synth", "--change-fraction", "1.5", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("image1.json").exists());
}

#[test]
fn missing_image_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.json");
    let out = hsicd(&[
        "train",
        "--image1",
        s(&missing),
        "--image2",
        s(&missing),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
    assert!(!dir.path().join("run").join("checkpoint.ffcae").exists());
}

#[test]
fn train_detect_evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_small(&data, "8");
    let (i1, i2, gt) = (data.join("image1.json"), data.join("image2.json"), data.join("ground_truth.pgm"));
    let mut outputs = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        let base = ["--image1", s(&i1), "--image2", s(&i2), "--seed", "3", "--out", s(&out)];
        ok(&[&["train", "--epochs", "8"], &base[..]].concat());
        assert_eq!(std::fs::read_to_string(out.join("loss.csv")).unwrap().lines().count(), 9);
        for op in ["sam", "ad"] {
            ok(&[&["detect", "--operator", op], &base[..]].concat());
        }
        let csv = ok(&["evaluate", "--map", s(&out.join("change_map.pgm")), "--ground-truth", s(&gt), "--out", s(&out)]);
        assert!(csv.starts_with("oa,kappa,f_score,precision,recall,pwc,fnr,tnr,dr\n"));
        for name in ["selected_channels.csv", "timing.csv", "metrics.json"] {
            assert!(out.join(name).exists(), "{name}");
        }
        outputs.push(
            ["checkpoint.ffcae", "change_map.pgm", "metrics.csv"].map(|n| std::fs::read(out.join(n)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn identical_images_give_an_empty_map() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_small(&data, "2");
    let i1 = data.join("image1.json");
    let out = dir.path().join("out");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "image1 = \"data/image1.json\"\nimage2 = \"data/image2.json\"\noutput_dir = \"out\"\n[ffcae]\nepochs = 3\n",
    )
    .unwrap();
    ok(&["train", "--config", s(&config)]);
    ok(&["detect", "--config", s(&config), "--image2", s(&i1)]);

    let map = hsicd_core::io::load_pgm(out.join("change_map.pgm")).unwrap();
    assert_eq!(map.changed_count(), 0);
    let mut pgm = b"P5\n24 24\n255\n".to_vec();
    pgm.extend(std::iter::repeat_n(0u8, 24 * 24));
    let gt = dir.path().join("blank.pgm");
    std::fs::write(&gt, pgm).unwrap();
    let csv = ok(&["evaluate", "--map", s(&out.join("change_map.pgm")), "--ground-truth", s(&gt), "--out", s(&out)]);
    assert!(csv.lines().nth(1).unwrap().starts_with("1.0000,"));
}

#[test]
fn evaluate_rejects_mismatched_sizes() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "1");
    let other = dir.path().join("small.pgm");
    std::fs::write(&other, b"P5\n2 2\n255\n\0\0\0\0").unwrap();
    let out = hsicd(&[
        "evaluate",
        "--map",
        s(&dir.path().join("ground_truth.pgm")),
        "--ground-truth",
        s(&other),
        "--out",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn rank_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let scores = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/published_scores.csv");
    let stdout = ok(&["rank", "--scores", s(&scores), "--out", s(dir.path())]);
    assert!(stdout.contains("G vs H"));
    let q = std::fs::read_to_string(dir.path().join("tukey_q.csv")).unwrap();
    assert_eq!(q.lines().count(), 9);
    let ranks = std::fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    assert!(ranks.starts_with("metric,A,B,C,D,E,F,G,H\n"));

    let bad = hsicd(&["rank", "--scores", s(&scores), "--mse", "-1", "--out", s(dir.path())]);
    assert_eq!(bad.status.code(), Some(2));
}
