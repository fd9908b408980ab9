use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use depfusion_cli::netpbm::{self, Image};
use depfusion_core::tensor::{read_tensor, write_tensor, write_tensor_file, AnyFeatureMap};
use depfusion_core::{FeatureMap, Prng, Shape};
use serde_json::Value;
use tempfile::TempDir;

fn depfusion(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depfusion"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A dark 64×80 RGB test image.
fn dark_image(dir: &Path, seed: u64) -> PathBuf {
    let mut prng = Prng::new(seed);
    let img = Image {
        width: 80,
        height: 64,
        channels: 3,
        data: (0..64 * 80 * 3).map(|_| prng.below(26) as u8).collect(),
    };
    let path = dir.join("dark.ppm");
    fs::write(&path, netpbm::encode(&img)).unwrap();
    path
}

fn features(dir: &Path, name: &str, shape: Shape, seed: u64) -> PathBuf {
    let x = FeatureMap::<f32>::random(shape, &mut Prng::new(seed), 1.0);
    let path = dir.join(name);
    write_tensor_file(&path, &x).unwrap();
    path
}

#[test]
fn enhance_identity_reproduces_pixels() {
    let tmp = TempDir::new().unwrap();
    dark_image(tmp.path(), 1);
    let o = depfusion(&["enhance", "dark.ppm", "--init", "identity", "--out", "id"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = netpbm::decode(&fs::read(tmp.path().join("dark.ppm")).unwrap()).unwrap();
    let b = netpbm::decode(&fs::read(tmp.path().join("id/enhanced.ppm")).unwrap()).unwrap();
    let worst = a.data.iter().zip(&b.data).map(|(x, y)| x.abs_diff(*y)).max().unwrap();
    assert!(worst <= 1, "max pixel change {worst}");
}

#[test]
fn enhance_is_deterministic_fast_and_reloadable() {
    let tmp = TempDir::new().unwrap();
    dark_image(tmp.path(), 2);
    let start = Instant::now();
    let o = depfusion(&["enhance", "dark.ppm", "--out", "a"], tmp.path());
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    depfusion(&["enhance", "dark.ppm", "--out", "b"], tmp.path());
    for f in ["enhanced.ppm", "enhanced.depf"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
    let o = depfusion(&["enhance", "dark.ppm", "--params", "a/params", "--out", "c"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fs::read(tmp.path().join("a/enhanced.depf")).unwrap(),
        fs::read(tmp.path().join("c/enhanced.depf")).unwrap()
    );
    let report = json(tmp.path().join("a/enhance.json"));
    assert_eq!(report["config"]["basis"], "haar");
    assert_eq!(report["shape"]["width"], 80);
    let out = depfusion(&["enhance", "dark.ppm", "--seed", "3", "--out", "d"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(
        fs::read(tmp.path().join("a/enhanced.depf")).unwrap(),
        fs::read(tmp.path().join("d/enhanced.depf")).unwrap()
    );
}

#[test]
fn enhance_rejects_bad_images() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("trunc.ppm"), b"P6\n4 4\n255\n\x01\x02").unwrap();
    let o = depfusion(&["enhance", "trunc.ppm"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at byte 13"));

    fs::write(tmp.path().join("deep.ppm"), b"P6\n1 1\n1023\n\0\0\0\0\0\0").unwrap();
    let o = depfusion(&["enhance", "deep.ppm"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported"));
}

#[test]
fn fuse_sidecar_and_output_contracts() {
    let tmp = TempDir::new().unwrap();
    let shape = Shape::new(1, 4, 8, 8);
    features(tmp.path(), "v.depf", shape, 1);
    features(tmp.path(), "i.depf", shape, 2);

    let o = depfusion(&["fuse", "v.depf", "v.depf", "--out", "same"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let side = json(tmp.path().join("same/fuse.json"));
    assert_eq!(side["perm_v"], side["perm_i"]);
    assert_eq!(side["perms_equal"], true);

    depfusion(&["fuse", "v.depf", "i.depf", "--variant", "b", "--out", "b"], tmp.path());
    depfusion(&["fuse", "v.depf", "i.depf", "--variant", "d", "--out", "d"], tmp.path());
    let fb = fs::read(tmp.path().join("b/fused.depf")).unwrap();
    let fd = fs::read(tmp.path().join("d/fused.depf")).unwrap();
    assert_ne!(fb, fd);
    let side = json(tmp.path().join("d/fuse.json"));
    assert_eq!(side["variant"], "d");
    for key in ["perm_v", "perm_i", "scores_v", "scores_i", "timings", "config"] {
        assert!(side.get(key).is_some(), "sidecar lacks {key}");
    }

    let decoded = read_tensor(&fd).unwrap();
    let rewritten = match &decoded {
        AnyFeatureMap::F32(x) => write_tensor(x),
        AnyFeatureMap::F64(x) => write_tensor(x),
    };
    assert_eq!(rewritten, fd);

    let o = depfusion(&["fuse", "v.depf", "i.depf", "--params", "d/params", "--out", "again"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(tmp.path().join("again/fused.depf")).unwrap(), fd);
}

#[test]
fn fuse_shape_mismatch_names_both_shapes() {
    let tmp = TempDir::new().unwrap();
    features(tmp.path(), "v.depf", Shape::new(1, 4, 8, 8), 1);
    features(tmp.path(), "i.depf", Shape::new(1, 4, 8, 6), 2);
    let o = depfusion(&["fuse", "v.depf", "i.depf"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("(1, 4, 8, 8)") && err.contains("(1, 4, 8, 6)"), "{err}");
}

#[test]
fn verify_negative_control_and_report_schema() {
    let tmp = TempDir::new().unwrap();
    let o = depfusion(&["verify", "reconstruction", "--mutate-haar", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let report = json(tmp.path().join("r/verify_reconstruction.json"));
    assert_eq!(report["passed"], false);
    assert_eq!(report["mutate_haar"], true);

    let o = depfusion(&["verify", "ssm", "--seed", "5", "--out", "s"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let report = json(tmp.path().join("s/verify_ssm.json"));
    assert_eq!(report["config"]["seed"], 5);
    for check in report["checks"].as_array().unwrap() {
        for key in ["name", "suite", "comparison", "tolerance", "observed", "passed"] {
            assert!(check.get(key).is_some(), "check lacks {key}");
        }
        assert!(["<=", "=="].contains(&check["comparison"].as_str().unwrap()));
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.json"), r#"{"seed": 9, "levels": 3, "out": "from_file"}"#).unwrap();
    let o = depfusion(&["--config", "run.json", "verify", "ssm", "--seed", "11"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let report = json(tmp.path().join("from_file/verify_ssm.json"));
    assert_eq!(report["config"]["seed"], 11);
    assert_eq!(report["config"]["levels"], 3);

    fs::write(tmp.path().join("typo.json"), r#"{"seeds": 9}"#).unwrap();
    let o = depfusion(&["--config", "typo.json", "verify", "ssm"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    let o = depfusion(&["enhance", "x.ppm", "--kernel-sizes", "3,5,11"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = depfusion(&["verify", "everything"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_table_shapes() {
    let tmp = TempDir::new().unwrap();
    depfusion(&["bench", "--sizes", "256,512,1024", "--repeats", "1", "--out", "three"], tmp.path());
    let t = json(tmp.path().join("three/bench.json"));
    assert_eq!(t["rows"].as_array().unwrap().len(), 3);
    for s in t["stages"].as_array().unwrap() {
        assert_eq!(s["ratios"].as_array().unwrap().len(), 2);
    }
    let o = depfusion(&["bench", "--sizes", "256", "--repeats", "1", "--out", "one"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let t = json(tmp.path().join("one/bench.json"));
    assert!(t["stages"].as_array().unwrap().iter().all(|s| s["ratios"].as_array().unwrap().is_empty()));

    let o = depfusion(&["bench", "--sizes", "512,256"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
