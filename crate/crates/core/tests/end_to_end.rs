use depfusion_core::bundle::{read_dde_bundle, read_manifest, read_pgmf_bundle, write_dde_bundle, write_pgmf_bundle, BundleModel};
use depfusion_core::dde::{dde_pipeline, DdeParams};
use depfusion_core::pgmf::{pgmf_fuse, PgmfParams};
use depfusion_core::verify::{run_decay_suite, run_suite, Suite, SuiteOptions};
use depfusion_core::wavelet::{dwt2, idwt2, read_pyramid_dir, write_pyramid_dir, Basis};
use depfusion_core::{FeatureMap, Prng, RunConfig, Shape};

#[test]
fn dde_from_run_config_survives_a_bundle_round_trip() {
    let cfg = RunConfig::from_json(r#"{"seed": 3, "levels": 3, "basis": "sym2"}"#).unwrap();
    let dde = cfg.dde_config(3);
    let params = DdeParams::<f32>::random(&dde, &mut Prng::new(cfg.seed)).unwrap();
    let img = FeatureMap::<f32>::random(Shape::new(1, 3, 40, 56), &mut Prng::new(9), 0.5).map(|v| v + 0.5);
    let out = dde_pipeline(&img, &params).unwrap();
    assert_eq!(out.shape(), img.shape());
    assert!(out.is_finite());

    let dir = tempfile::tempdir().unwrap();
    write_dde_bundle(dir.path(), cfg.seed, &params).unwrap();
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.seed, 3);
    assert!(matches!(manifest.model, BundleModel::Dde(ref c) if c.levels == 3 && c.basis == Basis::Sym2));
    let (_, loaded) = read_dde_bundle::<f32>(dir.path()).unwrap();
    assert!(dde_pipeline(&img, &loaded).unwrap().bitwise_eq(&out));
}

#[test]
fn pgmf_bundle_reproduces_fusion() {
    let cfg = RunConfig::default().pgmf_config(4);
    let params = PgmfParams::<f32>::random(&cfg, &mut Prng::new(5)).unwrap();
    let shape = Shape::new(2, 4, 12, 10);
    let mut p = Prng::new(6);
    let (v, i) = (FeatureMap::random(shape, &mut p, 1.0), FeatureMap::random(shape, &mut p, 1.0));
    let out = pgmf_fuse(&v, &i, &params, &cfg).unwrap();
    assert_eq!(out.fused.shape(), shape);
    assert_eq!(out.perm_v.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    write_pgmf_bundle(dir.path(), 5, &cfg, &params).unwrap();
    let (_, loaded) = read_pgmf_bundle::<f32>(dir.path()).unwrap();
    assert!(pgmf_fuse(&v, &i, &loaded, &cfg).unwrap().fused.bitwise_eq(&out.fused));
}

#[test]
fn pyramid_directory_round_trip() {
    let x = FeatureMap::<f64>::random(Shape::new(1, 2, 24, 36), &mut Prng::new(1), 1.0);
    let p = dwt2(&x, 2, Basis::Sym2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_pyramid_dir(dir.path(), &p).unwrap();
    let back = read_pyramid_dir::<f64>(dir.path()).unwrap();
    assert!(back.ll.bitwise_eq(&p.ll));
    assert_eq!(back.basis, Basis::Sym2);
    assert!(idwt2(&back).unwrap().max_abs_diff(&x) <= 1e-10);
}

#[test]
fn all_suites_pass_across_seeds() {
    for seed in [0, 42, 1234] {
        let r = run_suite(Suite::All, &SuiteOptions { seed, mutate_haar: false }).unwrap();
        let failed: Vec<_> = r.checks.iter().filter(|c| !c.passed).map(|c| &c.name).collect();
        assert!(r.passed, "seed {seed}: {failed:?}");
        let json = serde_json::to_value(&r).unwrap();
        for key in ["suite", "seed", "checks", "failed", "passed", "attachments"] {
            assert!(json.get(key).is_some(), "report lacks {key}");
        }
    }
}

#[test]
fn decay_reference_run() {
    let r = run_decay_suite(100, 256, 7).unwrap();
    assert_eq!(r.bound_violations, 0);
    assert!(r.passed);
    let curve = r.constant_curve(0.9).unwrap();
    assert!(curve.monotone);
    let at100 = curve.points.iter().find(|p| p.0 == 100).unwrap().1;
    assert!((at100 - 0.9f64.powi(100)).abs() <= 1e-12, "{at100}");
}
