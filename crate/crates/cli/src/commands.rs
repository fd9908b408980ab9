use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use depfusion_core::bundle::{read_dde_bundle, read_pgmf_bundle, write_dde_bundle, write_pgmf_bundle};
use depfusion_core::config::ParamInit;
use depfusion_core::dde::{dde_pipeline, DdeParams};
use depfusion_core::pgmf::{pgmf_fuse, FusionVariant, PgmfParams, ScoreStats, SortMethod, StageTimings};
use depfusion_core::tensor::{read_tensor_file, write_tensor};
use depfusion_core::verify::{run_complexity_suite, run_suite, Suite, SuiteOptions};
use depfusion_core::{Error, FeatureMap, Prng, Real, Result, RunConfig, Shape};
use log::{info, warn};
use serde::Serialize;

use crate::netpbm;
use crate::output::{write_atomic, write_dir_atomic, write_json};

pub const PARAMS_DIR: &str = "params";

#[derive(Debug, Serialize)]
struct EnhanceReport {
    command: &'static str,
    config: RunConfig,
    input: PathBuf,
    shape: Shape,
    params_source: String,
    image: PathBuf,
    tensor: PathBuf,
    input_mean: f64,
    output_mean: f64,
    /// Share of samples outside `[0, 1]` before quantization.
    clamped_fraction: f64,
    elapsed_ms: f64,
}

fn load_dde<T: Real>(cfg: &RunConfig, channels: usize) -> Result<(DdeParams<T>, String)> {
    if let Some(dir) = &cfg.params {
        let (manifest, params) = read_dde_bundle::<T>(dir)?;
        if params.config != cfg.dde_config(channels) {
            warn!("bundle {} overrides the structural settings of the run config", dir.display());
        }
        return Ok((params, format!("bundle {} (seed {})", dir.display(), manifest.seed)));
    }
    let dde_cfg = cfg.dde_config(channels);
    Ok(match cfg.init {
        ParamInit::Random => (DdeParams::random(&dde_cfg, &mut Prng::new(cfg.seed))?, format!("random (seed {})", cfg.seed)),
        ParamInit::Identity => (DdeParams::identity(&dde_cfg)?, "identity".into()),
    })
}

fn image_name(channels: usize) -> &'static str {
    if channels == 3 {
        "enhanced.ppm"
    } else {
        "enhanced.pgm"
    }
}

pub fn enhance<T: Real>(cfg: &RunConfig, input: &Path) -> Result<bool> {
    let img = netpbm::decode(&fs::read(input)?)?;
    let x = netpbm::to_feature_map::<T>(&img);
    let (params, params_source) = load_dde::<T>(cfg, img.channels)?;
    let start = Instant::now();
    let y = dde_pipeline(&x, &params)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

    let out = &cfg.out;
    let image = out.join(image_name(img.channels));
    let tensor = out.join("enhanced.depf");
    write_atomic(&image, &netpbm::encode(&netpbm::from_feature_map(&y)?))?;
    write_atomic(&tensor, &write_tensor(&y))?;
    if cfg.params.is_none() {
        write_dir_atomic(&out.join(PARAMS_DIR), |dir| write_dde_bundle(dir, cfg.seed, &params).map(drop))?;
    }
    let outside = y.data().iter().filter(|v| !(0.0..=1.0).contains(&v.f64())).count();
    let report = EnhanceReport {
        command: "enhance",
        config: cfg.clone(),
        input: input.to_path_buf(),
        shape: x.shape(),
        params_source,
        image: image.clone(),
        tensor,
        input_mean: x.mean(),
        output_mean: y.mean(),
        clamped_fraction: outside as f64 / y.data().len() as f64,
        elapsed_ms,
    };
    write_json(&out.join("enhance.json"), &report)?;
    println!(
        "enhanced {} ({}x{}, {} channel(s)) in {elapsed_ms:.1} ms -> {}",
        input.display(),
        img.width,
        img.height,
        img.channels,
        image.display()
    );
    Ok(true)
}

#[derive(Debug, Serialize)]
struct FuseReport {
    command: &'static str,
    config: RunConfig,
    rgb: PathBuf,
    ir: PathBuf,
    shape: Shape,
    params_source: String,
    variant: FusionVariant,
    fused: PathBuf,
    perm_v: Vec<Vec<usize>>,
    perm_i: Vec<Vec<usize>>,
    perms_equal: bool,
    scores_v: ScoreStats,
    scores_i: ScoreStats,
    sort_method: SortMethod,
    timings: StageTimings,
}

pub fn fuse<T: Real>(cfg: &RunConfig, rgb: &Path, ir: &Path) -> Result<bool> {
    let load = |p: &Path| -> Result<FeatureMap<T>> {
        let t = read_tensor_file(p)?;
        if t.dtype() != T::DTYPE {
            info!("{}: converting {} to {}", p.display(), t.dtype(), T::DTYPE);
        }
        Ok(t.into_dtype())
    };
    let (f_v, f_i) = (load(rgb)?, load(ir)?);
    if f_v.shape() != f_i.shape() {
        return Err(Error::Shape(format!(
            "RGB features {} {} and IR features {} {} differ",
            rgb.display(),
            f_v.shape(),
            ir.display(),
            f_i.shape()
        )));
    }
    let mut pgmf_cfg = cfg.pgmf_config(f_v.shape().channels);
    let (params, params_source) = match &cfg.params {
        Some(dir) => {
            let (manifest, params) = read_pgmf_bundle::<T>(dir)?;
            let depfusion_core::bundle::BundleModel::Pgmf(stored) = manifest.model else {
                unreachable!("read_pgmf_bundle checks the kind")
            };
            // Structure comes from the bundle; run-time switches from the run config.
            pgmf_cfg = depfusion_core::pgmf::PgmfConfig {
                variant: cfg.variant,
                dropout: cfg.dropout,
                dropout_seed: cfg.seed,
                ..stored
            };
            (params, format!("bundle {} (seed {})", dir.display(), manifest.seed))
        }
        None => (
            PgmfParams::random(&pgmf_cfg, &mut Prng::new(cfg.seed))?,
            format!("random (seed {})", cfg.seed),
        ),
    };
    let result = pgmf_fuse(&f_v, &f_i, &params, &pgmf_cfg)?;

    let out = &cfg.out;
    let fused = out.join("fused.depf");
    write_atomic(&fused, &write_tensor(&result.fused))?;
    if cfg.params.is_none() {
        write_dir_atomic(&out.join(PARAMS_DIR), |dir| {
            write_pgmf_bundle(dir, cfg.seed, &pgmf_cfg, &params).map(drop)
        })?;
    }
    let report = FuseReport {
        command: "fuse",
        config: cfg.clone(),
        rgb: rgb.to_path_buf(),
        ir: ir.to_path_buf(),
        shape: f_v.shape(),
        params_source,
        variant: pgmf_cfg.variant,
        fused: fused.clone(),
        perms_equal: result.perm_v == result.perm_i,
        perm_v: result.perm_v,
        perm_i: result.perm_i,
        scores_v: result.scores_v,
        scores_i: result.scores_i,
        sort_method: result.sort_method,
        timings: result.timings,
    };
    write_json(&out.join("fuse.json"), &report)?;
    println!(
        "fused {} with {} (variant {}) in {:.1} ms -> {}",
        rgb.display(),
        ir.display(),
        pgmf_cfg.variant,
        report.timings.total_ms,
        fused.display()
    );
    Ok(true)
}

pub fn verify(cfg: &RunConfig, suite: Suite, mutate_haar: bool) -> Result<bool> {
    let opts = SuiteOptions {
        seed: cfg.seed,
        mutate_haar,
    };
    let mut report = run_suite(suite, &opts)?;
    report.config = Some(serde_json::to_value(cfg)?);
    let name = format!("verify_{}.json", suite_name(suite));
    write_json(&cfg.out.join(&name), &report)?;
    for c in &report.checks {
        let cmp = match c.comparison {
            depfusion_core::verify::suites::Comparison::AtMost => "<=",
            depfusion_core::verify::suites::Comparison::Equal => "==",
        };
        println!(
            "{} {:<44} {:>12.4e} {cmp} {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.observed,
            c.tolerance
        );
    }
    println!(
        "{} of {} checks passed; report {}",
        report.checks.len() - report.failed,
        report.checks.len(),
        cfg.out.join(name).display()
    );
    Ok(report.passed)
}

fn suite_name(suite: Suite) -> String {
    serde_json::to_value(suite)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| "suite".into())
}

#[derive(Debug, Serialize)]
struct BenchReport {
    command: &'static str,
    config: RunConfig,
    #[serde(flatten)]
    table: depfusion_core::pgmf::ProbeTable,
    passed: bool,
}

pub fn bench(cfg: &RunConfig, sizes: &[usize], repeats: usize) -> Result<bool> {
    let table = match cfg.dtype {
        depfusion_core::DType::F32 => run_complexity_suite::<f32>(sizes, repeats, cfg.seed)?,
        depfusion_core::DType::F64 => run_complexity_suite::<f64>(sizes, repeats, cfg.seed)?,
    };
    println!("{:>8} {:>12} {:>12} {:>12}", "tokens", "psn ms", "sort ms", "ssm ms");
    for r in &table.rows {
        println!(
            "{:>8} {:>12.3} {:>12.3} {:>12.3}",
            r.tokens, r.median_ms[0], r.median_ms[1], r.median_ms[2]
        );
    }
    for s in &table.stages {
        let ratios: Vec<String> = s.ratios.iter().map(|r| format!("{r:.2}")).collect();
        println!(
            "{:?} doubling ratios [{}]{}",
            s.stage,
            ratios.join(", "),
            if s.within_band { "" } else { "  OUTSIDE BAND" }
        );
    }
    let passed = table.passed();
    write_json(
        &cfg.out.join("bench.json"),
        &BenchReport {
            command: "bench",
            config: cfg.clone(),
            table,
            passed,
        },
    )?;
    Ok(passed)
}
