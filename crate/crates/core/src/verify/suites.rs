//! Named groups of checks with machine-readable results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grad::{check_gradients, shared_psn_factor_two, GradCheckConfig, GradModel};
use super::loss::{focal_loss, smooth_l1, total_loss, LossConfig};
use crate::dde::{dde_pipeline, Cswm, DdeConfig, DdeParams, DEFAULT_KERNEL_SIZES};
use crate::error::{Error, Result};
use crate::pgmf::{
    build_fusion_sequence, complexity_probe, deserialize, gather, pgmf_fuse, priority_scores, priority_serialize,
    scatter, FusionVariant, PgmfConfig, PgmfParams, ProbeTable, SortMethod,
};
use crate::spectral::{fft2_decompose, ifft2_recompose};
use crate::ssm::{verify_decay, DEFAULT_GAPS};
use crate::ssm::{apply_kernel, conv_kernel, discretize_entry, Discretization, DiscreteSystem, LtiSystem, SelectiveSystem};
use crate::tensor::{
    depthwise_conv, flatten_spatial, init_params, read_tensor, unflatten_spatial, write_tensor, AnyFeatureMap, DwKernel,
    FeatureMap, Prng, Real, Shape,
};
use crate::wavelet::{dwt2, dwt2_with_filters, idwt2, Basis, Filters, WaveletPyramid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Reconstruction,
    Ssm,
    Decay,
    Gradients,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["reconstruction", "ssm", "decay", "gradients", "all"];
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconstruction" => Ok(Suite::Reconstruction),
            "ssm" => Ok(Suite::Ssm),
            "decay" => Ok(Suite::Decay),
            "gradients" => Ok(Suite::Gradients),
            "all" => Ok(Suite::All),
            other => Err(Error::arg(format!(
                "unknown suite {other:?} (expected one of {})",
                Suite::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Negative control: analyse with a perturbed Haar low-pass filter.
    pub mutate_haar: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "==")]
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub suite: Suite,
    pub comparison: Comparison,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    fn at_most(suite: Suite, name: &str, observed: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            suite,
            comparison: Comparison::AtMost,
            tolerance,
            observed,
            passed: observed <= tolerance,
            detail: None,
        }
    }

    /// Counts of failures that must be exactly zero.
    fn none_failed(suite: Suite, name: &str, failures: usize) -> Self {
        Check {
            name: name.into(),
            suite,
            comparison: Comparison::Equal,
            tolerance: 0.0,
            observed: failures as f64,
            passed: failures == 0,
            detail: None,
        }
    }

    fn with_detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub mutate_haar: bool,
    pub checks: Vec<Check>,
    pub failed: usize,
    pub passed: bool,
    /// Full sub-reports keyed by check name.
    pub attachments: BTreeMap<String, serde_json::Value>,
    /// The effective run configuration, when run from the command line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut attachments = BTreeMap::new();
    let parts: &[Suite] = match suite {
        Suite::All => &[Suite::Reconstruction, Suite::Ssm, Suite::Decay, Suite::Gradients],
        _ => std::slice::from_ref(&suite),
    };
    for &part in parts {
        match part {
            Suite::Reconstruction => reconstruction(opts, &mut checks)?,
            Suite::Ssm => ssm(opts, &mut checks)?,
            Suite::Decay => decay(opts, &mut checks, &mut attachments)?,
            Suite::Gradients => gradients(opts, &mut checks, &mut attachments)?,
            Suite::All => unreachable!(),
        }
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    Ok(VerifyReport {
        suite,
        seed: opts.seed,
        mutate_haar: opts.mutate_haar,
        checks,
        failed,
        passed: failed == 0,
        attachments,
        config: None,
    })
}

/// Random image shapes up to `3×64×64` admissible for `levels`.
fn random_shape(prng: &mut Prng, levels: usize) -> Shape {
    let min = 1usize << levels;
    let side = |p: &mut Prng| min + p.below(64 - min + 1);
    Shape::new(1, 1 + prng.below(3), side(prng), side(prng))
}

/// Largest `|idwt2(dwt2(x)) − x|` over 50 random images, levels 1–3, both bases.
pub fn reconstruction_error<T: Real>(seed: u64, mutate_haar: bool) -> Result<f64> {
    let mut prng = Prng::new(seed);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let basis = if k % 2 == 0 { Basis::Haar } else { Basis::Sym2 };
        let levels = 1 + k % 3;
        let x = FeatureMap::<T>::random(random_shape(&mut prng, levels), &mut prng, 1.0);
        let mut filters = Filters::for_basis(basis);
        if mutate_haar && basis == Basis::Haar {
            filters = filters.corrupted();
        }
        let y = idwt2(&dwt2_with_filters(&x, levels, basis, &filters)?)?;
        worst = worst.max(y.max_abs_diff(&x));
    }
    Ok(worst)
}

fn wavelet_parseval(seed: u64, mutate_haar: bool) -> Result<f64> {
    let mut prng = Prng::new(seed);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let basis = if k % 2 == 0 { Basis::Haar } else { Basis::Sym2 };
        let x = FeatureMap::<f64>::random(Shape::new(1, 3, 32, 48), &mut prng, 1.0);
        let mut filters = Filters::for_basis(basis);
        if mutate_haar && basis == Basis::Haar {
            filters = filters.corrupted();
        }
        let p = dwt2_with_filters(&x, 2, basis, &filters)?;
        let e: f64 = x.data().iter().map(|v| v * v).sum();
        worst = worst.max((p.energy() - e).abs() / e);
    }
    Ok(worst)
}

fn tensor_checks(seed: u64, checks: &mut Vec<Check>) -> Result<()> {
    let s = Suite::Reconstruction;
    let mut prng = Prng::new(seed);
    let (mut identity, mut linear, mut flatten, mut io) = (0.0f64, 0.0f64, 0usize, 0usize);
    for _ in 0..20 {
        let shape = random_shape(&mut prng, 1).with_channels(1 + prng.below(4));
        let size = [1, 3, 5, 7][prng.below(4)];
        let x = FeatureMap::<f32>::random(shape, &mut prng, 1.0);
        let y = FeatureMap::<f32>::random(shape, &mut prng, 1.0);
        identity = identity.max(depthwise_conv(&x, &DwKernel::identity(shape.channels, size)?)?.max_abs_diff(&x));

        let k = DwKernel::<f32>::random(shape.channels, size, &mut prng)?;
        let (a, b) = (prng.uniform(-2.0, 2.0) as f32, prng.uniform(-2.0, 2.0) as f32);
        let lhs = depthwise_conv(&x.scale(a).add(&y.scale(b))?, &k)?;
        let rhs = depthwise_conv(&x, &k)?.scale(a).add(&depthwise_conv(&y, &k)?.scale(b))?;
        let scale = lhs.data().iter().fold(1e-30f64, |m, v| m.max(f64::from(v.abs())));
        linear = linear.max(lhs.max_abs_diff(&rhs) / scale);

        flatten += usize::from(!unflatten_spatial(&flatten_spatial(&x), shape.height, shape.width)?.bitwise_eq(&x));
        let wide = x.cast::<f64>();
        io += usize::from(!matches!(read_tensor(&write_tensor(&x))?, AnyFeatureMap::F32(r) if r.bitwise_eq(&x)));
        io += usize::from(!matches!(read_tensor(&write_tensor(&wide))?, AnyFeatureMap::F64(r) if r.bitwise_eq(&wide)));
    }
    checks.push(Check::at_most(s, "tensor.identity_conv", identity, 0.0));
    checks.push(Check::at_most(s, "tensor.conv_linearity.f32", linear, 1e-6));
    checks.push(Check::none_failed(s, "tensor.flatten_bijection", flatten));
    checks.push(Check::none_failed(s, "tensor.serialization_round_trip", io));
    Ok(())
}

fn pyramid_bands<T: Real>(p: &WaveletPyramid<T>) -> Vec<&FeatureMap<T>> {
    let mut bands = vec![&p.ll];
    for d in &p.details {
        bands.extend([&d.hl, &d.lh, &d.hh]);
    }
    bands
}

/// `dwt2(a x + b y) = a dwt2(x) + b dwt2(y)`, band by band, relative to the largest coefficient.
fn wavelet_linearity(seed: u64) -> Result<f64> {
    let mut prng = Prng::new(seed);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let basis = if k % 2 == 0 { Basis::Haar } else { Basis::Sym2 };
        let levels = 1 + k % 3;
        let shape = random_shape(&mut prng, levels);
        let x = FeatureMap::<f64>::random(shape, &mut prng, 1.0);
        let y = FeatureMap::<f64>::random(shape, &mut prng, 1.0);
        let (a, b) = (prng.uniform(-2.0, 2.0), prng.uniform(-2.0, 2.0));
        let mixed = dwt2(&x.scale(a).add(&y.scale(b))?, levels, basis)?;
        let (px, py) = (dwt2(&x, levels, basis)?, dwt2(&y, levels, basis)?);
        for ((m, bx), by) in pyramid_bands(&mixed).into_iter().zip(pyramid_bands(&px)).zip(pyramid_bands(&py)) {
            let scale = m.data().iter().fold(1e-300f64, |acc, v| acc.max(v.abs()));
            worst = worst.max(m.max_abs_diff(&bx.scale(a).add(&by.scale(b))?) / scale.max(1.0));
        }
    }
    Ok(worst)
}

/// Direct double-sum DFT of one plane, `(re, im)` per frequency.
fn naive_dft(plane: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -tau * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    re += plane[y * w + x] * ang.cos();
                    im += plane[y * w + x] * ang.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

fn spectral_checks<T: Real>(seed: u64) -> Result<(f64, f64, usize)> {
    let mut prng = Prng::new(seed);
    let (mut round, mut parseval, mut bad_phase) = (0.0f64, 0.0f64, 0);
    let pi = std::f64::consts::PI;
    for _ in 0..50 {
        let x = FeatureMap::<T>::random(random_shape(&mut prng, 1), &mut prng, 1.0);
        let s = fft2_decompose(&x);
        round = round.max(ifft2_recompose(&s)?.max_abs_diff(&x));
        let hw = x.shape().plane() as f64;
        let e: f64 = x.data().iter().map(|v| v.f64() * v.f64()).sum();
        let a: f64 = s.amplitude.data().iter().map(|v| v.f64() * v.f64()).sum();
        parseval = parseval.max((a - hw * e).abs() / (hw * e));
        bad_phase += s.phase.data().iter().filter(|p| !(p.f64() > -pi && p.f64() <= pi)).count();
    }
    Ok((round, parseval, bad_phase))
}

fn reconstruction(opts: &SuiteOptions, checks: &mut Vec<Check>) -> Result<()> {
    let s = Suite::Reconstruction;
    let seed = opts.seed;
    let neg = opts.mutate_haar;
    tensor_checks(seed, checks)?;
    checks.push(Check::at_most(s, "wavelet.perfect_reconstruction.f64", reconstruction_error::<f64>(seed, neg)?, 1e-10));
    checks.push(Check::at_most(s, "wavelet.perfect_reconstruction.f32", reconstruction_error::<f32>(seed, neg)?, 1e-5));
    checks.push(Check::at_most(s, "wavelet.parseval", wavelet_parseval(seed, neg)?, 1e-10));
    checks.push(Check::at_most(s, "wavelet.linearity", wavelet_linearity(seed)?, 1e-12));

    let (round64, pars64, phase64) = spectral_checks::<f64>(seed)?;
    let (round32, _, _) = spectral_checks::<f32>(seed)?;
    checks.push(Check::at_most(s, "spectral.round_trip.f64", round64, 1e-10));
    checks.push(Check::at_most(s, "spectral.round_trip.f32", round32, 1e-5));
    checks.push(Check::at_most(s, "spectral.parseval", pars64, 1e-4));
    checks.push(Check::none_failed(s, "spectral.phase_range", phase64));

    let x = FeatureMap::<f64>::random(Shape::new(1, 1, 8, 8), &mut Prng::new(seed), 1.0);
    let oracle = naive_dft(x.data(), 8, 8);
    let spec = crate::spectral::fft2(&x);
    let dft_err = spec[0]
        .iter()
        .zip(&oracle)
        .map(|(z, (re, im))| (z.re - re).abs().max((z.im - im).abs()))
        .fold(0.0, f64::max);
    checks.push(Check::at_most(s, "spectral.naive_dft_8x8", dft_err, 1e-10));

    let mut prng = Prng::new(seed);
    let cfg = DdeConfig::default();
    let id = DdeParams::<f32>::identity(&cfg)?;
    let mut closure = 0.0f64;
    for _ in 0..10 {
        let x = FeatureMap::<f32>::random(random_shape(&mut prng, cfg.levels).with_channels(3), &mut prng, 1.0);
        closure = closure.max(dde_pipeline(&x, &id)?.max_abs_diff(&x));
    }
    checks.push(Check::at_most(s, "dde.identity_closure.f32", closure, 1e-4));

    let random = DdeParams::<f32>::random(&cfg, &mut Prng::new(seed))?;
    let img = FeatureMap::<f32>::random(Shape::new(1, 3, 64, 80), &mut prng, 0.5).map(|v| v + 0.5);
    let a = dde_pipeline(&img, &random)?;
    let b = dde_pipeline(&img, &random)?;
    checks.push(Check::none_failed(s, "dde.shape_preservation", usize::from(a.shape() != img.shape())));
    checks.push(Check::none_failed(s, "dde.determinism", usize::from(!a.bitwise_eq(&b))));

    let ll = FeatureMap::<f64>::random(Shape::new(1, 3, 8, 8), &mut prng, 1.0);
    let cswm = Cswm::random(3, &DEFAULT_KERNEL_SIZES, 4, Discretization::Zoh, &mut prng)?;
    let gate = cswm.gate(&ll)?;
    let homog = ll.scale(2.0).mul(&gate)?.max_abs_diff(&ll.mul(&gate)?.scale(2.0));
    checks.push(Check::at_most(s, "dde.frozen_gate_homogeneity", homog, 0.0));

    let mut mismatches = 0;
    for k in 0..50 {
        let mut p = Prng::new(seed.wrapping_add(k));
        let f = FeatureMap::<f64>::random(Shape::new(1, 4, 8, 8), &mut p, 1.0);
        let seqs = priority_serialize(&f, &priority_scores(&f), SortMethod::Radix)?;
        mismatches += usize::from(!deserialize(&seqs, 8, 8)?.bitwise_eq(&f));
    }
    checks.push(Check::none_failed(s, "pgmf.serialization_bijection", mismatches));
    Ok(())
}

/// Per-component loop written independently of `DiscreteSystem::scan`.
fn loop_oracle(sys: &SelectiveSystem<f64>, x: &[f64]) -> Vec<f64> {
    let n = sys.a.len();
    let mut y = Vec::with_capacity(x.len());
    let mut h = vec![0.0; n];
    for (t, &xt) in x.iter().enumerate() {
        let mut acc = 0.0;
        for j in 0..n {
            let (ab, bb) = discretize_entry(sys.a[j], sys.delta[t], sys.b[t * n + j], sys.discretization);
            h[j] = ab * h[j] + bb * xt;
            acc += sys.c[t * n + j] * h[j];
        }
        y.push(acc);
    }
    y
}

fn random_selective(prng: &mut Prng, n: usize, len: usize) -> Result<SelectiveSystem<f64>> {
    SelectiveSystem::new(
        (0..n).map(|_| -prng.uniform(0.05, 2.0)).collect(),
        (0..len).map(|_| prng.uniform(0.01, 1.0)).collect(),
        init_params(prng, len * n, 1.0),
        init_params(prng, len * n, 1.0),
        Discretization::Zoh,
    )
}

fn random_lti(prng: &mut Prng, n: usize) -> Result<DiscreteSystem<f64>> {
    LtiSystem::new(
        (0..n).map(|_| -prng.uniform(0.01, 2.0)).collect(),
        init_params(prng, n, 1.0),
        init_params(prng, n, 1.0),
        prng.uniform(0.01, 1.0),
        Discretization::Zoh,
    )?
    .discretize()
}

fn ssm(opts: &SuiteOptions, checks: &mut Vec<Check>) -> Result<()> {
    let s = Suite::Ssm;
    let mut prng = Prng::new(opts.seed);

    let mut conv_rel = 0.0f64;
    for _ in 0..100 {
        let n = 1 + prng.below(8);
        let len = 1 + prng.below(128);
        let sys = random_lti(&mut prng, n)?;
        let x: Vec<f64> = init_params(&mut prng, len, 1.0);
        let scan = sys.scan(&x)?.y;
        let conv = apply_kernel(&x, &conv_kernel(&sys, len)?);
        let scale = scan.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let err = scan.iter().zip(&conv).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        conv_rel = conv_rel.max(err / scale);
    }
    checks.push(Check::at_most(s, "ssm.conv_equivalence", conv_rel, 1e-9));

    let mut oracle = 0.0f64;
    for _ in 0..20 {
        let sys = random_selective(&mut prng, 4, 32)?;
        let x: Vec<f64> = init_params(&mut prng, 32, 1.0);
        let y = sys.discretize()?.scan(&x)?.y;
        let o = loop_oracle(&sys, &x);
        oracle = oracle.max(y.iter().zip(&o).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
    }
    checks.push(Check::at_most(s, "ssm.scan_loop_oracle", oracle, 1e-12));

    let mut decomposition = 0.0f64;
    for _ in 0..100 {
        let sys = random_selective(&mut prng, 4, 64)?.discretize()?;
        let x: Vec<f64> = init_params(&mut prng, 64, 1.0);
        decomposition = decomposition.max(verify_decay(&sys, &x, 1e-12, &DEFAULT_GAPS)?.max_decomposition_error);
    }
    checks.push(Check::at_most(s, "ssm.contribution_decomposition", decomposition, 1e-10));

    let (mut head_tail, mut residual, mut symmetric, mut determinism) = (0, 0, 0, 0);
    for k in 0..50u64 {
        let mut p = Prng::new(opts.seed.wrapping_mul(1_000_003).wrapping_add(k));
        let cfg = PgmfConfig::default();
        let params = PgmfParams::<f64>::random(&cfg, &mut p)?;
        let shape = Shape::new(1, cfg.channels, 8, 8);
        let f_v = FeatureMap::random(shape, &mut p, 1.0);
        let f_i = FeatureMap::random(shape, &mut p, 1.0);

        let f_vl = params.ref_v.forward(&f_v)?;
        let f_il = params.ref_i.forward(&f_i)?;
        let pmat = params.psn.forward(&f_vl.sub(&f_il)?)?;
        let sv = priority_scores(&f_vl.add(&pmat)?);
        let si = priority_scores(&f_il.add(&pmat)?);
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best });
        let seq_v = priority_serialize(&f_vl, &sv, SortMethod::Radix)?;
        let seq_i = priority_serialize(&f_il, &si, SortMethod::Radix)?;
        let fused = build_fusion_sequence(&seq_v[0].tokens, &seq_i[0].tokens, FusionVariant::D)?;
        let head = gather(&f_vl, 0, &[argmax(&sv[0])]);
        let tail = gather(&f_il, 0, &[argmax(&si[0])]);
        head_tail += usize::from(fused.token(0) != head.token(0) || fused.token(fused.len() - 1) != tail.token(0));

        let mut silent = params.clone();
        silent.silence_ssm();
        let out = pgmf_fuse(&f_v, &f_i, &silent, &cfg)?;
        let expect = f_v.add(&f_i)?;
        residual += usize::from(out.fused.data().iter().zip(expect.data()).any(|(a, b)| a != b));

        let mut shared = params.clone();
        shared.ref_i = shared.ref_v.clone();
        let out = pgmf_fuse(&f_v, &f_v, &shared, &cfg)?;
        symmetric += usize::from(out.perm_v != out.perm_i);

        let a = pgmf_fuse(&f_v, &f_i, &params, &cfg)?;
        let b = pgmf_fuse(&f_v, &f_i, &params, &cfg)?;
        determinism += usize::from(!a.fused.bitwise_eq(&b.fused) || !a.fused.is_finite());
    }
    checks.push(Check::none_failed(s, "pgmf.variant_d_head_tail", head_tail));
    checks.push(Check::none_failed(s, "pgmf.residual_isolation", residual));
    checks.push(Check::none_failed(s, "pgmf.symmetric_permutations", symmetric));
    checks.push(Check::none_failed(s, "pgmf.determinism", determinism));

    let mut shift_failures = 0;
    for k in 0..50u64 {
        let mut p = Prng::new(opts.seed.wrapping_add(k));
        let scores: Vec<f64> = (0..64).map(|_| p.below(16) as f64).collect();
        let shifted: Vec<f64> = scores.iter().map(|v| v + 5.0).collect();
        shift_failures += usize::from(
            crate::pgmf::argsort_descending(&scores, SortMethod::Radix)?
                != crate::pgmf::argsort_descending(&shifted, SortMethod::Radix)?,
        );
    }
    checks.push(Check::none_failed(s, "pgmf.score_shift_invariance", shift_failures));

    let cfg = PgmfConfig {
        psn_kernel: 1,
        ..PgmfConfig::default()
    };
    let mut p = Prng::new(opts.seed);
    let params = PgmfParams::<f64>::random(&cfg, &mut p)?;
    let (h, w) = (6, 6);
    let shape = Shape::new(1, cfg.channels, h, w);
    let f_v = FeatureMap::random(shape, &mut p, 1.0);
    let f_i = FeatureMap::random(shape, &mut p, 1.0);
    let pi = p.permutation(h * w);
    let identity: Vec<usize> = (0..h * w).collect();
    let permute = |x: &FeatureMap<f64>| scatter(&[gather(x, 0, &pi)], &[identity.clone()], h, w);
    let base = pgmf_fuse(&f_v, &f_i, &params, &cfg)?;
    let moved = pgmf_fuse(&permute(&f_v)?, &permute(&f_i)?, &params, &cfg)?;
    let equiv = moved.fusion_term.max_abs_diff(&permute(&base.fusion_term)?);
    checks.push(Check::at_most(s, "pgmf.permutation_equivariance", equiv, 1e-6));

    let mut dropout_failures = 0;
    for k in 0..20u64 {
        let x = FeatureMap::<f64>::random(Shape::new(1, 4, 8, 8), &mut p, 1.0);
        let a = crate::pgmf::dropout(&x, 0.3, opts.seed.wrapping_add(k))?;
        let b = crate::pgmf::dropout(&x, 0.3, opts.seed.wrapping_add(k))?;
        let c = crate::pgmf::dropout(&x, 0.3, opts.seed.wrapping_add(k + 1000))?;
        let off = crate::pgmf::dropout(&x, 0.0, opts.seed.wrapping_add(k))?;
        dropout_failures += usize::from(!a.bitwise_eq(&b) || a.bitwise_eq(&c) || !off.bitwise_eq(&x));
    }
    checks.push(Check::none_failed(s, "pgmf.dropout_reproducible", dropout_failures));
    Ok(())
}

/// Constant scalar `Ā` values whose decay curves are reported.
pub const CONSTANT_DECAY_RATES: [f64; 4] = [0.5, 0.8, 0.9, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub a_bar: f64,
    /// `(gap, max contribution over pairs at least that far apart)`.
    pub points: Vec<(usize, f64)>,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySuiteReport {
    pub trials: usize,
    pub steps: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub pairs_checked: usize,
    pub bound_violations: usize,
    pub max_bound_excess: f64,
    pub max_decomposition_error: f64,
    /// Largest contribution at each default gap across the random trials.
    pub random_gap_maxima: Vec<(usize, f64)>,
    pub constant_curves: Vec<DecayCurve>,
    pub passed: bool,
}

impl DecaySuiteReport {
    pub fn constant_curve(&self, a_bar: f64) -> Option<&DecayCurve> {
        self.constant_curves.iter().find(|c| c.a_bar == a_bar)
    }
}

/// Random stable systems (alternately selective and time-invariant, `n = 4`)
/// driven by uniform inputs, plus constant scalar systems fed all-ones.
pub fn run_decay_suite(trials: usize, steps: usize, seed: u64) -> Result<DecaySuiteReport> {
    if trials == 0 {
        return Err(Error::arg("decay suite needs at least one trial"));
    }
    let tolerance = 1e-12;
    let mut prng = Prng::new(seed);
    let (mut pairs, mut violations, mut excess, mut decomposition) = (0, 0, f64::NEG_INFINITY, 0.0f64);
    let mut maxima = vec![0.0f64; DEFAULT_GAPS.len()];
    for k in 0..trials {
        let sys = if k % 2 == 0 {
            random_selective(&mut prng, 4, steps)?.discretize()?
        } else {
            random_lti(&mut prng, 4)?
        };
        let x: Vec<f64> = init_params(&mut prng, steps, 1.0);
        let r = verify_decay(&sys, &x, tolerance, &DEFAULT_GAPS)?;
        pairs += r.pairs_checked;
        violations += r.bound_violations;
        excess = excess.max(r.max_bound_excess);
        decomposition = decomposition.max(r.max_decomposition_error);
        for (m, g) in maxima.iter_mut().zip(&r.gaps) {
            *m = m.max(g.max_contribution.unwrap_or(0.0));
        }
    }
    let mut constant_curves = Vec::new();
    let mut constant_ok = true;
    for a in CONSTANT_DECAY_RATES {
        let sys = DiscreteSystem::scalar(a, 1.0, 1.0);
        let r = verify_decay(&sys, &vec![1.0; steps], tolerance, &DEFAULT_GAPS)?;
        violations += r.bound_violations;
        pairs += r.pairs_checked;
        constant_ok &= r.monotone;
        constant_curves.push(DecayCurve {
            a_bar: a,
            points: r.gaps.iter().filter_map(|g| g.max_contribution.map(|m| (g.gap, m))).collect(),
            monotone: r.monotone,
        });
    }
    Ok(DecaySuiteReport {
        trials,
        steps,
        seed,
        tolerance,
        pairs_checked: pairs,
        bound_violations: violations,
        max_bound_excess: excess,
        max_decomposition_error: decomposition,
        random_gap_maxima: DEFAULT_GAPS.iter().copied().zip(maxima).collect(),
        constant_curves,
        passed: violations == 0 && constant_ok,
    })
}

pub const DECAY_TRIALS: usize = 100;
pub const DECAY_STEPS: usize = 256;
pub const GAP_100_LIMIT: f64 = 2.7e-5;

fn decay(opts: &SuiteOptions, checks: &mut Vec<Check>, attach: &mut BTreeMap<String, serde_json::Value>) -> Result<()> {
    let s = Suite::Decay;
    let r = run_decay_suite(DECAY_TRIALS, DECAY_STEPS, opts.seed)?;
    checks.push(Check::none_failed(s, "decay.holder_bound", r.bound_violations).with_detail(format!(
        "{} trials, T = {}, {} pairs",
        r.trials, r.steps, r.pairs_checked
    )));
    checks.push(Check::at_most(s, "decay.decomposition", r.max_decomposition_error, 1e-10));
    let at100 = r
        .constant_curve(0.9)
        .and_then(|c| c.points.iter().find(|p| p.0 == 100).map(|p| p.1))
        .unwrap_or(f64::INFINITY);
    checks.push(Check::at_most(s, "decay.constant_0.9_gap_100", at100, GAP_100_LIMIT));
    let non_monotone = r.constant_curves.iter().filter(|c| !c.monotone).count();
    checks.push(Check::none_failed(s, "decay.monotone_constant_curves", non_monotone));
    // Random stable systems: the worst contribution must shrink as the gap widens.
    let rising = r.random_gap_maxima.windows(2).filter(|w| w[1].1 > w[0].1).count();
    checks.push(Check::none_failed(s, "decay.random_gap_maxima_shrink", rising).with_detail(format!("{:?}", r.random_gap_maxima)));
    attach.insert("decay".into(), serde_json::to_value(&r)?);
    Ok(())
}

fn gradients(opts: &SuiteOptions, checks: &mut Vec<Check>, attach: &mut BTreeMap<String, serde_json::Value>) -> Result<()> {
    let s = Suite::Gradients;
    let cfg = GradCheckConfig {
        seed: opts.seed,
        ..GradCheckConfig::default()
    };
    for model in GradModel::ALL {
        let r = check_gradients(model, &cfg)?;
        let name = format!("grad.{model}");
        let mut c = Check::at_most(s, &name, r.max_rel_error, r.tolerance)
            .with_detail(format!("{} coordinates, worst {}, regime {}", r.coordinates_checked, r.worst_path, r.regime));
        c.passed = r.passed;
        checks.push(c);
        attach.insert(name, serde_json::to_value(&r)?);
    }
    let two = shared_psn_factor_two(opts.seed)?;
    let mut c = Check::at_most(s, "grad.shared_psn_factor_two", two.max_deviation, two.tolerance);
    c.passed = two.passed;
    checks.push(c);
    attach.insert("grad.shared_psn_factor_two".into(), serde_json::to_value(&two)?);

    let cfg = LossConfig::default();
    let focal = focal_loss(0.9, 1, &cfg)?;
    checks.push(Check::at_most(s, "loss.focal_reference", (focal - 1.0536e-3).abs(), 1e-7));
    let mut prng = Prng::new(opts.seed);
    let mut ce = 0.0f64;
    for _ in 0..200 {
        let c = LossConfig {
            alpha_t: prng.uniform(0.1, 3.0),
            gamma_t: 0.0,
            ..cfg
        };
        let p = prng.uniform(1e-6, 1.0 - 1e-6);
        let t = prng.below(2) as u8;
        let want = -c.alpha_t * if t == 1 { p.ln() } else { (1.0 - p).ln() };
        ce = ce.max((focal_loss(p, t, &c)? - want).abs());
    }
    checks.push(Check::at_most(s, "loss.focal_gamma_zero_cross_entropy", ce, 1e-12));
    let sl1 = [(0.0, 0.0), (0.5, 0.125), (1.0, 0.5), (2.0, 1.5)]
        .iter()
        .map(|&(d, want)| (smooth_l1(d, 0.0) - want).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most(s, "loss.smooth_l1_values", sl1, 0.0));
    // Each branch extended past the junction, differentiated two-sided at |d| = 1.
    let h = 1e-3;
    let quad = |d: f64| 0.5 * d * d;
    let lin = |d: f64| d - 0.5;
    let slope_gap = ((quad(1.0 + h) - quad(1.0 - h)) / (2.0 * h) - (lin(1.0 + h) - lin(1.0 - h)) / (2.0 * h)).abs();
    checks.push(Check::at_most(s, "loss.smooth_l1_value_continuity", (quad(1.0) - lin(1.0)).abs(), 0.0));
    checks.push(Check::at_most(s, "loss.smooth_l1_slope_continuity", slope_gap, 1e-10));
    let total = (total_loss(0.3, 0.2, &cfg) - 0.5).abs() + (cfg.alpha - 1.0).abs() + (cfg.beta - 1.0).abs();
    checks.push(Check::at_most(s, "loss.total_default_weights", total, 1e-15));
    Ok(())
}

/// Token counts used by the linear-complexity check.
pub const COMPLEXITY_SIZES: [usize; 3] = [1 << 14, 1 << 15, 1 << 16];

/// Times the fusion stages in the given element type (`f32` for pipeline runs).
pub fn run_complexity_suite<T: Real>(sizes: &[usize], repeats: usize, seed: u64) -> Result<ProbeTable> {
    complexity_probe::<T>(sizes, repeats, &PgmfConfig::default(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for n in Suite::NAMES {
            assert!(n.parse::<Suite>().is_ok());
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn mutated_haar_fails_reconstruction() {
        let good = run_suite(Suite::Reconstruction, &SuiteOptions { seed: 1, mutate_haar: false }).unwrap();
        assert!(good.passed, "{:?}", good.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
        let bad = run_suite(Suite::Reconstruction, &SuiteOptions { seed: 1, mutate_haar: true }).unwrap();
        assert!(!bad.passed);
        assert!(!bad.check("wavelet.perfect_reconstruction.f64").unwrap().passed);
    }

    #[test]
    fn decay_suite_clean() {
        let r = run_decay_suite(10, 128, 7).unwrap();
        assert!(r.passed);
        assert_eq!(r.constant_curves.len(), CONSTANT_DECAY_RATES.len());
        assert!(run_decay_suite(0, 10, 7).is_err());
    }
}
