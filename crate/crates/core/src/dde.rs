//! Dual-domain enhancement of a low-light image.
//!
//! Per wavelet level, deepest first:
//!
//! 1. the LL band is multiplied by a gate built from three depthwise scales,
//!    each serialized with a global token and scanned bidirectionally (CSWM);
//! 2. the detail bands pass through a per-channel affine map;
//! 3. one synthesis step rebuilds the next-finer image;
//! 4. amplitude and phase spectra of that image are refined separately and
//!    recombined (FDR). The result becomes the LL of the next level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DwConvLayer, LayerNorm, Pointwise};
use crate::params::{join, Parameters};
use crate::spectral::{fft2_decompose, ifft2_recompose, SpectralPair};
use crate::ssm::{Discretization, SelectiveSsm};
use crate::tensor::{
    depthwise_conv, flatten_spatial, global_avg_pool, unflatten_spatial, DwKernel, FeatureMap, Prng, Real,
    TokenSeq,
};
use crate::wavelet::{crop, dwt2, synthesize_level, Basis, DetailBands, Filters};

pub const DEFAULT_KERNEL_SIZES: [usize; 3] = [3, 5, 7];
pub const KERNEL_SIZE_CHOICES: [[usize; 3]; 4] = [[3, 5, 7], [5, 7, 9], [3, 5, 9], [3, 7, 9]];
pub const DEFAULT_STATE_DIM: usize = 4;
pub const SRN_KERNEL_SIZE: usize = 3;
/// Gate magnitude above which a warning is logged.
pub const GATE_WARN: f64 = 1e3;

pub fn check_kernel_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::InvalidKernel("at least one scale is required".into()));
    }
    if let Some(k) = sizes.iter().find(|&&k| k % 2 == 0) {
        return Err(Error::InvalidKernel(format!("kernel size {k} is even")));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidKernel(format!(
            "kernel sizes {sizes:?} are not strictly increasing"
        )));
    }
    Ok(())
}

/// Per scale and batch item, the sequence `s ‖ reverse(s)` where
/// `s = flatten(f_i) + f_g` (global token broadcast over positions).
pub fn cross_scale_serialize<T: Real>(
    scales: &[&FeatureMap<T>],
    global: &FeatureMap<T>,
) -> Result<Vec<Vec<TokenSeq<T>>>> {
    let first = scales.first().ok_or_else(|| Error::shape("no scale features"))?;
    let shape = first.shape();
    if let Some(f) = scales.iter().find(|f| f.shape() != shape) {
        return Err(Error::shape(format!(
            "scale features differ: {} vs {shape}",
            f.shape()
        )));
    }
    global.expect_shape(shape.with_spatial(1, 1))?;
    scales
        .iter()
        .map(|f| {
            flatten_spatial(f)
                .into_iter()
                .enumerate()
                .map(|(b, mut seq)| {
                    for t in 0..seq.len() {
                        for (c, v) in seq.token_mut(t).iter_mut().enumerate() {
                            *v = *v + global.get(b, c, 0, 0);
                        }
                    }
                    seq.concat(&seq.reversed())
                })
                .collect()
        })
        .collect()
}

/// Averages the first half with the re-reversed second half.
pub fn fold_halves<T: Real>(y: &TokenSeq<T>) -> Result<TokenSeq<T>> {
    if y.len() % 2 != 0 {
        return Err(Error::shape(format!("cannot fold an odd length {}", y.len())));
    }
    let n = y.len() / 2;
    let half = T::of(0.5);
    let mut out = TokenSeq::zeros(n, y.dim());
    for t in 0..n {
        let (a, b) = (y.token(t), y.token(2 * n - 1 - t));
        for (o, (&a, &b)) in out.token_mut(t).iter_mut().zip(a.iter().zip(b)) {
            *o = (a + b) * half;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBranch<T> {
    pub kernel: DwKernel<T>,
    pub forward: SelectiveSsm<T>,
    pub backward: SelectiveSsm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cswm<T> {
    pub branches: Vec<ScaleBranch<T>>,
}

impl<T: Real> Cswm<T> {
    /// Each branch emits the constant `value` per token.
    pub fn constant_gate(
        channels: usize,
        kernel_sizes: &[usize],
        state_dim: usize,
        value: T,
        discretization: Discretization,
    ) -> Result<Self> {
        check_kernel_sizes(kernel_sizes)?;
        let branches = kernel_sizes
            .iter()
            .map(|&k| {
                Ok(ScaleBranch {
                    kernel: DwKernel::identity(channels, k)?,
                    forward: SelectiveSsm::constant(channels, state_dim, value, discretization),
                    backward: SelectiveSsm::zeroed(channels, state_dim, discretization),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Cswm { branches })
    }

    /// Gate identically 1: every branch contributes `1 / branches`.
    pub fn identity(channels: usize, kernel_sizes: &[usize], state_dim: usize, discretization: Discretization) -> Result<Self> {
        let v = T::of(1.0 / kernel_sizes.len() as f64);
        Self::constant_gate(channels, kernel_sizes, state_dim, v, discretization)
    }

    pub fn random(
        channels: usize,
        kernel_sizes: &[usize],
        state_dim: usize,
        discretization: Discretization,
        prng: &mut Prng,
    ) -> Result<Self> {
        check_kernel_sizes(kernel_sizes)?;
        let branches = kernel_sizes
            .iter()
            .map(|&k| {
                Ok(ScaleBranch {
                    kernel: DwKernel::random(channels, k, prng)?,
                    forward: SelectiveSsm::random(channels, state_dim, discretization, prng),
                    backward: SelectiveSsm::random(channels, state_dim, discretization, prng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Cswm { branches })
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.kernel.size()).collect()
    }

    /// The multiplicative gate computed from `ll`, summed over branches in order.
    pub fn gate(&self, ll: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let s = ll.shape();
        let feats = self
            .branches
            .iter()
            .map(|b| depthwise_conv(ll, &b.kernel))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FeatureMap<T>> = feats.iter().collect();
        let global = global_avg_pool(&refs)?;
        let seqs = cross_scale_serialize(&refs, &global)?;
        let mut total: Vec<TokenSeq<T>> = (0..s.batch).map(|_| TokenSeq::zeros(s.plane(), s.channels)).collect();
        for (branch, per_batch) in self.branches.iter().zip(&seqs) {
            for (acc, seq) in total.iter_mut().zip(per_batch) {
                let y = branch.forward.bidirectional(&branch.backward, seq)?;
                *acc = acc.add(&fold_halves(&y)?)?;
            }
        }
        let gate = unflatten_spatial(&total, s.height, s.width)?;
        let peak = gate.data().iter().fold(0.0f64, |m, v| m.max(v.f64().abs()));
        if peak > GATE_WARN {
            log::warn!("CSWM gate magnitude {peak:.3e} exceeds {GATE_WARN:.0e}");
        }
        Ok(gate)
    }

    pub fn enhance(&self, ll: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        ll.mul(&self.gate(ll)?)
    }
}

impl<T: Real> Parameters<T> for Cswm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for b in &self.branches {
            let p = join(prefix, &format!("k{}", b.kernel.size()));
            f(&join(&p, "kernel"), b.kernel.weights());
            b.forward.visit(&join(&p, "fwd"), f);
            b.backward.visit(&join(&p, "bwd"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for b in &mut self.branches {
            let p = join(prefix, &format!("k{}", b.kernel.size()));
            f(&join(&p, "kernel"), b.kernel.weights_mut());
            b.forward.visit_mut(&join(&p, "fwd"), f);
            b.backward.visit_mut(&join(&p, "bwd"), f);
        }
    }
}

/// `scale ⊙ band + shift` with one pair per band and channel.
#[derive(Debug, Clone, PartialEq)]
pub struct HfAffine<T> {
    /// `[hl, lh, hh]`, each of length C.
    pub scale: [Vec<T>; 3],
    pub shift: [Vec<T>; 3],
}

const BAND_NAMES: [&str; 3] = ["hl", "lh", "hh"];

impl<T: Real> HfAffine<T> {
    pub fn identity(channels: usize) -> Self {
        HfAffine {
            scale: std::array::from_fn(|_| vec![T::one(); channels]),
            shift: std::array::from_fn(|_| vec![T::zero(); channels]),
        }
    }

    pub fn random(channels: usize, prng: &mut Prng) -> Self {
        HfAffine {
            scale: std::array::from_fn(|_| (0..channels).map(|_| T::of(prng.uniform(0.5, 1.5))).collect()),
            shift: std::array::from_fn(|_| (0..channels).map(|_| T::of(prng.uniform(-0.05, 0.05))).collect()),
        }
    }

    pub fn apply(&self, bands: &DetailBands<T>) -> DetailBands<T> {
        let one = |band: &FeatureMap<T>, k: usize| {
            let mut out = band.clone();
            let s = band.shape();
            for b in 0..s.batch {
                for c in 0..s.channels {
                    let (a, d) = (self.scale[k][c], self.shift[k][c]);
                    out.plane_mut(b, c).iter_mut().for_each(|v| *v = a * *v + d);
                }
            }
            out
        };
        DetailBands {
            hl: one(&bands.hl, 0),
            lh: one(&bands.lh, 1),
            hh: one(&bands.hh, 2),
        }
    }
}

impl<T: Real> Parameters<T> for HfAffine<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (k, name) in BAND_NAMES.iter().enumerate() {
            f(&join(prefix, &format!("{name}.scale")), &self.scale[k]);
            f(&join(prefix, &format!("{name}.shift")), &self.shift[k]);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (k, name) in BAND_NAMES.iter().enumerate() {
            f(&join(prefix, &format!("{name}.scale")), &mut self.scale[k]);
            f(&join(prefix, &format!("{name}.shift")), &mut self.shift[k]);
        }
    }
}

/// Spectrum refinement: `x + linear(norm(conv2(relu(conv1(x)))))`.
///
/// The residual form makes a zero `linear` the exact identity on signed inputs
/// such as phase, which a ReLU inside a plain stack would clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Srn<T> {
    pub conv1: DwConvLayer<T>,
    pub conv2: DwConvLayer<T>,
    pub norm: LayerNorm<T>,
    pub linear: Pointwise<T>,
}

impl<T: Real> Srn<T> {
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(Srn {
            conv1: DwConvLayer::identity(channels, SRN_KERNEL_SIZE)?,
            conv2: DwConvLayer::identity(channels, SRN_KERNEL_SIZE)?,
            norm: LayerNorm::new(channels),
            linear: Pointwise::zeros(channels, Activation::Identity),
        })
    }

    pub fn random(channels: usize, prng: &mut Prng) -> Result<Self> {
        let mut linear = Pointwise::random(channels, Activation::Identity, prng);
        // keep the correction small relative to the spectrum
        linear.weight.iter_mut().for_each(|w| *w = *w * T::of(0.1));
        linear.bias.iter_mut().for_each(|w| *w = *w * T::of(0.1));
        Ok(Srn {
            conv1: DwConvLayer::random(channels, SRN_KERNEL_SIZE, prng)?,
            conv2: DwConvLayer::random(channels, SRN_KERNEL_SIZE, prng)?,
            norm: LayerNorm::random(channels, prng),
            linear,
        })
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let h = Activation::Relu.map(&self.conv1.forward(x)?);
        let h = self.norm.forward(&self.conv2.forward(&h)?)?;
        x.add(&self.linear.forward(&h)?)
    }
}

impl<T: Real> Parameters<T> for Srn<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.linear.visit(&join(prefix, "linear"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.linear.visit_mut(&join(prefix, "linear"), f);
    }
}

pub fn fdr_recover<T: Real>(x: &FeatureMap<T>, srn_amplitude: &Srn<T>, srn_phase: &Srn<T>) -> Result<FeatureMap<T>> {
    let spec = fft2_decompose(x);
    let refined = SpectralPair {
        amplitude: srn_amplitude.forward(&spec.amplitude)?,
        phase: srn_phase.forward(&spec.phase)?,
    };
    ifft2_recompose(&refined)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams<T> {
    pub cswm: Cswm<T>,
    pub hf: HfAffine<T>,
    pub srn_amplitude: Srn<T>,
    pub srn_phase: Srn<T>,
}

impl<T: Real> Parameters<T> for LevelParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.cswm.visit(&join(prefix, "cswm"), f);
        self.hf.visit(&join(prefix, "hf"), f);
        self.srn_amplitude.visit(&join(prefix, "srn_amplitude"), f);
        self.srn_phase.visit(&join(prefix, "srn_phase"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.cswm.visit_mut(&join(prefix, "cswm"), f);
        self.hf.visit_mut(&join(prefix, "hf"), f);
        self.srn_amplitude.visit_mut(&join(prefix, "srn_amplitude"), f);
        self.srn_phase.visit_mut(&join(prefix, "srn_phase"), f);
    }
}

/// Structural settings of a DDE model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdeConfig {
    pub channels: usize,
    pub levels: usize,
    pub basis: Basis,
    pub kernel_sizes: Vec<usize>,
    pub state_dim: usize,
    pub discretization: Discretization,
}

impl Default for DdeConfig {
    fn default() -> Self {
        DdeConfig {
            channels: 3,
            levels: crate::wavelet::DEFAULT_LEVELS,
            basis: Basis::Haar,
            kernel_sizes: DEFAULT_KERNEL_SIZES.to_vec(),
            state_dim: DEFAULT_STATE_DIM,
            discretization: Discretization::Zoh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdeParams<T> {
    pub config: DdeConfig,
    /// Deepest level first.
    pub levels: Vec<LevelParams<T>>,
}

impl<T: Real> DdeParams<T> {
    fn build(config: &DdeConfig, mut level: impl FnMut() -> Result<LevelParams<T>>) -> Result<Self> {
        check_kernel_sizes(&config.kernel_sizes)?;
        if config.levels == 0 {
            return Err(Error::arg("wavelet levels must be at least 1"));
        }
        let levels = (0..config.levels).map(|_| level()).collect::<Result<_>>()?;
        Ok(DdeParams {
            config: config.clone(),
            levels,
        })
    }

    /// Every block is the identity, so the pipeline reproduces its input.
    pub fn identity(config: &DdeConfig) -> Result<Self> {
        let c = config.channels;
        Self::build(config, || {
            Ok(LevelParams {
                cswm: Cswm::identity(c, &config.kernel_sizes, config.state_dim, config.discretization)?,
                hf: HfAffine::identity(c),
                srn_amplitude: Srn::identity(c)?,
                srn_phase: Srn::identity(c)?,
            })
        })
    }

    /// Identity everywhere except a CSWM gate of constant `gate` at every level.
    pub fn constant_gate(config: &DdeConfig, gate: f64) -> Result<Self> {
        let mut p = Self::identity(config)?;
        let per_branch = T::of(gate / config.kernel_sizes.len() as f64);
        for level in &mut p.levels {
            level.cswm = Cswm::constant_gate(
                config.channels,
                &config.kernel_sizes,
                config.state_dim,
                per_branch,
                config.discretization,
            )?;
        }
        Ok(p)
    }

    pub fn random(config: &DdeConfig, prng: &mut Prng) -> Result<Self> {
        let c = config.channels;
        Self::build(config, || {
            Ok(LevelParams {
                cswm: Cswm::random(c, &config.kernel_sizes, config.state_dim, config.discretization, prng)?,
                hf: HfAffine::random(c, prng),
                srn_amplitude: Srn::random(c, prng)?,
                srn_phase: Srn::random(c, prng)?,
            })
        })
    }
}

impl<T: Real> Parameters<T> for DdeParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        let n = self.levels.len();
        for (i, l) in self.levels.iter().enumerate() {
            l.visit(&join(prefix, &format!("level{}", n - i)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        let n = self.levels.len();
        for (i, l) in self.levels.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("level{}", n - i)), f);
        }
    }
}

pub fn dde_pipeline<T: Real>(image: &FeatureMap<T>, params: &DdeParams<T>) -> Result<FeatureMap<T>> {
    let cfg = &params.config;
    if image.shape().channels != cfg.channels {
        return Err(Error::shape(format!(
            "model built for {} channels, image has {}",
            cfg.channels,
            image.shape().channels
        )));
    }
    if !image.is_finite() {
        return Err(Error::arg("input image contains non-finite values"));
    }
    let pyramid = dwt2(image, cfg.levels, cfg.basis)?;
    let filters = Filters::for_basis(cfg.basis);
    let mut ll = pyramid.ll;
    for (bands, level) in pyramid.details.iter().zip(&params.levels) {
        let ll_e = level.cswm.enhance(&ll)?;
        let details = level.hf.apply(bands);
        let recon = synthesize_level(&ll_e, &details, &filters)?;
        ll = fdr_recover(&recon, &level.srn_amplitude, &level.srn_phase)?;
    }
    let (h, w) = pyramid.original_size;
    Ok(crop(&ll, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn seq(v: &[f64]) -> TokenSeq<f64> {
        TokenSeq::scalars(v.to_vec())
    }

    #[test]
    fn serialize_matches_hand_example() {
        let f3 = FeatureMap::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = FeatureMap::full(Shape::new(1, 1, 1, 1), 10.0);
        let out = cross_scale_serialize(&[&f3], &g).unwrap();
        assert_eq!(out[0][0].data(), &[11.0, 12.0, 13.0, 14.0, 14.0, 13.0, 12.0, 11.0]);
    }

    #[test]
    fn serialize_zero_global_and_single_token() {
        let f = FeatureMap::new(Shape::new(1, 2, 1, 1), vec![5.0, -1.0]).unwrap();
        let out = cross_scale_serialize(&[&f], &FeatureMap::zeros(Shape::new(1, 2, 1, 1))).unwrap();
        assert_eq!(out[0][0].len(), 2);
        assert_eq!(out[0][0].token(0), out[0][0].token(1));
        assert_eq!(out[0][0].token(0), &[5.0, -1.0]);
    }

    #[test]
    fn serialize_shape_errors() {
        let a = FeatureMap::<f64>::zeros(Shape::new(1, 2, 2, 2));
        let b = FeatureMap::<f64>::zeros(Shape::new(1, 2, 2, 3));
        let g = FeatureMap::zeros(Shape::new(1, 2, 1, 1));
        assert!(matches!(cross_scale_serialize(&[&a, &b], &g), Err(Error::Shape(_))));
        assert!(matches!(cross_scale_serialize(&[&a], &a), Err(Error::Shape(_))));
    }

    #[test]
    fn fold_averages_mirrored_halves() {
        let y = fold_halves(&seq(&[1.0, 2.0, 3.0, 5.0, 7.0, 11.0])).unwrap();
        assert_eq!(y.data(), &[6.0, 4.5, 4.0]);
        assert!(fold_halves(&seq(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn kernel_size_rules() {
        assert!(check_kernel_sizes(&[3, 5, 7]).is_ok());
        assert!(check_kernel_sizes(&[3, 4, 7]).is_err());
        assert!(check_kernel_sizes(&[5, 3, 7]).is_err());
        assert!(check_kernel_sizes(&[3, 3]).is_err());
        assert!(check_kernel_sizes(&[]).is_err());
    }

    fn random_image(seed: u64, h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::random(Shape::new(1, 3, h, w), &mut Prng::new(seed), 1.0)
    }

    #[test]
    fn unit_branches_triple_ll() {
        let ll = random_image(1, 8, 8);
        let cswm = Cswm::constant_gate(3, &DEFAULT_KERNEL_SIZES, 4, 1.0, Discretization::Zoh).unwrap();
        let out = cswm.enhance(&ll).unwrap();
        assert!(out.max_abs_diff(&ll.scale(3.0)) < 1e-12);
    }

    #[test]
    fn zero_ll_gives_zero() {
        let ll = FeatureMap::<f64>::zeros(Shape::new(1, 3, 8, 8));
        let cswm = Cswm::random(3, &DEFAULT_KERNEL_SIZES, 4, Discretization::Zoh, &mut Prng::new(2)).unwrap();
        assert!(cswm.enhance(&ll).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cswm_deterministic() {
        let ll = random_image(3, 8, 8);
        let run = || {
            Cswm::random(3, &DEFAULT_KERNEL_SIZES, 4, Discretization::Zoh, &mut Prng::new(4))
                .unwrap()
                .enhance(&ll)
                .unwrap()
        };
        assert!(run().bitwise_eq(&run()));
    }

    #[test]
    fn frozen_gate_is_homogeneous() {
        let ll = random_image(5, 8, 8);
        let cswm = Cswm::random(3, &DEFAULT_KERNEL_SIZES, 4, Discretization::Zoh, &mut Prng::new(6)).unwrap();
        let gate = cswm.gate(&ll).unwrap();
        let once = ll.mul(&gate).unwrap();
        let twice = ll.scale(2.0).mul(&gate).unwrap();
        assert!(twice.bitwise_eq(&once.scale(2.0)));
    }

    #[test]
    fn identity_fdr_round_trips() {
        let x = random_image(7, 8, 8);
        let id = Srn::identity(3).unwrap();
        assert!(fdr_recover(&x, &id, &id).unwrap().max_abs_diff(&x) < 1e-12);
        let c = FeatureMap::full(Shape::new(1, 3, 8, 8), 0.25);
        let y = fdr_recover(&c, &id, &id).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn random_fdr_finite_and_deterministic() {
        let x = random_image(8, 8, 8);
        let run = || {
            let mut p = Prng::new(9);
            let a = Srn::random(3, &mut p).unwrap();
            let b = Srn::random(3, &mut p).unwrap();
            fdr_recover(&x, &a, &b).unwrap()
        };
        let y = run();
        assert!(y.is_finite());
        assert!(y.bitwise_eq(&run()));
    }

    #[test]
    fn identity_pipeline_reproduces_input() {
        for basis in [Basis::Haar, Basis::Sym2] {
            let cfg = DdeConfig {
                basis,
                ..DdeConfig::default()
            };
            let params = DdeParams::<f32>::identity(&cfg).unwrap();
            for (seed, (h, w)) in [(1, (16, 16)), (2, (13, 22))] {
                let x = random_image(seed, h, w).cast::<f32>();
                let y = dde_pipeline(&x, &params).unwrap();
                assert_eq!(y.shape(), x.shape());
                assert!(y.max_abs_diff(&x) < 1e-4, "{basis:?} {h}x{w}");
            }
        }
    }

    #[test]
    fn default_random_pipeline_keeps_shape() {
        let cfg = DdeConfig::default();
        let params = DdeParams::<f32>::random(&cfg, &mut Prng::new(10)).unwrap();
        let x = FeatureMap::random(Shape::new(1, 3, 64, 80), &mut Prng::new(11), 0.5).map(|v: f32| v + 0.5);
        let y = dde_pipeline(&x, &params).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
    }

    #[test]
    fn bright_gate_raises_dark_mean() {
        let cfg = DdeConfig::default();
        let params = DdeParams::<f64>::constant_gate(&cfg, 3.0).unwrap();
        let x = FeatureMap::random(Shape::new(1, 3, 32, 32), &mut Prng::new(12), 0.05).map(|v| v + 0.05);
        let y = dde_pipeline(&x, &params).unwrap();
        assert!(y.mean() > x.mean());
    }

    #[test]
    fn parameter_paths_name_levels() {
        let p = DdeParams::<f64>::identity(&DdeConfig::default()).unwrap();
        let names: Vec<String> = crate::params::collect(&p).into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"level2.cswm.k3.fwd.out_bias".to_string()));
        assert!(names.contains(&"level1.srn_phase.linear.weight".to_string()));
    }
}
