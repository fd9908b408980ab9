//! Priority-guided fusion of an RGB and an IR feature map.
//!
//! Both maps are projected to a latent space, a shared score network looks at
//! their difference, and each modality's tokens are reordered by descending
//! score. The two ordered sequences are joined into one sequence of length
//! `2·H·W`, scanned in both directions by a selective SSM, split back per
//! modality, returned to spatial layout and added to the inputs.

mod probe;
mod psn;
mod sort;

pub use probe::{complexity_probe, ProbeRow, ProbeStage, ProbeTable, STAGES};
pub use psn::{Psn, PsnTrace, DEFAULT_PSN_KERNEL};
pub use sort::{argsort_descending, is_permutation, SortMethod};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Pointwise};
use crate::params::{join, Parameters};
use crate::ssm::{Discretization, SelectiveSsm};
use crate::tensor::{FeatureMap, Prng, Real, Shape, TokenSeq};

pub const DEFAULT_FUSION_STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    /// `rev(v) ‖ i`
    A,
    /// `v ‖ i`
    B,
    /// `rev(v) ‖ rev(i)`
    C,
    /// `v ‖ rev(i)`
    #[default]
    D,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 4] = [FusionVariant::A, FusionVariant::B, FusionVariant::C, FusionVariant::D];

    /// Whether the RGB and IR halves are reversed.
    pub fn reversals(self) -> (bool, bool) {
        match self {
            FusionVariant::A => (true, false),
            FusionVariant::B => (false, false),
            FusionVariant::C => (true, true),
            FusionVariant::D => (false, true),
        }
    }
}

impl std::str::FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(FusionVariant::A),
            "b" => Ok(FusionVariant::B),
            "c" => Ok(FusionVariant::C),
            "d" => Ok(FusionVariant::D),
            other => Err(Error::arg(format!("unknown fusion variant {other:?} (expected a, b, c or d)"))),
        }
    }
}

impl std::fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FusionVariant::A => "a",
            FusionVariant::B => "b",
            FusionVariant::C => "c",
            FusionVariant::D => "d",
        };
        f.write_str(s)
    }
}

/// Which features the ordered sequences carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    /// The latent projections; the score network only decides the order.
    #[default]
    Latent,
    /// Latent plus priority matrix, so the score network also feeds values.
    Priority,
}

/// Channel mean per token: `(B, H·W)`.
pub fn priority_scores<T: Real>(f: &FeatureMap<T>) -> Vec<Vec<T>> {
    let s = f.shape();
    let inv = T::of(1.0 / s.channels as f64);
    (0..s.batch)
        .map(|b| {
            let mut acc = vec![T::zero(); s.plane()];
            for c in 0..s.channels {
                for (a, &v) in acc.iter_mut().zip(f.plane(b, c)) {
                    *a = *a + v;
                }
            }
            acc.into_iter().map(|a| a * inv).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrioritySequence<T> {
    pub tokens: TokenSeq<T>,
    /// `perm[k]` is the spatial index placed at position `k`.
    pub perm: Vec<usize>,
    pub scores: Vec<T>,
}

/// Gathers the tokens of every batch item of `f` in descending-score order.
pub fn priority_serialize<T: Real>(
    f: &FeatureMap<T>,
    scores: &[Vec<T>],
    method: SortMethod,
) -> Result<Vec<PrioritySequence<T>>> {
    let s = f.shape();
    if scores.len() != s.batch || scores.iter().any(|r| r.len() != s.plane()) {
        return Err(Error::shape(format!(
            "scores must be {}x{} for a {s} feature map",
            s.batch,
            s.plane()
        )));
    }
    scores
        .iter()
        .enumerate()
        .map(|(b, sc)| {
            let perm = argsort_descending(sc, method)?;
            Ok(PrioritySequence {
                tokens: gather(f, b, &perm),
                perm,
                scores: sc.clone(),
            })
        })
        .collect()
}

/// Tokens of batch item `b` of `f`, in the order `perm`.
pub fn gather<T: Real>(f: &FeatureMap<T>, b: usize, perm: &[usize]) -> TokenSeq<T> {
    let c = f.shape().channels;
    let mut seq = TokenSeq::zeros(perm.len(), c);
    for ch in 0..c {
        let plane = f.plane(b, ch);
        for (k, &p) in perm.iter().enumerate() {
            seq.token_mut(k)[ch] = plane[p];
        }
    }
    seq
}

/// Inverse of [`gather`] for a whole batch: writes token `k` back to `perm[k]`.
pub fn scatter<T: Real>(tokens: &[TokenSeq<T>], perms: &[Vec<usize>], height: usize, width: usize) -> Result<FeatureMap<T>> {
    let first = tokens.first().ok_or_else(|| Error::shape("nothing to deserialize"))?;
    let c = first.dim();
    let n = height * width;
    let mut out = FeatureMap::zeros(Shape::new(tokens.len(), c, height, width));
    for (b, (seq, perm)) in tokens.iter().zip(perms).enumerate() {
        if seq.len() != n || seq.dim() != c {
            return Err(Error::shape(format!(
                "sequence {}x{} does not fill {height}x{width}x{c}",
                seq.len(),
                seq.dim()
            )));
        }
        if !is_permutation(perm, n) {
            return Err(Error::Invariant(format!("batch item {b}: order is not a permutation of 0..{n}")));
        }
        for ch in 0..c {
            let plane = out.plane_mut(b, ch);
            for (k, &p) in perm.iter().enumerate() {
                plane[p] = seq.token(k)[ch];
            }
        }
    }
    Ok(out)
}

pub fn deserialize<T: Real>(seqs: &[PrioritySequence<T>], height: usize, width: usize) -> Result<FeatureMap<T>> {
    let tokens: Vec<TokenSeq<T>> = seqs.iter().map(|s| s.tokens.clone()).collect();
    let perms: Vec<Vec<usize>> = seqs.iter().map(|s| s.perm.clone()).collect();
    scatter(&tokens, &perms, height, width)
}

pub fn build_fusion_sequence<T: Real>(v: &TokenSeq<T>, i: &TokenSeq<T>, variant: FusionVariant) -> Result<TokenSeq<T>> {
    if v.len() != i.len() || v.dim() != i.dim() {
        return Err(Error::shape(format!(
            "RGB sequence {}x{} and IR sequence {}x{} differ",
            v.len(),
            v.dim(),
            i.len(),
            i.dim()
        )));
    }
    let (rv, ri) = variant.reversals();
    let head = if rv { v.reversed() } else { v.clone() };
    let tail = if ri { i.reversed() } else { i.clone() };
    head.concat(&tail)
}

/// Splits a fused sequence into its RGB and IR halves in priority order.
pub fn split_fusion_sequence<T: Real>(y: &TokenSeq<T>, variant: FusionVariant) -> Result<(TokenSeq<T>, TokenSeq<T>)> {
    if y.len() % 2 != 0 {
        return Err(Error::shape(format!("fused sequence has odd length {}", y.len())));
    }
    let n = y.len() / 2;
    let (rv, ri) = variant.reversals();
    let (a, b) = (y.slice(0, n), y.slice(n, 2 * n));
    Ok((
        if rv { a.reversed() } else { a },
        if ri { b.reversed() } else { b },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmfConfig {
    pub channels: usize,
    pub variant: FusionVariant,
    pub dropout: f64,
    pub dropout_seed: u64,
    pub state_dim: usize,
    pub psn_kernel: usize,
    pub discretization: Discretization,
    pub sort: SortMethod,
    pub token_source: TokenSource,
    /// Initialize the IR projection as a copy of the RGB one.
    pub shared_projection: bool,
}

impl Default for PgmfConfig {
    fn default() -> Self {
        PgmfConfig {
            channels: 4,
            variant: FusionVariant::D,
            dropout: 0.0,
            dropout_seed: 0,
            state_dim: DEFAULT_FUSION_STATE_DIM,
            psn_kernel: DEFAULT_PSN_KERNEL,
            discretization: Discretization::Zoh,
            sort: SortMethod::Radix,
            token_source: TokenSource::Latent,
            shared_projection: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgmfParams<T> {
    pub ref_v: Pointwise<T>,
    pub ref_i: Pointwise<T>,
    /// Shared by both modalities.
    pub psn: Psn<T>,
    pub ssm_fwd: SelectiveSsm<T>,
    pub ssm_bwd: SelectiveSsm<T>,
}

impl<T: Real> PgmfParams<T> {
    pub fn random(cfg: &PgmfConfig, prng: &mut Prng) -> Result<Self> {
        let c = cfg.channels;
        let ref_v = Pointwise::random(c, Activation::Silu, prng);
        let ref_i = Pointwise::random(c, Activation::Silu, prng);
        Ok(PgmfParams {
            ref_i: if cfg.shared_projection { ref_v.clone() } else { ref_i },
            ref_v,
            psn: Psn::random(c, cfg.psn_kernel, prng)?,
            ssm_fwd: SelectiveSsm::random(c, cfg.state_dim, cfg.discretization, prng),
            ssm_bwd: SelectiveSsm::random(c, cfg.state_dim, cfg.discretization, prng),
        })
    }

    /// Zeroes the fusion SSM so its output vanishes.
    pub fn silence_ssm(&mut self) {
        let (c, n, d) = (self.ssm_fwd.channels(), self.ssm_fwd.state_dim(), self.ssm_fwd.discretization);
        self.ssm_fwd = SelectiveSsm::zeroed(c, n, d);
        self.ssm_bwd = SelectiveSsm::zeroed(c, n, d);
    }
}

impl<T: Real> Parameters<T> for PgmfParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.ref_v.visit(&join(prefix, "ref_v"), f);
        self.ref_i.visit(&join(prefix, "ref_i"), f);
        self.psn.visit(&join(prefix, "psn"), f);
        self.ssm_fwd.visit(&join(prefix, "ssm_fwd"), f);
        self.ssm_bwd.visit(&join(prefix, "ssm_bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.ref_v.visit_mut(&join(prefix, "ref_v"), f);
        self.ref_i.visit_mut(&join(prefix, "ref_i"), f);
        self.psn.visit_mut(&join(prefix, "psn"), f);
        self.ssm_fwd.visit_mut(&join(prefix, "ssm_fwd"), f);
        self.ssm_bwd.visit_mut(&join(prefix, "ssm_bwd"), f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl ScoreStats {
    fn of<T: Real>(rows: &[Vec<T>]) -> Self {
        let all = rows.iter().flatten().map(|v| v.f64());
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for v in all {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        ScoreStats {
            min,
            max,
            mean: sum / n.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub projection_ms: f64,
    pub psn_ms: f64,
    pub sort_serialize_ms: f64,
    pub ssm_ms: f64,
    pub deserialize_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PgmfOutput<T> {
    pub fused: FeatureMap<T>,
    /// `F_p` before the residual sum.
    pub fusion_term: FeatureMap<T>,
    pub perm_v: Vec<Vec<usize>>,
    pub perm_i: Vec<Vec<usize>>,
    pub scores_v: ScoreStats,
    pub scores_i: ScoreStats,
    pub sort_method: SortMethod,
    pub timings: StageTimings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Inverted dropout with a mask drawn from `seed`.
pub fn dropout<T: Real>(x: &FeatureMap<T>, rate: f64, seed: u64) -> Result<FeatureMap<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::arg(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(x.clone());
    }
    let mut prng = Prng::new(seed);
    let keep = T::of(1.0 / (1.0 - rate));
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = if prng.next_f64() < rate { T::zero() } else { *v * keep };
    }
    Ok(out)
}

pub fn pgmf_fuse<T: Real>(
    f_v: &FeatureMap<T>,
    f_i: &FeatureMap<T>,
    params: &PgmfParams<T>,
    cfg: &PgmfConfig,
) -> Result<PgmfOutput<T>> {
    let s = f_v.shape();
    if f_i.shape() != s {
        return Err(Error::shape(format!("RGB features {s} and IR features {} differ", f_i.shape())));
    }
    let start = Instant::now();

    let t = Instant::now();
    let f_vl = params.ref_v.forward(f_v)?;
    let f_il = params.ref_i.forward(f_i)?;
    let projection_ms = ms(t);

    let t = Instant::now();
    let pmat = params.psn.forward(&f_vl.sub(&f_il)?)?;
    let f_vp = f_vl.add(&pmat)?;
    let f_ip = f_il.add(&pmat)?;
    let psn_ms = ms(t);

    let t = Instant::now();
    let scores_v = priority_scores(&f_vp);
    let scores_i = priority_scores(&f_ip);
    let (src_v, src_i) = match cfg.token_source {
        TokenSource::Latent => (&f_vl, &f_il),
        TokenSource::Priority => (&f_vp, &f_ip),
    };
    let seq_v = priority_serialize(src_v, &scores_v, cfg.sort)?;
    let seq_i = priority_serialize(src_i, &scores_i, cfg.sort)?;
    let sort_serialize_ms = ms(t);

    let t = Instant::now();
    let mut halves_v = Vec::with_capacity(s.batch);
    let mut halves_i = Vec::with_capacity(s.batch);
    for (sv, si) in seq_v.iter().zip(&seq_i) {
        let x = build_fusion_sequence(&sv.tokens, &si.tokens, cfg.variant)?;
        let y = params.ssm_fwd.bidirectional(&params.ssm_bwd, &x)?;
        let (hv, hi) = split_fusion_sequence(&y, cfg.variant)?;
        halves_v.push(hv);
        halves_i.push(hi);
    }
    let ssm_ms = ms(t);

    let t = Instant::now();
    let perm_v: Vec<Vec<usize>> = seq_v.iter().map(|q| q.perm.clone()).collect();
    let perm_i: Vec<Vec<usize>> = seq_i.iter().map(|q| q.perm.clone()).collect();
    let f_pv = scatter(&halves_v, &perm_v, s.height, s.width)?;
    let f_pi = scatter(&halves_i, &perm_i, s.height, s.width)?;
    let fusion_term = dropout(&f_pv.add(&f_pi)?, cfg.dropout, cfg.dropout_seed)?;
    let fused = f_v.add(f_i)?.add(&fusion_term)?;
    let deserialize_ms = ms(t);

    Ok(PgmfOutput {
        fused,
        fusion_term,
        perm_v,
        perm_i,
        scores_v: ScoreStats::of(&scores_v),
        scores_i: ScoreStats::of(&scores_i),
        sort_method: cfg.sort,
        timings: StageTimings {
            projection_ms,
            psn_ms,
            sort_serialize_ms,
            ssm_ms,
            deserialize_ms,
            total_ms: ms(start),
        },
    })
}
