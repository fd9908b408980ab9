//! Wall-clock scaling of the three fusion stages against token count.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{build_fusion_sequence, priority_scores, priority_serialize, PgmfConfig, PgmfParams, SortMethod};
use crate::error::{Error, Result};
use crate::tensor::{DType, FeatureMap, Prng, Real, Shape, TokenSeq};

pub const RATIO_BAND: (f64, f64) = (1.6, 2.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeStage {
    Psn,
    SortSerialize,
    Ssm,
}

pub const STAGES: [ProbeStage; 3] = [ProbeStage::Psn, ProbeStage::SortSerialize, ProbeStage::Ssm];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub tokens: usize,
    pub height: usize,
    pub width: usize,
    /// Median milliseconds per stage, in [`STAGES`] order.
    pub median_ms: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRatios {
    pub stage: ProbeStage,
    /// `t(N_{k+1}) / t(N_k)` for consecutive rows.
    pub ratios: Vec<f64>,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub channels: usize,
    pub dtype: DType,
    pub repeats: usize,
    pub sort_method: SortMethod,
    pub band: (f64, f64),
    pub rows: Vec<ProbeRow>,
    pub stages: Vec<StageRatios>,
}

impl ProbeTable {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.within_band)
    }
}

/// Most-square `H × W = n` with `H <= W`.
fn grid(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && n % h != 0 {
        h -= 1;
    }
    (h.max(1), n / h.max(1))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn time<R>(f: impl FnOnce() -> Result<R>) -> Result<f64> {
    let t = Instant::now();
    std::hint::black_box(f()?);
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

struct Fixture<T> {
    delta: FeatureMap<T>,
    f_vl: FeatureMap<T>,
    f_il: FeatureMap<T>,
    f_vp: FeatureMap<T>,
    f_ip: FeatureMap<T>,
    fused: TokenSeq<T>,
}

/// Times each stage at each token count; `sizes` must be strictly increasing.
pub fn complexity_probe<T: Real>(sizes: &[usize], repeats: usize, cfg: &PgmfConfig, seed: u64) -> Result<ProbeTable> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[1] <= w[0]) || sizes[0] == 0 {
        return Err(Error::arg("probe sizes must be positive and strictly increasing"));
    }
    if repeats == 0 {
        return Err(Error::arg("at least one repeat is required"));
    }
    let mut prng = Prng::new(seed);
    let params = PgmfParams::<T>::random(cfg, &mut prng)?;
    let mut fixtures = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let (h, w) = grid(n);
        let shape = Shape::new(1, cfg.channels, h, w);
        let f_vl = FeatureMap::random(shape, &mut prng, 1.0);
        let f_il = FeatureMap::random(shape, &mut prng, 1.0);
        let delta = f_vl.sub(&f_il)?;
        let pmat = params.psn.forward(&delta)?;
        let f_vp = f_vl.add(&pmat)?;
        let f_ip = f_il.add(&pmat)?;
        let seq_v = priority_serialize(&f_vl, &priority_scores(&f_vp), cfg.sort)?;
        let seq_i = priority_serialize(&f_il, &priority_scores(&f_ip), cfg.sort)?;
        let fused = build_fusion_sequence(&seq_v[0].tokens, &seq_i[0].tokens, cfg.variant)?;
        fixtures.push(Fixture { delta, f_vl, f_il, f_vp, f_ip, fused });
    }

    // Sizes are interleaved within each repeat so slow drift in machine load
    // lands on every size alike. Repeat 0 is an untimed warm-up.
    let mut samples: Vec<[Vec<f64>; 3]> = vec![Default::default(); sizes.len()];
    for r in 0..=repeats {
        for (fx, slot) in fixtures.iter().zip(&mut samples) {
            let psn = time(|| params.psn.forward(&fx.delta))?;
            let sort = time(|| {
                let a = priority_serialize(&fx.f_vl, &priority_scores(&fx.f_vp), cfg.sort)?;
                let b = priority_serialize(&fx.f_il, &priority_scores(&fx.f_ip), cfg.sort)?;
                Ok((a, b))
            })?;
            let ssm = time(|| params.ssm_fwd.bidirectional(&params.ssm_bwd, &fx.fused))?;
            if r > 0 {
                slot[0].push(psn);
                slot[1].push(sort);
                slot[2].push(ssm);
            }
        }
    }
    let rows: Vec<ProbeRow> = sizes
        .iter()
        .zip(samples)
        .map(|(&n, s)| {
            let (height, width) = grid(n);
            ProbeRow {
                tokens: n,
                height,
                width,
                median_ms: s.map(median),
            }
        })
        .collect();
    let stages = STAGES
        .iter()
        .enumerate()
        .map(|(k, &stage)| {
            let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].median_ms[k] / w[0].median_ms[k]).collect();
            let within_band = ratios.iter().all(|r| (RATIO_BAND.0..=RATIO_BAND.1).contains(r));
            StageRatios {
                stage,
                ratios,
                within_band,
            }
        })
        .collect();
    Ok(ProbeTable {
        channels: cfg.channels,
        dtype: T::DTYPE,
        repeats,
        sort_method: cfg.sort,
        band: RATIO_BAND,
        rows,
        stages,
    })
}
