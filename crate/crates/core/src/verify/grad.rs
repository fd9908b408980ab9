//! Analytic gradients against central finite differences.
//!
//! Every model is checked on the scalar objective `L = Σ outputs`. The
//! analytic side uses hand-written reverse passes; the numeric side reruns the
//! library's forward code with one coordinate nudged by `±h`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Pointwise};
use crate::params::{check_finite, collect, get, join, set, zeros_like, Parameters};
use crate::pgmf::{
    build_fusion_sequence, gather, priority_scores, scatter, split_fusion_sequence, FusionVariant, Psn,
    SortMethod, argsort_descending,
};
use crate::ssm::{apply_kernel, conv_kernel, Discretization, LtiSystem, SelectiveSsm};
use crate::tensor::{DType, FeatureMap, Prng, Shape, TokenSeq};

pub const MIN_COORDINATES: usize = 32;
/// Coordinates dropped and redrawn before giving up on a group.
const MAX_RESAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradModel {
    LtiSsm,
    Psn,
    PgmfPath,
    SelectiveSsm,
}

impl GradModel {
    pub const ALL: [GradModel; 4] = [GradModel::LtiSsm, GradModel::Psn, GradModel::PgmfPath, GradModel::SelectiveSsm];

    pub fn tolerance(self) -> f64 {
        match self {
            GradModel::LtiSsm | GradModel::SelectiveSsm => 1e-6,
            GradModel::Psn | GradModel::PgmfPath => 1e-4,
        }
    }

    /// Central-difference step used when none is configured.
    pub fn default_step(self) -> f64 {
        match self {
            GradModel::LtiSsm => 1e-5,
            _ => 3e-5,
        }
    }

    /// Whether the model sits in the time-invariant kernel regime.
    pub fn regime(self) -> &'static str {
        match self {
            GradModel::SelectiveSsm => "selective",
            GradModel::Psn => "feedforward",
            GradModel::LtiSsm | GradModel::PgmfPath => "lti-kernel",
        }
    }
}

impl std::fmt::Display for GradModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GradModel::LtiSsm => "lti-ssm",
            GradModel::Psn => "psn",
            GradModel::PgmfPath => "pgmf-path",
            GradModel::SelectiveSsm => "selective-ssm",
        })
    }
}

impl std::str::FromStr for GradModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradModel::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::arg(format!("unknown gradient model {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// `None` picks the model's default step.
    pub step: Option<f64>,
    /// Coordinates probed per parameter group (all of them if fewer).
    pub per_group: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: None,
            per_group: MIN_COORDINATES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_path: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub model: GradModel,
    pub regime: String,
    pub dtype: DType,
    pub step: f64,
    pub tolerance: f64,
    pub coordinates_checked: usize,
    /// Probes redrawn because the nudge would have reordered a permutation.
    pub resampled: usize,
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    pub worst_path: String,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` with central differences of `loss` on sampled
/// coordinates. `loss` returns `None` when a nudge is inadmissible.
fn compare<P>(
    model: GradModel,
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> Result<Option<f64>>,
    cfg: &GradCheckConfig,
) -> Result<GradientReport>
where
    P: Parameters<f64> + Clone,
{
    let h = cfg.step.unwrap_or(model.default_step());
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::arg(format!("finite-difference step {h} outside [1e-7, 1e-4]")));
    }
    check_finite(analytic, "analytic gradient")?;
    let mut groups: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    let mut order = Vec::new();
    for (path, values) in collect(analytic) {
        let group = path.split('.').next().unwrap_or(&path).to_string();
        if !groups.contains_key(&group) {
            order.push(group.clone());
        }
        let slot = groups.entry(group).or_default();
        slot.extend((0..values.len()).map(|i| (path.clone(), i)));
    }
    let mut prng = Prng::new(cfg.seed ^ 0x6a09_e667_f3bc_c908);
    let mut out = Vec::new();
    let mut resampled = 0;
    let mut checked = 0;
    for group in order {
        let pool = &groups[&group];
        let mut candidates: Vec<usize> = prng.permutation(pool.len());
        let want = cfg.per_group.min(pool.len());
        let mut worst = GroupError {
            group: group.clone(),
            coordinates: 0,
            max_rel_error: 0.0,
            worst_path: String::new(),
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        let mut misses = 0;
        while worst.coordinates < want {
            let Some(k) = candidates.pop() else { break };
            let (path, idx) = &pool[k];
            let v = get(params, path, *idx).expect("path from collect");
            let mut p = params.clone();
            set(&mut p, path, *idx, v + h);
            let up = loss(&p)?;
            set(&mut p, path, *idx, v - h);
            let down = loss(&p)?;
            let (Some(up), Some(down)) = (up, down) else {
                resampled += 1;
                misses += 1;
                if misses > MAX_RESAMPLES {
                    break;
                }
                continue;
            };
            let numeric = (up - down) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::Numerical {
                    path: format!("{path}[{idx}]"),
                    message: "finite difference is not finite".into(),
                });
            }
            let a = get(analytic, path, *idx).expect("same layout");
            let e = relative_error(a, numeric);
            worst.coordinates += 1;
            if e >= worst.max_rel_error {
                worst.max_rel_error = e;
                worst.worst_path = format!("{path}[{idx}]");
                worst.worst_analytic = a;
                worst.worst_numeric = numeric;
            }
        }
        checked += worst.coordinates;
        out.push(worst);
    }
    let worst = out
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .cloned();
    let (max_rel_error, worst_path) = worst.map_or((0.0, String::new()), |g| (g.max_rel_error, g.worst_path));
    let tolerance = model.tolerance();
    Ok(GradientReport {
        model,
        regime: model.regime().into(),
        dtype: DType::F64,
        step: h,
        tolerance,
        coordinates_checked: checked,
        resampled,
        groups: out,
        max_rel_error,
        worst_path,
        passed: max_rel_error <= tolerance && checked >= MIN_COORDINATES.min(count_all(analytic)),
    })
}

fn count_all<P: Parameters<f64>>(p: &P) -> usize {
    crate::params::count(p)
}

/// Continuous-time parameters `(a, b, c, Δ)` of a diagonal LTI system under ZOH.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiKernelParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub delta: Vec<f64>,
}

impl LtiKernelParams {
    pub fn random(n: usize, prng: &mut Prng) -> Self {
        LtiKernelParams {
            a: (0..n).map(|_| -prng.uniform(0.2, 2.0)).collect(),
            b: (0..n).map(|_| prng.uniform(-1.0, 1.0)).collect(),
            c: (0..n).map(|_| prng.uniform(-1.0, 1.0)).collect(),
            delta: vec![prng.uniform(0.1, 0.6)],
        }
    }

    /// `K_m` for `m < len`, via the library's discretization.
    pub fn kernel(&self, len: usize) -> Result<Vec<f64>> {
        let sys = LtiSystem::new(self.a.clone(), self.b.clone(), self.c.clone(), self.delta[0], Discretization::Zoh)?;
        conv_kernel(&sys.discretize()?, len)
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂K_m`.
    pub fn backward(&self, dk: &[f64], grad: &mut Self) {
        let delta = self.delta[0];
        for j in 0..self.a.len() {
            let (a, b, c) = (self.a[j], self.b[j], self.c[j]);
            let a_bar = (delta * a).exp();
            let b_bar = (a_bar - 1.0) / a * b;
            // S = Σ dk_m Ā^m, T = Σ dk_m m Ā^{m−1}
            let (mut s, mut t, mut pow, mut pow_prev) = (0.0, 0.0, 1.0, 0.0);
            for (m, &d) in dk.iter().enumerate() {
                s += d * pow;
                t += d * m as f64 * pow_prev;
                pow_prev = pow;
                pow *= a_bar;
            }
            let d_abar = c * b_bar * t;
            let d_bbar = c * s;
            grad.c[j] += b_bar * s;
            grad.b[j] += d_bbar * (a_bar - 1.0) / a;
            grad.a[j] += d_abar * delta * a_bar + d_bbar * b * (delta * a_bar * a - a_bar + 1.0) / (a * a);
            grad.delta[0] += d_abar * a * a_bar + d_bbar * b * a_bar;
        }
    }
}

impl Parameters<f64> for LtiKernelParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "a"), &self.a);
        f(&join(prefix, "b"), &self.b);
        f(&join(prefix, "c"), &self.c);
        f(&join(prefix, "delta"), &self.delta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "a"), &mut self.a);
        f(&join(prefix, "b"), &mut self.b);
        f(&join(prefix, "c"), &mut self.c);
        f(&join(prefix, "delta"), &mut self.delta);
    }
}

/// `y_t = Σ_m Kf_m x_{t−m} + Σ_m Kb_m x_{t+m}`, per channel.
pub fn bidirectional_conv(x: &TokenSeq<f64>, kf: &[f64], kb: &[f64]) -> TokenSeq<f64> {
    let (len, dim) = (x.len(), x.dim());
    let mut y = TokenSeq::zeros(len, dim);
    for c in 0..dim {
        let lane = x.channel(c);
        let fwd = apply_kernel(&lane, kf);
        let rev: Vec<f64> = lane.iter().rev().copied().collect();
        let bwd = apply_kernel(&rev, kb);
        for t in 0..len {
            y.token_mut(t)[c] = fwd[t] + bwd[len - 1 - t];
        }
    }
    y
}

/// Reverse pass of [`bidirectional_conv`]: `(dx, dKf, dKb)`.
pub fn bidirectional_conv_backward(
    x: &TokenSeq<f64>,
    kf: &[f64],
    kb: &[f64],
    dy: &TokenSeq<f64>,
) -> (TokenSeq<f64>, Vec<f64>, Vec<f64>) {
    let (len, dim) = (x.len(), x.dim());
    let mut dx = TokenSeq::zeros(len, dim);
    let mut dkf = vec![0.0; kf.len()];
    let mut dkb = vec![0.0; kb.len()];
    for c in 0..dim {
        for t in 0..len {
            let g = dy.token(t)[c];
            for m in 0..=t.min(kf.len().saturating_sub(1)) {
                dkf[m] += g * x.token(t - m)[c];
                dx.token_mut(t - m)[c] += g * kf[m];
            }
            for m in 0..(len - t).min(kb.len()) {
                dkb[m] += g * x.token(t + m)[c];
                dx.token_mut(t + m)[c] += g * kb[m];
            }
        }
    }
    (dx, dkf, dkb)
}

/// The differentiable fusion path: latent projections, shared score network
/// feeding the gathered values, variant-D sequence and a bidirectional LTI
/// kernel in place of the selective scan.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmfPath {
    pub ref_v: Pointwise<f64>,
    pub ref_i: Pointwise<f64>,
    pub psn: Psn<f64>,
    pub omega_f: LtiKernelParams,
    pub omega_b: LtiKernelParams,
}

impl Parameters<f64> for PgmfPath {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.ref_v.visit(&join(prefix, "ref_v"), f);
        self.ref_i.visit(&join(prefix, "ref_i"), f);
        self.psn.visit(&join(prefix, "psn"), f);
        self.omega_f.visit(&join(prefix, "omega_f"), f);
        self.omega_b.visit(&join(prefix, "omega_b"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.ref_v.visit_mut(&join(prefix, "ref_v"), f);
        self.ref_i.visit_mut(&join(prefix, "ref_i"), f);
        self.psn.visit_mut(&join(prefix, "psn"), f);
        self.omega_f.visit_mut(&join(prefix, "omega_f"), f);
        self.omega_b.visit_mut(&join(prefix, "omega_b"), f);
    }
}

pub type Perms = (Vec<usize>, Vec<usize>);

struct PathForward {
    loss: f64,
    psn_trace: crate::pgmf::PsnTrace<f64>,
    seq: TokenSeq<f64>,
    kf: Vec<f64>,
    kb: Vec<f64>,
}

impl PgmfPath {
    pub fn random(channels: usize, state_dim: usize, prng: &mut Prng) -> Result<Self> {
        Ok(PgmfPath {
            ref_v: Pointwise::random(channels, Activation::Silu, prng),
            ref_i: Pointwise::random(channels, Activation::Silu, prng),
            psn: Psn::random(channels, 3, prng)?,
            omega_f: LtiKernelParams::random(state_dim, prng),
            omega_b: LtiKernelParams::random(state_dim, prng),
        })
    }

    /// Permutations the current parameters induce on `(f_v, f_i)`.
    pub fn perms(&self, f_v: &FeatureMap<f64>, f_i: &FeatureMap<f64>) -> Result<Perms> {
        let f_vl = self.ref_v.forward(f_v)?;
        let f_il = self.ref_i.forward(f_i)?;
        let pmat = self.psn.forward(&f_vl.sub(&f_il)?)?;
        let sv = priority_scores(&f_vl.add(&pmat)?);
        let si = priority_scores(&f_il.add(&pmat)?);
        Ok((
            argsort_descending(&sv[0], SortMethod::Radix)?,
            argsort_descending(&si[0], SortMethod::Radix)?,
        ))
    }

    fn run(&self, f_v: &FeatureMap<f64>, f_i: &FeatureMap<f64>, frozen: Option<&Perms>) -> Result<PathForward> {
        let s = f_v.shape();
        if s.batch != 1 || f_i.shape() != s {
            return Err(Error::shape("gradient path takes two matching single-item maps"));
        }
        let f_vl = self.ref_v.forward(f_v)?;
        let f_il = self.ref_i.forward(f_i)?;
        let psn_trace = self.psn.forward_trace(&f_vl.sub(&f_il)?)?;
        let f_vp = f_vl.add(&psn_trace.output)?;
        let f_ip = f_il.add(&psn_trace.output)?;
        let perms = match frozen {
            Some(p) => p.clone(),
            None => self.perms(f_v, f_i)?,
        };
        let seq = build_fusion_sequence(&gather(&f_vp, 0, &perms.0), &gather(&f_ip, 0, &perms.1), FusionVariant::D)?;
        let kf = self.omega_f.kernel(seq.len())?;
        let kb = self.omega_b.kernel(seq.len())?;
        let y = bidirectional_conv(&seq, &kf, &kb);
        let (hv, hi) = split_fusion_sequence(&y, FusionVariant::D)?;
        let f_p = scatter(&[hv], &[perms.0.clone()], s.height, s.width)?
            .add(&scatter(&[hi], &[perms.1.clone()], s.height, s.width)?)?;
        let fused = f_v.add(f_i)?.add(&f_p)?;
        Ok(PathForward {
            loss: fused.data().iter().sum(),
            psn_trace,
            seq,
            kf,
            kb,
        })
    }

    /// `L = Σ fused` under frozen permutations.
    pub fn loss(&self, f_v: &FeatureMap<f64>, f_i: &FeatureMap<f64>, perms: &Perms) -> Result<f64> {
        Ok(self.run(f_v, f_i, Some(perms))?.loss)
    }

    /// Analytic `∂L/∂θ`. With `detach_ir` the IR branch contributes nothing
    /// upstream of the priority matrix.
    pub fn gradient(&self, f_v: &FeatureMap<f64>, f_i: &FeatureMap<f64>, perms: &Perms, detach_ir: bool) -> Result<Self> {
        let s = f_v.shape();
        let fw = self.run(f_v, f_i, Some(perms))?;
        let mut g = zeros_like(self);
        // ∂L/∂F_p = 1 everywhere; the residual terms carry no parameters.
        let ones = FeatureMap::full(s, 1.0);
        let dy = build_fusion_sequence(&gather(&ones, 0, &perms.0), &gather(&ones, 0, &perms.1), FusionVariant::D)?;
        let (dseq, dkf, dkb) = bidirectional_conv_backward(&fw.seq, &fw.kf, &fw.kb, &dy);
        self.omega_f.backward(&dkf, &mut g.omega_f);
        self.omega_b.backward(&dkb, &mut g.omega_b);
        let (dv, di) = split_fusion_sequence(&dseq, FusionVariant::D)?;
        let d_vp = scatter(&[dv], &[perms.0.clone()], s.height, s.width)?;
        let d_ip = scatter(&[di], &[perms.1.clone()], s.height, s.width)?;
        let d_ip = if detach_ir { FeatureMap::zeros(s) } else { d_ip };
        let d_pmat = d_vp.add(&d_ip)?;
        let d_delta = self.psn.backward(&fw.psn_trace, &d_pmat, &mut g.psn)?;
        let d_vl = d_vp.add(&d_delta)?;
        let d_il = d_ip.sub(&d_delta)?;
        self.ref_v.backward(f_v, &d_vl, &mut g.ref_v)?;
        self.ref_i.backward(f_i, &d_il, &mut g.ref_i)?;
        Ok(g)
    }
}

/// Factor-of-two check for the shared score network: identical modalities,
/// identical projections and mirrored kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedPsnReport {
    pub tolerance: f64,
    pub coordinates: usize,
    /// `max |g_full − 2·g_detached| / max(1, |g_full|)`.
    pub max_deviation: f64,
    pub perms_equal: bool,
    pub passed: bool,
}

pub fn shared_psn_factor_two(seed: u64) -> Result<SharedPsnReport> {
    let mut prng = Prng::new(seed);
    let mut path = PgmfPath::random(3, 4, &mut prng)?;
    path.ref_i = path.ref_v.clone();
    path.omega_b = path.omega_f.clone();
    let f = FeatureMap::random(Shape::new(1, 3, 4, 4), &mut prng, 1.0);
    let perms = path.perms(&f, &f)?;
    let full = path.gradient(&f, &f, &perms, false)?;
    let half = path.gradient(&f, &f, &perms, true)?;
    let (full, half) = (collect(&full.psn), collect(&half.psn));
    let mut dev = 0.0f64;
    let mut n = 0;
    for ((_, a), (_, b)) in full.iter().zip(&half) {
        for (&a, &b) in a.iter().zip(b) {
            dev = dev.max((a - 2.0 * b).abs() / a.abs().max(1.0));
            n += 1;
        }
    }
    let tolerance = 1e-10;
    let perms_equal = perms.0 == perms.1;
    Ok(SharedPsnReport {
        tolerance,
        coordinates: n,
        max_deviation: dev,
        perms_equal,
        passed: perms_equal && dev <= tolerance,
    })
}

pub fn check_gradients(model: GradModel, cfg: &GradCheckConfig) -> Result<GradientReport> {
    let mut prng = Prng::new(cfg.seed);
    match model {
        GradModel::LtiSsm => {
            let (len, n) = (16, 4);
            let params = LtiKernelParams::random(n, &mut prng);
            let x: Vec<f64> = (0..len).map(|_| prng.uniform(-1.0, 1.0)).collect();
            // L = Σ_t Σ_{m<=t} K_m x_{t−m}, so ∂L/∂K_m = Σ_{s < len−m} x_s.
            let dk: Vec<f64> = (0..len).map(|m| x[..len - m].iter().sum()).collect();
            let mut g = zeros_like(&params);
            params.backward(&dk, &mut g);
            let loss = |p: &LtiKernelParams| -> Result<Option<f64>> {
                Ok(Some(apply_kernel(&x, &p.kernel(len)?).iter().sum()))
            };
            compare(model, &params, &g, loss, cfg)
        }
        GradModel::Psn => {
            let psn = Psn::<f64>::random(3, 3, &mut prng)?;
            let x = FeatureMap::random(Shape::new(1, 3, 6, 6), &mut prng, 1.0);
            let mut g = zeros_like(&psn);
            psn.backward(&psn.forward_trace(&x)?, &FeatureMap::full(x.shape(), 1.0), &mut g)?;
            let loss = |p: &Psn<f64>| -> Result<Option<f64>> { Ok(Some(p.forward(&x)?.data().iter().sum())) };
            compare(model, &psn, &g, loss, cfg)
        }
        GradModel::PgmfPath => {
            let path = PgmfPath::random(3, 4, &mut prng)?;
            let shape = Shape::new(1, 3, 4, 4);
            let f_v = FeatureMap::random(shape, &mut prng, 1.0);
            let f_i = FeatureMap::random(shape, &mut prng, 1.0);
            let perms = path.perms(&f_v, &f_i)?;
            let g = path.gradient(&f_v, &f_i, &perms, false)?;
            let loss = |p: &PgmfPath| -> Result<Option<f64>> {
                if p.perms(&f_v, &f_i)? != perms {
                    return Ok(None);
                }
                Ok(Some(p.loss(&f_v, &f_i, &perms)?))
            };
            compare(model, &path, &g, loss, cfg)
        }
        GradModel::SelectiveSsm => {
            let (channels, n, len) = (3, 4, 12);
            let mut layer = SelectiveSsm::<f64>::random(channels, n, Discretization::Zoh, &mut prng);
            // Step sizes well above the default init keep the `a` gradients
            // large enough to resolve by differencing.
            for b in layer.b_delta.iter_mut() {
                *b = prng.uniform(0.2, 1.0).exp_m1().ln();
            }
            let x = TokenSeq::new(channels, (0..len * channels).map(|_| prng.uniform(-1.0, 1.0)).collect())?;
            let ones = TokenSeq::new(channels, vec![1.0; len * channels])?;
            let (g, _) = layer.backward(&x, &ones)?;
            let loss = |p: &SelectiveSsm<f64>| -> Result<Option<f64>> {
                Ok(Some(p.forward(&x)?.data().iter().sum()))
            };
            compare(model, &layer, &g, loss, cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_model_passes() {
        for model in GradModel::ALL {
            let r = check_gradients(model, &GradCheckConfig::default()).unwrap();
            assert!(r.passed, "{model}: {} at {}", r.max_rel_error, r.worst_path);
            assert!(r.coordinates_checked >= MIN_COORDINATES.min(r.groups.iter().map(|g| g.coordinates).sum()), "{model}");
            assert!(r.groups.iter().all(|g| g.max_rel_error.is_finite() && g.max_rel_error >= 0.0));
        }
    }

    #[test]
    fn psn_receives_gradient_through_the_path() {
        let r = check_gradients(GradModel::PgmfPath, &GradCheckConfig::default()).unwrap();
        let psn = r.groups.iter().find(|g| g.group == "psn").unwrap();
        assert!(psn.worst_analytic != 0.0 || psn.worst_numeric != 0.0);
    }

    #[test]
    fn every_model_passes_across_seeds() {
        for seed in 1..6 {
            for model in GradModel::ALL {
                let r = check_gradients(model, &GradCheckConfig { seed, ..GradCheckConfig::default() }).unwrap();
                assert!(r.passed, "{model} seed {seed}: {} at {}", r.max_rel_error, r.worst_path);
            }
        }
    }

    #[test]
    fn factor_two_holds() {
        let r = shared_psn_factor_two(3).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn broken_gradient_is_caught() {
        let mut prng = Prng::new(1);
        let params = LtiKernelParams::random(4, &mut prng);
        let mut g = zeros_like(&params);
        params.backward(&[1.0; 8], &mut g);
        g.c[0] *= 1.1;
        let loss = |p: &LtiKernelParams| -> Result<Option<f64>> { Ok(Some(p.kernel(8)?.iter().sum())) };
        let r = compare(GradModel::LtiSsm, &params, &g, loss, &GradCheckConfig::default()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_path, "c[0]");
    }

    #[test]
    fn non_finite_gradient_names_path() {
        let mut prng = Prng::new(1);
        let params = LtiKernelParams::random(2, &mut prng);
        let mut g = zeros_like(&params);
        g.b[1] = f64::NAN;
        let loss = |_: &LtiKernelParams| -> Result<Option<f64>> { Ok(Some(0.0)) };
        match compare(GradModel::LtiSsm, &params, &g, loss, &GradCheckConfig::default()) {
            Err(Error::Numerical { path, .. }) => assert_eq!(path, "b[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn step_range_enforced() {
        let cfg = GradCheckConfig {
            step: Some(1e-2),
            ..GradCheckConfig::default()
        };
        assert!(check_gradients(GradModel::LtiSsm, &cfg).is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for m in GradModel::ALL {
            assert_eq!(m.to_string().parse::<GradModel>().unwrap(), m);
        }
    }
}
