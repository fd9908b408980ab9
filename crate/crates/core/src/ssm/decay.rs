//! How much an early token still contributes to a later hidden state.
//!
//! With `h_0 = 0` the state unrolls as `h_t = Σ_{i<=t} (Π_{k=i+1..t} Ā_k) B̄_i x_i`.
//! Each summand is token `i`'s contribution to `h_t`. For a stable system the
//! product of `Ā` factors shrinks geometrically with the gap `t − i`, and the
//! contribution is bounded by `‖Π Ā_k‖ · ‖B̄_i x_i‖` with the spectral
//! (max-abs-diagonal) norm for the product.
//!
//! Indices are 0-based here: `0 <= i <= t < len`.

use serde::{Deserialize, Serialize};

use super::DiscreteSystem;
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const DEFAULT_GAPS: [usize; 3] = [10, 50, 100];

/// Signed contribution of token `i` to hidden state `t`.
pub fn contribution_vector<T: Real>(sys: &DiscreteSystem<T>, x: &[T], i: usize, t: usize) -> Result<Vec<T>> {
    if i > t || t >= x.len() {
        return Err(Error::arg(format!(
            "need i <= t < {}, got i = {i}, t = {t}",
            x.len()
        )));
    }
    sys.check_len(x.len())?;
    let mut v: Vec<T> = sys.b_bar(i).iter().map(|&b| b * x[i]).collect();
    for k in i + 1..=t {
        for (vj, &a) in v.iter_mut().zip(sys.a_bar(k)) {
            *vj = *vj * a;
        }
    }
    Ok(v)
}

/// Euclidean norm of [`contribution_vector`].
pub fn token_contribution<T: Real>(sys: &DiscreteSystem<T>, x: &[T], i: usize, t: usize) -> Result<f64> {
    Ok(norm(&contribution_vector(sys, x, i, t)?))
}

fn norm<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDescriptor {
    pub mode: String,
    pub state_dim: usize,
    pub steps: usize,
    pub spectral_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapMax {
    pub gap: usize,
    /// Largest contribution over pairs with `t − i >= gap`; `None` when the
    /// sequence is too short to contain such a pair.
    pub max_contribution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub system: SystemDescriptor,
    pub tolerance: f64,
    pub pairs_checked: usize,
    /// Pairs whose contribution exceeds the product bound by more than `tolerance`.
    pub bound_violations: usize,
    /// Largest `contribution − bound` seen (non-positive when no violation).
    pub max_bound_excess: f64,
    /// Largest `|Σ_i contribution_i − h_t|` over `t`, against the recurrence.
    pub max_decomposition_error: f64,
    pub gaps: Vec<GapMax>,
    /// Whether the per-gap maxima are non-increasing in the gap.
    pub monotone: bool,
}

impl DecayReport {
    pub fn passed(&self) -> bool {
        self.bound_violations == 0 && self.monotone
    }

    pub fn max_at_gap(&self, gap: usize) -> Option<f64> {
        self.gaps
            .iter()
            .find(|g| g.gap == gap)
            .and_then(|g| g.max_contribution)
    }
}

/// Checks the product bound for every pair `i <= t`, the decomposition
/// identity, and the decay of the largest contribution at each gap in `gaps`.
pub fn verify_decay<T: Real>(
    sys: &DiscreteSystem<T>,
    x: &[T],
    tolerance: f64,
    gaps: &[usize],
) -> Result<DecayReport> {
    let rho = sys.spectral_radius();
    if !(rho < 1.0) {
        return Err(Error::Instability(format!(
            "spectral radius {rho} is not below 1"
        )));
    }
    sys.check_len(x.len())?;
    let n = sys.state_dim();
    let len = x.len();
    let states = sys.scan_with_states(x)?.states.expect("states requested");

    let mut sums = vec![0.0f64; len * n];
    // Largest contribution at exactly gap g, folded into suffix maxima below.
    let mut at_gap = vec![0.0f64; len];
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut product = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];

    for i in 0..len {
        let xi = x[i].f64();
        let bx: Vec<f64> = sys.b_bar(i).iter().map(|b| b.f64() * xi).collect();
        let bx_norm = bx.iter().map(|b| b * b).sum::<f64>().sqrt();
        product.iter_mut().for_each(|p| *p = 1.0);
        for t in i..len {
            if t > i {
                for (p, a) in product.iter_mut().zip(sys.a_bar(t)) {
                    *p *= a.f64();
                }
            }
            let mut sq = 0.0;
            for j in 0..n {
                v[j] = product[j] * bx[j];
                sq += v[j] * v[j];
                sums[t * n + j] += v[j];
            }
            let contribution = sq.sqrt();
            let bound = product.iter().fold(0.0f64, |m, p| m.max(p.abs())) * bx_norm;
            let excess = contribution - bound;
            max_excess = max_excess.max(excess);
            if excess > tolerance {
                violations += 1;
            }
            let g = t - i;
            at_gap[g] = at_gap[g].max(contribution);
        }
    }

    let max_decomposition_error = sums
        .iter()
        .zip(&states)
        .map(|(s, h)| (s - h.f64()).abs())
        .fold(0.0, f64::max);

    // Suffix maxima: max over pairs with gap >= g.
    let mut suffix = vec![0.0f64; len + 1];
    for g in (0..len).rev() {
        suffix[g] = suffix[g + 1].max(at_gap[g]);
    }
    let gaps: Vec<GapMax> = gaps
        .iter()
        .map(|&gap| GapMax {
            gap,
            max_contribution: (gap < len).then(|| suffix[gap]),
        })
        .collect();
    let present: Vec<f64> = gaps.iter().filter_map(|g| g.max_contribution).collect();
    let monotone = present.windows(2).all(|w| w[1] <= w[0]);

    Ok(DecayReport {
        system: SystemDescriptor {
            mode: if sys.is_time_invariant() { "lti" } else { "selective" }.into(),
            state_dim: n,
            steps: len,
            spectral_radius: rho,
        },
        tolerance,
        pairs_checked: len * (len + 1) / 2,
        bound_violations: violations,
        max_bound_excess: max_excess,
        max_decomposition_error,
        gaps,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{Discretization, SelectiveSystem};
    use crate::tensor::{init_params, Prng};

    #[test]
    fn geometric_contribution() {
        let sys = DiscreteSystem::scalar(0.5, 1.0, 1.0);
        let x = vec![1.0; 8];
        for i in 0..8 {
            for t in i..8 {
                let c = token_contribution(&sys, &x, i, t).unwrap();
                assert!((c - 0.5f64.powi((t - i) as i32)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn same_index_is_input_term() {
        let sys = DiscreteSystem::new(2, None, vec![0.3, 0.7], vec![2.0, -1.0], vec![1.0, 1.0]).unwrap();
        let x = [0.5, 3.0];
        let c = token_contribution(&sys, &x, 1, 1).unwrap();
        assert!((c - (36.0f64 + 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn index_errors() {
        let sys = DiscreteSystem::scalar(0.5, 1.0, 1.0);
        assert!(matches!(token_contribution(&sys, &[1.0; 4], 3, 2), Err(Error::InvalidArgument(_))));
        assert!(matches!(token_contribution(&sys, &[1.0; 4], 0, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn contributions_sum_to_state() {
        let mut rng = Prng::new(14);
        let (n, len) = (4, 40);
        let sys = SelectiveSystem::new(
            (0..n).map(|_| -rng.uniform(0.1, 2.0)).collect(),
            (0..len).map(|_| rng.uniform(0.01, 1.0)).collect(),
            init_params(&mut rng, len * n, 1.0),
            init_params(&mut rng, len * n, 1.0),
            Discretization::Zoh,
        )
        .unwrap()
        .discretize()
        .unwrap();
        let x: Vec<f64> = init_params(&mut rng, len, 1.0);
        let states = sys.scan_with_states(&x).unwrap().states.unwrap();
        for t in [0, 7, 39] {
            let mut sum = vec![0.0; n];
            for i in 0..=t {
                for (s, v) in sum.iter_mut().zip(contribution_vector(&sys, &x, i, t).unwrap()) {
                    *s += v;
                }
            }
            for j in 0..n {
                assert!((sum[j] - states[t * n + j]).abs() < 1e-10);
            }
        }
        let report = verify_decay(&sys, &x, 1e-12, &DEFAULT_GAPS).unwrap();
        assert!(report.max_decomposition_error < 1e-10);
    }

    #[test]
    fn constant_point_nine_decays_below_bound() {
        let sys = DiscreteSystem::scalar(0.9, 1.0, 1.0);
        let x = vec![1.0; 256];
        let r = verify_decay(&sys, &x, 1e-12, &DEFAULT_GAPS).unwrap();
        assert_eq!(r.bound_violations, 0);
        assert!(r.monotone);
        let at100 = r.max_at_gap(100).unwrap();
        assert!(at100 <= 0.9f64.powi(100) * (1.0 + 1e-12));
        assert!(at100 <= 2.7e-5);
    }

    #[test]
    fn unstable_system_rejected() {
        let sys = DiscreteSystem::scalar(1.05, 1.0, 1.0);
        assert!(matches!(
            verify_decay(&sys, &[1.0; 4], 0.0, &DEFAULT_GAPS),
            Err(Error::Instability(_))
        ));
    }

    #[test]
    fn short_sequences_report_missing_gaps() {
        let sys = DiscreteSystem::scalar(0.5, 1.0, 1.0);
        let r = verify_decay(&sys, &[1.0; 20], 0.0, &DEFAULT_GAPS).unwrap();
        assert!(r.max_at_gap(10).is_some());
        assert_eq!(r.max_at_gap(50), None);
    }
}
