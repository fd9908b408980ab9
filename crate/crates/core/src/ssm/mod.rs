//! Diagonal state-space systems.
//!
//! A continuous system `(A, B, C, Δ)` with diagonal `A` (every `a_j < 0`) is
//! discretized into `(Ā, B̄, C)` and run as the recurrence
//! `h_t = Ā_t ⊙ h_{t-1} + B̄_t x_t`, `y_t = C_t · h_t` from `h_0 = 0`.
//! Time-invariant systems also admit the causal convolution form
//! `y = x ∗ K` with `K_m = C Ā^m B̄`.

mod decay;
mod layer;

pub use decay::{
    contribution_vector, token_contribution, verify_decay, DecayReport, GapMax, SystemDescriptor,
    DEFAULT_GAPS,
};
pub use layer::{softplus, SelectiveSsm};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// `Ā = e^{Δa}`, `B̄ = (Ā − 1)/a · B`.
    #[default]
    Zoh,
    /// `Ā = e^{Δa}`, `B̄ = Δ·B`.
    EulerB,
}

impl std::str::FromStr for Discretization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zoh" => Ok(Discretization::Zoh),
            "euler_b" | "eulerb" | "euler" => Ok(Discretization::EulerB),
            other => Err(Error::arg(format!("unknown discretization {other:?}"))),
        }
    }
}

/// Discretizes one diagonal entry.
#[inline]
pub fn discretize_entry<T: Real>(a: T, delta: T, b: T, mode: Discretization) -> (T, T) {
    let a_bar = (delta * a).exp();
    let b_bar = match mode {
        Discretization::Zoh => (a_bar - T::one()) / a * b,
        Discretization::EulerB => delta * b,
    };
    (a_bar, b_bar)
}

fn check_continuous<T: Real>(a: &[T]) -> Result<()> {
    if let Some((j, v)) = a.iter().enumerate().find(|(_, v)| !(**v < T::zero())) {
        return Err(Error::Instability(format!(
            "continuous state entry a[{j}] = {v} must be strictly negative"
        )));
    }
    Ok(())
}

fn check_delta<T: Real>(delta: T) -> Result<()> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::arg(format!("step size Δ = {delta} must be positive")));
    }
    Ok(())
}

/// Time-invariant system with diagonal `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub delta: T,
    pub discretization: Discretization,
}

impl<T: Real> LtiSystem<T> {
    pub fn new(a: Vec<T>, b: Vec<T>, c: Vec<T>, delta: T, discretization: Discretization) -> Result<Self> {
        if a.is_empty() || b.len() != a.len() || c.len() != a.len() {
            return Err(Error::shape(format!(
                "state dims a={}, b={}, c={}",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        check_continuous(&a)?;
        check_delta(delta)?;
        Ok(LtiSystem {
            a,
            b,
            c,
            delta,
            discretization,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.len()
    }

    pub fn discretize(&self) -> Result<DiscreteSystem<T>> {
        check_continuous(&self.a)?;
        check_delta(self.delta)?;
        let (a_bar, b_bar) = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| discretize_entry(a, self.delta, b, self.discretization))
            .unzip();
        DiscreteSystem::new(self.a.len(), None, a_bar, b_bar, self.c.clone())
    }
}

/// Input-dependent system: per-step `Δ_t`, `B_t`, `C_t` with a fixed diagonal `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveSystem<T> {
    pub a: Vec<T>,
    /// One step size per token.
    pub delta: Vec<T>,
    /// `steps × n`, row per token.
    pub b: Vec<T>,
    /// `steps × n`, row per token.
    pub c: Vec<T>,
    pub discretization: Discretization,
}

impl<T: Real> SelectiveSystem<T> {
    pub fn new(
        a: Vec<T>,
        delta: Vec<T>,
        b: Vec<T>,
        c: Vec<T>,
        discretization: Discretization,
    ) -> Result<Self> {
        let (n, steps) = (a.len(), delta.len());
        if n == 0 || b.len() != steps * n || c.len() != steps * n {
            return Err(Error::shape(format!(
                "selective system with n={n}, {steps} steps needs b, c of {} values (got {}, {})",
                steps * n,
                b.len(),
                c.len()
            )));
        }
        check_continuous(&a)?;
        for &d in &delta {
            check_delta(d)?;
        }
        Ok(SelectiveSystem {
            a,
            delta,
            b,
            c,
            discretization,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.len()
    }

    pub fn steps(&self) -> usize {
        self.delta.len()
    }

    pub fn discretize(&self) -> Result<DiscreteSystem<T>> {
        check_continuous(&self.a)?;
        let n = self.a.len();
        let mut a_bar = Vec::with_capacity(self.b.len());
        let mut b_bar = Vec::with_capacity(self.b.len());
        for (t, &delta) in self.delta.iter().enumerate() {
            check_delta(delta)?;
            for j in 0..n {
                let (ab, bb) = discretize_entry(self.a[j], delta, self.b[t * n + j], self.discretization);
                a_bar.push(ab);
                b_bar.push(bb);
            }
        }
        DiscreteSystem::new(n, Some(self.steps()), a_bar, b_bar, self.c.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateSpaceSystem<T> {
    Lti(LtiSystem<T>),
    Selective(SelectiveSystem<T>),
}

impl<T: Real> StateSpaceSystem<T> {
    pub fn discretize(&self) -> Result<DiscreteSystem<T>> {
        match self {
            StateSpaceSystem::Lti(s) => s.discretize(),
            StateSpaceSystem::Selective(s) => s.discretize(),
        }
    }
}

/// Discrete diagonal system. Time-invariant when `steps` is `None`
/// (one row of `Ā`, `B̄`, `C` reused at every step), otherwise one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem<T> {
    n: usize,
    steps: Option<usize>,
    a_bar: Vec<T>,
    b_bar: Vec<T>,
    c: Vec<T>,
}

impl<T: Real> DiscreteSystem<T> {
    /// Builds directly from discrete values. Stability is not checked here;
    /// [`verify_decay`] rejects spectral radii `>= 1`.
    pub fn new(n: usize, steps: Option<usize>, a_bar: Vec<T>, b_bar: Vec<T>, c: Vec<T>) -> Result<Self> {
        let rows = steps.unwrap_or(1);
        if n == 0 || [a_bar.len(), b_bar.len(), c.len()].iter().any(|&l| l != rows * n) {
            return Err(Error::shape(format!(
                "discrete system n={n}, rows={rows}: got Ā {}, B̄ {}, C {}",
                a_bar.len(),
                b_bar.len(),
                c.len()
            )));
        }
        Ok(DiscreteSystem {
            n,
            steps,
            a_bar,
            b_bar,
            c,
        })
    }

    /// Scalar time-invariant system `(Ā, B̄, C)`.
    pub fn scalar(a_bar: T, b_bar: T, c: T) -> Self {
        DiscreteSystem {
            n: 1,
            steps: None,
            a_bar: vec![a_bar],
            b_bar: vec![b_bar],
            c: vec![c],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> Option<usize> {
        self.steps
    }

    pub fn is_time_invariant(&self) -> bool {
        self.steps.is_none()
    }

    #[inline]
    fn row(&self, t: usize) -> std::ops::Range<usize> {
        let r = if self.steps.is_some() { t } else { 0 };
        r * self.n..(r + 1) * self.n
    }

    pub fn a_bar(&self, t: usize) -> &[T] {
        &self.a_bar[self.row(t)]
    }

    pub fn b_bar(&self, t: usize) -> &[T] {
        &self.b_bar[self.row(t)]
    }

    pub fn c(&self, t: usize) -> &[T] {
        &self.c[self.row(t)]
    }

    /// Largest `|Ā|` over all steps and state entries.
    pub fn spectral_radius(&self) -> f64 {
        self.a_bar.iter().map(|v| v.f64().abs()).fold(0.0, f64::max)
    }

    pub fn with_zero_readout(mut self) -> Self {
        self.c.iter_mut().for_each(|v| *v = T::zero());
        self
    }

    fn check_len(&self, len: usize) -> Result<()> {
        match self.steps {
            Some(s) if s != len => Err(Error::shape(format!(
                "sequence of {len} tokens for a system with {s} steps"
            ))),
            _ => Ok(()),
        }
    }

    pub fn scan(&self, x: &[T]) -> Result<ScanResult<T>> {
        self.run(x, false)
    }

    /// [`scan`](Self::scan) keeping every hidden state.
    pub fn scan_with_states(&self, x: &[T]) -> Result<ScanResult<T>> {
        self.run(x, true)
    }

    fn run(&self, x: &[T], keep: bool) -> Result<ScanResult<T>> {
        self.check_len(x.len())?;
        let mut h = vec![T::zero(); self.n];
        let mut y = Vec::with_capacity(x.len());
        let mut states = keep.then(|| Vec::with_capacity(x.len() * self.n));
        for (t, &xt) in x.iter().enumerate() {
            let (a, b, c) = (self.a_bar(t), self.b_bar(t), self.c(t));
            let mut acc = T::zero();
            for j in 0..self.n {
                h[j] = a[j] * h[j] + b[j] * xt;
                acc = acc + c[j] * h[j];
            }
            y.push(acc);
            if let Some(s) = states.as_mut() {
                s.extend_from_slice(&h);
            }
        }
        Ok(ScanResult {
            y,
            final_state: h,
            states,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult<T> {
    pub y: Vec<T>,
    pub final_state: Vec<T>,
    /// `len × n` hidden states when requested.
    pub states: Option<Vec<T>>,
}

/// `K_m = Σ_j C_j Ā_j^m B̄_j` for `m < len`. Time-invariant systems only.
pub fn conv_kernel<T: Real>(sys: &DiscreteSystem<T>, len: usize) -> Result<Vec<T>> {
    if !sys.is_time_invariant() {
        return Err(Error::UnsupportedMode(
            "the convolution form needs a time-invariant system".into(),
        ));
    }
    let (a, b, c) = (sys.a_bar(0), sys.b_bar(0), sys.c(0));
    let mut power: Vec<T> = b.to_vec();
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(c.iter().zip(&power).map(|(&ci, &p)| ci * p).sum());
        for (p, &aj) in power.iter_mut().zip(a) {
            *p = *p * aj;
        }
    }
    Ok(k)
}

/// Causal convolution `y_t = Σ_{m<=t} K_m x_{t−m}`.
pub fn apply_kernel<T: Real>(x: &[T], k: &[T]) -> Vec<T> {
    (0..x.len())
        .map(|t| {
            (0..k.len().min(t + 1))
                .map(|m| k[m] * x[t - m])
                .sum()
        })
        .collect()
}

/// `scan(fwd, x) + reverse(scan(bwd, reverse(x)))`.
pub fn bidirectional_scan<T: Real>(
    fwd: &DiscreteSystem<T>,
    bwd: &DiscreteSystem<T>,
    x: &[T],
) -> Result<Vec<T>> {
    let forward = fwd.scan(x)?.y;
    let reversed: Vec<T> = x.iter().rev().copied().collect();
    let backward = bwd.scan(&reversed)?.y;
    Ok(forward
        .iter()
        .zip(backward.iter().rev())
        .map(|(&f, &b)| f + b)
        .collect())
}
