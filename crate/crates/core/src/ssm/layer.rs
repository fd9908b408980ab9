//! Selective state-space layer over `C`-dimensional token sequences.
//!
//! Each channel `c` is an independent lane with its own diagonal `A_c`
//! (`n` entries). The step size, input and readout vectors are projected
//! from the whole token:
//!
//! ```text
//! Δ_t[c] = softplus(W_Δ x_t + b_Δ)[c]
//! B_t    = W_B x_t + b_B           (n values, shared by all lanes)
//! C_t    = W_C x_t + b_C           (n values, shared by all lanes)
//! h_t[c] = Ā_t[c] ⊙ h_{t-1}[c] + B̄_t[c] x_t[c]
//! y_t[c] = C_t · h_t[c] + D[c] x_t[c] + bias[c]
//! ```

use super::{discretize_entry, Discretization, SelectiveSystem};
use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::{init_params, Prng, Real, TokenSeq};

/// `ln(1 + e^z)`, overflow-safe.
#[inline]
pub fn softplus<T: Real>(z: T) -> T {
    if z > T::of(20.0) {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveSsm<T> {
    channels: usize,
    state_dim: usize,
    /// `C × n`, strictly negative.
    pub a: Vec<T>,
    /// `C × C`.
    pub w_delta: Vec<T>,
    pub b_delta: Vec<T>,
    /// `n × C`.
    pub w_b: Vec<T>,
    pub b_b: Vec<T>,
    /// `n × C`.
    pub w_c: Vec<T>,
    pub b_c: Vec<T>,
    pub d_skip: Vec<T>,
    pub out_bias: Vec<T>,
    pub discretization: Discretization,
}

/// Per-step quantities shared by forward and backward.
struct Projections<T> {
    /// `len × C` pre-activation of Δ.
    z: Vec<T>,
    /// `len × C`.
    delta: Vec<T>,
    /// `len × n`.
    b: Vec<T>,
    /// `len × n`.
    c: Vec<T>,
}

impl<T: Real> SelectiveSsm<T> {
    /// All projections zero, `a_{c,j} = −(j+1)`, `Δ = 0.1`, `D = 0`, bias zero.
    /// Outputs are identically zero.
    pub fn zeroed(channels: usize, state_dim: usize, discretization: Discretization) -> Self {
        let inv_softplus = T::of((0.1f64.exp() - 1.0).ln());
        SelectiveSsm {
            channels,
            state_dim,
            a: (0..channels)
                .flat_map(|_| (0..state_dim).map(|j| -T::of((j + 1) as f64)))
                .collect(),
            w_delta: vec![T::zero(); channels * channels],
            b_delta: vec![inv_softplus; channels],
            w_b: vec![T::zero(); state_dim * channels],
            b_b: vec![T::zero(); state_dim],
            w_c: vec![T::zero(); state_dim * channels],
            b_c: vec![T::zero(); state_dim],
            d_skip: vec![T::zero(); channels],
            out_bias: vec![T::zero(); channels],
            discretization,
        }
    }

    /// Emits `value` for every token and channel regardless of input.
    pub fn constant(channels: usize, state_dim: usize, value: T, discretization: Discretization) -> Self {
        let mut s = Self::zeroed(channels, state_dim, discretization);
        s.out_bias = vec![value; channels];
        s
    }

    /// Seeded init: uniform `±1/sqrt(C)` projections, log-uniform `Δ` in
    /// `[0.001, 0.1]` at zero input, `a_{c,j} = −(j+1)`, `D = 1`.
    pub fn random(channels: usize, state_dim: usize, discretization: Discretization, prng: &mut Prng) -> Self {
        let mut s = Self::zeroed(channels, state_dim, discretization);
        let scale = 1.0 / (channels as f64).sqrt();
        s.w_delta = init_params(prng, channels * channels, scale);
        s.b_delta = (0..channels)
            .map(|_| {
                let d = prng.uniform(0.001f64.ln(), 0.1f64.ln()).exp();
                T::of(d.exp_m1().ln())
            })
            .collect();
        s.w_b = init_params(prng, state_dim * channels, scale);
        s.b_b = init_params(prng, state_dim, scale);
        s.w_c = init_params(prng, state_dim * channels, scale);
        s.b_c = init_params(prng, state_dim, scale);
        s.d_skip = vec![T::one(); channels];
        s
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn check_input(&self, x: &TokenSeq<T>) -> Result<()> {
        if x.dim() != self.channels {
            return Err(Error::shape(format!(
                "SSM layer expects {}-dim tokens, got {}",
                self.channels,
                x.dim()
            )));
        }
        if let Some((c, j)) = (0..self.channels)
            .flat_map(|c| (0..self.state_dim).map(move |j| (c, j)))
            .find(|&(c, j)| !(self.a[c * self.state_dim + j] < T::zero()))
        {
            return Err(Error::Instability(format!(
                "a[{c},{j}] = {} must be strictly negative",
                self.a[c * self.state_dim + j]
            )));
        }
        Ok(())
    }

    fn project(&self, x: &TokenSeq<T>) -> Projections<T> {
        let (cd, n, len) = (self.channels, self.state_dim, x.len());
        let mut p = Projections {
            z: Vec::with_capacity(len * cd),
            delta: Vec::with_capacity(len * cd),
            b: Vec::with_capacity(len * n),
            c: Vec::with_capacity(len * n),
        };
        let affine = |w: &[T], bias: T, xt: &[T]| -> T {
            w.iter().zip(xt).fold(bias, |acc, (&wi, &xi)| acc + wi * xi)
        };
        for t in 0..len {
            let xt = x.token(t);
            for c in 0..cd {
                let z = affine(&self.w_delta[c * cd..(c + 1) * cd], self.b_delta[c], xt);
                p.z.push(z);
                p.delta.push(softplus(z));
            }
            for j in 0..n {
                p.b.push(affine(&self.w_b[j * cd..(j + 1) * cd], self.b_b[j], xt));
                p.c.push(affine(&self.w_c[j * cd..(j + 1) * cd], self.b_c[j], xt));
            }
        }
        p
    }

    pub fn forward(&self, x: &TokenSeq<T>) -> Result<TokenSeq<T>> {
        self.check_input(x)?;
        let (cd, n) = (self.channels, self.state_dim);
        let p = self.project(x);
        let mut h = vec![T::zero(); cd * n];
        let mut y = TokenSeq::zeros(x.len(), cd);
        for t in 0..x.len() {
            let xt = x.token(t);
            let (bt, ct) = (&p.b[t * n..(t + 1) * n], &p.c[t * n..(t + 1) * n]);
            let yt = y.token_mut(t);
            for c in 0..cd {
                let delta = p.delta[t * cd + c];
                let mut acc = self.d_skip[c] * xt[c] + self.out_bias[c];
                for j in 0..n {
                    let (ab, bb) = discretize_entry(self.a[c * n + j], delta, bt[j], self.discretization);
                    let hj = &mut h[c * n + j];
                    *hj = ab * *hj + bb * xt[c];
                    acc = acc + ct[j] * *hj;
                }
                yt[c] = acc;
            }
        }
        Ok(y)
    }

    /// Runs the layer on `x` and on the reversed `x` through `backward_branch`,
    /// summing the second result re-reversed.
    pub fn bidirectional(&self, backward_branch: &Self, x: &TokenSeq<T>) -> Result<TokenSeq<T>> {
        let fwd = self.forward(x)?;
        let bwd = backward_branch.forward(&x.reversed())?.reversed();
        fwd.add(&bwd)
    }

    /// The scalar systems each channel lane runs on input `x` (without the
    /// skip and bias terms).
    pub fn lane_systems(&self, x: &TokenSeq<T>) -> Result<Vec<SelectiveSystem<T>>> {
        self.check_input(x)?;
        let (cd, n) = (self.channels, self.state_dim);
        let p = self.project(x);
        (0..cd)
            .map(|c| {
                SelectiveSystem::new(
                    self.a[c * n..(c + 1) * n].to_vec(),
                    (0..x.len()).map(|t| p.delta[t * cd + c]).collect(),
                    p.b.clone(),
                    p.c.clone(),
                    self.discretization,
                )
            })
            .collect()
    }

    /// Reverse-mode gradients for upstream `dy`: parameter gradients (same
    /// layout as `self`) and the input gradient.
    pub fn backward(&self, x: &TokenSeq<T>, dy: &TokenSeq<T>) -> Result<(Self, TokenSeq<T>)> {
        self.check_input(x)?;
        if dy.dim() != self.channels || dy.len() != x.len() {
            return Err(Error::shape("upstream gradient does not match the input"));
        }
        let (cd, n, len) = (self.channels, self.state_dim, x.len());
        let p = self.project(x);

        // Forward pass again, keeping every state and the discretized factors.
        let mut a_bar = vec![T::zero(); len * cd * n];
        let mut b_bar = vec![T::zero(); len * cd * n];
        let mut states = vec![T::zero(); (len + 1) * cd * n];
        for t in 0..len {
            let xt = x.token(t);
            for c in 0..cd {
                let delta = p.delta[t * cd + c];
                for j in 0..n {
                    let k = c * n + j;
                    let (ab, bb) = discretize_entry(self.a[k], delta, p.b[t * n + j], self.discretization);
                    a_bar[t * cd * n + k] = ab;
                    b_bar[t * cd * n + k] = bb;
                    states[(t + 1) * cd * n + k] = ab * states[t * cd * n + k] + bb * xt[c];
                }
            }
        }

        let mut g = crate::params::zeros_like(self);
        let mut dx = TokenSeq::zeros(len, cd);
        let mut d_delta = vec![T::zero(); len * cd];
        let mut d_b = vec![T::zero(); len * n];
        let mut d_c = vec![T::zero(); len * n];
        // Running dL/dh_t per lane, carried backwards in time.
        let mut dh = vec![T::zero(); cd * n];

        for t in (0..len).rev() {
            let xt = x.token(t);
            let dyt = dy.token(t);
            for c in 0..cd {
                g.d_skip[c] = g.d_skip[c] + dyt[c] * xt[c];
                g.out_bias[c] = g.out_bias[c] + dyt[c];
                dx.token_mut(t)[c] = dx.token(t)[c] + dyt[c] * self.d_skip[c];
                let delta = p.delta[t * cd + c];
                for j in 0..n {
                    let k = c * n + j;
                    let h_t = states[(t + 1) * cd * n + k];
                    let h_prev = states[t * cd * n + k];
                    let ab = a_bar[t * cd * n + k];
                    let bb = b_bar[t * cd * n + k];
                    let a = self.a[k];
                    let bt = p.b[t * n + j];

                    d_c[t * n + j] = d_c[t * n + j] + dyt[c] * h_t;
                    let gh = dh[k] + dyt[c] * p.c[t * n + j];

                    let mut d_ab = gh * h_prev;
                    let d_bb = gh * xt[c];
                    dx.token_mut(t)[c] = dx.token(t)[c] + gh * bb;

                    match self.discretization {
                        Discretization::Zoh => {
                            // B̄ = (Ā − 1)/a · B
                            d_b[t * n + j] = d_b[t * n + j] + d_bb * (ab - T::one()) / a;
                            d_ab = d_ab + d_bb * bt / a;
                            g.a[k] = g.a[k] - d_bb * (ab - T::one()) * bt / (a * a);
                        }
                        Discretization::EulerB => {
                            d_b[t * n + j] = d_b[t * n + j] + d_bb * delta;
                            d_delta[t * cd + c] = d_delta[t * cd + c] + d_bb * bt;
                        }
                    }
                    // Ā = exp(Δ a)
                    d_delta[t * cd + c] = d_delta[t * cd + c] + d_ab * ab * a;
                    g.a[k] = g.a[k] + d_ab * ab * delta;

                    dh[k] = gh * ab;
                }
            }
        }

        for t in 0..len {
            let xt = x.token(t);
            for c in 0..cd {
                let dz = d_delta[t * cd + c] * sigmoid(p.z[t * cd + c]);
                g.b_delta[c] = g.b_delta[c] + dz;
                for k in 0..cd {
                    g.w_delta[c * cd + k] = g.w_delta[c * cd + k] + dz * xt[k];
                    dx.token_mut(t)[k] = dx.token(t)[k] + self.w_delta[c * cd + k] * dz;
                }
            }
            for j in 0..n {
                let (db, dc) = (d_b[t * n + j], d_c[t * n + j]);
                g.b_b[j] = g.b_b[j] + db;
                g.b_c[j] = g.b_c[j] + dc;
                for k in 0..cd {
                    g.w_b[j * cd + k] = g.w_b[j * cd + k] + db * xt[k];
                    g.w_c[j * cd + k] = g.w_c[j * cd + k] + dc * xt[k];
                    dx.token_mut(t)[k] =
                        dx.token(t)[k] + self.w_b[j * cd + k] * db + self.w_c[j * cd + k] * dc;
                }
            }
        }
        Ok((g, dx))
    }
}

impl<T: Real> Parameters<T> for SelectiveSsm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(&join(prefix, "a"), &self.a);
        f(&join(prefix, "w_delta"), &self.w_delta);
        f(&join(prefix, "b_delta"), &self.b_delta);
        f(&join(prefix, "w_b"), &self.w_b);
        f(&join(prefix, "b_b"), &self.b_b);
        f(&join(prefix, "w_c"), &self.w_c);
        f(&join(prefix, "b_c"), &self.b_c);
        f(&join(prefix, "d_skip"), &self.d_skip);
        f(&join(prefix, "out_bias"), &self.out_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&join(prefix, "a"), &mut self.a);
        f(&join(prefix, "w_delta"), &mut self.w_delta);
        f(&join(prefix, "b_delta"), &mut self.b_delta);
        f(&join(prefix, "w_b"), &mut self.w_b);
        f(&join(prefix, "b_b"), &mut self.b_b);
        f(&join(prefix, "w_c"), &mut self.w_c);
        f(&join(prefix, "b_c"), &mut self.b_c);
        f(&join(prefix, "d_skip"), &mut self.d_skip);
        f(&join(prefix, "out_bias"), &mut self.out_bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tokens(len: usize, dim: usize, seed: u64) -> TokenSeq<f64> {
        TokenSeq::new(dim, init_params(&mut Prng::new(seed), len * dim, 1.0)).unwrap()
    }

    #[test]
    fn constant_layer_ignores_input() {
        let layer = SelectiveSsm::<f64>::constant(3, 4, 1.0, Discretization::Zoh);
        let y = layer.forward(&random_tokens(10, 3, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forward_matches_lane_scans() {
        let mut rng = Prng::new(17);
        for mode in [Discretization::Zoh, Discretization::EulerB] {
            let layer = SelectiveSsm::<f64>::random(3, 4, mode, &mut rng);
            let x = random_tokens(25, 3, 2);
            let y = layer.forward(&x).unwrap();
            for (c, sys) in layer.lane_systems(&x).unwrap().iter().enumerate() {
                let xc = x.channel(c);
                let lane = sys.discretize().unwrap().scan(&xc).unwrap().y;
                for t in 0..25 {
                    let want = lane[t] + layer.d_skip[c] * xc[t] + layer.out_bias[c];
                    assert!((y.token(t)[c] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_token_dim() {
        let layer = SelectiveSsm::<f32>::zeroed(3, 2, Discretization::Zoh);
        assert!(matches!(layer.forward(&TokenSeq::zeros(4, 2)), Err(Error::Shape(_))));
    }
}
