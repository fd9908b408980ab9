//! Small shape-preserving layers on feature maps, each with a hand-written
//! backward pass. "Pointwise" layers act per spatial position across channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::{depthwise_conv, init_params, DwKernel, FeatureMap, Prng, Real};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Silu => z / (T::one() + (-z).exp()),
        }
    }

    #[inline]
    pub fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Silu => {
                let s = T::one() / (T::one() + (-z).exp());
                s * (T::one() + z * (T::one() - s))
            }
        }
    }

    pub fn map<T: Real>(self, x: &FeatureMap<T>) -> FeatureMap<T> {
        x.map(|v| self.apply(v))
    }

    /// `dy ⊙ act'(z)` where `z` is the pre-activation.
    pub fn backward<T: Real>(self, z: &FeatureMap<T>, dy: &FeatureMap<T>) -> FeatureMap<T> {
        z.zip_with(dy, |z, d| d * self.derivative(z))
            .expect("activation backward shapes")
    }
}

/// `act(W x + b)` at every position, `W` is `C_out × C_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> Pointwise<T> {
    pub fn identity(channels: usize) -> Self {
        let mut weight = vec![T::zero(); channels * channels];
        for c in 0..channels {
            weight[c * channels + c] = T::one();
        }
        Pointwise {
            in_channels: channels,
            out_channels: channels,
            weight,
            bias: vec![T::zero(); channels],
            activation: Activation::Identity,
        }
    }

    pub fn zeros(channels: usize, activation: Activation) -> Self {
        Pointwise {
            in_channels: channels,
            out_channels: channels,
            weight: vec![T::zero(); channels * channels],
            bias: vec![T::zero(); channels],
            activation,
        }
    }

    /// Uniform `±1/sqrt(C_in)` weights and bias.
    pub fn random(channels: usize, activation: Activation, prng: &mut Prng) -> Self {
        let scale = 1.0 / (channels as f64).sqrt();
        Pointwise {
            in_channels: channels,
            out_channels: channels,
            weight: init_params(prng, channels * channels, scale),
            bias: init_params(prng, channels, scale),
            activation,
        }
    }

    fn check(&self, x: &FeatureMap<T>) -> Result<()> {
        if x.shape().channels != self.in_channels {
            return Err(Error::shape(format!(
                "pointwise layer expects {} channels, got {}",
                self.in_channels,
                x.shape().channels
            )));
        }
        Ok(())
    }

    /// The affine part only.
    pub fn pre_activation(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.check(x)?;
        let s = x.shape();
        let out_shape = crate::tensor::Shape {
            channels: self.out_channels,
            ..s
        };
        let mut out = FeatureMap::zeros(out_shape);
        let plane = s.plane();
        for b in 0..s.batch {
            for o in 0..self.out_channels {
                let w = &self.weight[o * self.in_channels..(o + 1) * self.in_channels];
                let bias = self.bias[o];
                let mut acc = vec![bias; plane];
                for (i, &wi) in w.iter().enumerate() {
                    for (a, &v) in acc.iter_mut().zip(x.plane(b, i)) {
                        *a = *a + wi * v;
                    }
                }
                out.plane_mut(b, o).copy_from_slice(&acc);
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        Ok(self.activation.map(&self.pre_activation(x)?))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &FeatureMap<T>, dy: &FeatureMap<T>, grad: &mut Self) -> Result<FeatureMap<T>> {
        let z = self.pre_activation(x)?;
        let dz = self.activation.backward(&z, dy);
        let s = x.shape();
        let mut dx = FeatureMap::zeros(s);
        for b in 0..s.batch {
            for o in 0..self.out_channels {
                let dzp = dz.plane(b, o);
                grad.bias[o] = grad.bias[o] + dzp.iter().copied().sum();
                for i in 0..self.in_channels {
                    let xi = x.plane(b, i);
                    let gw: T = dzp.iter().zip(xi).map(|(&d, &v)| d * v).sum();
                    grad.weight[o * self.in_channels + i] = grad.weight[o * self.in_channels + i] + gw;
                    let w = self.weight[o * self.in_channels + i];
                    for (d, &g) in dx.plane_mut(b, i).iter_mut().zip(dzp) {
                        *d = *d + w * g;
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for Pointwise<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Depthwise convolution plus per-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DwConvLayer<T> {
    pub kernel: DwKernel<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DwConvLayer<T> {
    pub fn identity(channels: usize, size: usize) -> Result<Self> {
        Ok(DwConvLayer {
            kernel: DwKernel::identity(channels, size)?,
            bias: vec![T::zero(); channels],
        })
    }

    pub fn random(channels: usize, size: usize, prng: &mut Prng) -> Result<Self> {
        let kernel = DwKernel::random(channels, size, prng)?;
        let bias = init_params(prng, channels, 1.0 / size as f64);
        Ok(DwConvLayer { kernel, bias })
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let mut y = depthwise_conv(x, &self.kernel)?;
        let s = y.shape();
        for b in 0..s.batch {
            for c in 0..s.channels {
                let bias = self.bias[c];
                y.plane_mut(b, c).iter_mut().for_each(|v| *v = *v + bias);
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &FeatureMap<T>, dy: &FeatureMap<T>, grad: &mut Self) -> Result<FeatureMap<T>> {
        let s = x.shape();
        dy.expect_shape(s)?;
        let (h, w, k) = (s.height, s.width, self.kernel.size());
        let pad = (k / 2) as isize;
        let mut dx = FeatureMap::zeros(s);
        for b in 0..s.batch {
            for c in 0..s.channels {
                let src = x.plane(b, c);
                let g = dy.plane(b, c);
                grad.bias[c] = grad.bias[c] + g.iter().copied().sum();
                let taps = self.kernel.channel(c).to_vec();
                let kn = k * k;
                let dtaps = &mut grad.kernel.weights_mut()[c * kn..(c + 1) * kn];
                let dsrc = dx.plane_mut(b, c);
                for y in 0..h {
                    for xx in 0..w {
                        let gy = g[y * w + xx];
                        for ky in 0..k {
                            let sy = y as isize + ky as isize - pad;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let sx = xx as isize + kx as isize - pad;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let si = sy as usize * w + sx as usize;
                                dtaps[ky * k + kx] = dtaps[ky * k + kx] + gy * src[si];
                                dsrc[si] = dsrc[si] + gy * taps[ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for DwConvLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(&join(prefix, "weight"), self.kernel.weights());
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&join(prefix, "weight"), self.kernel.weights_mut());
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Normalizes across channels at each spatial position, then `gain·n + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(channels: usize) -> Self {
        LayerNorm {
            gain: vec![T::one(); channels],
            bias: vec![T::zero(); channels],
        }
    }

    pub fn random(channels: usize, prng: &mut Prng) -> Self {
        LayerNorm {
            gain: (0..channels).map(|_| T::of(prng.uniform(0.5, 1.5))).collect(),
            bias: init_params(prng, channels, 0.5),
        }
    }

    /// Per-position `(mean, 1/σ)`.
    fn stats(x: &FeatureMap<T>, b: usize) -> (Vec<T>, Vec<T>) {
        let s = x.shape();
        let n = T::of(s.channels as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut mean = vec![T::zero(); s.plane()];
        for c in 0..s.channels {
            for (m, &v) in mean.iter_mut().zip(x.plane(b, c)) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![T::zero(); s.plane()];
        for c in 0..s.channels {
            for ((v, &xv), &m) in var.iter_mut().zip(x.plane(b, c)).zip(&mean) {
                *v = *v + (xv - m) * (xv - m);
            }
        }
        let inv_std = var.iter().map(|&v| T::one() / (v / n + eps).sqrt()).collect();
        (mean, inv_std)
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let s = x.shape();
        if self.gain.len() != s.channels {
            return Err(Error::shape(format!(
                "layer norm over {} channels, input has {}",
                self.gain.len(),
                s.channels
            )));
        }
        let mut y = FeatureMap::zeros(s);
        for b in 0..s.batch {
            let (mean, inv_std) = Self::stats(x, b);
            for c in 0..s.channels {
                let (g, bias) = (self.gain[c], self.bias[c]);
                let src = x.plane(b, c).to_vec();
                for (i, o) in y.plane_mut(b, c).iter_mut().enumerate() {
                    *o = g * (src[i] - mean[i]) * inv_std[i] + bias;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &FeatureMap<T>, dy: &FeatureMap<T>, grad: &mut Self) -> Result<FeatureMap<T>> {
        let s = x.shape();
        dy.expect_shape(s)?;
        let n = T::of(s.channels as f64);
        let mut dx = FeatureMap::zeros(s);
        for b in 0..s.batch {
            let (mean, inv_std) = Self::stats(x, b);
            let plane = s.plane();
            // mean over channels of dn and dn·n̂, per position
            let mut m1 = vec![T::zero(); plane];
            let mut m2 = vec![T::zero(); plane];
            for c in 0..s.channels {
                let (xs, gs) = (x.plane(b, c), dy.plane(b, c));
                for i in 0..plane {
                    let nh = (xs[i] - mean[i]) * inv_std[i];
                    grad.gain[c] = grad.gain[c] + gs[i] * nh;
                    grad.bias[c] = grad.bias[c] + gs[i];
                    let dn = gs[i] * self.gain[c];
                    m1[i] = m1[i] + dn;
                    m2[i] = m2[i] + dn * nh;
                }
            }
            for c in 0..s.channels {
                let xs = x.plane(b, c).to_vec();
                let gs = dy.plane(b, c).to_vec();
                let g = self.gain[c];
                for (i, d) in dx.plane_mut(b, c).iter_mut().enumerate() {
                    let nh = (xs[i] - mean[i]) * inv_std[i];
                    let dn = gs[i] * g;
                    *d = inv_std[i] * (dn - m1[i] / n - nh * m2[i] / n);
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{collect, get, set, zeros_like};
    use crate::tensor::Shape;

    /// Central-difference check of `backward` for `L = Σ r ⊙ layer(x)`.
    fn fd_check<P>(
        layer: &P,
        x: &FeatureMap<f64>,
        fwd: impl Fn(&P, &FeatureMap<f64>) -> FeatureMap<f64>,
        bwd: impl Fn(&P, &FeatureMap<f64>, &FeatureMap<f64>, &mut P) -> FeatureMap<f64>,
    ) where
        P: Parameters<f64> + Clone,
    {
        let h = 1e-6;
        let y = fwd(layer, x);
        let r = FeatureMap::random(y.shape(), &mut Prng::new(99), 1.0);
        let loss = |p: &P, x: &FeatureMap<f64>| -> f64 {
            fwd(p, x).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let mut g = zeros_like(layer);
        let dx = bwd(layer, x, &r, &mut g);
        for (path, values) in collect(&g) {
            for (i, &a) in values.iter().enumerate() {
                let v = get(layer, &path, i).unwrap();
                let mut p = layer.clone();
                set(&mut p, &path, i, v + h);
                let up = loss(&p, x);
                set(&mut p, &path, i, v - h);
                let down = loss(&p, x);
                let fd = (up - down) / (2.0 * h);
                assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1.0), "{path}[{i}]: {a} vs {fd}");
            }
        }
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let up = loss(layer, &xp);
            xp.data_mut()[i] -= 2.0 * h;
            let down = loss(layer, &xp);
            let fd = (up - down) / (2.0 * h);
            let a = dx.data()[i];
            assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1.0), "x[{i}]: {a} vs {fd}");
        }
    }

    fn input(seed: u64) -> FeatureMap<f64> {
        FeatureMap::random(Shape::new(2, 3, 4, 5), &mut Prng::new(seed), 1.0)
    }

    #[test]
    fn pointwise_gradients() {
        for act in [Activation::Identity, Activation::Silu] {
            let layer = Pointwise::random(3, act, &mut Prng::new(1));
            fd_check(&layer, &input(2), |l, x| l.forward(x).unwrap(), |l, x, d, g| l.backward(x, d, g).unwrap());
        }
    }

    #[test]
    fn dwconv_gradients() {
        let layer = DwConvLayer::random(3, 3, &mut Prng::new(3)).unwrap();
        fd_check(&layer, &input(4), |l, x| l.forward(x).unwrap(), |l, x, d, g| l.backward(x, d, g).unwrap());
    }

    #[test]
    fn layer_norm_gradients() {
        let layer = LayerNorm::random(3, &mut Prng::new(5));
        fd_check(&layer, &input(6), |l, x| l.forward(x).unwrap(), |l, x, d, g| l.backward(x, d, g).unwrap());
    }

    #[test]
    fn layer_norm_normalizes() {
        let y = LayerNorm::<f64>::new(3).forward(&input(7)).unwrap();
        for i in 0..20 {
            let vals: Vec<f64> = (0..3).map(|c| y.plane(0, c)[i]).collect();
            let mean = vals.iter().sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pointwise() {
        let x = input(8);
        assert!(Pointwise::identity(3).forward(&x).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for z in [-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (Activation::Silu.apply(z + h) - Activation::Silu.apply(z - h)) / (2.0 * h);
            assert!((fd - Activation::Silu.derivative(z)).abs() < 1e-8);
        }
    }
}
