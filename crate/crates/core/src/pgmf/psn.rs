use crate::error::Result;
use crate::nn::{Activation, DwConvLayer, LayerNorm, Pointwise};
use crate::params::{join, Parameters};
use crate::tensor::{FeatureMap, Prng, Real};

pub const DEFAULT_PSN_KERNEL: usize = 3;

/// Priority score network: three `dwconv → SiLU` stages, channel layer norm,
/// pointwise linear. Shape-preserving.
#[derive(Debug, Clone, PartialEq)]
pub struct Psn<T> {
    pub convs: [DwConvLayer<T>; 3],
    pub norm: LayerNorm<T>,
    pub linear: Pointwise<T>,
}

/// Intermediates kept by [`Psn::forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct PsnTrace<T> {
    /// Inputs to each conv stage (`x`, then the two SiLU outputs).
    stage_inputs: [FeatureMap<T>; 3],
    /// Pre-activations of the three stages.
    pre: [FeatureMap<T>; 3],
    normalized: FeatureMap<T>,
    pub output: FeatureMap<T>,
}

impl<T: Real> Psn<T> {
    pub fn random(channels: usize, kernel: usize, prng: &mut Prng) -> Result<Self> {
        let convs = [
            DwConvLayer::random(channels, kernel, prng)?,
            DwConvLayer::random(channels, kernel, prng)?,
            DwConvLayer::random(channels, kernel, prng)?,
        ];
        Ok(Psn {
            convs,
            norm: LayerNorm::random(channels, prng),
            linear: Pointwise::random(channels, Activation::Identity, prng),
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.convs[0].kernel.size()
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &FeatureMap<T>) -> Result<PsnTrace<T>> {
        let z1 = self.convs[0].forward(x)?;
        let a1 = Activation::Silu.map(&z1);
        let z2 = self.convs[1].forward(&a1)?;
        let a2 = Activation::Silu.map(&z2);
        let z3 = self.convs[2].forward(&a2)?;
        let a3 = Activation::Silu.map(&z3);
        let normalized = self.norm.forward(&a3)?;
        let output = self.linear.forward(&normalized)?;
        Ok(PsnTrace {
            stage_inputs: [x.clone(), a1, a2],
            pre: [z1, z2, z3],
            normalized,
            output,
        })
    }

    /// Accumulates into `grad`, returns `dL/dx`.
    pub fn backward(&self, trace: &PsnTrace<T>, dy: &FeatureMap<T>, grad: &mut Self) -> Result<FeatureMap<T>> {
        let d_norm = self.linear.backward(&trace.normalized, dy, &mut grad.linear)?;
        let a3 = Activation::Silu.map(&trace.pre[2]);
        let mut d = self.norm.backward(&a3, &d_norm, &mut grad.norm)?;
        for k in (0..3).rev() {
            let dz = Activation::Silu.backward(&trace.pre[k], &d);
            d = self.convs[k].backward(&trace.stage_inputs[k], &dz, &mut grad.convs[k])?;
        }
        Ok(d)
    }
}

impl<T: Real> Parameters<T> for Psn<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (k, conv) in self.convs.iter().enumerate() {
            conv.visit(&join(prefix, &format!("conv{}", k + 1)), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
        self.linear.visit(&join(prefix, "linear"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (k, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_mut(&join(prefix, &format!("conv{}", k + 1)), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.linear.visit_mut(&join(prefix, "linear"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{collect, get, set, zeros_like};
    use crate::tensor::Shape;

    #[test]
    fn shape_preserving() {
        let psn = Psn::<f64>::random(4, 3, &mut Prng::new(1)).unwrap();
        let x = FeatureMap::random(Shape::new(2, 4, 5, 6), &mut Prng::new(2), 1.0);
        assert_eq!(psn.forward(&x).unwrap().shape(), x.shape());
    }

    #[test]
    fn backward_matches_central_differences() {
        let psn = Psn::<f64>::random(3, 3, &mut Prng::new(3)).unwrap();
        let x = FeatureMap::random(Shape::new(1, 3, 4, 4), &mut Prng::new(4), 1.0);
        let ones = FeatureMap::full(x.shape(), 1.0);
        let loss = |p: &Psn<f64>, x: &FeatureMap<f64>| p.forward(x).unwrap().data().iter().sum::<f64>();
        let mut g = zeros_like(&psn);
        let dx = psn.backward(&psn.forward_trace(&x).unwrap(), &ones, &mut g).unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for (path, vals) in collect(&g) {
            for i in (0..vals.len()).step_by(5) {
                let v = get(&psn, &path, i).unwrap();
                let mut p = psn.clone();
                set(&mut p, &path, i, v + h);
                let up = loss(&p, &x);
                set(&mut p, &path, i, v - h);
                let fd = (up - loss(&p, &x)) / (2.0 * h);
                assert!(rel(vals[i], fd) < 1e-5 || (vals[i] - fd).abs() < 1e-9, "{path}[{i}] {} {fd}", vals[i]);
            }
        }
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let up = loss(&psn, &xp);
            xp.data_mut()[i] -= 2.0 * h;
            let fd = (up - loss(&psn, &xp)) / (2.0 * h);
            assert!((dx.data()[i] - fd).abs() < 1e-6);
        }
    }
}
