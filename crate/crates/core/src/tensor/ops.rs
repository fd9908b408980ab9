use super::{FeatureMap, Prng, Real, Shape, TokenSeq};
use crate::error::{Error, Result};

/// Per-channel `k×k` weights for [`depthwise_conv`], `k` odd.
#[derive(Debug, Clone, PartialEq)]
pub struct DwKernel<T> {
    size: usize,
    channels: usize,
    weights: Vec<T>,
}

impl<T: Real> DwKernel<T> {
    pub fn new(channels: usize, size: usize, weights: Vec<T>) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        if weights.len() != channels * size * size {
            return Err(Error::InvalidKernel(format!(
                "{} weights for {channels} channels of {size}x{size}",
                weights.len()
            )));
        }
        Ok(DwKernel {
            size,
            channels,
            weights,
        })
    }

    /// Centre tap 1, all others 0.
    pub fn identity(channels: usize, size: usize) -> Result<Self> {
        let mut k = Self::new(channels, size, vec![T::zero(); channels * size * size])?;
        let centre = size / 2 * size + size / 2;
        for c in 0..channels {
            k.weights[c * size * size + centre] = T::one();
        }
        Ok(k)
    }

    /// Uniform init with scale `1/sqrt(k*k)` (fan-in of one depthwise tap window).
    pub fn random(channels: usize, size: usize, prng: &mut Prng) -> Result<Self> {
        let scale = 1.0 / (size as f64);
        Self::new(
            channels,
            size,
            super::init_params(prng, channels * size * size, scale),
        )
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.size * self.size;
        &self.weights[c * n..(c + 1) * n]
    }
}

/// Zero-padded per-channel cross-correlation; output has the input's shape.
pub fn depthwise_conv<T: Real>(x: &FeatureMap<T>, kernel: &DwKernel<T>) -> Result<FeatureMap<T>> {
    let shape = x.shape();
    if kernel.channels != shape.channels {
        return Err(Error::shape(format!(
            "kernel has {} channels, input {shape} has {}",
            kernel.channels, shape.channels
        )));
    }
    let (h, w, k) = (shape.height, shape.width, kernel.size);
    let pad = (k / 2) as isize;
    let mut out = FeatureMap::zeros(shape);
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            let src = x.plane(b, c);
            let taps = kernel.channel(c);
            let dst = out.plane_mut(b, c);
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let row = sy as usize * w;
                        for kx in 0..k {
                            let sx = xx as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            acc = acc + taps[ky * k + kx] * src[row + sx as usize];
                        }
                    }
                    dst[y * w + xx] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise mean of the inputs, then the spatial mean: shape `(B, C, 1, 1)`.
pub fn global_avg_pool<T: Real>(xs: &[&FeatureMap<T>]) -> Result<FeatureMap<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("global_avg_pool needs at least one input"))?;
    let shape = first.shape();
    for x in xs {
        x.expect_shape(shape)?;
    }
    let count = T::of(xs.len() as f64);
    let mut mean = FeatureMap::zeros(shape);
    for x in xs {
        for (m, &v) in mean.data_mut().iter_mut().zip(x.data()) {
            *m = *m + v;
        }
    }
    for m in mean.data_mut() {
        *m = *m / count;
    }
    let pooled_shape = shape.with_spatial(1, 1);
    let plane = T::of(shape.plane() as f64);
    let mut out = FeatureMap::zeros(pooled_shape);
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            let s: T = mean.plane(b, c).iter().copied().sum();
            out.set(b, c, 0, 0, s / plane);
        }
    }
    Ok(out)
}

/// Row-major spatial traversal: token `y*W + x` holds the `C` channel values at `(y, x)`.
/// One sequence per batch item.
pub fn flatten_spatial<T: Real>(x: &FeatureMap<T>) -> Vec<TokenSeq<T>> {
    let shape = x.shape();
    let n = shape.plane();
    (0..shape.batch)
        .map(|b| {
            let mut data = vec![T::zero(); n * shape.channels];
            for c in 0..shape.channels {
                for (t, &v) in x.plane(b, c).iter().enumerate() {
                    data[t * shape.channels + c] = v;
                }
            }
            TokenSeq::new(shape.channels, data).expect("dimension divides length")
        })
        .collect()
}

/// Inverse of [`flatten_spatial`].
pub fn unflatten_spatial<T: Real>(
    seqs: &[TokenSeq<T>],
    height: usize,
    width: usize,
) -> Result<FeatureMap<T>> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::shape("no sequences to unflatten"))?;
    let channels = first.dim();
    let shape = Shape::new(seqs.len(), channels, height, width);
    let mut out = FeatureMap::zeros(shape);
    for (b, seq) in seqs.iter().enumerate() {
        if seq.dim() != channels || seq.len() != height * width {
            return Err(Error::shape(format!(
                "sequence of {} tokens x {} cannot fill {height}x{width}x{channels}",
                seq.len(),
                seq.dim()
            )));
        }
        for c in 0..channels {
            let plane = out.plane_mut(b, c);
            for (t, p) in plane.iter_mut().enumerate() {
                *p = seq.token(t)[c];
            }
        }
    }
    Ok(out)
}
