//! Per-channel 2D FFT split into amplitude and phase, and the way back.
//!
//! Forward transforms are unnormalized; the inverse divides by `H·W`.

use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Real};

/// Amplitude `|F(u, v)| >= 0` and quadrant-correct phase in `(-π, π]`, per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPair<T> {
    pub amplitude: FeatureMap<T>,
    pub phase: FeatureMap<T>,
}

/// Output of [`ifft2_recompose_with_residual`].
#[derive(Debug, Clone)]
pub struct Recomposed<T> {
    pub image: FeatureMap<T>,
    /// Largest `|imag|` discarded when taking the real part. Non-zero only
    /// when the edited spectrum lost conjugate symmetry.
    pub max_imag: f64,
}

struct Plan2d<T: Real> {
    rows: Arc<dyn Fft<T>>,
    cols: Arc<dyn Fft<T>>,
    height: usize,
    width: usize,
}

impl<T: Real> Plan2d<T> {
    fn new(height: usize, width: usize, direction: FftDirection) -> Self {
        let mut planner = FftPlanner::new();
        Plan2d {
            rows: planner.plan_fft(width, direction),
            cols: planner.plan_fft(height, direction),
            height,
            width,
        }
    }

    /// In-place transform of one row-major `H×W` plane.
    fn run(&self, plane: &mut [Complex<T>], column: &mut [Complex<T>]) {
        let (h, w) = (self.height, self.width);
        self.rows.process(plane);
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            self.cols.process(column);
            for y in 0..h {
                plane[y * w + x] = column[y];
            }
        }
    }
}

/// Unnormalized 2D DFT of every `(batch, channel)` plane.
pub fn fft2<T: Real>(x: &FeatureMap<T>) -> Vec<Vec<Complex<T>>> {
    let s = x.shape();
    let plan = Plan2d::new(s.height, s.width, FftDirection::Forward);
    let mut column = vec![Complex::default(); s.height];
    let mut planes = Vec::with_capacity(s.batch * s.channels);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let mut buf: Vec<Complex<T>> =
                x.plane(b, c).iter().map(|&v| Complex::new(v, T::zero())).collect();
            plan.run(&mut buf, &mut column);
            planes.push(buf);
        }
    }
    planes
}

pub fn fft2_decompose<T: Real>(x: &FeatureMap<T>) -> SpectralPair<T> {
    let s = x.shape();
    let pi = T::of(std::f64::consts::PI);
    let mut amplitude = FeatureMap::zeros(s);
    let mut phase = FeatureMap::zeros(s);
    for (i, spec) in fft2(x).into_iter().enumerate() {
        let (b, c) = (i / s.channels, i % s.channels);
        let amp = amplitude.plane_mut(b, c);
        for (a, z) in amp.iter_mut().zip(&spec) {
            *a = z.norm();
        }
        let ph = phase.plane_mut(b, c);
        for (p, z) in ph.iter_mut().zip(&spec) {
            let angle = z.im.atan2(z.re);
            *p = if angle <= -pi { pi } else { angle };
        }
    }
    SpectralPair { amplitude, phase }
}

pub fn ifft2_recompose<T: Real>(s: &SpectralPair<T>) -> Result<FeatureMap<T>> {
    Ok(ifft2_recompose_with_residual(s)?.image)
}

/// Rebuilds `amplitude · e^{i·phase}`, inverts, keeps the real part.
pub fn ifft2_recompose_with_residual<T: Real>(s: &SpectralPair<T>) -> Result<Recomposed<T>> {
    let shape = s.amplitude.shape();
    if s.phase.shape() != shape {
        return Err(Error::shape(format!(
            "amplitude {shape} and phase {} differ",
            s.phase.shape()
        )));
    }
    let plan = Plan2d::new(shape.height, shape.width, FftDirection::Inverse);
    let norm = T::one() / T::of(shape.plane() as f64);
    let mut column = vec![Complex::default(); shape.height];
    let mut image = FeatureMap::zeros(shape);
    let mut max_imag = 0.0f64;
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            let mut buf: Vec<Complex<T>> = s
                .amplitude
                .plane(b, c)
                .iter()
                .zip(s.phase.plane(b, c))
                .map(|(&a, &p)| Complex::from_polar(a, p))
                .collect();
            plan.run(&mut buf, &mut column);
            for (dst, z) in image.plane_mut(b, c).iter_mut().zip(&buf) {
                *dst = z.re * norm;
                max_imag = max_imag.max((z.im * norm).abs().f64());
            }
        }
    }
    Ok(Recomposed { image, max_imag })
}
