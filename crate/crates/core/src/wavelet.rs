//! Multi-level separable 2D discrete wavelet transform.
//!
//! Analysis is orthonormal with periodic wrap inside each (even-length) lane,
//! so synthesis is the exact transpose and band energies sum to the input
//! energy. Images whose sides are not multiples of `2^levels` are first
//! extended by half-sample symmetric padding; the pyramid remembers the
//! original size and [`idwt2`] crops back to it.
//!
//! Band naming, fixed by the `[[1, 2], [3, 4]]` example in the tests:
//! `hl` is high-pass along x (horizontal detail), `lh` is high-pass along y
//! (vertical detail), `hh` is high-pass along both.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, write_tensor_file, FeatureMap, Real, Shape};

/// Default decomposition depth.
pub const DEFAULT_LEVELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Haar,
    Sym2,
}

impl std::str::FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(Basis::Haar),
            "sym2" => Ok(Basis::Sym2),
            other => Err(Error::arg(format!("unknown wavelet basis {other:?}"))),
        }
    }
}

/// Analysis low-pass / high-pass pair. High-pass is the alternating flip of low-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Filters<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> Filters<T> {
    pub fn for_basis(basis: Basis) -> Self {
        let lo: Vec<f64> = match basis {
            Basis::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            Basis::Sym2 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * std::f64::consts::SQRT_2;
                vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
            }
        };
        Self::from_low_pass(&lo)
    }

    pub fn from_low_pass(lo: &[f64]) -> Self {
        let n = lo.len();
        let hi = (0..n)
            .map(|j| {
                let v = lo[n - 1 - j];
                if j % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect::<Vec<_>>();
        Filters {
            lo: lo.iter().map(|&v| T::of(v)).collect(),
            hi: hi.into_iter().map(T::of).collect(),
        }
    }

    /// Scales the first low-pass tap by 1.01, breaking orthonormality.
    /// Negative control for the reconstruction checks.
    pub fn corrupted(mut self) -> Self {
        self.lo[0] = self.lo[0] * T::of(1.01);
        self
    }

    pub fn low_pass(&self) -> &[T] {
        &self.lo
    }

    pub fn high_pass(&self) -> &[T] {
        &self.hi
    }
}

/// The three detail bands of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands<T> {
    pub hl: FeatureMap<T>,
    pub lh: FeatureMap<T>,
    pub hh: FeatureMap<T>,
}

impl<T: Real> DetailBands<T> {
    pub fn shape(&self) -> Shape {
        self.hl.shape()
    }

    pub fn map(&self, f: impl Fn(&FeatureMap<T>) -> FeatureMap<T>) -> Self {
        DetailBands {
            hl: f(&self.hl),
            lh: f(&self.lh),
            hh: f(&self.hh),
        }
    }

    fn energy(&self) -> f64 {
        [&self.hl, &self.lh, &self.hh]
            .iter()
            .flat_map(|b| b.data())
            .map(|v| v.f64() * v.f64())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid<T> {
    pub ll: FeatureMap<T>,
    /// Detail triples, deepest level first.
    pub details: Vec<DetailBands<T>>,
    pub basis: Basis,
    /// Spatial size before padding, restored by [`idwt2`].
    pub original_size: (usize, usize),
}

impl<T: Real> WaveletPyramid<T> {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Sum of squares over every band.
    pub fn energy(&self) -> f64 {
        self.ll.data().iter().map(|v| v.f64() * v.f64()).sum::<f64>()
            + self.details.iter().map(DetailBands::energy).sum::<f64>()
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .details
            .first()
            .ok_or_else(|| Error::shape("pyramid has no detail levels"))?;
        if first.shape() != self.ll.shape() {
            return Err(Error::shape(format!(
                "LL {} does not match deepest detail band {}",
                self.ll.shape(),
                first.shape()
            )));
        }
        let mut expect = self.ll.shape();
        for (i, d) in self.details.iter().enumerate() {
            for band in [&d.hl, &d.lh, &d.hh] {
                if band.shape() != expect {
                    return Err(Error::shape(format!(
                        "detail level {i} band {} expected {expect}",
                        band.shape()
                    )));
                }
            }
            expect = expect.with_spatial(expect.height * 2, expect.width * 2);
        }
        let (h, w) = self.original_size;
        if h > expect.height || w > expect.width || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "original size {h}x{w} does not fit reconstructed {}x{}",
                expect.height, expect.width
            )));
        }
        Ok(())
    }
}

pub fn dwt2<T: Real>(x: &FeatureMap<T>, levels: usize, basis: Basis) -> Result<WaveletPyramid<T>> {
    dwt2_with_filters(x, levels, basis, &Filters::for_basis(basis))
}

/// [`dwt2`] with explicit analysis filters; the pyramid is tagged with `basis`
/// and will be synthesised with that basis' filters.
pub fn dwt2_with_filters<T: Real>(
    x: &FeatureMap<T>,
    levels: usize,
    basis: Basis,
    filters: &Filters<T>,
) -> Result<WaveletPyramid<T>> {
    if levels < 1 {
        return Err(Error::arg("wavelet levels must be at least 1"));
    }
    let shape = x.shape();
    let block = 1usize
        .checked_shl(levels as u32)
        .filter(|&b| b <= shape.height && b <= shape.width)
        .ok_or_else(|| {
            Error::arg(format!(
                "{levels} levels too deep for a {}x{} image",
                shape.height, shape.width
            ))
        })?;
    let padded = pad_symmetric(
        x,
        shape.height.div_ceil(block) * block,
        shape.width.div_ceil(block) * block,
    );
    let mut ll = padded;
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (next, bands) = analyze_level(&ll, filters)?;
        details.push(bands);
        ll = next;
    }
    details.reverse();
    Ok(WaveletPyramid {
        ll,
        details,
        basis,
        original_size: (shape.height, shape.width),
    })
}

pub fn idwt2<T: Real>(p: &WaveletPyramid<T>) -> Result<FeatureMap<T>> {
    p.validate()?;
    let filters = Filters::for_basis(p.basis);
    let mut ll = p.ll.clone();
    for bands in &p.details {
        ll = synthesize_level(&ll, bands, &filters)?;
    }
    let (h, w) = p.original_size;
    Ok(crop(&ll, h, w))
}

/// One analysis step; both spatial sides must be even.
pub fn analyze_level<T: Real>(
    x: &FeatureMap<T>,
    filters: &Filters<T>,
) -> Result<(FeatureMap<T>, DetailBands<T>)> {
    let s = x.shape();
    if s.height % 2 != 0 || s.width % 2 != 0 {
        return Err(Error::shape(format!(
            "analysis needs even sides, got {}x{}",
            s.height, s.width
        )));
    }
    let (h2, w2) = (s.height / 2, s.width / 2);
    let half = s.with_spatial(h2, w2);
    let mut ll = FeatureMap::zeros(half);
    let mut hl = FeatureMap::zeros(half);
    let mut lh = FeatureMap::zeros(half);
    let mut hh = FeatureMap::zeros(half);
    let mut lo_x = vec![T::zero(); s.height * w2];
    let mut hi_x = vec![T::zero(); s.height * w2];
    let mut col = vec![T::zero(); s.height];
    let mut col_lo = vec![T::zero(); h2];
    let mut col_hi = vec![T::zero(); h2];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = x.plane(b, c);
            for y in 0..s.height {
                analyze_lane(
                    &src[y * s.width..(y + 1) * s.width],
                    filters,
                    &mut lo_x[y * w2..(y + 1) * w2],
                    &mut hi_x[y * w2..(y + 1) * w2],
                );
            }
            for (rows, (dst_lo, dst_hi)) in [
                (&lo_x, (&mut ll, &mut lh)),
                (&hi_x, (&mut hl, &mut hh)),
            ] {
                for xx in 0..w2 {
                    for y in 0..s.height {
                        col[y] = rows[y * w2 + xx];
                    }
                    analyze_lane(&col, filters, &mut col_lo, &mut col_hi);
                    let pl = dst_lo.plane_mut(b, c);
                    for y in 0..h2 {
                        pl[y * w2 + xx] = col_lo[y];
                    }
                    let ph = dst_hi.plane_mut(b, c);
                    for y in 0..h2 {
                        ph[y * w2 + xx] = col_hi[y];
                    }
                }
            }
        }
    }
    Ok((ll, DetailBands { hl, lh, hh }))
}

/// One synthesis step, the exact inverse of [`analyze_level`].
pub fn synthesize_level<T: Real>(
    ll: &FeatureMap<T>,
    bands: &DetailBands<T>,
    filters: &Filters<T>,
) -> Result<FeatureMap<T>> {
    let s = ll.shape();
    for band in [&bands.hl, &bands.lh, &bands.hh] {
        if band.shape() != s {
            return Err(Error::shape(format!(
                "detail band {} does not match LL {s}",
                band.shape()
            )));
        }
    }
    let (h2, w2) = (s.height, s.width);
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = FeatureMap::zeros(s.with_spatial(h, w));
    let mut lo_x = vec![T::zero(); h * w2];
    let mut hi_x = vec![T::zero(); h * w2];
    let mut col = vec![T::zero(); h];
    let mut a = vec![T::zero(); h2];
    let mut d = vec![T::zero(); h2];
    for b in 0..s.batch {
        for c in 0..s.channels {
            for (rows, (src_lo, src_hi)) in [
                (&mut lo_x, (ll, &bands.lh)),
                (&mut hi_x, (&bands.hl, &bands.hh)),
            ] {
                let (pl, ph) = (src_lo.plane(b, c), src_hi.plane(b, c));
                for xx in 0..w2 {
                    for y in 0..h2 {
                        a[y] = pl[y * w2 + xx];
                        d[y] = ph[y * w2 + xx];
                    }
                    synthesize_lane(&a, &d, filters, &mut col);
                    for y in 0..h {
                        rows[y * w2 + xx] = col[y];
                    }
                }
            }
            let dst = out.plane_mut(b, c);
            for y in 0..h {
                synthesize_lane(
                    &lo_x[y * w2..(y + 1) * w2],
                    &hi_x[y * w2..(y + 1) * w2],
                    filters,
                    &mut dst[y * w..(y + 1) * w],
                );
            }
        }
    }
    Ok(out)
}

fn analyze_lane<T: Real>(x: &[T], f: &Filters<T>, lo: &mut [T], hi: &mut [T]) {
    let n = x.len();
    for k in 0..n / 2 {
        let mut a = T::zero();
        let mut d = T::zero();
        for (j, (&l, &g)) in f.lo.iter().zip(&f.hi).enumerate() {
            let v = x[(2 * k + j) % n];
            a = a + l * v;
            d = d + g * v;
        }
        lo[k] = a;
        hi[k] = d;
    }
}

fn synthesize_lane<T: Real>(lo: &[T], hi: &[T], f: &Filters<T>, out: &mut [T]) {
    let n = out.len();
    out.iter_mut().for_each(|v| *v = T::zero());
    for k in 0..n / 2 {
        for (j, (&l, &g)) in f.lo.iter().zip(&f.hi).enumerate() {
            let i = (2 * k + j) % n;
            out[i] = out[i] + l * lo[k] + g * hi[k];
        }
    }
}

/// Half-sample symmetric extension (`x[n] = x[n-1]`, `x[n+1] = x[n-2]`, ...)
/// to `height × width`. Extension must not exceed the original side.
pub fn pad_symmetric<T: Real>(x: &FeatureMap<T>, height: usize, width: usize) -> FeatureMap<T> {
    let s = x.shape();
    if s.height == height && s.width == width {
        return x.clone();
    }
    assert!(height >= s.height && width >= s.width && height <= 2 * s.height && width <= 2 * s.width);
    let mirror = |i: usize, n: usize| if i < n { i } else { 2 * n - 1 - i };
    FeatureMap::from_fn(s.with_spatial(height, width), |b, c, y, xx| {
        x.get(b, c, mirror(y, s.height), mirror(xx, s.width))
    })
}

/// Top-left `height × width` window.
pub fn crop<T: Real>(x: &FeatureMap<T>, height: usize, width: usize) -> FeatureMap<T> {
    let s = x.shape();
    if s.height == height && s.width == width {
        return x.clone();
    }
    FeatureMap::from_fn(s.with_spatial(height, width), |b, c, y, xx| x.get(b, c, y, xx))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PyramidManifest {
    basis: Basis,
    levels: usize,
    original_height: usize,
    original_width: usize,
    /// Tensor file names, `ll` first, then `hl, lh, hh` per level deepest-first.
    band_order: Vec<String>,
}

/// Writes each band as a tensor file plus `manifest.json` into `dir`.
pub fn write_pyramid_dir<T: Real>(dir: impl AsRef<Path>, p: &WaveletPyramid<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut band_order = vec!["ll.depf".to_string()];
    write_tensor_file(dir.join("ll.depf"), &p.ll)?;
    let levels = p.levels();
    for (i, d) in p.details.iter().enumerate() {
        let level = levels - i;
        for (name, band) in [("hl", &d.hl), ("lh", &d.lh), ("hh", &d.hh)] {
            let file = format!("level{level}_{name}.depf");
            write_tensor_file(dir.join(&file), band)?;
            band_order.push(file);
        }
    }
    let manifest = PyramidManifest {
        basis: p.basis,
        levels,
        original_height: p.original_size.0,
        original_width: p.original_size.1,
        band_order,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_pyramid_dir<T: Real>(dir: impl AsRef<Path>) -> Result<WaveletPyramid<T>> {
    let dir = dir.as_ref();
    let manifest: PyramidManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.band_order.len() != 1 + 3 * manifest.levels {
        return Err(Error::shape(format!(
            "manifest lists {} bands for {} levels",
            manifest.band_order.len(),
            manifest.levels
        )));
    }
    let load = |name: &str| -> Result<FeatureMap<T>> {
        Ok(read_tensor_file(dir.join(name))?.into_dtype())
    };
    let ll = load(&manifest.band_order[0])?;
    let details = manifest.band_order[1..]
        .chunks(3)
        .map(|names| {
            Ok(DetailBands {
                hl: load(&names[0])?,
                lh: load(&names[1])?,
                hh: load(&names[2])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p = WaveletPyramid {
        ll,
        details,
        basis: manifest.basis,
        original_size: (manifest.original_height, manifest.original_width),
    };
    p.validate()?;
    Ok(p)
}
