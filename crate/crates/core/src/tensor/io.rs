//! Binary tensor files.
//!
//! Layout, little-endian throughout:
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 4    | magic `DEPF`                        |
//! | 4      | 1    | version, always 1                   |
//! | 5      | 1    | dtype: 0 = f32, 1 = f64             |
//! | 6      | 1    | ndim, always 4                      |
//! | 7      | 16   | `u32` dims `B, C, H, W`             |
//! | 23     | ...  | `B·C·H·W` values, row-major         |

use std::fs;
use std::path::Path;

use super::{DType, FeatureMap, Real, Shape};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DEPF";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 23;

/// A decoded tensor of either element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyFeatureMap {
    F32(FeatureMap<f32>),
    F64(FeatureMap<f64>),
}

impl AnyFeatureMap {
    pub fn dtype(&self) -> DType {
        match self {
            AnyFeatureMap::F32(_) => DType::F32,
            AnyFeatureMap::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            AnyFeatureMap::F32(x) => x.shape(),
            AnyFeatureMap::F64(x) => x.shape(),
        }
    }

    /// Converts to the requested element type (exact when widening).
    pub fn into_dtype<T: Real>(self) -> FeatureMap<T> {
        match self {
            AnyFeatureMap::F32(x) => x.cast(),
            AnyFeatureMap::F64(x) => x.cast(),
        }
    }
}

pub fn write_tensor<T: Real>(x: &FeatureMap<T>) -> Vec<u8> {
    let shape = x.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + shape.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(4);
    for d in shape.dims() {
        let d = u32::try_from(d).expect("tensor extent fits in u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in x.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn read_tensor(bytes: &[u8]) -> Result<AnyFeatureMap> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            bytes.len(),
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"DEPF\""));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(4, format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| Error::format(5, format!("unsupported dtype code {}", bytes[5])))?;
    if bytes[6] != 4 {
        return Err(Error::format(6, format!("unsupported ndim {}", bytes[6])));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let at = 7 + 4 * i;
        *d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if *d == 0 {
            return Err(Error::format(at, "zero dimension"));
        }
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let expected = shape
        .numel()
        .checked_mul(dtype.size())
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(7, "dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected, "trailing bytes after payload"));
    }
    let payload = &bytes[HEADER_LEN..];
    Ok(match dtype {
        DType::F32 => AnyFeatureMap::F32(decode(shape, payload)?),
        DType::F64 => AnyFeatureMap::F64(decode(shape, payload)?),
    })
}

fn decode<T: Real>(shape: Shape, payload: &[u8]) -> Result<FeatureMap<T>> {
    let size = T::DTYPE.size();
    let data: Vec<T> = payload.chunks_exact(size).map(T::read_le).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            HEADER_LEN + i * size,
            "non-finite value in payload",
        ));
    }
    Ok(FeatureMap::from_parts(shape, data))
}

pub fn write_tensor_file<T: Real>(path: impl AsRef<Path>, x: &FeatureMap<T>) -> Result<()> {
    fs::write(path, write_tensor(x))?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<AnyFeatureMap> {
    read_tensor(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Prng;
    use proptest::prelude::*;

    #[test]
    fn single_value_layout() {
        let x = FeatureMap::new(Shape::new(1, 1, 1, 1), vec![1.0f32]).unwrap();
        let bytes = write_tensor(&x);
        // 4 magic + 3 single-byte fields + 4 dims of 4 bytes, then one f32.
        assert_eq!(HEADER_LEN, 4 + 1 + 1 + 1 + 16);
        assert_eq!(bytes.len(), 27);
        assert_eq!(&bytes[..7], b"DEPF\x01\x00\x04");
        assert_eq!(&bytes[23..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = write_tensor(&FeatureMap::<f64>::zeros(Shape::new(1, 1, 2, 2)));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_tensor(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn bad_version_and_dtype() {
        let good = write_tensor(&FeatureMap::<f32>::zeros(Shape::new(1, 1, 2, 2)));
        let mut v = good.clone();
        v[4] = 2;
        assert!(matches!(read_tensor(&v), Err(Error::Format { offset: 4, .. })));
        let mut d = good;
        d[5] = 9;
        assert!(matches!(read_tensor(&d), Err(Error::Format { offset: 5, .. })));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = write_tensor(&FeatureMap::<f64>::zeros(Shape::new(1, 2, 3, 4)));
        let cut = &bytes[..bytes.len() - 3];
        match read_tensor(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(read_tensor(&bytes[..10]), Err(Error::Format { offset: 10, .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(b in 1usize..3, c in 1usize..4, h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
            let shape = Shape::new(b, c, h, w);
            let x32 = FeatureMap::<f32>::random(shape, &mut Prng::new(seed), 10.0);
            let bytes = write_tensor(&x32);
            prop_assert_eq!(read_tensor(&bytes).unwrap(), AnyFeatureMap::F32(x32.clone()));
            prop_assert_eq!(write_tensor(&read_tensor(&bytes).unwrap().into_dtype::<f32>()), bytes);

            let x64 = FeatureMap::<f64>::random(shape, &mut Prng::new(seed), 10.0);
            let bytes = write_tensor(&x64);
            prop_assert_eq!(read_tensor(&bytes).unwrap(), AnyFeatureMap::F64(x64));
        }
    }
}
