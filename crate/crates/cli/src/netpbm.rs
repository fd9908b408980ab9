//! Binary PPM (P6) and PGM (P5) with maxval 255.

use depfusion_core::{Error, FeatureMap, Real, Result, Shape};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 3 for P6, 1 for P5.
    pub channels: usize,
    /// Interleaved samples, row-major.
    pub data: Vec<u8>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse()
            .map_err(|_| format_err(start, format!("{what} {text} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(format_err(0, "expected magic P6 or P5")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(format_err(2, "expected whitespace after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = {
        cur.skip_blank();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(3, format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMode(format!(
            "maxval {maxval} at byte {maxval_at}; only 255 is supported"
        )));
    }
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(cur.pos, "expected a single whitespace byte before the raster"));
    }
    let start = cur.pos + 1;
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err(3, "image dimensions overflow"))?;
    let available = bytes.len().saturating_sub(start);
    if available < len {
        return Err(format_err(
            bytes.len(),
            format!("raster truncated: expected {len} bytes, found {available}"),
        ));
    }
    Ok(Image {
        width,
        height,
        channels,
        data: bytes[start..start + len].to_vec(),
    })
}

pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// `1×C×H×W` map with samples scaled by `1/255`.
pub fn to_feature_map<T: Real>(img: &Image) -> FeatureMap<T> {
    let shape = Shape::new(1, img.channels, img.height, img.width);
    FeatureMap::from_fn(shape, |_, c, y, x| {
        T::of(f64::from(img.data[(y * img.width + x) * img.channels + c]) / 255.0)
    })
}

/// Clamps to `[0, 1]` and quantizes with round-half-to-even. Uses batch item 0.
pub fn from_feature_map<T: Real>(x: &FeatureMap<T>) -> Result<Image> {
    let s = x.shape();
    if s.channels != 1 && s.channels != 3 {
        return Err(Error::Shape(format!("cannot encode {} channels as an image", s.channels)));
    }
    let mut data = vec![0u8; s.height * s.width * s.channels];
    for c in 0..s.channels {
        for y in 0..s.height {
            for xx in 0..s.width {
                let v = x.get(0, c, y, xx).f64();
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                data[(y * s.width + xx) * s.channels + c] = (v * 255.0).round_ties_even() as u8;
            }
        }
    }
    Ok(Image {
        width: s.width,
        height: s.height,
        channels: s.channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_with_comment() {
        let mut bytes = b"P6 # made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 3));
        assert_eq!(img.data, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(decode(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn errors_carry_offsets() {
        match decode(b"P7\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match decode(b"P5\n2 x\n255\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match decode(b"P5\n2 2\n255\n\x01") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode(b"P5\n1 1\n65535\n\0\0"), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn quantization_rounds_half_to_even() {
        let x = FeatureMap::new(Shape::new(1, 1, 1, 4), vec![0.5 / 255.0, 1.5 / 255.0, -3.0, 7.0]).unwrap();
        assert_eq!(from_feature_map::<f64>(&x).unwrap().data, vec![0, 2, 0, 255]);
    }

    #[test]
    fn pixels_survive_the_float_round_trip() {
        let img = Image {
            width: 16,
            height: 16,
            channels: 3,
            data: (0..768).map(|i| (i % 256) as u8).collect(),
        };
        assert_eq!(from_feature_map(&to_feature_map::<f32>(&img)).unwrap(), img);
    }
}
