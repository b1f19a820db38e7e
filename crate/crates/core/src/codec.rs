//! Binary container for primitive sets.
//!
//! All integers and floats are little-endian; there is no padding.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `SSPL`                            |
//! | 4      | 1    | version (1)                             |
//! | 5      | 1    | mode: 0 float, 1 quantized              |
//! | 6      | 4    | height (u32)                            |
//! | 10     | 4    | width (u32)                             |
//! | 14     | 4    | primitive count (u32)                   |
//!
//! Float mode follows with 8 `f32` per primitive:
//! `mean x, mean y, log sx, log sy, theta, r, g, b`.
//!
//! Quantized mode follows with the log-scale range `lo, hi` as two `f32`,
//! then 10 bytes per primitive: mean x and mean y as `u16` fractions of the
//! width and height, both log-scales as `u8` over `[lo, hi]`, theta as `u8`
//! over one turn, and the colour as three `u8`.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::GaussianSet;
use crate::render::SCALE_FLOOR;

pub const MAGIC: [u8; 4] = *b"SSPL";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 18;
pub const FLOAT_RECORD_BYTES: usize = 32;
pub const QUANT_RANGE_BYTES: usize = 8;
pub const QUANT_RECORD_BYTES: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StorageMode {
    #[default]
    Float,
    Quantized,
}

impl StorageMode {
    fn byte(self) -> u8 {
        match self {
            StorageMode::Float => 0,
            StorageMode::Quantized => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(StorageMode::Float),
            1 => Ok(StorageMode::Quantized),
            other => Err(Error::UnknownMode(other)),
        }
    }
}

/// Primitives together with the canvas they were fitted to.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub height: usize,
    pub width: usize,
    pub mode: StorageMode,
    pub set: GaussianSet<f32>,
}

/// Serialized size in bytes for `count` primitives.
pub fn encoded_len(mode: StorageMode, count: usize) -> usize {
    match mode {
        StorageMode::Float => HEADER_BYTES + count * FLOAT_RECORD_BYTES,
        StorageMode::Quantized => HEADER_BYTES + QUANT_RANGE_BYTES + count * QUANT_RECORD_BYTES,
    }
}

/// Raw 24-bit RGB size divided by the encoded size.
pub fn achieved_ratio(height: usize, width: usize, bytes: usize) -> f64 {
    (3 * height * width) as f64 / bytes as f64
}

/// Log-scale range covered by the quantized mode: from the rasterizer's
/// scale floor to eight times the footprint that tiles the canvas.
pub fn log_scale_range(height: usize, width: usize, count: usize) -> (f32, f32) {
    let lo = SCALE_FLOOR.ln();
    let hi = (8.0 * ((height * width) as f64 / (PI * count.max(1) as f64)).sqrt()).ln();
    (lo as f32, (hi.max(lo + 1.0)) as f32)
}

/// Worst-case absolute reconstruction error per field in quantized mode, for
/// values inside the representable range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizationBounds {
    pub mean_x: f64,
    pub mean_y: f64,
    pub log_scale: f64,
    /// Circular distance.
    pub theta: f64,
    pub color: f64,
}

pub fn quantization_bounds(height: usize, width: usize, count: usize) -> QuantizationBounds {
    let (lo, hi) = log_scale_range(height, width, count);
    QuantizationBounds {
        mean_x: width as f64 / (2.0 * 65535.0),
        mean_y: height as f64 / (2.0 * 65535.0),
        log_scale: (hi - lo) as f64 / (2.0 * 255.0),
        theta: TAU / (2.0 * 256.0),
        color: 1.0 / (2.0 * 255.0),
    }
}

fn check_dims(height: usize, width: usize, set: &GaussianSet<f32>) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if !set.is_consistent() {
        return Err(Error::InvalidArgument("primitive arrays have different lengths".into()));
    }
    let fits = |v: usize| v > 0 && u32::try_from(v).is_ok();
    if !fits(height) || !fits(width) || u32::try_from(set.len()).is_err() {
        return Err(Error::InvalidArgument(format!(
            "{height}x{width} canvas with {} primitives does not fit the header",
            set.len()
        )));
    }
    Ok(())
}

fn quantize(v: f64, lo: f64, hi: f64, levels: f64) -> f64 {
    ((v.clamp(lo, hi) - lo) / (hi - lo) * levels).round()
}

fn dequantize(q: f64, lo: f64, hi: f64, levels: f64) -> f64 {
    lo + q / levels * (hi - lo)
}

pub fn encode(set: &GaussianSet<f32>, height: usize, width: usize, mode: StorageMode) -> Result<Vec<u8>> {
    check_dims(height, width, set)?;
    let n = set.len();
    let mut out = Vec::with_capacity(encoded_len(mode, n));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(mode.byte());
    for v in [height, width, n] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    match mode {
        StorageMode::Float => {
            for i in 0..n {
                let [mx, my] = set.means[i];
                let [sx, sy] = set.log_scales[i];
                let [r, g, b] = set.colors[i];
                for v in [mx, my, sx, sy, set.thetas[i], r, g, b] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        StorageMode::Quantized => {
            let (lo, hi) = log_scale_range(height, width, n);
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
            let (lo, hi) = (lo as f64, hi as f64);
            for i in 0..n {
                let [mx, my] = set.means[i];
                out.extend_from_slice(&(quantize(mx as f64, 0.0, width as f64, 65535.0) as u16).to_le_bytes());
                out.extend_from_slice(&(quantize(my as f64, 0.0, height as f64, 65535.0) as u16).to_le_bytes());
                for s in set.log_scales[i] {
                    out.push(quantize(s as f64, lo, hi, 255.0) as u8);
                }
                let turn = (set.thetas[i] as f64).rem_euclid(TAU) / TAU;
                out.push(((turn * 256.0).round() as u32 % 256) as u8);
                for c in set.colors[i] {
                    out.push(quantize(c as f64, 0.0, 1.0, 255.0) as u8);
                }
            }
        }
    }
    debug_assert_eq!(out.len(), encoded_len(mode, n));
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked before reading");
        self.pos += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Encoded> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_BYTES {
        return Err(Error::TruncatedPayload {
            expected: HEADER_BYTES,
            found: bytes.len(),
        });
    }
    let mut rd = Reader { bytes, pos: 4 };
    let version = rd.u8();
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mode = StorageMode::from_byte(rd.u8())?;
    let height = rd.u32() as usize;
    let width = rd.u32() as usize;
    let n = rd.u32() as usize;
    if n == 0 {
        return Err(Error::EmptySet);
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("header declares a {height}x{width} canvas")));
    }
    let expected = encoded_len(mode, n);
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    let mut set = GaussianSet::with_capacity(n);
    match mode {
        StorageMode::Float => {
            for _ in 0..n {
                let v: [f32; 8] = std::array::from_fn(|_| rd.f32());
                set.push([v[0], v[1]], [v[2], v[3]], v[4], [v[5], v[6], v[7]]);
            }
        }
        StorageMode::Quantized => {
            let (lo, hi) = (rd.f32() as f64, rd.f32() as f64);
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidArgument(format!("invalid log-scale range [{lo}, {hi}]")));
            }
            for _ in 0..n {
                let mx = dequantize(rd.u16() as f64, 0.0, width as f64, 65535.0);
                let my = dequantize(rd.u16() as f64, 0.0, height as f64, 65535.0);
                let sx = dequantize(rd.u8() as f64, lo, hi, 255.0);
                let sy = dequantize(rd.u8() as f64, lo, hi, 255.0);
                let theta = rd.u8() as f64 / 256.0 * TAU;
                let c: [f32; 3] = std::array::from_fn(|_| (rd.u8() as f64 / 255.0) as f32);
                set.push([mx as f32, my as f32], [sx as f32, sy as f32], theta as f32, c);
            }
        }
    }
    Ok(Encoded {
        height,
        width,
        mode,
        set,
    })
}

pub fn encode_file(path: &Path, set: &GaussianSet<f32>, height: usize, width: usize, mode: StorageMode) -> Result<usize> {
    let bytes = encode(set, height, width, mode)?;
    std::fs::write(path, &bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes.len())
}

pub fn decode_file(path: &Path) -> Result<Encoded> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> GaussianSet<f32> {
        let mut s = GaussianSet::with_capacity(3);
        s.push([1.5, 2.5], [0.1, -0.4], 0.7, [0.1, 0.2, 0.3]);
        s.push([63.9, 0.0], [1.3, 0.9], 6.2, [1.0, 0.0, 0.5]);
        s.push([30.25, 47.75], [-1.0, 0.0], 3.1, [0.33, 0.66, 0.99]);
        s
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample_set(), 48, 64, StorageMode::Float).unwrap();
        assert_eq!(&bytes[..4], b"SSPL");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 48);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 64);
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 18 + 3 * 32);
        let q = encode(&sample_set(), 48, 64, StorageMode::Quantized).unwrap();
        assert_eq!(q[5], 1);
        assert_eq!(q.len(), 18 + 8 + 3 * 10);
    }

    #[test]
    fn float_round_trip_is_exact() {
        let set = sample_set();
        let dec = decode(&encode(&set, 48, 64, StorageMode::Float).unwrap()).unwrap();
        assert_eq!(dec.set, set);
        assert_eq!((dec.height, dec.width, dec.mode), (48, 64, StorageMode::Float));
    }

    #[test]
    fn quantized_round_trip_within_bounds() {
        let set = sample_set();
        let (h, w) = (48, 64);
        let dec = decode(&encode(&set, h, w, StorageMode::Quantized).unwrap()).unwrap();
        let b = quantization_bounds(h, w, set.len());
        for i in 0..set.len() {
            assert!((dec.set.means[i][0] - set.means[i][0]).abs() as f64 <= b.mean_x + 1e-5);
            assert!((dec.set.means[i][1] - set.means[i][1]).abs() as f64 <= b.mean_y + 1e-5);
            for a in 0..2 {
                assert!((dec.set.log_scales[i][a] - set.log_scales[i][a]).abs() as f64 <= b.log_scale + 1e-5);
            }
            let d = (dec.set.thetas[i] as f64 - set.thetas[i] as f64).rem_euclid(TAU);
            assert!(d.min(TAU - d) <= b.theta + 1e-5);
            for c in 0..3 {
                assert!((dec.set.colors[i][c] - set.colors[i][c]).abs() as f64 <= b.color + 1e-6);
            }
        }
    }

    #[test]
    fn corrupt_inputs() {
        let good = encode(&sample_set(), 48, 64, StorageMode::Float).unwrap();
        assert!(matches!(decode(b"PNG\x89rest"), Err(Error::BadMagic)));
        assert!(matches!(decode(b""), Err(Error::BadMagic)));
        let mut v = good.clone();
        v[4] = 9;
        assert!(matches!(decode(&v), Err(Error::UnsupportedVersion(9))));
        let mut m = good.clone();
        m[5] = 7;
        assert!(matches!(decode(&m), Err(Error::UnknownMode(7))));
        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(Error::TruncatedPayload { expected: 114, found: 113 })
        ));
        assert!(matches!(decode(&good[..10]), Err(Error::TruncatedPayload { .. })));
        assert!(matches!(
            encode(&GaussianSet::with_capacity(0), 4, 4, StorageMode::Float),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(achieved_ratio(512, 512, 786_432), 1.0);
        assert_eq!(encoded_len(StorageMode::Quantized, 561), 18 + 8 + 5610);
        assert!((achieved_ratio(512, 512, encoded_len(StorageMode::Quantized, 561)) - 139.53).abs() < 0.01);
    }

    #[test]
    fn angle_wraps_to_zero_code() {
        let mut s = GaussianSet::with_capacity(1);
        s.push([0.0, 0.0], [0.0, 0.0], (TAU - 1e-4) as f32, [0.0; 3]);
        let bytes = encode(&s, 4, 4, StorageMode::Quantized).unwrap();
        assert_eq!(bytes[HEADER_BYTES + QUANT_RANGE_BYTES + 6], 0);
    }
}
