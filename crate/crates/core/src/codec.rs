//! Block-DCT image codec shared by the residual path and the direct-compression baseline.
//!
//! Stream layout: `"RDC1"`, mode byte (0 lossy, 1 lossless), quality byte, width and height as
//! `u16` little-endian, then one bit stream per plane, each padded to a byte boundary.
//!
//! Lossy planes are coded block by block in raster order. Each 8x8 block is level-shifted by
//! 128, transformed with an orthonormal DCT-II, divided by the quality-scaled luminance table
//! and read in zigzag order. The DC difference to the previous block is written as `se(v)`,
//! then each nonzero AC coefficient as `ue(run + 1)` followed by `ue(2(|v|-1) + sign)`, and
//! `ue(0)` ends the block. Lossless planes are left-predicted bytes written as
//! `(ue(zero run), se(value))` pairs followed by one final `ue(trailing zeros)`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::{quantize_unit, Image};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"RDC1";
pub const HEADER_LEN: usize = 10;
const BLOCK: usize = 8;
/// Longest Exp-Golomb prefix accepted by the decoder.
const MAX_PREFIX: u32 = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecMode {
    Lossy,
    Lossless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecParams {
    /// 1..=100; ignored by the lossless mode but still recorded in the header.
    pub quality: u8,
    pub mode: CodecMode,
}

impl CodecParams {
    pub fn lossy(quality: u8) -> Self {
        Self { quality, mode: CodecMode::Lossy }
    }

    pub fn lossless() -> Self {
        Self { quality: 100, mode: CodecMode::Lossless }
    }

    pub fn validate(&self) -> Result<()> {
        if (1..=100).contains(&self.quality) {
            Ok(())
        } else {
            Err(Error::CodecInput(format!("quality {} outside 1..=100", self.quality)))
        }
    }
}

/// Three 8-bit planes (R, G, B), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Planes {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<u8>; 3],
}

impl Planes {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        let n = width * height;
        Self { width, height, planes: [vec![value; n], vec![value; n], vec![value; n]] }
    }

    pub fn from_image_with<T: Real>(img: &Image<T>, f: impl Fn(T) -> u8) -> Self {
        let planes = [0, 1, 2].map(|c| img.data.iter().skip(c).step_by(3).map(|v| f(*v)).collect());
        Self { width: img.width, height: img.height, planes }
    }

    pub fn to_image_with<T: Real>(&self, f: impl Fn(u8) -> T) -> Image<T> {
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for i in 0..self.width * self.height {
            for p in &self.planes {
                data.push(f(p[i]));
            }
        }
        Image { width: self.width, height: self.height, data }
    }
}

/// Maps signed samples in `[-1, 1]` to bytes: `q = round_half_up((r + 1) * 127.5)`.
pub fn residual_quantize<T: Real>(r: &Image<T>) -> Result<Planes> {
    if let Some(bad) = r.data.iter().find(|v| !(v.abs() <= T::one())) {
        return Err(Error::DomainError(format!("residual sample {bad} outside [-1, 1]")));
    }
    Ok(Planes::from_image_with(r, |v| {
        let q = ((v.to_f64_lossy() + 1.0) * 127.5 + 0.5).floor();
        q.clamp(0.0, 255.0) as u8
    }))
}

/// Inverse of [`residual_quantize`]: `r = q / 127.5 - 1`.
pub fn residual_dequantize<T: Real>(p: &Planes) -> Image<T> {
    p.to_image_with(|q| T::lit(f64::from(q) / 127.5 - 1.0))
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn new(bytes: Vec<u8>) -> Self {
        Self { bytes, acc: 0, nbits: 0 }
    }

    fn put(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 32);
        self.acc = (self.acc << n) | (value & ((1u64 << n) - 1));
        self.nbits += n;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.bytes.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    fn ue(&mut self, k: u32) {
        let v = u64::from(k) + 1;
        let n = 64 - v.leading_zeros();
        self.put(0, n - 1);
        self.put(v, n);
    }

    fn se(&mut self, v: i32) {
        self.ue(if v > 0 { (2 * v - 1) as u32 } else { (-2 * v) as u32 });
    }

    fn align(&mut self) {
        if self.nbits > 0 {
            self.put(0, 8 - self.nbits);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        self.align();
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bit: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8], byte_offset: usize) -> Self {
        Self { bytes, bit: byte_offset * 8 }
    }

    fn offset(&self) -> usize {
        self.bit / 8
    }

    fn fail(&self, reason: &'static str) -> Error {
        Error::CodecParse { offset: self.offset(), reason }
    }

    fn bit(&mut self) -> Result<u32> {
        let byte = *self.bytes.get(self.bit / 8).ok_or_else(|| self.fail("unexpected end of stream"))?;
        let b = (byte >> (7 - self.bit % 8)) & 1;
        self.bit += 1;
        Ok(u32::from(b))
    }

    fn ue(&mut self) -> Result<u32> {
        let mut zeros = 0;
        while self.bit()? == 0 {
            zeros += 1;
            if zeros > MAX_PREFIX {
                return Err(self.fail("exp-golomb prefix too long"));
            }
        }
        let mut v: u64 = 1;
        for _ in 0..zeros {
            v = (v << 1) | u64::from(self.bit()?);
        }
        u32::try_from(v - 1).map_err(|_| self.fail("exp-golomb value overflow"))
    }

    fn se(&mut self) -> Result<i32> {
        let k = i64::from(self.ue()?);
        let v = if k % 2 == 1 { (k + 1) / 2 } else { -k / 2 };
        i32::try_from(v).map_err(|_| self.fail("signed value overflow"))
    }

    fn align(&mut self) {
        self.bit = self.bit.div_ceil(8) * 8;
    }
}

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Raster index of the k-th coefficient in zigzag order.
const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21, 28, 35, 42,
    49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Quality-scaled quantization table in raster order.
pub fn quant_table(quality: u8) -> [u16; 64] {
    let q = u32::from(quality.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    LUMA_TABLE.map(|b| ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16)
}

fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
            }
        }
        b
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

fn blocks(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(BLOCK), height.div_ceil(BLOCK))
}

fn encode_lossy_plane(w: &mut BitWriter, plane: &[u8], width: usize, height: usize, table: &[u16; 64]) {
    let (bx, by) = blocks(width, height);
    let mut prev_dc = 0i32;
    let mut block = [0.0; 64];
    for byi in 0..by {
        for bxi in 0..bx {
            for y in 0..BLOCK {
                // edge replication
                let sy = (byi * BLOCK + y).min(height - 1);
                for x in 0..BLOCK {
                    let sx = (bxi * BLOCK + x).min(width - 1);
                    block[y * 8 + x] = f64::from(plane[sy * width + sx]) - 128.0;
                }
            }
            let coef = fdct(&block);
            let q: [i32; 64] = std::array::from_fn(|k| {
                let i = ZIGZAG[k];
                (coef[i] / f64::from(table[i])).round() as i32
            });
            w.se(q[0] - prev_dc);
            prev_dc = q[0];
            let mut run = 0u32;
            for &v in &q[1..] {
                if v == 0 {
                    run += 1;
                } else {
                    w.ue(run + 1);
                    let level = 2 * (v.unsigned_abs() - 1) + u32::from(v < 0);
                    w.ue(level);
                    run = 0;
                }
            }
            w.ue(0);
        }
    }
    w.align();
}

fn decode_lossy_plane(r: &mut BitReader<'_>, width: usize, height: usize, table: &[u16; 64]) -> Result<Vec<u8>> {
    let (bx, by) = blocks(width, height);
    let mut plane = vec![0u8; width * height];
    let mut prev_dc = 0i32;
    for byi in 0..by {
        for bxi in 0..bx {
            let mut coef = [0.0; 64];
            let dc = prev_dc.checked_add(r.se()?).ok_or_else(|| r.fail("dc overflow"))?;
            prev_dc = dc;
            coef[0] = f64::from(dc) * f64::from(table[0]);
            let mut k = 1usize;
            loop {
                let code = r.ue()?;
                if code == 0 {
                    break;
                }
                k += (code - 1) as usize;
                if k >= 64 {
                    return Err(r.fail("coefficient index past end of block"));
                }
                let level = r.ue()?;
                let mag = i64::from(level / 2) + 1;
                let v = if level % 2 == 1 { -mag } else { mag };
                let i = ZIGZAG[k];
                coef[i] = v as f64 * f64::from(table[i]);
                k += 1;
            }
            let px = idct(&coef);
            for y in 0..BLOCK {
                let sy = byi * BLOCK + y;
                if sy >= height {
                    break;
                }
                for x in 0..BLOCK {
                    let sx = bxi * BLOCK + x;
                    if sx >= width {
                        break;
                    }
                    plane[sy * width + sx] = (px[y * 8 + x] + 128.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    r.align();
    Ok(plane)
}

fn predictions(plane: &[u8], width: usize) -> impl Iterator<Item = (u8, u8)> + '_ {
    plane.iter().enumerate().map(move |(i, v)| {
        let pred = if i % width > 0 {
            plane[i - 1]
        } else if i >= width {
            plane[i - width]
        } else {
            128
        };
        (*v, pred)
    })
}

fn encode_lossless_plane(w: &mut BitWriter, plane: &[u8], width: usize) {
    let mut run = 0u32;
    for (v, pred) in predictions(plane, width) {
        let d = v.wrapping_sub(pred) as i8;
        if d == 0 {
            run += 1;
        } else {
            w.ue(run);
            w.se(i32::from(d));
            run = 0;
        }
    }
    w.ue(run);
    w.align();
}

fn decode_lossless_plane(r: &mut BitReader<'_>, width: usize, height: usize) -> Result<Vec<u8>> {
    let n = width * height;
    let mut diffs: Vec<i8> = Vec::with_capacity(n);
    loop {
        let run = r.ue()? as usize;
        if run > n - diffs.len() {
            return Err(r.fail("zero run past end of plane"));
        }
        diffs.resize(diffs.len() + run, 0);
        if diffs.len() == n {
            break;
        }
        let d = r.se()?;
        if d == 0 || !(-128..=127).contains(&d) {
            return Err(r.fail("invalid predicted difference"));
        }
        diffs.push(d as i8);
    }
    r.align();
    let mut plane = vec![0u8; n];
    for i in 0..n {
        let pred = if i % width > 0 {
            plane[i - 1]
        } else if i >= width {
            plane[i - width]
        } else {
            128
        };
        plane[i] = pred.wrapping_add(diffs[i] as u8);
    }
    Ok(plane)
}

pub fn encode(p: &Planes, params: &CodecParams) -> Result<Vec<u8>> {
    params.validate()?;
    if p.width == 0 || p.height == 0 || p.width > usize::from(u16::MAX) || p.height > usize::from(u16::MAX) {
        return Err(Error::CodecInput(format!("dimensions {}x{} not codable", p.width, p.height)));
    }
    let n = p.width * p.height;
    if p.planes.iter().any(|pl| pl.len() != n) {
        return Err(Error::CodecInput("plane length does not match dimensions".into()));
    }
    let mut header = Vec::with_capacity(HEADER_LEN + n / 4);
    header.extend_from_slice(MAGIC);
    header.push(match params.mode {
        CodecMode::Lossy => 0,
        CodecMode::Lossless => 1,
    });
    header.push(params.quality);
    header.extend_from_slice(&(p.width as u16).to_le_bytes());
    header.extend_from_slice(&(p.height as u16).to_le_bytes());
    let mut w = BitWriter::new(header);
    match params.mode {
        CodecMode::Lossy => {
            let table = quant_table(params.quality);
            for plane in &p.planes {
                encode_lossy_plane(&mut w, plane, p.width, p.height, &table);
            }
        }
        CodecMode::Lossless => {
            for plane in &p.planes {
                encode_lossless_plane(&mut w, plane, p.width);
            }
        }
    }
    Ok(w.finish())
}

/// Reads the header without decoding the planes.
pub fn peek_header(bytes: &[u8]) -> Result<(CodecParams, usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::CodecParse { offset: bytes.len(), reason: "truncated header" });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CodecParse { offset: 0, reason: "bad magic" });
    }
    let mode = match bytes[4] {
        0 => CodecMode::Lossy,
        1 => CodecMode::Lossless,
        _ => return Err(Error::CodecParse { offset: 4, reason: "unknown mode" }),
    };
    let quality = bytes[5];
    if !(1..=100).contains(&quality) {
        return Err(Error::CodecParse { offset: 5, reason: "quality out of range" });
    }
    let width = usize::from(u16::from_le_bytes([bytes[6], bytes[7]]));
    let height = usize::from(u16::from_le_bytes([bytes[8], bytes[9]]));
    if width == 0 || height == 0 {
        return Err(Error::CodecParse { offset: 6, reason: "zero dimension" });
    }
    Ok((CodecParams { quality, mode }, width, height))
}

pub fn decode(bytes: &[u8]) -> Result<Planes> {
    let (params, width, height) = peek_header(bytes)?;
    let mut r = BitReader::new(bytes, HEADER_LEN);
    let mut out: [Vec<u8>; 3] = Default::default();
    match params.mode {
        CodecMode::Lossy => {
            let table = quant_table(params.quality);
            for plane in &mut out {
                *plane = decode_lossy_plane(&mut r, width, height, &table)?;
            }
        }
        CodecMode::Lossless => {
            for plane in &mut out {
                *plane = decode_lossless_plane(&mut r, width, height)?;
            }
        }
    }
    if r.offset() != bytes.len() {
        return Err(Error::CodecParse { offset: r.offset(), reason: "trailing bytes after last plane" });
    }
    Ok(Planes { width, height, planes: out })
}

/// Baseline path: quantize an image in `[0, 1]` to bytes (round half up) and encode it.
pub fn encode_image_direct<T: Real>(img: &Image<T>, params: &CodecParams) -> Result<Vec<u8>> {
    encode(&Planes::from_image_with(img, quantize_unit), params)
}

pub fn decode_image_direct<T: Real>(bytes: &[u8]) -> Result<Image<T>> {
    Ok(decode(bytes)?.to_image_with(|b| T::lit(f64::from(b) / 255.0)))
}
