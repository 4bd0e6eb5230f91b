//! RGB intensity images and binary PPM I/O.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major, interleaved RGB image. Intensities live in `[0, 1]` for camera frames and
/// renders; residual carriers may hold signed values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn same_shape<U>(&self, o: &Image<U>) -> Result<()> {
        if self.width == o.width && self.height == o.height {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(self.width, self.height, o.width, o.height))
        }
    }

    /// Luminance plane with weights 0.299 / 0.587 / 0.114.
    pub fn luminance(&self) -> Vec<T> {
        let (wr, wg, wb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        self.data.chunks_exact(3).map(|p| wr * p[0] + wg * p[1] + wb * p[2]).collect()
    }

    pub fn clamped(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|v| v.max(T::zero()).min(T::one())).collect() }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect() }
    }

    /// Crop with the top-left corner at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y, c| self.at(x0 + x, y0 + y, c))
    }
}

/// 8-bit quantization with round-half-up, clamped to `[0, 255]`.
#[inline]
pub fn quantize_unit<T: Real>(v: T) -> u8 {
    let s = (v.to_f64_lossy() * 255.0 + 0.5).floor();
    s.clamp(0.0, 255.0) as u8
}

pub fn write_ppm<T: Real, W: Write>(img: &Image<T>, mut w: W) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize_unit(*v)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return if tok.is_empty() { Err(Error::ImageFormat("unexpected end of header".into())) } else { Ok(tok) };
        }
        let ch = byte[0] as char;
        if ch == '#' && tok.is_empty() {
            let mut line = String::new();
            r.read_line(&mut line)?;
            continue;
        }
        if ch.is_ascii_whitespace() {
            if !tok.is_empty() {
                return Ok(tok);
            }
        } else {
            tok.push(ch);
        }
    }
}

/// Reads a binary `P6` file with maxval 255 into intensities in `[0, 1]`.
pub fn read_ppm<R: BufRead>(mut r: R) -> Result<Image<f64>> {
    if next_token(&mut r)? != "P6" {
        return Err(Error::ImageFormat("expected P6".into()));
    }
    let mut num = || -> Result<usize> {
        next_token(&mut r)?.parse::<usize>().map_err(|_| Error::ImageFormat("bad header number".into()))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 255 || width == 0 || height == 0 {
        return Err(Error::ImageFormat("only non-empty 8-bit images are supported".into()));
    }
    let mut buf = vec![0u8; width * height * 3];
    r.read_exact(&mut buf).map_err(|_| Error::ImageFormat("truncated pixel data".into()))?;
    Ok(Image { width, height, data: buf.iter().map(|b| f64::from(*b) / 255.0).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize_unit(0.0f64), 0);
        assert_eq!(quantize_unit(1.0f64), 255);
        assert_eq!(quantize_unit(0.5f64), 128);
        assert_eq!(quantize_unit(1.7f64), 255);
        assert_eq!(quantize_unit(-0.2f64), 0);
    }

    #[test]
    fn ppm_round_trip_of_quantized_image() {
        let img = Image::from_fn(7, 5, |x, y, c| ((x * 31 + y * 17 + c * 5) % 256) as f64 / 255.0);
        let mut buf = Vec::new();
        write_ppm(&img, &mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n7 5\n255\n"));
        let back = read_ppm(buf.as_slice()).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(read_ppm(&buf[..buf.len() - 1]).is_err());
    }
}
