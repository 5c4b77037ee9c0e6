//! Image representation, binary PGM I/O, dyadic resampling and PSNR.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub const PEAK: f64 = 255.0;

/// 2-D raster of real-valued pixels, nominal range [0, 255], row-major.
/// Both dimensions must be powers of two.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

fn is_pow2(v: usize) -> bool {
    v != 0 && v & (v - 1) == 0
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if !is_pow2(width) || !is_pow2(height) {
            return Err(Error::Dimension(format!(
                "image dimensions {width}x{height} must be powers of two"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

fn read_pgm_token(data: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    // Skip whitespace and '#' comments.
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Pgm("unexpected end of header".into()));
    }
    Ok(data[start..*pos].to_vec())
}

fn parse_usize(tok: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Pgm(format!("invalid {what}")))
}

/// Reads a binary PGM (P5) file with maxval 255.
pub fn load_pgm<P: AsRef<Path>>(path: P) -> Result<Image> {
    let data = fs::read(path)?;
    let mut pos = 0;
    let magic = read_pgm_token(&data, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Pgm("not a binary PGM (P5) file".into()));
    }
    let width = parse_usize(&read_pgm_token(&data, &mut pos)?, "width")?;
    let height = parse_usize(&read_pgm_token(&data, &mut pos)?, "height")?;
    let maxval = parse_usize(&read_pgm_token(&data, &mut pos)?, "maxval")?;
    if maxval != 255 {
        return Err(Error::Pgm(format!("maxval {maxval} unsupported, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::Pgm("missing raster separator".into()));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Pgm("dimension overflow".into()))?;
    let raster = &data[pos..];
    if raster.len() < n {
        return Err(Error::Pgm(format!(
            "raster too short: {} bytes for {n} pixels",
            raster.len()
        )));
    }
    let pixels = raster[..n].iter().map(|&b| b as f64).collect();
    Image::new(width, height, pixels)
}

/// Writes a binary PGM (P5); pixels are clamped to [0, 255] and rounded half-up.
pub fn save_pgm<P: AsRef<Path>>(img: &Image, path: P) -> Result<()> {
    let mut out = Vec::with_capacity(32 + img.pixels.len());
    write!(out, "P5\n{} {}\n255\n", img.width, img.height)?;
    out.extend(img.pixels.iter().map(|&p| {
        let v = (p + 0.5).floor();
        v.clamp(0.0, 255.0) as u8
    }));
    fs::write(path, out)?;
    Ok(())
}

/// s x s block-mean downsampling. `s` must be a power of two dividing both dimensions.
pub fn downsample_block(img: &Image, s: usize) -> Result<Image> {
    if !is_pow2(s) || s == 0 || img.width % s != 0 || img.height % s != 0 {
        return Err(Error::Dimension(format!(
            "factor {s} does not divide {}x{}",
            img.width, img.height
        )));
    }
    let (ow, oh) = (img.width / s, img.height / s);
    let inv = 1.0 / (s * s) as f64;
    let mut pixels = vec![0.0; ow * oh];
    for by in 0..oh {
        for bx in 0..ow {
            let mut acc = 0.0;
            for dy in 0..s {
                let row = (by * s + dy) * img.width + bx * s;
                for dx in 0..s {
                    acc += img.pixels[row + dx];
                }
            }
            pixels[by * ow + bx] = acc * inv;
        }
    }
    Image::new(ow, oh, pixels)
}

/// Bilinear upsampling by a power-of-two factor, samples treated as block
/// centers, edge values replicated (clamped source coordinates).
pub fn upsample_bilinear(img: &Image, s: usize) -> Result<Image> {
    if !is_pow2(s) || s == 0 {
        return Err(Error::Dimension(format!("factor {s} must be a power of two")));
    }
    let (ow, oh) = (img.width * s, img.height * s);
    let mut pixels = vec![0.0; ow * oh];
    let sf = s as f64;
    for oy in 0..oh {
        let sy = (oy as f64 + 0.5) / sf - 0.5;
        let y0 = sy.floor();
        let ty = sy - y0;
        let yi0 = (y0.max(0.0) as usize).min(img.height - 1);
        let yi1 = ((y0 + 1.0).max(0.0) as usize).min(img.height - 1);
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) / sf - 0.5;
            let x0 = sx.floor();
            let tx = sx - x0;
            let xi0 = (x0.max(0.0) as usize).min(img.width - 1);
            let xi1 = ((x0 + 1.0).max(0.0) as usize).min(img.width - 1);
            let a = img.get(xi0, yi0);
            let b = img.get(xi1, yi0);
            let c = img.get(xi0, yi1);
            let d = img.get(xi1, yi1);
            let top = a + (b - a) * tx;
            let bot = c + (d - c) * tx;
            pixels[oy * ow + ox] = top + (bot - top) * ty;
        }
    }
    Image::new(ow, oh, pixels)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.pixels.len() as f64)
}

/// PSNR in dB with peak fixed at 255; +inf when the images are identical.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    let e = mse(reference, test)?;
    if e == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (PEAK * PEAK / e).log10())
    }
}
