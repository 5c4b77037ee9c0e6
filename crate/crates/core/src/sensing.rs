//! Sensing operators: the dual-scale (DSS) base-layer matrix `Phi_B = H D + F`,
//! its zero-column augmentation to full resolution, and seeded Rademacher
//! matrices for the enhancement and non-scalable layers.
//!
//! Operators are matrix-free where it pays off: `H` is applied with the FWHT,
//! `D` as block sums, while `F` and the Rademacher rows keep their random sign
//! patterns bit-packed (1 bit per entry). Everything is a deterministic
//! function of (seed, config); row `i` draws from the counter-based substream
//! `(seed, i)` so construction order never matters.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{downsample_block, Image};
use crate::transform::fwht_in_place;
use crate::{Error, Result};

/// Provenance tag for a measurement vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Base,
    Enhancement,
    Residual,
    Monolithic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub layer: Layer,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>, layer: Layer) -> Self {
        Self { values, layer }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn is_pow2(v: usize) -> bool {
    v != 0 && v & (v - 1) == 0
}

/// Geometry and seeds that fully determine every sensing operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensingConfig {
    pub width: usize,
    pub height: usize,
    pub base_width: usize,
    pub base_height: usize,
    pub preview_width: usize,
    pub preview_height: usize,
    pub m_e: usize,
    pub seed_b: u64,
    pub seed_e: u64,
}

impl SensingConfig {
    /// Square geometry: full `width`², base `base_width`², preview
    /// `preview_width`² (so `m_B = preview_width²`).
    pub fn new(
        width: usize,
        base_width: usize,
        preview_width: usize,
        m_e: usize,
        seed_b: u64,
        seed_e: u64,
    ) -> Result<Self> {
        let cfg = Self {
            width,
            height: width,
            base_width,
            base_height: base_width,
            preview_width,
            preview_height: preview_width,
            m_e,
            seed_b,
            seed_e,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width", self.width),
            ("base_width", self.base_width),
            ("preview_width", self.preview_width),
        ] {
            if !is_pow2(v) {
                return Err(Error::Config(format!("{name} = {v} is not a power of two")));
            }
        }
        if self.height != self.width
            || self.base_height != self.base_width
            || self.preview_height != self.preview_width
        {
            return Err(Error::Config("non-square geometry unsupported".into()));
        }
        if self.preview_width * 2 > self.base_width {
            return Err(Error::Config(format!(
                "preview-to-base factor must be >= 2 (preview {}, base {})",
                self.preview_width, self.base_width
            )));
        }
        if self.base_width > self.width {
            return Err(Error::Config(format!(
                "base {} exceeds full resolution {}",
                self.base_width, self.width
            )));
        }
        if self.m_b() < 4 {
            return Err(Error::Config("m_B must be at least 4".into()));
        }
        if self.m_e == 0 || self.m_e > self.n() {
            return Err(Error::Config(format!(
                "m_E = {} out of range 1..={}",
                self.m_e,
                self.n()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.width * self.height
    }

    pub fn n_b(&self) -> usize {
        self.base_width * self.base_height
    }

    pub fn m_b(&self) -> usize {
        self.preview_width * self.preview_height
    }

    /// Preview-to-base upsampling factor (block edge of `D`).
    pub fn s_pre(&self) -> usize {
        self.base_width / self.preview_width
    }

    /// Base-to-full factor.
    pub fn s_base(&self) -> usize {
        self.width / self.base_width
    }
}

/// ChaCha8 substream for row `row` under `seed`; rows are independent.
fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// Dense ±1 matrix stored one bit per entry (bit set = −1), row-major words.
#[derive(Debug, Clone)]
struct SignMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl SignMatrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        Self {
            rows,
            cols,
            words_per_row,
            bits: vec![0u64; rows * words_per_row],
        }
    }

    #[inline]
    fn set_negative(&mut self, row: usize, col: usize) {
        self.bits[row * self.words_per_row + col / 64] |= 1u64 << (col % 64);
    }

    #[inline]
    fn sign(&self, row: usize, col: usize) -> f64 {
        let bit = (self.bits[row * self.words_per_row + col / 64] >> (col % 64)) & 1;
        1.0 - 2.0 * bit as f64
    }

    /// out[i] = sum_j sign(i,j) x[j]. Since sign is ±1 this is
    /// `sum(x) - 2 * sum over negative columns`, so each row only visits its
    /// set bits; summation order is fixed, so results are reproducible.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        let total: f64 = x.iter().sum();
        for (i, out_i) in out.iter_mut().enumerate() {
            let row = &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row];
            let mut neg = 0.0;
            for (w, chunk) in row.iter().zip(x.chunks(64)) {
                let mut w = *w;
                while w != 0 {
                    neg += chunk[w.trailing_zeros() as usize];
                    w &= w - 1;
                }
            }
            *out_i = total - 2.0 * neg;
        }
    }

    /// out[j] += sum_i sign(i,j) y[i], as `sum(y)` everywhere minus `2 y[i]`
    /// on each row's negative columns; purely additive, so accumulating into
    /// a non-zero `out` is fine.
    fn accumulate_adjoint(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        let mut total = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            total += yi;
            if yi == 0.0 {
                continue;
            }
            let twice = 2.0 * yi;
            let row = &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row];
            for (w, chunk) in row.iter().zip(out.chunks_mut(64)) {
                let mut w = *w;
                while w != 0 {
                    chunk[w.trailing_zeros() as usize] -= twice;
                    w &= w - 1;
                }
            }
        }
        for o in out.iter_mut() {
            *o += total;
        }
    }
}

/// A linear map with adjoint, the surface the TV solver works against.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// Panics if `x.len() != cols()`.
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    /// Panics if `y.len() != rows()`.
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// Base-layer operator `Phi_B = H D + F` acting on base-resolution vectors.
///
/// `D` is the s×s block-sum downsampler, `H` the Sylvester Hadamard applied
/// via FWHT, and each row of `F` carries, inside every s×s block, a seeded
/// arrangement of exactly half +1 and half −1 (so `F D^T = 0` exactly).
pub struct DssOperator {
    config: SensingConfig,
    f: SignMatrix,
}

impl DssOperator {
    pub fn new(config: SensingConfig) -> Result<Self> {
        config.validate()?;
        let m_b = config.m_b();
        let n_b = config.n_b();
        let s = config.s_pre();
        let block_len = s * s;
        let mut f = SignMatrix::zeros(m_b, n_b);
        let mut pattern: Vec<bool> = vec![false; block_len];
        for row in 0..m_b {
            let mut rng = row_rng(config.seed_b, row as u64);
            for by in 0..config.preview_height {
                for bx in 0..config.preview_width {
                    for (k, p) in pattern.iter_mut().enumerate() {
                        *p = k < block_len / 2;
                    }
                    pattern.shuffle(&mut rng);
                    for dy in 0..s {
                        let base = (by * s + dy) * config.base_width + bx * s;
                        for dx in 0..s {
                            if pattern[dy * s + dx] {
                                f.set_negative(row, base + dx);
                            }
                        }
                    }
                }
            }
        }
        Ok(Self { config, f })
    }

    pub fn config(&self) -> &SensingConfig {
        &self.config
    }

    /// Entry of `F` at (row, col); test and oracle access.
    pub fn f_entry(&self, row: usize, col: usize) -> f64 {
        self.f.sign(row, col)
    }

    /// s×s block sums of a base-resolution vector, preview raster order.
    fn block_sums(&self, x_b: &[f64]) -> Vec<f64> {
        let s = self.config.s_pre();
        let pw = self.config.preview_width;
        let ph = self.config.preview_height;
        let bw = self.config.base_width;
        let mut out = vec![0.0; pw * ph];
        for by in 0..ph {
            for bx in 0..pw {
                let mut acc = 0.0;
                for dy in 0..s {
                    let row = (by * s + dy) * bw + bx * s;
                    for dx in 0..s {
                        acc += x_b[row + dx];
                    }
                }
                out[by * pw + bx] = acc;
            }
        }
        out
    }
}

impl LinearOperator for DssOperator {
    fn rows(&self) -> usize {
        self.config.m_b()
    }

    fn cols(&self) -> usize {
        self.config.n_b()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        let mut y = self.block_sums(x);
        fwht_in_place(&mut y).expect("m_B is a power of two");
        let mut fx = vec![0.0; self.rows()];
        self.f.apply(x, &mut fx);
        for (a, b) in y.iter_mut().zip(&fx) {
            *a += b;
        }
        y
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows());
        // Phi^T y = D^T (H y) + F^T y; D^T replicates into blocks.
        let mut t = y.to_vec();
        fwht_in_place(&mut t).expect("m_B is a power of two");
        let s = self.config.s_pre();
        let pw = self.config.preview_width;
        let bw = self.config.base_width;
        let mut out = vec![0.0; self.cols()];
        for by in 0..self.config.preview_height {
            for bx in 0..pw {
                let v = t[by * pw + bx];
                for dy in 0..s {
                    let base = (by * s + dy) * bw + bx * s;
                    for o in &mut out[base..base + s] {
                        *o = v;
                    }
                }
            }
        }
        self.f.accumulate_adjoint(y, &mut out);
        out
    }
}

/// `Phi_B` augmented with zero columns to full resolution: the retained pixel
/// groups are the s_base×s_base block means, matching the image module's
/// downsampling convention.
pub struct AugmentedDssOperator {
    dss: DssOperator,
}

impl AugmentedDssOperator {
    pub fn new(config: SensingConfig) -> Result<Self> {
        Ok(Self {
            dss: DssOperator::new(config)?,
        })
    }

    pub fn inner(&self) -> &DssOperator {
        &self.dss
    }
}

impl LinearOperator for AugmentedDssOperator {
    fn rows(&self) -> usize {
        self.dss.rows()
    }

    fn cols(&self) -> usize {
        self.dss.config.n()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        let cfg = &self.dss.config;
        let img = Image::new(cfg.width, cfg.height, x.to_vec()).expect("validated config");
        let low = downsample_block(&img, cfg.s_base()).expect("validated config");
        self.dss.apply(low.pixels())
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let cfg = &self.dss.config;
        let t = self.dss.apply_adjoint(y);
        let s = cfg.s_base();
        let inv = 1.0 / (s * s) as f64;
        let mut out = vec![0.0; self.cols()];
        for by in 0..cfg.base_height {
            for bx in 0..cfg.base_width {
                let v = t[by * cfg.base_width + bx] * inv;
                for dy in 0..s {
                    let base = (by * s + dy) * cfg.width + bx * s;
                    for o in &mut out[base..base + s] {
                        *o = v;
                    }
                }
            }
        }
        out
    }
}

/// Seeded i.i.d. ±1 matrix; row `i` comes from substream `(seed, i)`.
pub struct RademacherOperator {
    rows: usize,
    cols: usize,
    seed: u64,
    signs: SignMatrix,
}

impl RademacherOperator {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("operator dimensions must be positive".into()));
        }
        let mut signs = SignMatrix::zeros(rows, cols);
        let wpr = signs.words_per_row;
        let tail_bits = cols % 64;
        for row in 0..rows {
            let mut rng = row_rng(seed, row as u64);
            let words = &mut signs.bits[row * wpr..(row + 1) * wpr];
            for w in words.iter_mut() {
                *w = rng.next_u64();
            }
            if tail_bits != 0 {
                // Padding bits stay clear so sign() is defined but unused.
                words[wpr - 1] &= (1u64 << tail_bits) - 1;
            }
        }
        Ok(Self { rows, cols, seed, signs })
    }

    /// Enhancement operator for a config: m_E × n from seed_E.
    pub fn enhancement(config: &SensingConfig) -> Result<Self> {
        Self::new(config.m_e, config.n(), config.seed_e)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.signs.sign(row, col)
    }
}

impl LinearOperator for RademacherOperator {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        self.signs.apply(x, &mut out);
        out
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        self.signs.accumulate_adjoint(y, &mut out);
        out
    }
}

/// y_B = Phi_B x_b on a base-resolution vector.
pub fn apply_dss(op: &DssOperator, x_b: &[f64]) -> Result<MeasurementVector> {
    if x_b.len() != op.cols() {
        return Err(Error::Dimension(format!(
            "expected {} base pixels, got {}",
            op.cols(),
            x_b.len()
        )));
    }
    Ok(MeasurementVector::new(op.apply(x_b), Layer::Base))
}

/// y_B = augmented Phi_B applied to a full-resolution image.
pub fn apply_augmented_dss(op: &AugmentedDssOperator, x: &Image) -> Result<MeasurementVector> {
    if x.width() != op.inner().config.width || x.height() != op.inner().config.height {
        return Err(Error::Dimension(format!(
            "expected {}x{} image, got {}x{}",
            op.inner().config.width,
            op.inner().config.height,
            x.width(),
            x.height()
        )));
    }
    Ok(MeasurementVector::new(op.apply(x.pixels()), Layer::Base))
}

pub fn apply_rademacher(
    op: &RademacherOperator,
    x: &[f64],
    layer: Layer,
) -> Result<MeasurementVector> {
    if x.len() != op.cols() {
        return Err(Error::Dimension(format!(
            "expected {} entries, got {}",
            op.cols(),
            x.len()
        )));
    }
    Ok(MeasurementVector::new(op.apply(x), layer))
}

pub fn apply_adjoint(op: &dyn LinearOperator, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != op.rows() {
        return Err(Error::Dimension(format!(
            "expected {} measurements, got {}",
            op.rows(),
            y.len()
        )));
    }
    Ok(op.apply_adjoint(y))
}
