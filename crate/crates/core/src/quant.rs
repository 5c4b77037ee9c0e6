//! Gaussian-companded embedded scalar quantization, plus the plain uniform
//! quantizer baseline.
//!
//! The compressor maps a measurement through the Gaussian CDF into [0, 1],
//! where a uniform scalar quantizer with 2^R levels applies. Quantization
//! indices are stored bit-plane-major (all MSBs first), so truncating the
//! stream after any plane boundary yields exactly the lower-rate code.

use statrs::function::erf::{erf, erf_inv};

use crate::{Error, Result};

pub const MAX_RATE: u8 = 16;

/// Zero-mean Gaussian measurement model with standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompanderModel {
    pub sigma: f64,
}

impl CompanderModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    /// Gaussian CDF compressor: F(y) = (1 + erf(y / sqrt(2) sigma)) / 2.
    pub fn compress(&self, y: f64) -> f64 {
        0.5 * (1.0 + erf(y / (self.sigma * std::f64::consts::SQRT_2)))
    }

    /// Inverse-CDF expander: F⁻¹(u) = sigma sqrt(2) erf⁻¹(2u − 1).
    pub fn expand(&self, u: f64) -> f64 {
        self.sigma * std::f64::consts::SQRT_2 * erf_inv(2.0 * u - 1.0)
    }
}

/// Zero-mean maximum-likelihood fit: sigma = RMS of the samples.
/// An all-zero vector falls back to sigma = 1.
pub fn fit_model(y: &[f64]) -> Result<CompanderModel> {
    if y.is_empty() {
        return Err(Error::Config("cannot fit a model to an empty vector".into()));
    }
    let ms = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let sigma = ms.sqrt();
    CompanderModel::new(if sigma > 0.0 { sigma } else { 1.0 })
}

/// How indices map back to reconstruction values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantMapping {
    Companded(CompanderModel),
    Uniform { lo: f64, hi: f64 },
}

/// Bit-plane-ordered quantized representation supporting prefix truncation.
///
/// Plane p holds bit (R−1−p) of every index; within a plane, measurement j
/// sits at byte j/8, bit 7−(j%8). Planes are byte-aligned, padding bits zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedCode {
    rate: u8,
    count: usize,
    planes: Vec<u8>,
    mapping: QuantMapping,
}

fn check_rate(r: u8) -> Result<()> {
    if r == 0 || r > MAX_RATE {
        Err(Error::Rate(r))
    } else {
        Ok(())
    }
}

pub fn plane_bytes(count: usize) -> usize {
    count.div_ceil(8)
}

fn pack_indices(indices: &[u32], rate: u8) -> Vec<u8> {
    let pb = plane_bytes(indices.len());
    let mut planes = vec![0u8; pb * rate as usize];
    for p in 0..rate as usize {
        let shift = rate as usize - 1 - p;
        let plane = &mut planes[p * pb..(p + 1) * pb];
        for (j, &idx) in indices.iter().enumerate() {
            if (idx >> shift) & 1 == 1 {
                plane[j / 8] |= 0x80 >> (j % 8);
            }
        }
    }
    planes
}

fn quantize_unit(u: f64, rate: u8) -> u32 {
    let levels = 1u32 << rate;
    let idx = (u * levels as f64).floor();
    if idx < 0.0 {
        0
    } else {
        (idx as u32).min(levels - 1)
    }
}

/// Companded quantization at `rate` bits per measurement.
pub fn quantize(y: &[f64], rate: u8, model: &CompanderModel) -> Result<EmbeddedCode> {
    check_rate(rate)?;
    let indices: Vec<u32> = y
        .iter()
        .map(|&v| quantize_unit(model.compress(v), rate))
        .collect();
    Ok(EmbeddedCode {
        rate,
        count: y.len(),
        planes: pack_indices(&indices, rate),
        mapping: QuantMapping::Companded(*model),
    })
}

/// Uniform quantization over [lo, hi]; values outside the range are clamped.
pub fn quantize_uniform(y: &[f64], rate: u8, lo: f64, hi: f64) -> Result<EmbeddedCode> {
    check_rate(rate)?;
    if !(lo < hi) {
        return Err(Error::Config(format!("invalid range [{lo}, {hi}]")));
    }
    let span = hi - lo;
    let indices: Vec<u32> = y
        .iter()
        .map(|&v| quantize_unit((v.clamp(lo, hi) - lo) / span, rate))
        .collect();
    Ok(EmbeddedCode {
        rate,
        count: y.len(),
        planes: pack_indices(&indices, rate),
        mapping: QuantMapping::Uniform { lo, hi },
    })
}

impl EmbeddedCode {
    pub fn rate(&self) -> u8 {
        self.rate
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mapping(&self) -> &QuantMapping {
        &self.mapping
    }

    /// Raw bit-plane bytes, plane-major.
    pub fn planes(&self) -> &[u8] {
        &self.planes
    }

    /// Payload size in bits, excluding plane padding.
    pub fn payload_bits(&self) -> usize {
        self.rate as usize * self.count
    }

    /// Rebuilds a code from its serialized planes.
    pub fn from_planes(
        planes: Vec<u8>,
        rate: u8,
        count: usize,
        mapping: QuantMapping,
    ) -> Result<Self> {
        check_rate(rate)?;
        if planes.len() != plane_bytes(count) * rate as usize {
            return Err(Error::Bitstream(format!(
                "expected {} plane bytes, got {}",
                plane_bytes(count) * rate as usize,
                planes.len()
            )));
        }
        Ok(Self { rate, count, planes, mapping })
    }

    /// Keeps the first `b` bit-planes; bit-identical to quantizing at rate `b`.
    pub fn truncate(&self, b: u8) -> Result<EmbeddedCode> {
        if b == 0 || b > self.rate {
            return Err(Error::Rate(b));
        }
        let pb = plane_bytes(self.count);
        Ok(EmbeddedCode {
            rate: b,
            count: self.count,
            planes: self.planes[..pb * b as usize].to_vec(),
            mapping: self.mapping,
        })
    }

    /// Recovers the per-measurement quantization indices.
    pub fn indices(&self) -> Vec<u32> {
        let pb = plane_bytes(self.count);
        let mut out = vec![0u32; self.count];
        for p in 0..self.rate as usize {
            let plane = &self.planes[p * pb..(p + 1) * pb];
            for (j, idx) in out.iter_mut().enumerate() {
                let bit = (plane[j / 8] >> (7 - j % 8)) & 1;
                *idx = (*idx << 1) | bit as u32;
            }
        }
        out
    }

    /// Bin-midpoint dequantization in the companded (or clamped) domain.
    pub fn dequantize(&self) -> Vec<f64> {
        let levels = (1u32 << self.rate) as f64;
        self.indices()
            .iter()
            .map(|&k| {
                let u = (k as f64 + 0.5) / levels;
                match self.mapping {
                    QuantMapping::Companded(m) => m.expand(u),
                    QuantMapping::Uniform { lo, hi } => lo + u * (hi - lo),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn fit_rms_and_fallback() {
        let m = fit_model(&[3.0, -3.0, 3.0, -3.0]).unwrap();
        assert!((m.sigma - 3.0).abs() < 1e-12);
        let z = fit_model(&[0.0; 8]).unwrap();
        assert_eq!(z.sigma, 1.0);
        assert!(fit_model(&[]).is_err());
    }

    #[test]
    fn fit_monte_carlo() {
        let normal = Normal::new(0.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let m = fit_model(&y).unwrap();
        assert!(m.sigma > 4.9 && m.sigma < 5.1, "sigma = {}", m.sigma);
    }

    #[test]
    fn compress_reference_points() {
        let m = CompanderModel::new(2.5).unwrap();
        assert!((m.compress(0.0) - 0.5).abs() < 1e-15);
        assert!((m.compress(2.5) - 0.841345).abs() < 1e-5);
        assert!((m.compress(-2.5) - 0.158655).abs() < 1e-5);
    }

    #[test]
    fn quantize_edge_conventions() {
        let m = CompanderModel::new(1.0).unwrap();
        for r in 1..=8u8 {
            let code = quantize(&[0.0], r, &m).unwrap();
            assert_eq!(code.indices(), vec![1u32 << (r - 1)], "rate {r}");
        }
        // R = 1 is the sign bit: 0 for negative, 1 for non-negative.
        let code = quantize(&[-3.0, -0.001, 0.0, 0.5, 10.0], 1, &m).unwrap();
        assert_eq!(code.indices(), vec![0, 0, 1, 1, 1]);
        // Extreme values clamp to the outer bins.
        let code = quantize(&[-1e9, 1e9], 4, &m).unwrap();
        assert_eq!(code.indices(), vec![0, 15]);
        assert!(quantize(&[0.0], 0, &m).is_err());
        assert!(quantize(&[0.0], 17, &m).is_err());
    }

    #[test]
    fn payload_accounting() {
        let m = CompanderModel::new(1.0).unwrap();
        let y = vec![0.0; 4096];
        let code = quantize(&y, 5, &m).unwrap();
        assert_eq!(code.payload_bits(), 20480);
        assert_eq!(code.planes().len(), 5 * 512);
    }

    #[test]
    fn truncate_identity_and_sign_plane() {
        let m = CompanderModel::new(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..100).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let code = quantize(&y, 5, &m).unwrap();
        assert_eq!(code.truncate(5).unwrap(), code);
        let one = code.truncate(1).unwrap();
        let signs = quantize(&y, 1, &m).unwrap();
        assert_eq!(one, signs);
        assert!(code.truncate(0).is_err());
        assert!(code.truncate(6).is_err());
    }

    #[test]
    fn embedded_property_bitwise() {
        let m = CompanderModel::new(1.7).unwrap();
        let normal = Normal::new(0.0, 1.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        for big in 1..=10u8 {
            let code = quantize(&y, big, &m).unwrap();
            for b in 1..=big {
                assert_eq!(
                    code.truncate(b).unwrap(),
                    quantize(&y, b, &m).unwrap(),
                    "B={big} b={b}"
                );
            }
        }
    }

    #[test]
    fn dequantize_reference_values() {
        let m = CompanderModel::new(1.0).unwrap();
        // R = 1, index 1: midpoint u = 0.75 -> standard normal quantile 0.6745.
        let code = quantize(&[0.5], 1, &m).unwrap();
        let v = code.dequantize()[0];
        assert!((v - 0.674489).abs() < 1e-5);
        // Quantize-dequantize of 0 at R = 5 stays near 0.
        let sigma = 3.0;
        let m3 = CompanderModel::new(sigma).unwrap();
        let v = quantize(&[0.0], 5, &m3).unwrap().dequantize()[0];
        assert!(v.abs() < 0.05 * sigma);
        // Odd symmetry.
        let v = quantize(&[1.25, -1.25], 6, &m).unwrap().dequantize();
        assert!((v[0] + v[1]).abs() < 1e-12);
    }

    #[test]
    fn uniform_two_level_and_mse() {
        let code = quantize_uniform(&[0.0, 0.49, 0.51, 1.0], 1, 0.0, 1.0).unwrap();
        assert_eq!(code.indices(), vec![0, 0, 1, 1]);
        assert!(quantize_uniform(&[0.0], 3, 1.0, 1.0).is_err());

        // High-rate MSE of a uniform source: (hi-lo)^2 / (12 * 4^R) within 10%.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (lo, hi, r) = (-2.0, 3.0, 7u8);
        let y: Vec<f64> = (0..200_000).map(|_| rng.gen_range(lo..hi)).collect();
        let deq = quantize_uniform(&y, r, lo, hi).unwrap().dequantize();
        let mse = y
            .iter()
            .zip(&deq)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / y.len() as f64;
        let theory = (hi - lo) * (hi - lo) / (12.0 * 4f64.powi(r as i32));
        assert!((mse - theory).abs() < 0.1 * theory, "mse {mse} theory {theory}");
    }

    #[test]
    fn companded_beats_wide_range_uniform_on_gaussian() {
        // Companding concentrates resolution where the mass is; a uniform
        // code sized for a conservative +-8 sigma range wastes most of it.
        let normal = Normal::new(0.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let model = fit_model(&y).unwrap();
        let (lo, hi) = (-8.0 * model.sigma, 8.0 * model.sigma);
        let mse = |deq: &[f64]| {
            y.iter()
                .zip(deq)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / y.len() as f64
        };
        let r = 5;
        let comp = mse(&quantize(&y, r, &model).unwrap().dequantize());
        let unif = mse(&quantize_uniform(&y, r, lo, hi).unwrap().dequantize());
        assert!(comp < unif, "companded {comp} vs uniform {unif}");
    }

    proptest! {
        #[test]
        fn index_monotone_in_input(a in -10.0f64..10.0, b in -10.0f64..10.0, r in 1u8..=10) {
            let m = CompanderModel::new(2.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let code = quantize(&[lo, hi], r, &m).unwrap();
            let idx = code.indices();
            prop_assert!(idx[0] <= idx[1]);
        }

        #[test]
        fn dequantized_value_stays_in_bin(v in -8.0f64..8.0, r in 1u8..=10) {
            let m = CompanderModel::new(1.5).unwrap();
            let code = quantize(&[v], r, &m).unwrap();
            let k = code.indices()[0] as f64;
            let levels = (1u32 << r) as f64;
            let u = m.compress(code.dequantize()[0]);
            prop_assert!(u >= k / levels - 1e-12 && u < (k + 1.0) / levels + 1e-12);
        }
    }
}
