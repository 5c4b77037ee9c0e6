//! Fast low-resolution preview from base-layer measurements, and its
//! interpolation to full resolution for inter-layer prediction.

use crate::image::{upsample_bilinear, Image};
use crate::sensing::{apply_rademacher, Layer, MeasurementVector, RademacherOperator, SensingConfig};
use crate::transform::ifwht;
use crate::{Error, Result};

/// √m_B × √m_B preview image in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct Preview {
    pub image: Image,
}

/// x_P = (1/s_pre²) H⁻¹ y_B, reshaped row-major to the preview raster.
///
/// The 1/s_pre² rescaling undoes the block-sum convention of `D` so that, for
/// measurements of a block-replicated signal, the preview equals the
/// low-resolution generator exactly.
pub fn compute_preview(y_b: &[f64], config: &SensingConfig) -> Result<Preview> {
    if y_b.len() != config.m_b() {
        return Err(Error::Dimension(format!(
            "expected {} base measurements, got {}",
            config.m_b(),
            y_b.len()
        )));
    }
    let mut x_p = ifwht(y_b)?;
    let s = config.s_pre();
    let inv = 1.0 / (s * s) as f64;
    for v in &mut x_p {
        *v *= inv;
    }
    Ok(Preview {
        image: Image::new(config.preview_width, config.preview_height, x_p)?,
    })
}

/// Bilinear interpolation of the preview up to full resolution.
pub fn predict_full(preview: &Preview, config: &SensingConfig) -> Result<Image> {
    let factor = config.s_pre() * config.s_base();
    upsample_bilinear(&preview.image, factor)
}

/// y_pred = Phi_E · vec(predicted image).
pub fn predict_measurements(
    pred: &Image,
    phi_e: &RademacherOperator,
) -> Result<MeasurementVector> {
    apply_rademacher(phi_e, pred.pixels(), Layer::Enhancement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::downsample_block;
    use crate::sensing::{apply_dss, DssOperator, LinearOperator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SensingConfig {
        SensingConfig::new(32, 16, 8, 16, 21, 22).unwrap()
    }

    #[test]
    fn exact_preview_of_replicated_signal() {
        let cfg = cfg();
        let op = DssOperator::new(cfg).unwrap();
        let s = cfg.s_pre();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z: Vec<f64> = (0..cfg.m_b()).map(|_| rng.gen_range(0.0..255.0)).collect();
        let mut x_b = vec![0.0; cfg.n_b()];
        for by in 0..cfg.preview_height {
            for bx in 0..cfg.preview_width {
                let v = z[by * cfg.preview_width + bx];
                for dy in 0..s {
                    let base = (by * s + dy) * cfg.base_width + bx * s;
                    for x in &mut x_b[base..base + s] {
                        *x = v;
                    }
                }
            }
        }
        let y = apply_dss(&op, &x_b).unwrap();
        let p = compute_preview(&y.values, &cfg).unwrap();
        for (got, want) in p.image.pixels().iter().zip(&z) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_measurements_zero_preview() {
        let cfg = cfg();
        let p = compute_preview(&vec![0.0; cfg.m_b()], &cfg).unwrap();
        assert!(p.image.pixels().iter().all(|&v| v == 0.0));
        assert_eq!(p.image.width(), cfg.preview_width);
    }

    #[test]
    fn preview_length_mismatch() {
        let cfg = cfg();
        assert!(compute_preview(&[0.0; 3], &cfg).is_err());
    }

    #[test]
    fn predict_full_constant_and_sizes() {
        let cfg = cfg();
        let p = Preview {
            image: Image::constant(cfg.preview_width, cfg.preview_height, 9.0).unwrap(),
        };
        let full = predict_full(&p, &cfg).unwrap();
        assert_eq!(full.width(), cfg.width);
        assert!(full.pixels().iter().all(|&v| (v - 9.0).abs() < 1e-12));
    }

    #[test]
    fn predict_full_reproduces_affine_interior() {
        let cfg = cfg();
        let pw = cfg.preview_width;
        let p = Preview {
            image: Image::new(
                pw,
                pw,
                (0..pw * pw)
                    .map(|i| 3.0 * (i % pw) as f64 + 2.0 * (i / pw) as f64 + 5.0)
                    .collect(),
            )
            .unwrap(),
        };
        let full = predict_full(&p, &cfg).unwrap();
        let down = downsample_block(&full, cfg.s_pre() * cfg.s_base()).unwrap();
        for y in 1..pw - 1 {
            for x in 1..pw - 1 {
                assert!((down.get(x, y) - p.image.get(x, y)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn predict_measurements_zero_and_oracle() {
        let cfg = cfg();
        let phi_e = RademacherOperator::new(cfg.m_e, cfg.n(), cfg.seed_e).unwrap();
        let zero = Image::zeros(cfg.width, cfg.height).unwrap();
        let y = predict_measurements(&zero, &phi_e).unwrap();
        assert!(y.values.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Image::new(
            cfg.width,
            cfg.height,
            (0..cfg.n()).map(|_| rng.gen_range(0.0..255.0)).collect(),
        )
        .unwrap();
        let direct = phi_e.apply(img.pixels());
        let via = predict_measurements(&img, &phi_e).unwrap();
        assert_eq!(via.values, direct);
    }

    #[test]
    fn perfect_prediction_gives_zero_residual() {
        let cfg = cfg();
        let phi_e = RademacherOperator::new(cfg.m_e, cfg.n(), cfg.seed_e).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = Image::new(
            cfg.width,
            cfg.height,
            (0..cfg.n()).map(|_| rng.gen_range(0.0..255.0)).collect(),
        )
        .unwrap();
        let y_e = phi_e.apply(img.pixels());
        let y_pred = predict_measurements(&img, &phi_e).unwrap();
        for (a, b) in y_e.iter().zip(&y_pred.values) {
            assert_eq!(a, b);
        }
    }
}
