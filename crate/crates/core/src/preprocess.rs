//! Amplitude normalization, clipping and tiling.
//!
//! Amplitudes are divided by `mu + k * sigma` of the image and clipped to
//! `[0, 1]`. Everything at or above the threshold becomes exactly `1.0`, which
//! later stages treat as the saturation sentinel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::AmplitudeImage;

pub const DEFAULT_SIGMA_MULTIPLIER: f64 = 3.0;

/// Largest `f32` strictly below 1. Unsaturated pixels never round up to the
/// sentinel.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mu: f64,
    pub sigma: f64,
    pub k: f64,
}

impl NormalizationParams {
    pub fn new(mu: f64, sigma: f64, k: f64) -> Result<Self> {
        let p = Self { mu, sigma, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.sigma.is_finite() && self.k.is_finite()) {
            return Err(Error::InvalidParameter("non-finite normalization params".into()));
        }
        if self.mu < 0.0 || self.sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mu={} sigma={} must be non-negative",
                self.mu, self.sigma
            )));
        }
        if self.threshold() <= 0.0 {
            return Err(Error::ZeroDenominator(self.threshold()));
        }
        Ok(())
    }

    /// `mu + k * sigma`, the amplitude mapped to 1.
    pub fn threshold(&self) -> f64 {
        self.mu + self.k * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub total_pixels: u64,
    pub saturated_pixels: u64,
    pub fraction: f64,
}

impl SaturationReport {
    pub fn new(total_pixels: u64, saturated_pixels: u64) -> Self {
        let fraction = if total_pixels == 0 {
            0.0
        } else {
            saturated_pixels as f64 / total_pixels as f64
        };
        Self {
            total_pixels,
            saturated_pixels,
            fraction,
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self::new(
            self.total_pixels + other.total_pixels,
            self.saturated_pixels + other.saturated_pixels,
        )
    }
}

/// Population mean and standard deviation of the image.
pub fn compute_norm_params(image: &AmplitudeImage, k: f64) -> Result<NormalizationParams> {
    if image.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    if image.is_empty() {
        return Err(Error::Empty("image has no pixels".into()));
    }
    let n = image.len() as f64;
    let mu = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image
        .data()
        .iter()
        .map(|&v| {
            let d = v as f64 - mu;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(NormalizationParams {
        mu,
        sigma: var.sqrt(),
        k,
    })
}

pub fn normalize_clip(
    image: &AmplitudeImage,
    params: &NormalizationParams,
) -> Result<(AmplitudeImage, SaturationReport)> {
    params.validate()?;
    let threshold = params.threshold();
    let mut saturated = 0u64;
    let data: Vec<f32> = image
        .data()
        .iter()
        .map(|&a| {
            let a = a as f64;
            if a >= threshold {
                saturated += 1;
                1.0
            } else {
                ((a / threshold) as f32).min(BELOW_ONE)
            }
        })
        .collect();
    let report = SaturationReport::new(image.len() as u64, saturated);
    let out = AmplitudeImage::with_meta(
        image.width(),
        image.height(),
        data,
        true,
        image.source_id(),
    )?;
    Ok((out, report))
}

/// Per-image normalization: statistics come from the image itself.
pub fn normalize_image(image: &AmplitudeImage, k: f64) -> Result<(AmplitudeImage, SaturationReport)> {
    let params = compute_norm_params(image, k)?;
    normalize_clip(image, &params)
}

/// All `tile_size`² windows fully inside the image, row-major by offset.
pub fn tile(image: &AmplitudeImage, tile_size: usize, stride: usize) -> Result<Vec<AmplitudeImage>> {
    if tile_size == 0 || stride == 0 {
        return Err(Error::InvalidParameter(format!(
            "tile_size={tile_size} stride={stride} must be >= 1"
        )));
    }
    let (w, h) = (image.width(), image.height());
    if tile_size > w || tile_size > h {
        return Ok(Vec::new());
    }
    let offsets: Vec<(usize, usize)> = (0..=h - tile_size)
        .step_by(stride)
        .flat_map(|y| (0..=w - tile_size).step_by(stride).map(move |x| (x, y)))
        .collect();
    offsets
        .into_par_iter()
        .map(|(x, y)| image.crop(x, y, tile_size, tile_size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn img(data: &[f32]) -> AmplitudeImage {
        AmplitudeImage::new(data.len(), 1, data.to_vec()).unwrap()
    }

    #[test]
    fn population_statistics() {
        let p = compute_norm_params(&img(&[1., 2., 3., 4.]), 3.0).unwrap();
        assert_abs_diff_eq!(p.mu, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.sigma, 1.25f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.sigma, 1.118034, epsilon = 1e-6);

        let c = compute_norm_params(&img(&[7., 7., 7.]), 3.0).unwrap();
        assert_eq!((c.mu, c.sigma), (7.0, 0.0));
        let s = compute_norm_params(&img(&[5.]), 3.0).unwrap();
        assert_eq!((s.mu, s.sigma), (5.0, 0.0));
    }

    #[test]
    fn normalized_input_rejected() {
        let i = AmplitudeImage::with_meta(1, 1, vec![0.5], true, "").unwrap();
        assert!(matches!(
            compute_norm_params(&i, 3.0),
            Err(Error::AlreadyNormalized)
        ));
    }

    #[test]
    fn normalize_known_values() {
        let p = NormalizationParams::new(2.5, 1.118034, 3.0).unwrap();
        let (out, rep) = normalize_clip(&img(&[1., 2., 3., 4.]), &p).unwrap();
        // direct formula: A / (2.5 + 3 * 1.118034)
        let want = [0.170820, 0.341641, 0.512461, 0.683282];
        for (a, b) in out.data().iter().zip(want) {
            assert_abs_diff_eq!(*a as f64, b, epsilon = 1e-6);
        }
        assert_eq!(rep.saturated_pixels, 0);
        assert!(out.is_normalized());
    }

    #[test]
    fn all_zero_image_is_zero_denominator() {
        let i = img(&[0., 0., 0.]);
        let p = compute_norm_params(&i, 3.0).unwrap();
        assert!(matches!(normalize_clip(&i, &p), Err(Error::ZeroDenominator(_))));
    }

    #[test]
    fn all_zero_image_with_explicit_params() {
        let p = NormalizationParams::new(1.0, 0.5, 3.0).unwrap();
        let (out, rep) = normalize_clip(&img(&[0., 0.]), &p).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
        assert_eq!(rep.saturated_pixels, 0);
    }

    #[test]
    fn threshold_pixel_counts_as_saturated() {
        let p = NormalizationParams::new(1.0, 0.0, 3.0).unwrap();
        let (out, rep) = normalize_clip(&img(&[0.5, 1.0, 2.0]), &p).unwrap();
        assert_eq!(out.data(), &[0.5, 1.0, 1.0]);
        assert_eq!(rep.saturated_pixels, 2);
        assert_abs_diff_eq!(rep.fraction, 2.0 / 3.0);
    }

    #[test]
    fn near_threshold_pixel_stays_below_sentinel() {
        let t = 1.0 + 1e-9;
        let p = NormalizationParams::new(t, 0.0, 3.0).unwrap();
        let (out, rep) = normalize_clip(&img(&[1.0]), &p).unwrap();
        assert!(out.data()[0] < 1.0);
        assert_eq!(rep.saturated_pixels, 0);
    }

    #[test]
    fn tile_counts() {
        let big = AmplitudeImage::new(2048, 2048, vec![0.0; 2048 * 2048]).unwrap();
        assert_eq!(tile(&big, 1024, 1024).unwrap().len(), 4);
        let wide = AmplitudeImage::new(1500, 1024, vec![0.0; 1500 * 1024]).unwrap();
        assert_eq!(tile(&wide, 1024, 1024).unwrap().len(), 1);
        let small = AmplitudeImage::new(4, 4, (0..16).map(|v| v as f32).collect()).unwrap();
        let tiles = tile(&small, 2, 1).unwrap();
        assert_eq!(tiles.len(), 9);
        assert_eq!(tiles[1].data(), &[1., 2., 5., 6.]);
        assert!(tile(&small, 5, 1).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn output_in_unit_range_and_saturation_matches_threshold(
            data in prop::collection::vec(0.0f32..100.0, 1..200),
            k in 0.0f64..5.0,
        ) {
            let i = img(&data);
            let p = compute_norm_params(&i, k).unwrap();
            prop_assume!(p.threshold() > 0.0);
            let (out, rep) = normalize_clip(&i, &p).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let above = data.iter().filter(|&&a| a as f64 >= p.threshold()).count();
            let frac = above as f64 / data.len() as f64;
            prop_assert!((rep.fraction - frac).abs() <= 1e-12);
            let ones = out.data().iter().filter(|v| **v == 1.0).count() as u64;
            prop_assert_eq!(ones, rep.saturated_pixels);
        }

        #[test]
        fn tile_count_formula(
            w in 1usize..40, h in 1usize..40, ts in 1usize..12, stride in 1usize..6,
        ) {
            let i = AmplitudeImage::new(w, h, vec![0.0; w * h]).unwrap();
            let n = tile(&i, ts, stride).unwrap().len();
            let want = if w >= ts && h >= ts {
                ((w - ts) / stride + 1) * ((h - ts) / stride + 1)
            } else {
                0
            };
            prop_assert_eq!(n, want);
        }
    }
}
