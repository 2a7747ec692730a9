//! Numerical checks for the diffusion training objective: forward noising,
//! offset noise, low-noise timestep windows and the distribution-matching
//! refine loss.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp_stats::{histogram, kl_divergence};
use crate::error::{Error, Result};
use crate::raster::AmplitudeImage;

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_NOISE_OFFSET: f64 = 0.035;
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    /// Betas spaced linearly from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("schedule needs >= 1 step".into()));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParameter("schedule needs >= 1 step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidParameter(format!("beta {b} outside (0, 1)")));
        }
        let alpha_bar = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Cumulative product of `1 - beta` through step `t` (1-indexed).
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidParameter(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(self.alpha_bar[t - 1])
    }
}

/// `sqrt(ab) * z0 + sqrt(1 - ab) * eps` for an explicit `ab`.
pub fn forward_diffuse_with(z0: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if z0.len() != eps.len() {
        return Err(Error::DimensionMismatch(format!(
            "latent has {} elements, noise {}",
            z0.len(),
            eps.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::InvalidParameter(format!("alpha_bar {alpha_bar} outside [0, 1]")));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

pub fn forward_diffuse(
    z0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    forward_diffuse_with(z0, eps, schedule.alpha_bar(t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseOffsetConfig {
    pub gamma: f64,
}

impl Default for NoiseOffsetConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_NOISE_OFFSET,
        }
    }
}

/// `eps + gamma * delta[c]` where `eps` is laid out channel-major with
/// `delta.len()` equally sized channel planes.
pub fn offset_noise(eps: &[f64], delta: &[f64], cfg: &NoiseOffsetConfig) -> Result<Vec<f64>> {
    if cfg.gamma < 0.0 {
        return Err(Error::InvalidParameter(format!("gamma {} < 0", cfg.gamma)));
    }
    if delta.is_empty() || !eps.len().is_multiple_of(delta.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{} noise values do not split into {} channels",
            eps.len(),
            delta.len()
        )));
    }
    let plane = eps.len() / delta.len();
    if plane == 0 {
        return Ok(Vec::new());
    }
    Ok(eps
        .chunks_exact(plane)
        .zip(delta)
        .flat_map(|(chunk, d)| chunk.iter().map(move |e| e + cfg.gamma * d))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCheck {
    pub gamma: f64,
    pub samples: usize,
    pub plane_size: usize,
    pub seed: u64,
    pub mean: f64,
    pub variance: f64,
    pub expected_variance: f64,
}

/// Monte-Carlo estimate of the offset-noise moments over `samples` values,
/// split into channel planes of `plane_size` that share one `delta`.
///
/// Each plane draws from its own ChaCha stream, so results do not depend on
/// the thread count.
pub fn noise_check(gamma: f64, samples: usize, plane_size: usize, seed: u64) -> Result<NoiseCheck> {
    if samples == 0 || plane_size == 0 {
        return Err(Error::InvalidParameter("samples and plane size must be >= 1".into()));
    }
    let cfg = NoiseOffsetConfig { gamma };
    let planes = samples.div_ceil(plane_size);
    let sums = (0..planes)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let len = plane_size.min(samples - p * plane_size);
            let delta: f64 = rng.sample(StandardNormal);
            let eps: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let out = offset_noise(&eps, &[delta], &cfg)?;
            Ok(out.iter().fold((0.0, 0.0), |(s, s2), v| (s + v, s2 + v * v)))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = samples as f64;
    let mean = s / n;
    Ok(NoiseCheck {
        gamma,
        samples,
        plane_size,
        seed,
        mean,
        variance: s2 / n - mean * mean,
        expected_variance: 1.0 + gamma * gamma,
    })
}

/// Largest timestep in the low-noise window `{1, …, ceil(fraction * steps)}`.
pub fn window_upper(steps: usize, window_fraction: f64) -> Result<usize> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "window fraction {window_fraction} outside (0, 1]"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("schedule needs >= 1 step".into()));
    }
    let raw = window_fraction * steps as f64;
    // absorb representation error such as 0.15 * 1000 = 150.00000000000003
    let upper = (raw - raw * 1e-12).ceil() as usize;
    Ok(upper.clamp(1, steps))
}

/// Uniform draw from the window.
pub fn sample_timestep_window<R: Rng + ?Sized>(
    steps: usize,
    window_fraction: f64,
    rng: &mut R,
) -> Result<usize> {
    let upper = window_upper(steps, window_fraction)?;
    Ok(rng.gen_range(1..=upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineLossConfig {
    pub lambda_kl: f64,
    pub window_fraction: f64,
    pub bins: usize,
}

impl Default for RefineLossConfig {
    fn default() -> Self {
        Self {
            lambda_kl: 0.0,
            window_fraction: DEFAULT_WINDOW_FRACTION,
            bins: crate::amp_stats::DEFAULT_BINS,
        }
    }
}

/// Mean squared error between true and predicted noise.
pub fn base_noise_loss(eps: &[f64], eps_hat: &[f64]) -> Result<f64> {
    if eps.len() != eps_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} elements",
            eps.len(),
            eps_hat.len()
        )));
    }
    if eps.is_empty() {
        return Err(Error::Empty("no elements".into()));
    }
    Ok(eps
        .iter()
        .zip(eps_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / eps.len() as f64)
}

/// `base_loss + lambda_kl * KL(hist(real) || hist(gen))`.
pub fn refine_loss(
    base_loss: f64,
    real: &AmplitudeImage,
    gen: &AmplitudeImage,
    cfg: &RefineLossConfig,
) -> Result<f64> {
    if cfg.lambda_kl < 0.0 {
        return Err(Error::InvalidParameter(format!("lambda_kl {} < 0", cfg.lambda_kl)));
    }
    if !(cfg.window_fraction > 0.0 && cfg.window_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "window fraction {} outside (0, 1]",
            cfg.window_fraction
        )));
    }
    let p = histogram([real], cfg.bins)?;
    let q = histogram([gen], cfg.bins)?;
    Ok(compose_refine_loss(base_loss, kl_divergence(&p, &q)?, cfg.lambda_kl))
}

pub fn compose_refine_loss(base_loss: f64, kl: f64, lambda_kl: f64) -> f64 {
    base_loss + lambda_kl * kl
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn schedule_is_monotone() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert_abs_diff_eq!(s.betas()[0], 1e-4);
        assert_abs_diff_eq!(s.betas()[999], 0.02, epsilon = 1e-15);
        let ab: Vec<f64> = (1..=1000).map(|t| s.alpha_bar(t).unwrap()).collect();
        assert!(ab[0] <= 1.0);
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(0).is_err() && s.alpha_bar(1001).is_err());
    }

    #[test]
    fn forward_endpoints_and_hand_case() {
        let z0 = [1.0, -2.0];
        let eps = [0.3, 0.7];
        assert_eq!(forward_diffuse_with(&z0, &eps, 1.0).unwrap(), z0);
        assert_eq!(forward_diffuse_with(&z0, &eps, 0.0).unwrap(), eps);
        let z = forward_diffuse_with(&[1.0, 0.0], &[0.0, 1.0], 0.25).unwrap();
        assert_abs_diff_eq!(z[0], 0.5);
        assert_abs_diff_eq!(z[1], 0.866025, epsilon = 1e-6);
        assert!(forward_diffuse(&z0, 0, &eps, &DiffusionSchedule::default()).is_err());
    }

    #[test]
    fn zero_offset_is_identity() {
        let eps = [0.1, -0.4, 2.0, 0.0];
        let out = offset_noise(&eps, &[1.5, -0.3], &NoiseOffsetConfig { gamma: 0.0 }).unwrap();
        assert_eq!(out, eps);
    }

    #[test]
    fn offset_is_constant_within_channel() {
        let eps = [0.1, -0.4, 2.0, 0.0, 1.0, 1.0];
        let out = offset_noise(&eps, &[1.5, -0.3], &NoiseOffsetConfig::default()).unwrap();
        // the same rounded shift is added to every element of a channel
        let s = [0.035 * 1.5, 0.035 * -0.3];
        for (i, (o, e)) in out.iter().zip(&eps).enumerate() {
            assert_eq!(o.to_bits(), (e + s[i / 3]).to_bits());
            assert_abs_diff_eq!(o - e, s[i / 3], epsilon = 1e-15);
        }
        assert!(offset_noise(&eps, &[1.0; 4], &NoiseOffsetConfig::default()).is_err());
    }

    #[test]
    fn window_bounds() {
        assert_eq!(window_upper(1000, 0.15).unwrap(), 150);
        assert_eq!(window_upper(1000, 1.0).unwrap(), 1000);
        assert_eq!(window_upper(1000, 1e-9).unwrap(), 1);
        assert_eq!(window_upper(1000, 0.1501).unwrap(), 151);
        assert!(window_upper(1000, 0.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_timestep_window(1000, 1e-6, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn noise_loss_cases() {
        assert_eq!(base_noise_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(base_noise_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let (a, b) = ([0.3, -1.2, 2.0], [0.1, 0.5, -0.7]);
        let c = 3.0;
        let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * c).collect();
        assert_abs_diff_eq!(
            base_noise_loss(&sa, &sb).unwrap(),
            c * c * base_noise_loss(&a, &b).unwrap(),
            epsilon = 1e-12
        );
        assert!(base_noise_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn refine_loss_cases() {
        let real = AmplitudeImage::new(4, 1, vec![0.1, 0.2, 0.6, 0.9]).unwrap();
        let gen = AmplitudeImage::new(4, 1, vec![0.1, 0.1, 0.1, 0.9]).unwrap();
        let cfg = |l| RefineLossConfig {
            lambda_kl: l,
            bins: 2,
            ..Default::default()
        };
        assert_eq!(refine_loss(1.0, &real, &gen, &cfg(0.0)).unwrap(), 1.0);
        assert_abs_diff_eq!(refine_loss(1.0, &real, &real, &cfg(0.7)).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(compose_refine_loss(1.0, 0.143841, 0.5), 1.0719205, epsilon = 1e-9);
        // real [0.5, 0.5] against gen [0.75, 0.25]
        let want = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert_abs_diff_eq!(
            refine_loss(1.0, &real, &gen, &cfg(0.5)).unwrap(),
            1.0 + 0.5 * want,
            epsilon = 1e-9
        );
    }

    #[test]
    fn noise_check_is_deterministic() {
        let a = noise_check(0.035, 10_000, 256, 9).unwrap();
        let b = noise_check(0.035, 10_000, 256, 9).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a.expected_variance, 1.001225, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn forward_is_linear(
            z in prop::collection::vec(-3.0f64..3.0, 6),
            e in prop::collection::vec(-3.0f64..3.0, 6),
            t in 1usize..=1000,
            c in -2.0f64..2.0,
        ) {
            let s = DiffusionSchedule::default();
            let base = forward_diffuse(&z, t, &e, &s).unwrap();
            let zs: Vec<f64> = z.iter().map(|v| v * c).collect();
            let es: Vec<f64> = e.iter().map(|v| v * c).collect();
            let scaled = forward_diffuse(&zs, t, &es, &s).unwrap();
            for (a, b) in base.iter().zip(scaled) {
                prop_assert!((a * c - b).abs() < 1e-9);
            }
        }

        #[test]
        fn offset_preserves_within_channel_differences(
            eps in prop::collection::vec(-4.0f64..4.0, 12),
            delta in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let out = offset_noise(&eps, &delta, &NoiseOffsetConfig::default()).unwrap();
            for c in 0..3 {
                for i in 0..4 {
                    for j in 0..4 {
                        let (a, b) = (c * 4 + i, c * 4 + j);
                        prop_assert!(((out[a] - out[b]) - (eps[a] - eps[b])).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn refine_loss_monotone_in_lambda(l1 in 0.0f64..5.0, l2 in 0.0f64..5.0, kl in 0.0f64..3.0) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(compose_refine_loss(0.4, kl, lo) <= compose_refine_loss(0.4, kl, hi));
        }
    }
}
