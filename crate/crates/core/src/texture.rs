//! Gray-level co-occurrence texture analysis over homogeneous patches.
//!
//! Patches are square windows lying entirely inside the largest mask region.
//! Each patch is quantized, a co-occurrence matrix is built per
//! (distance, angle) and reduced to contrast, homogeneity, entropy and
//! correlation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{CategoryLabel, LabelSet};
use crate::raster::{AmplitudeImage, SceneMask};

pub const DEFAULT_LEVELS: usize = 64;
pub const DEFAULT_PATCH: usize = 64;
pub const DEFAULT_DISTANCES: [usize; 4] = [1, 2, 4, 8];
pub const DEFAULT_ANGLES: [f64; 4] = [0.0, 45.0, 90.0, 135.0];

/// Guard inside the entropy logarithm.
pub const ENTROPY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPosition {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

/// Square patch of gray-level codes in `[0, levels)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedPatch {
    size: usize,
    levels: usize,
    codes: Vec<u16>,
}

impl QuantizedPatch {
    pub fn from_codes(size: usize, levels: usize, codes: Vec<u16>) -> Result<Self> {
        if size == 0 || codes.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "{} codes for a {size}x{size} patch",
                codes.len()
            )));
        }
        if levels < 2 || levels > u16::MAX as usize + 1 {
            return Err(Error::InvalidParameter(format!("levels={levels}")));
        }
        if let Some(c) = codes.iter().find(|c| **c as usize >= levels) {
            return Err(Error::InvalidParameter(format!("code {c} >= levels {levels}")));
        }
        Ok(Self { size, levels, codes })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u16 {
        self.codes[y * self.size + x]
    }
}

/// Region id with the most pixels (ties go to the smaller id), ignoring 0.
pub fn largest_region(mask: &SceneMask) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &id in mask.data().iter().filter(|id| **id != 0) {
        *counts.entry(id).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| id)
}

/// Windows of `patch`² pixels fully inside the largest region, row-major.
pub fn extract_patches(
    image: &AmplitudeImage,
    mask: &SceneMask,
    patch: usize,
    stride: usize,
) -> Result<Vec<PatchPosition>> {
    if !mask.matches(image) {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    if patch == 0 || stride == 0 {
        return Err(Error::InvalidParameter(format!(
            "patch={patch} stride={stride} must be >= 1"
        )));
    }
    let region = largest_region(mask)
        .ok_or_else(|| Error::Empty("mask has no non-background region".into()))?;
    let (w, h) = (mask.width(), mask.height());
    if patch > w || patch > h {
        return Ok(Vec::new());
    }

    // Summed-area table of region membership.
    let stride_t = w + 1;
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += (mask.data()[y * w + x] == region) as u32;
            sat[(y + 1) * stride_t + x + 1] = sat[y * stride_t + x + 1] + row;
        }
    }
    let inside = |x: usize, y: usize| {
        let (x1, y1) = (x + patch, y + patch);
        let sum = sat[y1 * stride_t + x1] + sat[y * stride_t + x]
            - sat[y * stride_t + x1]
            - sat[y1 * stride_t + x];
        sum as usize == patch * patch
    };

    let mut out = Vec::new();
    for y in (0..=h - patch).step_by(stride) {
        for x in (0..=w - patch).step_by(stride) {
            if inside(x, y) {
                out.push(PatchPosition { x, y, size: patch });
            }
        }
    }
    Ok(out)
}

/// `code = min(floor(v * levels), levels - 1)`.
pub fn quantize(values: &[f32], size: usize, levels: usize) -> Result<QuantizedPatch> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::NotNormalized(format!("patch value {v}")));
    }
    let codes = values
        .iter()
        .map(|&v| ((v as f64 * levels as f64).floor() as usize).min(levels - 1) as u16)
        .collect();
    QuantizedPatch::from_codes(size, levels, codes)
}

pub fn quantize_window(
    image: &AmplitudeImage,
    pos: PatchPosition,
    levels: usize,
) -> Result<QuantizedPatch> {
    let window = image.crop(pos.x, pos.y, pos.size, pos.size)?;
    quantize(window.data(), pos.size, levels)
}

/// Pixel offset for distance `d` at angle `theta_deg`; x grows rightward,
/// y grows downward.
pub fn offset(d: usize, theta_deg: f64) -> (i64, i64) {
    let t = theta_deg.to_radians();
    let dx = (d as f64 * t.cos()).round() as i64;
    let dy = (d as f64 * t.sin()).round() as i64;
    (dx, dy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix {
    levels: usize,
    distance: usize,
    angle_deg: f64,
    matrix: Vec<f64>,
    pair_count: u64,
}

impl GlcmMatrix {
    /// Wraps a row-major `levels`×`levels` probability matrix.
    pub fn from_probabilities(levels: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != levels * levels {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for {levels} levels",
                matrix.len()
            )));
        }
        let total: f64 = matrix.iter().sum();
        if matrix.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "co-occurrence matrix must be non-negative with unit sum, sum={total}"
            )));
        }
        Ok(Self {
            levels,
            distance: 0,
            angle_deg: 0.0,
            matrix,
            pair_count: 0,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }

    pub fn pair_count(&self) -> u64 {
        self.pair_count
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    #[inline]
    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.matrix[l * self.levels + k]
    }

    pub fn transpose(&self) -> Self {
        let n = self.levels;
        let mut m = vec![0.0; n * n];
        for l in 0..n {
            for k in 0..n {
                m[k * n + l] = self.matrix[l * n + k];
            }
        }
        Self {
            matrix: m,
            ..self.clone()
        }
    }
}

/// Raw ordered-pair counts for the given offset.
pub fn cooccurrence_counts(patch: &QuantizedPatch, dx: i64, dy: i64) -> (Vec<u64>, u64) {
    let n = patch.size() as i64;
    let levels = patch.levels();
    let mut counts = vec![0u64; levels * levels];
    let mut pairs = 0u64;
    let (x0, x1) = (0.max(-dx), n.min(n - dx));
    let (y0, y1) = (0.max(-dy), n.min(n - dy));
    for y in y0..y1 {
        for x in x0..x1 {
            let a = patch.at(x as usize, y as usize) as usize;
            let b = patch.at((x + dx) as usize, (y + dy) as usize) as usize;
            counts[a * levels + b] += 1;
            pairs += 1;
        }
    }
    (counts, pairs)
}

/// Unit-sum co-occurrence matrix. With `symmetric`, the transpose is added
/// before normalizing.
pub fn glcm(patch: &QuantizedPatch, d: usize, theta_deg: f64, symmetric: bool) -> Result<GlcmMatrix> {
    if d == 0 {
        return Err(Error::InvalidParameter("distance must be >= 1".into()));
    }
    let (dx, dy) = offset(d, theta_deg);
    let (mut counts, mut pairs) = cooccurrence_counts(patch, dx, dy);
    if pairs == 0 {
        return Err(Error::NoPairs {
            dx,
            dy,
            size: patch.size(),
        });
    }
    let levels = patch.levels();
    if symmetric {
        let orig = counts.clone();
        for l in 0..levels {
            for k in 0..levels {
                counts[l * levels + k] += orig[k * levels + l];
            }
        }
        pairs *= 2;
    }
    let matrix = counts.iter().map(|&c| c as f64 / pairs as f64).collect();
    Ok(GlcmMatrix {
        levels,
        distance: d,
        angle_deg: theta_deg,
        matrix,
        pair_count: pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaralickFeatures {
    pub contrast: f64,
    pub homogeneity: f64,
    pub entropy: f64,
    /// `None` when a marginal has zero variance.
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Contrast,
    Homogeneity,
    Entropy,
    Correlation,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Contrast,
        Feature::Homogeneity,
        Feature::Entropy,
        Feature::Correlation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Contrast => "contrast",
            Feature::Homogeneity => "homogeneity",
            Feature::Entropy => "entropy",
            Feature::Correlation => "correlation",
        }
    }
}

impl HaralickFeatures {
    pub fn get(&self, f: Feature) -> Option<f64> {
        match f {
            Feature::Contrast => Some(self.contrast),
            Feature::Homogeneity => Some(self.homogeneity),
            Feature::Entropy => Some(self.entropy),
            Feature::Correlation => self.correlation,
        }
    }
}

pub fn haralick(g: &GlcmMatrix) -> HaralickFeatures {
    let n = g.levels();
    let mut contrast = 0.0;
    let mut homogeneity = 0.0;
    let mut entropy = 0.0;
    let mut row_marginal = vec![0.0; n];
    let mut col_marginal = vec![0.0; n];
    for l in 0..n {
        for k in 0..n {
            let p = g.get(l, k);
            if p == 0.0 {
                continue;
            }
            let diff = l as f64 - k as f64;
            contrast += p * diff * diff;
            homogeneity += p / (1.0 + diff * diff);
            entropy -= p * (p + ENTROPY_EPS).ln();
            row_marginal[l] += p;
            col_marginal[k] += p;
        }
    }
    let moments = |m: &[f64]| {
        let mean: f64 = m.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        let var: f64 = m
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64 - mean).powi(2) * p)
            .sum();
        (mean, var.sqrt())
    };
    let (mu_l, sd_l) = moments(&row_marginal);
    let (mu_k, sd_k) = moments(&col_marginal);
    let correlation = if sd_l * sd_k == 0.0 {
        None
    } else {
        let mut cov = 0.0;
        for l in 0..n {
            for k in 0..n {
                let p = g.get(l, k);
                if p != 0.0 {
                    cov += p * (l as f64 - mu_l) * (k as f64 - mu_k);
                }
            }
        }
        Some((cov / (sd_l * sd_k)).clamp(-1.0, 1.0))
    };
    HaralickFeatures {
        contrast,
        homogeneity,
        entropy: entropy.max(0.0),
        correlation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureConfig {
    pub levels: usize,
    pub distances: Vec<usize>,
    pub angles: Vec<f64>,
    pub patch: usize,
    pub stride: usize,
    pub symmetric: bool,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS,
            distances: DEFAULT_DISTANCES.to_vec(),
            angles: DEFAULT_ANGLES.to_vec(),
            patch: DEFAULT_PATCH,
            stride: DEFAULT_PATCH / 2,
            symmetric: false,
        }
    }
}

impl TextureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.levels > u16::MAX as usize + 1 {
            return Err(Error::InvalidParameter(format!("levels={}", self.levels)));
        }
        if self.distances.is_empty() || self.distances.contains(&0) {
            return Err(Error::InvalidParameter("distances must be non-empty and >= 1".into()));
        }
        if self.angles.is_empty() || self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("angles must be non-empty and finite".into()));
        }
        if self.patch == 0 || self.stride == 0 {
            return Err(Error::InvalidParameter("patch and stride must be >= 1".into()));
        }
        for &d in &self.distances {
            for &a in &self.angles {
                let (dx, dy) = offset(d, a);
                if dx.unsigned_abs() as usize >= self.patch || dy.unsigned_abs() as usize >= self.patch {
                    return Err(Error::NoPairs {
                        dx,
                        dy,
                        size: self.patch,
                    });
                }
            }
        }
        Ok(())
    }

    fn sweep(&self) -> Vec<(usize, f64)> {
        self.distances
            .iter()
            .flat_map(|&d| self.angles.iter().map(move |&a| (d, a)))
            .collect()
    }
}

/// Features of every patch of one image, indexed by sweep position.
pub fn image_features(
    image: &AmplitudeImage,
    mask: &SceneMask,
    cfg: &TextureConfig,
) -> Result<Vec<Vec<HaralickFeatures>>> {
    let sweep = cfg.sweep();
    let positions = match extract_patches(image, mask, cfg.patch, cfg.stride) {
        Ok(p) => p,
        Err(Error::Empty(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut out = vec![Vec::with_capacity(positions.len()); sweep.len()];
    for pos in positions {
        let q = quantize_window(image, pos, cfg.levels)?;
        for (slot, &(d, a)) in out.iter_mut().zip(&sweep) {
            slot.push(haralick(&glcm(&q, d, a, cfg.symmetric)?));
        }
    }
    Ok(out)
}

/// One image in a texture comparison.
#[derive(Debug, Clone)]
pub struct TextureSample {
    pub set: String,
    pub label: Option<CategoryLabel>,
    pub image: AmplitudeImage,
    /// Whole image is treated as one region when absent.
    pub mask: Option<SceneMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureRow {
    pub set: String,
    pub label: CategoryLabel,
    pub feature: Feature,
    pub d: usize,
    pub theta: f64,
    pub mean: f64,
    pub std: f64,
    pub n_patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsentTexture {
    pub set: String,
    pub label: CategoryLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextureProfile {
    pub rows: Vec<TextureRow>,
    pub absent: Vec<AbsentTexture>,
}

impl TextureProfile {
    pub fn row(&self, set: &str, label: &str, feature: Feature, d: usize, theta: f64) -> Option<&TextureRow> {
        self.rows.iter().find(|r| {
            r.set == set && r.label.as_str() == label && r.feature == feature && r.d == d && r.theta == theta
        })
    }

    /// Mean of a feature's curve over the whole (d, θ) sweep.
    pub fn sweep_mean(&self, set: &str, label: &str, feature: Feature) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.set == set && r.label.as_str() == label && r.feature == feature)
            .map(|r| r.mean)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of each feature per
/// (set, label, d, θ) over all patches. Sets appear in first-seen order,
/// labels in `labels` order.
pub fn texture_profile(
    samples: &[TextureSample],
    labels: &LabelSet,
    cfg: &TextureConfig,
) -> Result<TextureProfile> {
    cfg.validate()?;
    let sweep = cfg.sweep();
    let per_image = samples
        .par_iter()
        .map(|s| {
            let mask = match &s.mask {
                Some(m) => m.clone(),
                None => SceneMask::full(s.image.width(), s.image.height())?,
            };
            image_features(&s.image, &mask, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sets: Vec<&str> = Vec::new();
    for s in samples {
        if !sets.contains(&s.set.as_str()) {
            sets.push(&s.set);
        }
    }

    let mut profile = TextureProfile::default();
    for set in sets {
        for label in labels.labels() {
            let members: Vec<usize> = samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.set == set && s.label.as_ref() == Some(&label))
                .map(|(i, _)| i)
                .collect();
            let patch_total: usize = members.iter().map(|&i| per_image[i][0].len()).sum();
            if patch_total == 0 {
                profile.absent.push(AbsentTexture {
                    set: set.to_string(),
                    label: label.clone(),
                });
                continue;
            }
            for (si, &(d, theta)) in sweep.iter().enumerate() {
                for feature in Feature::ALL {
                    let values: Vec<f64> = members
                        .iter()
                        .flat_map(|&i| per_image[i][si].iter().filter_map(|h| h.get(feature)))
                        .collect();
                    if values.is_empty() {
                        continue;
                    }
                    let (mean, std) = mean_std(&values);
                    profile.rows.push(TextureRow {
                        set: set.to_string(),
                        label: label.clone(),
                        feature,
                        d,
                        theta,
                        mean,
                        std,
                        n_patches: values.len(),
                    });
                }
            }
        }
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn patch(size: usize, levels: usize, codes: &[u16]) -> QuantizedPatch {
        QuantizedPatch::from_codes(size, levels, codes.to_vec()).unwrap()
    }

    /// Hard-coded offsets for the default sweep, independent of trigonometry.
    fn table_offset(d: usize, theta: u32) -> (i64, i64) {
        let d = d as i64;
        let diag = match d {
            1 => 1,
            2 => 1,
            4 => 3,
            8 => 6,
            _ => unreachable!(),
        };
        match theta {
            0 => (d, 0),
            45 => (diag, diag),
            90 => (0, d),
            135 => (-diag, diag),
            _ => unreachable!(),
        }
    }

    /// Visits every ordered pair of pixel positions.
    fn brute_force(p: &QuantizedPatch, dx: i64, dy: i64) -> Vec<f64> {
        let n = p.size();
        let levels = p.levels();
        let mut counts = vec![0u64; levels * levels];
        let mut total = 0u64;
        for y1 in 0..n {
            for x1 in 0..n {
                for y2 in 0..n {
                    for x2 in 0..n {
                        if x2 as i64 - x1 as i64 == dx && y2 as i64 - y1 as i64 == dy {
                            counts[p.at(x1, y1) as usize * levels + p.at(x2, y2) as usize] += 1;
                            total += 1;
                        }
                    }
                }
            }
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    #[test]
    fn horizontal_pairs_two_rows() {
        let p = patch(2, 2, &[0, 0, 1, 1]);
        let g = glcm(&p, 1, 0.0, false).unwrap();
        assert_eq!(g.matrix(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(g.pair_count(), 2);
    }

    #[test]
    fn vertical_offset_points_down() {
        // rows [[0,1],[1,1]]: 90 degrees pairs (0 -> 1) and (1 -> 1)
        let p = patch(2, 2, &[0, 1, 1, 1]);
        let g = glcm(&p, 1, 90.0, false).unwrap();
        assert_eq!(g.matrix(), &[0.0, 0.5, 0.0, 0.5]);
        assert_eq!(offset(1, 90.0), (0, 1));
        assert_eq!(offset(1, 135.0), (-1, 1));
    }

    #[test]
    fn constant_patch_single_cell() {
        let p = patch(4, 8, &[3; 16]);
        let g = glcm(&p, 1, 45.0, false).unwrap();
        assert_eq!(g.get(3, 3), 1.0);
        let h = haralick(&g);
        assert_eq!(h.contrast, 0.0);
        assert_eq!(h.homogeneity, 1.0);
        assert!(h.entropy.abs() < 1e-9);
        assert_eq!(h.correlation, None);
    }

    #[test]
    fn offset_beyond_patch_is_an_error() {
        let p = patch(2, 2, &[0, 0, 1, 1]);
        assert!(matches!(glcm(&p, 2, 0.0, false), Err(Error::NoPairs { .. })));
    }

    #[test]
    fn matches_brute_force_on_random_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let codes: Vec<u16> = (0..256).map(|_| rng.gen_range(0..8)).collect();
            let p = patch(16, 8, &codes);
            for d in DEFAULT_DISTANCES {
                for theta in [0u32, 45, 90, 135] {
                    let (dx, dy) = table_offset(d, theta);
                    assert_eq!(offset(d, theta as f64), (dx, dy));
                    let g = glcm(&p, d, theta as f64, false).unwrap();
                    assert_eq!(g.matrix(), brute_force(&p, dx, dy).as_slice());
                }
            }
        }
    }

    #[test]
    fn haralick_diagonal_matrix() {
        let g = GlcmMatrix::from_probabilities(2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let h = haralick(&g);
        assert_abs_diff_eq!(h.contrast, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.homogeneity, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.entropy, LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(h.correlation.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn haralick_uniform_matrix() {
        let g = GlcmMatrix::from_probabilities(2, vec![0.25; 4]).unwrap();
        let h = haralick(&g);
        assert_abs_diff_eq!(h.contrast, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h.homogeneity, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(h.entropy, 4f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(h.correlation.unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quantize_endpoints() {
        let q = quantize(&[0.0, 1.0, 0.5, 0.999], 2, 64).unwrap();
        assert_eq!(q.codes(), &[0, 63, 32, 63]);
        let c = quantize(&[0.3; 4], 2, 64).unwrap();
        assert!(c.codes().iter().all(|v| *v == c.codes()[0]));
        assert!(quantize(&[1.5, 0.0, 0.0, 0.0], 2, 64).is_err());
    }

    fn flat(w: usize, h: usize) -> AmplitudeImage {
        AmplitudeImage::new(w, h, vec![0.5; w * h]).unwrap()
    }

    #[test]
    fn full_mask_exact_tiling() {
        let img = flat(128, 128);
        let mask = SceneMask::full(128, 128).unwrap();
        let p = extract_patches(&img, &mask, 64, 64).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!((p[1].x, p[1].y), (64, 0));
    }

    #[test]
    fn patches_come_from_largest_region() {
        // 100x80 image: columns 0..62 region 1 (4960 px), rest region 2 (3040 px)
        let (w, h) = (100, 80);
        let ids = (0..w * h).map(|i| if i % w < 62 { 1 } else { 2 }).collect();
        let mask = SceneMask::new(w, h, ids).unwrap();
        assert_eq!(largest_region(&mask), Some(1));
        let p = extract_patches(&flat(w, h), &mask, 16, 8).unwrap();
        assert!(!p.is_empty());
        assert!(p.iter().all(|p| p.x + 16 <= 62));
    }

    #[test]
    fn sliver_region_gives_no_patches() {
        let (w, h) = (32, 32);
        let ids = (0..w * h).map(|i| if i < 10 { 5 } else { 0 }).collect();
        let mask = SceneMask::new(w, h, ids).unwrap();
        assert!(extract_patches(&flat(w, h), &mask, 8, 8).unwrap().is_empty());
    }

    #[test]
    fn background_only_mask_is_an_error() {
        let mask = SceneMask::new(4, 4, vec![0; 16]).unwrap();
        assert!(matches!(
            extract_patches(&flat(4, 4), &mask, 2, 2),
            Err(Error::Empty(_))
        ));
    }

    fn sample(set: &str, label: &str, image: AmplitudeImage) -> TextureSample {
        TextureSample {
            set: set.into(),
            label: Some(LabelSet::default().label(label).unwrap()),
            image,
            mask: None,
        }
    }

    fn small_cfg() -> TextureConfig {
        TextureConfig {
            levels: 16,
            distances: vec![1, 2],
            angles: vec![0.0, 90.0],
            patch: 16,
            stride: 16,
            symmetric: false,
        }
    }

    #[test]
    fn constant_corpus_has_zero_contrast_and_missing_labels_are_absent() {
        let labels = LabelSet::default();
        let samples = vec![sample("real", "forest", flat(32, 32))];
        let prof = texture_profile(&samples, &labels, &small_cfg()).unwrap();
        let contrast: Vec<_> = prof
            .rows
            .iter()
            .filter(|r| r.feature == Feature::Contrast)
            .collect();
        assert_eq!(contrast.len(), 4);
        assert!(contrast.iter().all(|r| r.mean == 0.0 && r.n_patches == 4));
        assert!(prof.rows.iter().all(|r| r.feature != Feature::Correlation));
        assert_eq!(prof.absent.len(), labels.len() - 1);
    }

    #[test]
    fn noise_corpus_entropy_exceeds_log_levels() {
        let labels = LabelSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..64 * 64).map(|_| rng.gen::<f32>()).collect();
        let img = AmplitudeImage::new(64, 64, data).unwrap();
        let samples = vec![sample("real", "city", img)];
        let prof = texture_profile(&samples, &labels, &small_cfg()).unwrap();
        for r in prof.rows.iter().filter(|r| r.feature == Feature::Entropy) {
            assert!(r.mean > (16f64).ln(), "entropy {}", r.mean);
        }
    }

    #[test]
    fn identical_sets_give_identical_curves() {
        let labels = LabelSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..48 * 48).map(|_| rng.gen::<f32>()).collect();
        let img = AmplitudeImage::new(48, 48, data).unwrap();
        let samples = vec![
            sample("real", "port", img.clone()),
            sample("gen", "port", img),
        ];
        let prof = texture_profile(&samples, &labels, &small_cfg()).unwrap();
        let real: Vec<_> = prof.rows.iter().filter(|r| r.set == "real").collect();
        let gen: Vec<_> = prof.rows.iter().filter(|r| r.set == "gen").collect();
        assert_eq!(real.len(), gen.len());
        for (a, b) in real.iter().zip(gen) {
            assert_eq!((a.mean, a.std, a.n_patches), (b.mean, b.std, b.n_patches));
        }
    }

    #[test]
    fn translation_within_homogeneous_region() {
        // Stationary noise: features of left and right halves agree within 3 SE.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (256, 128);
        let data: Vec<f32> = (0..w * h).map(|_| rng.gen::<f32>().powi(2)).collect();
        let img = AmplitudeImage::new(w, h, data).unwrap();
        let cfg = small_cfg();
        let halves = |lo: usize| {
            let ids = (0..w * h).map(|i| ((i % w) / 128 == lo) as u32).collect();
            let mask = SceneMask::new(w, h, ids).unwrap();
            image_features(&img, &mask, &cfg).unwrap()
        };
        let (a, b) = (halves(0), halves(1));
        for f in [Feature::Contrast, Feature::Homogeneity, Feature::Entropy] {
            let va: Vec<f64> = a[0].iter().filter_map(|h| h.get(f)).collect();
            let vb: Vec<f64> = b[0].iter().filter_map(|h| h.get(f)).collect();
            let (ma, sa) = mean_std(&va);
            let (mb, sb) = mean_std(&vb);
            let se = (sa * sa / va.len() as f64 + sb * sb / vb.len() as f64).sqrt();
            assert!((ma - mb).abs() <= 3.0 * se + 1e-12, "{f:?}: {ma} vs {mb}");
        }
    }

    proptest! {
        #[test]
        fn opposite_angle_transposes_and_features_agree(
            codes in prop::collection::vec(0u16..6, 64),
            d in prop::sample::select(vec![1usize, 2, 4]),
            theta in prop::sample::select(vec![0.0f64, 45.0, 90.0, 135.0]),
        ) {
            let p = patch(8, 6, &codes);
            let g = glcm(&p, d, theta, false).unwrap();
            let back = glcm(&p, d, theta + 180.0, false).unwrap();
            let gt = g.transpose();
            prop_assert_eq!(gt.matrix(), back.matrix());
            let (a, b) = (haralick(&g), haralick(&gt));
            prop_assert!((a.contrast - b.contrast).abs() < 1e-12);
            prop_assert!((a.homogeneity - b.homogeneity).abs() < 1e-12);
            prop_assert!((a.entropy - b.entropy).abs() < 1e-12);
            match (a.correlation, b.correlation) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn feature_ranges(codes in prop::collection::vec(0u16..8, 64), sym in any::<bool>()) {
            let p = patch(8, 8, &codes);
            let g = glcm(&p, 1, 0.0, sym).unwrap();
            let total: f64 = g.matrix().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            let h = haralick(&g);
            prop_assert!(h.homogeneity > 0.0 && h.homogeneity <= 1.0 + 1e-12);
            prop_assert!(h.contrast >= 0.0 && h.entropy >= 0.0);
            if let Some(c) = h.correlation {
                prop_assert!((-1.0..=1.0).contains(&c));
            }
            let equal_pairs = (0..8).all(|y| (0..7).all(|x| p.at(x, y) == p.at(x + 1, y)));
            prop_assert_eq!(h.contrast == 0.0, equal_pairs);
        }
    }
}
