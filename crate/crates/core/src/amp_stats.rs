//! Saturation-aware amplitude histograms and KL divergence.
//!
//! Pixels equal to `1.0` are the clipping sentinel. They are counted in
//! `saturated_fraction` and excluded from the binned density, which is
//! renormalized over the remaining pixels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{CategoryLabel, LabelSet};
use crate::raster::AmplitudeImage;

pub const DEFAULT_BINS: usize = 256;

/// Additive smoothing applied to the generated distribution before the log.
pub const KL_SMOOTHING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeHistogram {
    bin_count: usize,
    density: Vec<f64>,
    saturated_fraction: f64,
    sample_count: u64,
}

impl AmplitudeHistogram {
    /// Builds a histogram from bin masses that already sum to one.
    pub fn from_density(
        density: Vec<f64>,
        saturated_fraction: f64,
        sample_count: u64,
    ) -> Result<Self> {
        if density.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "histogram needs >= 2 bins, got {}",
                density.len()
            )));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidParameter("density entries must be finite and >= 0".into()));
        }
        let total: f64 = density.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("density sums to {total}, not 1")));
        }
        if !(0.0..=1.0).contains(&saturated_fraction) {
            return Err(Error::InvalidParameter(format!(
                "saturated fraction {saturated_fraction} outside [0, 1]"
            )));
        }
        Ok(Self {
            bin_count: density.len(),
            density,
            saturated_fraction,
            sample_count,
        })
    }

    /// Normalizes non-negative weights into a density.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        Self::from_density(weights.iter().map(|w| w / total).collect(), 0.0, 0)
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn saturated_fraction(&self) -> f64 {
        self.saturated_fraction
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    /// `bin_count + 1` uniform edges over `[0, 1]`.
    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.bin_count)
            .map(|i| i as f64 / self.bin_count as f64)
            .collect()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.bin_count)
            .map(|i| (i as f64 + 0.5) / self.bin_count as f64)
            .collect()
    }
}

/// Integer bin counts; merging is exact, so pooled results do not depend on
/// accumulation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramAccumulator {
    counts: Vec<u64>,
    saturated: u64,
}

impl HistogramAccumulator {
    pub fn new(bin_count: usize) -> Result<Self> {
        if bin_count < 2 {
            return Err(Error::InvalidParameter(format!(
                "bin_count must be >= 2, got {bin_count}"
            )));
        }
        Ok(Self {
            counts: vec![0; bin_count],
            saturated: 0,
        })
    }

    pub fn add_image(&mut self, image: &AmplitudeImage) -> Result<()> {
        let bins = self.counts.len();
        for &v in image.data() {
            if v == 1.0 {
                self.saturated += 1;
            } else if v > 1.0 {
                return Err(Error::NotNormalized(format!(
                    "value {v} in {}",
                    image.source_id()
                )));
            } else {
                let b = ((v as f64 * bins as f64) as usize).min(bins - 1);
                self.counts[b] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(mut self, other: &Self) -> Result<Self> {
        if self.counts.len() != other.counts.len() {
            return Err(Error::BinMismatch(self.counts.len(), other.counts.len()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.saturated += other.saturated;
        Ok(self)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn finish(&self) -> Result<AmplitudeHistogram> {
        let binned: u64 = self.counts.iter().sum();
        let total = binned + self.saturated;
        if total == 0 {
            return Err(Error::Empty("no pixels to histogram".into()));
        }
        if binned == 0 {
            return Err(Error::FullySaturated(total));
        }
        Ok(AmplitudeHistogram {
            bin_count: self.counts.len(),
            density: self
                .counts
                .iter()
                .map(|&c| c as f64 / binned as f64)
                .collect(),
            saturated_fraction: self.saturated as f64 / total as f64,
            sample_count: total,
        })
    }
}

/// Pools all pixels of `images` into one saturation-aware histogram.
pub fn histogram<'a, I>(images: I, bin_count: usize) -> Result<AmplitudeHistogram>
where
    I: IntoIterator<Item = &'a AmplitudeImage>,
{
    let images: Vec<&AmplitudeImage> = images.into_iter().collect();
    if images.is_empty() {
        return Err(Error::Empty("no images to histogram".into()));
    }
    let partials = images
        .par_iter()
        .map(|img| {
            let mut acc = HistogramAccumulator::new(bin_count)?;
            acc.add_image(img)?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = HistogramAccumulator::new(bin_count)?;
    for p in &partials {
        total = total.merge(p)?;
    }
    total.finish()
}

/// `sum_i P(i) ln(P(i) / Q'(i))` in nats, where `Q'` is `Q` with additive
/// smoothing [`KL_SMOOTHING`] renormalized. Bins with `P(i) = 0` contribute 0.
pub fn kl_divergence(p: &AmplitudeHistogram, q: &AmplitudeHistogram) -> Result<f64> {
    if p.bin_count != q.bin_count {
        return Err(Error::BinMismatch(p.bin_count, q.bin_count));
    }
    let q_total: f64 = q.density.iter().map(|v| v + KL_SMOOTHING).sum();
    Ok(p
        .density
        .iter()
        .zip(&q.density)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / ((qi + KL_SMOOTHING) / q_total)).ln())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    /// `None` for the pooled report over every image.
    pub category: Option<CategoryLabel>,
    /// `None` when the category could not be evaluated; see `absent_reason`.
    pub kl_nats: Option<f64>,
    pub n_real: usize,
    pub n_gen: usize,
    pub saturated_real: Option<f64>,
    pub saturated_gen: Option<f64>,
    /// `|saturated_real - saturated_gen|`.
    pub saturation_gap: Option<f64>,
    pub absent_reason: Option<String>,
}

impl KlReport {
    pub fn is_absent(&self) -> bool {
        self.kl_nats.is_none()
    }
}

/// One category's KL report together with the histograms it came from.
#[derive(Debug, Clone)]
pub struct CategoryKl {
    pub report: KlReport,
    pub real: Option<AmplitudeHistogram>,
    pub generated: Option<AmplitudeHistogram>,
}

fn compare(
    category: Option<CategoryLabel>,
    real: &[&AmplitudeImage],
    gen: &[&AmplitudeImage],
    bin_count: usize,
) -> Result<CategoryKl> {
    let mut report = KlReport {
        category,
        kl_nats: None,
        n_real: real.len(),
        n_gen: gen.len(),
        saturated_real: None,
        saturated_gen: None,
        saturation_gap: None,
        absent_reason: None,
    };
    if real.is_empty() || gen.is_empty() {
        report.absent_reason = Some(format!(
            "no images ({} real, {} generated)",
            real.len(),
            gen.len()
        ));
        return Ok(CategoryKl {
            report,
            real: None,
            generated: None,
        });
    }
    let hist = |imgs: &[&AmplitudeImage]| match histogram(imgs.iter().copied(), bin_count) {
        Ok(h) => Ok(Some(h)),
        Err(Error::FullySaturated(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let p = hist(real)?;
    let q = hist(gen)?;
    report.saturated_real = p.as_ref().map(|h| h.saturated_fraction);
    report.saturated_gen = q.as_ref().map(|h| h.saturated_fraction);
    match (&p, &q) {
        (Some(p), Some(q)) => {
            report.kl_nats = Some(kl_divergence(p, q)?);
            report.saturation_gap = Some((p.saturated_fraction - q.saturated_fraction).abs());
        }
        _ => report.absent_reason = Some("fully saturated".into()),
    }
    Ok(CategoryKl {
        report,
        real: p,
        generated: q,
    })
}

/// One report per label in `labels` order, followed by the pooled report.
///
/// Images are paired with their primary category; unlabeled images only enter
/// the pooled report.
pub fn kl_by_category(
    real: &[(Option<CategoryLabel>, AmplitudeImage)],
    gen: &[(Option<CategoryLabel>, AmplitudeImage)],
    labels: &LabelSet,
    bin_count: usize,
) -> Result<Vec<CategoryKl>> {
    fn select<'a>(
        set: &'a [(Option<CategoryLabel>, AmplitudeImage)],
        l: &CategoryLabel,
    ) -> Vec<&'a AmplitudeImage> {
        set.iter()
            .filter(|(c, _)| c.as_ref() == Some(l))
            .map(|(_, i)| i)
            .collect()
    }
    let mut out = Vec::with_capacity(labels.len() + 1);
    for label in labels.labels() {
        let r = select(real, &label);
        let g = select(gen, &label);
        out.push(compare(Some(label), &r, &g, bin_count)?);
    }
    let r: Vec<_> = real.iter().map(|(_, i)| i).collect();
    let g: Vec<_> = gen.iter().map(|(_, i)| i).collect();
    out.push(compare(None, &r, &g, bin_count)?);
    Ok(out)
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
    fn hand_counted_histogram() {
        let h = histogram([&img(&[0.1, 0.1, 0.9, 1.0])], 2).unwrap();
        assert_abs_diff_eq!(h.density()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h.density()[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h.saturated_fraction(), 0.25);
        assert_eq!(h.sample_count(), 4);
        assert_eq!(h.bin_edges(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn fully_saturated_is_an_error() {
        assert!(matches!(
            histogram([&img(&[1.0, 1.0])], 4),
            Err(Error::FullySaturated(2))
        ));
    }

    #[test]
    fn no_images_is_an_error() {
        assert!(matches!(histogram(std::iter::empty(), 4), Err(Error::Empty(_))));
    }

    #[test]
    fn unnormalized_values_rejected() {
        assert!(matches!(
            histogram([&img(&[0.5, 1.5])], 4),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn kl_hand_values() {
        let p = AmplitudeHistogram::from_density(vec![0.5, 0.5], 0.0, 0).unwrap();
        let q = AmplitudeHistogram::from_density(vec![0.25, 0.75], 0.0, 0).unwrap();
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), 0.143841, epsilon = 1e-6);

        let p = AmplitudeHistogram::from_density(vec![1.0, 0.0], 0.0, 0).unwrap();
        let q = AmplitudeHistogram::from_density(vec![0.5, 0.5], 0.0, 0).unwrap();
        assert_abs_diff_eq!(
            kl_divergence(&p, &q).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-10
        );
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-10);
    }

    #[test]
    fn kl_finite_when_generated_misses_a_bin() {
        let p = AmplitudeHistogram::from_density(vec![0.5, 0.5], 0.0, 0).unwrap();
        let q = AmplitudeHistogram::from_density(vec![1.0, 0.0], 0.0, 0).unwrap();
        let d = kl_divergence(&p, &q).unwrap();
        assert!(d.is_finite() && d > 10.0);
    }

    #[test]
    fn kl_bin_mismatch() {
        let p = AmplitudeHistogram::from_weights(&[1.0, 1.0]).unwrap();
        let q = AmplitudeHistogram::from_weights(&[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(kl_divergence(&p, &q), Err(Error::BinMismatch(2, 3))));
    }

    fn labeled(label: &str, data: &[f32]) -> (Option<CategoryLabel>, AmplitudeImage) {
        let labels = LabelSet::default();
        (Some(labels.label(label).unwrap()), img(data))
    }

    #[test]
    fn category_reports() {
        let labels = LabelSet::default();
        let real = vec![
            labeled("forest", &[0.1, 0.2, 0.3, 0.9]),
            labeled("city", &[0.5, 0.6, 0.7, 1.0]),
        ];
        let same = kl_by_category(&real, &real, &labels, 8).unwrap();
        assert_eq!(same.len(), labels.len() + 1);
        for c in &same {
            let name = c.report.category.as_ref().map(|l| l.as_str());
            match name {
                Some("forest") | Some("city") | None => {
                    assert!(c.report.kl_nats.unwrap().abs() < 1e-10)
                }
                _ => assert!(c.report.is_absent()),
            }
        }

        let squared: Vec<_> = real
            .iter()
            .map(|(l, i)| {
                let d = i.data().iter().map(|v| v * v).collect::<Vec<_>>();
                (l.clone(), img(&d))
            })
            .collect();
        let diff = kl_by_category(&real, &squared, &labels, 8).unwrap();
        for c in diff.iter().filter(|c| !c.report.is_absent()) {
            assert!(c.report.kl_nats.unwrap() > 0.0);
        }

        let gen_city_only = vec![labeled("city", &[0.5, 0.6, 0.7, 0.8])];
        let r = kl_by_category(&real, &gen_city_only, &labels, 8).unwrap();
        let forest = r
            .iter()
            .find(|c| c.report.category.as_ref().map(|l| l.as_str()) == Some("forest"))
            .unwrap();
        assert!(forest.report.is_absent());
        assert_eq!((forest.report.n_real, forest.report.n_gen), (1, 0));
    }

    proptest! {
        #[test]
        fn gibbs_inequality(
            pw in prop::collection::vec(0.0f64..1.0, 16),
            qw in prop::collection::vec(0.0f64..1.0, 16),
        ) {
            prop_assume!(pw.iter().sum::<f64>() > 0.0 && qw.iter().sum::<f64>() > 0.0);
            let p = AmplitudeHistogram::from_weights(&pw).unwrap();
            let q = AmplitudeHistogram::from_weights(&qw).unwrap();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12 * 16.0);
        }

        #[test]
        fn smoothing_sensitivity_is_small(
            pw in prop::collection::vec(0.01f64..1.0, 8),
            qw in prop::collection::vec(0.01f64..1.0, 8),
        ) {
            let p = AmplitudeHistogram::from_weights(&pw).unwrap();
            let q = AmplitudeHistogram::from_weights(&qw).unwrap();
            let d = kl_divergence(&p, &q).unwrap();
            let eps = KL_SMOOTHING / 2.0;
            let q_total: f64 = q.density().iter().map(|v| v + eps).sum();
            let half: f64 = p.density().iter().zip(q.density())
                .map(|(pi, qi)| pi * (pi / ((qi + eps) / q_total)).ln())
                .sum();
            prop_assert!((d - half).abs() < 1e-6);
        }

        #[test]
        fn pooling_is_order_independent(
            a in prop::collection::vec(0.0f32..=1.0, 1..50),
            b in prop::collection::vec(0.0f32..=1.0, 1..50),
        ) {
            let (ia, ib) = (img(&a), img(&b));
            let ab = histogram([&ia, &ib], 16);
            let ba = histogram([&ib, &ia], 16);
            match (ab, ba) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "order changed success"),
            }
        }
    }
}
