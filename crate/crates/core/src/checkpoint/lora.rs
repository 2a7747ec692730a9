//! Low-rank adapter deltas: `ΔW = (alpha / r) · A · B` with `A` m×r and
//! `B` r×n.

use nalgebra::DMatrix;

use super::archive::{ArchiveBuilder, TensorArchive};
use crate::error::{Error, Result};

pub const LORA_A_SUFFIX: &str = ".lora_A";
pub const LORA_B_SUFFIX: &str = ".lora_B";

#[derive(Debug, Clone, PartialEq)]
pub struct LoraSpec {
    rank: usize,
    alpha: f64,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

/// `alpha = r / 2`, which keeps `alpha / r` at 0.5 across ranks.
pub fn half_rank_alpha(rank: usize) -> f64 {
    rank as f64 / 2.0
}

impl LoraSpec {
    pub fn new(rank: usize, alpha: f64, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidParameter("LoRA rank must be >= 1".into()));
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha {alpha}")));
        }
        if a.ncols() != rank || b.nrows() != rank {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}, rank {rank}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { rank, alpha, a, b })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Output shape `(m, n)` of the update.
    pub fn shape(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.ncols())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

pub fn lora_delta(spec: &LoraSpec) -> DMatrix<f64> {
    (&spec.a * &spec.b) * spec.scale()
}

/// `W + ΔW`.
pub fn merge_lora(w: &DMatrix<f64>, spec: &LoraSpec) -> Result<DMatrix<f64>> {
    if w.shape() != spec.shape() {
        return Err(Error::DimensionMismatch(format!(
            "base weight is {:?}, update is {:?}",
            w.shape(),
            spec.shape()
        )));
    }
    Ok(w + lora_delta(spec))
}

fn matrix(archive: &TensorArchive, name: &str) -> Result<DMatrix<f64>> {
    let info = archive
        .info(name)
        .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
    let [rows, cols] = info.shape[..] else {
        return Err(Error::DimensionMismatch(format!(
            "`{name}` has shape {:?}, expected 2-D",
            info.shape
        )));
    };
    let data = archive.tensor_f32(name)?;
    Ok(DMatrix::from_row_iterator(rows, cols, data.into_iter().map(f64::from)))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f32> {
    m.transpose().iter().map(|v| *v as f32).collect()
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub archive: ArchiveBuilder,
    pub merged: Vec<String>,
}

/// Merges `<name>.lora_A` / `<name>.lora_B` pairs from `lora` into the 2-D
/// tensors of `base`. Other base tensors are copied as F32. When `rank` is
/// given every adapter must have that rank; `alpha` defaults to `r / 2`.
pub fn merge_archive(
    base: &TensorArchive,
    lora: &TensorArchive,
    alpha: Option<f64>,
    rank: Option<usize>,
) -> Result<MergeOutcome> {
    let mut out = ArchiveBuilder::new();
    let mut merged = Vec::new();
    for name in lora.names() {
        if let Some(target) = name.strip_suffix(LORA_A_SUFFIX) {
            if base.info(target).is_none() {
                return Err(Error::MissingTensor(target.to_string()));
            }
            if lora.info(&format!("{target}{LORA_B_SUFFIX}")).is_none() {
                return Err(Error::MissingTensor(format!("{target}{LORA_B_SUFFIX}")));
            }
        }
    }
    for name in base.names() {
        let info = base.info(name).expect("name from archive");
        let a_name = format!("{name}{LORA_A_SUFFIX}");
        if lora.info(&a_name).is_some() {
            let a = matrix(lora, &a_name)?;
            let b = matrix(lora, &format!("{name}{LORA_B_SUFFIX}"))?;
            let r = a.ncols();
            if let Some(want) = rank {
                if want != r {
                    return Err(Error::DimensionMismatch(format!(
                        "`{name}` adapter has rank {r}, expected {want}"
                    )));
                }
            }
            let spec = LoraSpec::new(r, alpha.unwrap_or_else(|| half_rank_alpha(r)), a, b)?;
            let w = merge_lora(&matrix(base, name)?, &spec)?;
            out.add_f32(name, info.shape.clone(), &row_major(&w))?;
            merged.push(name.to_string());
        } else {
            out.add_f32(name, info.shape.clone(), &base.tensor_f32(name)?)?;
        }
    }
    Ok(MergeOutcome {
        archive: out,
        merged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::mawc::layer_delta;
    use approx::assert_abs_diff_eq;

    fn hand_spec(alpha: f64) -> LoraSpec {
        LoraSpec::new(
            1,
            alpha,
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
        )
        .unwrap()
    }

    #[test]
    fn rank_one_hand_case() {
        let d = lora_delta(&hand_spec(2.0));
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[6.0, 8.0, 12.0, 16.0]));
    }

    #[test]
    fn zero_b_gives_zero_delta() {
        let spec = LoraSpec::new(
            3,
            1.5,
            DMatrix::from_fn(4, 3, |i, j| (i + j) as f64),
            DMatrix::zeros(3, 5),
        )
        .unwrap();
        assert!(lora_delta(&spec).iter().all(|v| *v == 0.0));
        let w = DMatrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64);
        assert_eq!(merge_lora(&w, &spec).unwrap(), w);
    }

    #[test]
    fn alpha_scales_linearly() {
        let one = lora_delta(&hand_spec(2.0));
        let two = lora_delta(&hand_spec(4.0));
        assert_eq!(two, one * 2.0);
    }

    #[test]
    fn merge_identity_and_mawc_consistency() {
        let w = DMatrix::<f64>::identity(2, 2);
        let merged = merge_lora(&w, &hand_spec(2.0)).unwrap();
        assert_eq!(merged, DMatrix::from_row_slice(2, 2, &[7.0, 8.0, 12.0, 17.0]));
        let before: Vec<f32> = w.iter().map(|v| *v as f32).collect();
        let after: Vec<f32> = merged.iter().map(|v| *v as f32).collect();
        let d = layer_delta("w", &before, &after, 0.0).unwrap();
        assert_abs_diff_eq!(d.mawc, (6.0 + 8.0 + 12.0 + 16.0) / 4.0);
    }

    #[test]
    fn dimension_errors() {
        assert!(LoraSpec::new(2, 1.0, DMatrix::zeros(3, 1), DMatrix::zeros(1, 3)).is_err());
        assert!(LoraSpec::new(0, 1.0, DMatrix::zeros(3, 0), DMatrix::zeros(0, 3)).is_err());
        assert!(merge_lora(&DMatrix::zeros(3, 3), &hand_spec(1.0)).is_err());
    }

    #[test]
    fn half_rank_rule() {
        assert_eq!(half_rank_alpha(8), 4.0);
        assert_eq!(half_rank_alpha(8) / 8.0, 0.5);
    }

    #[test]
    fn archive_merge() {
        let mut base = ArchiveBuilder::new();
        base.add_f32("layer.w", vec![2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        base.add_f32("layer.bias", vec![2], &[0.5, 0.5]).unwrap();
        let mut lora = ArchiveBuilder::new();
        lora.add_f32("layer.w.lora_A", vec![2, 1], &[1.0, 2.0]).unwrap();
        lora.add_f32("layer.w.lora_B", vec![1, 2], &[3.0, 4.0]).unwrap();
        let base = TensorArchive::from_bytes(&base.to_bytes()).unwrap();
        let lora = TensorArchive::from_bytes(&lora.to_bytes()).unwrap();

        let out = merge_archive(&base, &lora, Some(2.0), Some(1)).unwrap();
        assert_eq!(out.merged, vec!["layer.w"]);
        let merged = TensorArchive::from_bytes(&out.archive.to_bytes()).unwrap();
        assert_eq!(merged.tensor_f32("layer.w").unwrap(), vec![7.0, 8.0, 12.0, 17.0]);
        assert_eq!(merged.tensor_f32("layer.bias").unwrap(), vec![0.5, 0.5]);

        // default alpha = r / 2 = 0.5
        let half = merge_archive(&base, &lora, None, None).unwrap();
        let m = TensorArchive::from_bytes(&half.archive.to_bytes()).unwrap();
        assert_eq!(m.tensor_f32("layer.w").unwrap(), vec![2.5, 2.0, 3.0, 5.0]);

        assert!(merge_archive(&base, &lora, None, Some(4)).is_err());
    }
}
