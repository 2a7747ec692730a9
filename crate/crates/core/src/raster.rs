//! Amplitude rasters and region masks.
//!
//! Two on-disk encodings are read:
//!
//! * `RAS1`: `b"RAS1"` | width `u32` LE | height `u32` LE | width×height `f32` LE,
//!   row-major with row 0 at the top. Round-trips bit-exactly.
//! * 8/16-bit grayscale PNG, scaled to `[0, 1]` by the maximum code value.
//!
//! A RAS1 file may carry a JSON sidecar at `<path>.json` with `width`, `height`
//! and optionally `normalized` and `source_id`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RAS1_MAGIC: &[u8; 4] = b"RAS1";
const PNG_MAGIC: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

/// Row-major raster of non-negative SAR amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    normalized: bool,
    source_id: String,
}

impl AmplitudeImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_meta(width, height, data, false, String::new())
    }

    pub fn with_meta(
        width: usize,
        height: usize,
        data: Vec<f32>,
        normalized: bool,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateDimensions { width, height });
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::DimensionMismatch(format!("{width}x{height} overflows")))?;
        if data.len() != expected {
            return Err(Error::PayloadSize {
                expected: expected * 4,
                found: data.len() * 4,
            });
        }
        validate_values(&data)?;
        if normalized {
            if let Some(v) = data.iter().find(|v| **v > 1.0) {
                return Err(Error::NotNormalized(format!(
                    "value {v} in image flagged normalized"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            data,
            normalized,
            source_id: source_id.into(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn set_source_id(&mut self, id: impl Into<String>) {
        self.source_id = id.into();
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when every value lies in `[0, 1]`, whether or not the flag is set.
    pub fn is_unit_range(&self) -> bool {
        self.normalized || self.data.iter().all(|v| *v <= 1.0)
    }

    /// Copy of the `w`×`h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Self::with_meta(w, h, data, self.normalized, format!("{}@{x},{y}", self.source_id))
    }
}

fn validate_values(data: &[f32]) -> Result<()> {
    for (index, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if *v < 0.0 {
            return Err(Error::NegativeValue { index, value: *v });
        }
    }
    Ok(())
}

/// Integer region labels aligned with an image; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneMask {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl SceneMask {
    pub fn new(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height} needs {} ids, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Mask with every pixel in region 1.
    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![1; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn matches(&self, image: &AmplitudeImage) -> bool {
        self.width == image.width() && self.height == image.height()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Reads a RAS1 or grayscale PNG raster.
pub fn read_raster(path: impl AsRef<Path>) -> Result<AmplitudeImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path.to_string_lossy().into_owned();
    if bytes.starts_with(RAS1_MAGIC) {
        let (width, height, data) = decode_ras1(&bytes)?;
        let side = sidecar_path(path);
        let (normalized, source_id) = if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: Sidecar =
                serde_json::from_str(&text).map_err(|e| Error::json(side.display().to_string(), e))?;
            if meta.width != width || meta.height != height {
                return Err(Error::DimensionMismatch(format!(
                    "sidecar declares {}x{}, raster is {width}x{height}",
                    meta.width, meta.height
                )));
            }
            (meta.normalized, meta.source_id.unwrap_or(id))
        } else {
            (false, id)
        };
        AmplitudeImage::with_meta(width, height, data, normalized, source_id)
    } else if bytes.starts_with(PNG_MAGIC) {
        let (width, height, data) = decode_png(&bytes)?;
        AmplitudeImage::with_meta(width, height, data, true, id)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: neither RAS1 nor PNG",
            path.display()
        )))
    }
}

pub fn decode_ras1(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 12 || &bytes[..4] != RAS1_MAGIC {
        return Err(Error::MalformedHeader {
            what: "RAS1".into(),
            detail: "missing magic or short header".into(),
        });
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::DegenerateDimensions { width, height });
    }
    let payload = &bytes[12..];
    let expected = width * height * 4;
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((width, height, data))
}

pub fn encode_ras1(image: &AmplitudeImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + image.len() * 4);
    out.extend_from_slice(RAS1_MAGIC);
    out.extend_from_slice(&(image.width() as u32).to_le_bytes());
    out.extend_from_slice(&(image.height() as u32).to_le_bytes());
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|c| (c as f64 / u8::MAX as f64) as f32)
            .collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|c| (c as f64 / u16::MAX as f64) as f32)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {:?}; only 8/16-bit grayscale is supported",
                other.color()
            )))
        }
    };
    Ok((w, h, data))
}

/// Writes `image` as RAS1. Degenerate or non-finite images never reach disk
/// because `AmplitudeImage` cannot hold them.
pub fn write_raster(image: &AmplitudeImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_ras1(image))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_sidecar(image: &AmplitudeImage, path: impl AsRef<Path>) -> Result<()> {
    let side = sidecar_path(path.as_ref());
    let meta = Sidecar {
        width: image.width(),
        height: image.height(),
        normalized: image.is_normalized(),
        source_id: Some(image.source_id().to_string()),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json("sidecar", e))?;
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Quick-look PNG export of a unit-range image at 8 or 16 bits.
pub fn write_png(image: &AmplitudeImage, path: impl AsRef<Path>, bits: u8) -> Result<()> {
    let path = path.as_ref();
    if !image.is_unit_range() {
        return Err(Error::NotNormalized(format!(
            "{} cannot be quantized to PNG",
            image.source_id()
        )));
    }
    let (w, h) = (image.width() as u32, image.height() as u32);
    let result = match bits {
        8 => {
            let raw = image
                .data()
                .iter()
                .map(|v| (v * u8::MAX as f32).round() as u8)
                .collect();
            ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, raw)
                .expect("buffer size matches dimensions")
                .save(path)
        }
        16 => {
            let raw = image
                .data()
                .iter()
                .map(|v| (v * u16::MAX as f32).round() as u16)
                .collect();
            ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w, h, raw)
                .expect("buffer size matches dimensions")
                .save(path)
        }
        _ => return Err(Error::InvalidParameter(format!("PNG bit depth {bits}"))),
    };
    result.map_err(|e| Error::Png(e.to_string()))
}

/// Reads a region mask: grayscale PNG codes, or a RAS1 raster holding
/// non-negative integral values.
pub fn read_mask(path: impl AsRef<Path>) -> Result<SceneMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(RAS1_MAGIC) {
        let (w, h, data) = decode_ras1(&bytes)?;
        let ids = data
            .iter()
            .enumerate()
            .map(|(index, v)| {
                if !v.is_finite() {
                    Err(Error::NonFinite { index })
                } else if *v < 0.0 || v.fract() != 0.0 {
                    Err(Error::InvalidParameter(format!(
                        "mask value {v} at {index} is not a non-negative integer"
                    )))
                } else {
                    Ok(*v as u32)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        SceneMask::new(w, h, ids)
    } else if bytes.starts_with(PNG_MAGIC) {
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Png(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let ids = match img {
            DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
            DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
            other => {
                return Err(Error::UnsupportedFormat(format!(
                    "mask PNG color type {:?}",
                    other.color()
                )))
            }
        };
        SceneMask::new(w, h, ids)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: mask must be RAS1 or PNG",
            path.display()
        )))
    }
}

pub fn write_mask_png(mask: &SceneMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = mask
        .data()
        .iter()
        .map(|id| {
            u16::try_from(*id)
                .map_err(|_| Error::InvalidParameter(format!("region id {id} exceeds 16 bits")))
        })
        .collect::<Result<Vec<_>>>()?;
    let all_small = raw.iter().all(|v| *v <= u8::MAX as u16);
    let (w, h) = (mask.width() as u32, mask.height() as u32);
    let result = if all_small {
        let raw8 = raw.into_iter().map(|v| v as u8).collect();
        ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, raw8)
            .expect("buffer size matches dimensions")
            .save(path)
    } else {
        ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w, h, raw)
            .expect("buffer size matches dimensions")
            .save(path)
    };
    result.map_err(|e| Error::Png(e.to_string()))
}
