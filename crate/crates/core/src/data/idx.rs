//! IDX digit files (MNIST layout).
//!
//! Images: magic `0x00000803`, then count, rows, cols as big-endian u32,
//! then unsigned bytes. Labels: magic `0x00000801`, count, then bytes.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Domain, LabeledSet, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
/// Both digit domains are brought to this side length.
pub const DIGIT_SIDE: usize = 28;
const DIGIT_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], words: usize, what: &str) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(DataError::Format(format!("{what} file shorter than its {}-byte header", 4 * words)));
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let h = header(bytes, 4, "image")?;
    if h[0] != IMAGE_MAGIC {
        return Err(DataError::Format(format!("image magic {:#010x}, expected {IMAGE_MAGIC:#010x}", h[0])));
    }
    let (count, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(DataError::Format(format!(
            "{count} images of {rows}x{cols} need {} bytes, file has {}",
            count * rows * cols,
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let h = header(bytes, 2, "label")?;
    if h[0] != LABEL_MAGIC {
        return Err(DataError::Format(format!("label magic {:#010x}, expected {LABEL_MAGIC:#010x}", h[0])));
    }
    let body = &bytes[8..];
    if body.len() != h[1] as usize {
        return Err(DataError::Format(format!("{} labels declared, file has {}", h[1], body.len())));
    }
    Ok(body.to_vec())
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(src: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        let (r0, r1, fr) = coord(r, rows, out_rows);
        for c in 0..out_cols {
            let (c0, c1, fc) = coord(c, cols, out_cols);
            let top = src[r0 * cols + c0] * (1.0 - fc) + src[r0 * cols + c1] * fc;
            let bottom = src[r1 * cols + c0] * (1.0 - fc) + src[r1 * cols + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Scalar standardization fitted once and reused across domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Mean and population std over every feature value. A constant input
    /// gets unit std so it maps to zeros.
    pub fn fit(features: &Tensor) -> Self {
        let n = features.len().max(1) as f64;
        let mean = features.data().iter().sum::<f64>() / n;
        let var = features.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, features: &Tensor) -> Tensor {
        features.map(|v| (v - self.mean) / self.std)
    }
}

/// Loads an image/label IDX pair, scales pixels to `[0, 1]`, resizes to
/// 28x28 if needed and standardizes. With `limit`, a uniform subsample of
/// that size is drawn under `seed`. Pass the source [`Standardizer`] when
/// loading the target domain; with `None` the statistics are fitted on the
/// loaded set and returned.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
    seed: u64,
    normalize: Option<&Standardizer>,
) -> Result<(LabeledSet, Standardizer)> {
    let images = read_idx_images(&fs::read(images_path)?)?;
    let labels = read_idx_labels(&fs::read(labels_path)?)?;
    if images.count != labels.len() {
        return Err(DataError::Consistency(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= DIGIT_CLASSES) {
        return Err(DataError::Format(format!("digit label {bad} out of range")));
    }
    let chosen: Vec<usize> = match limit {
        Some(m) if m < images.count => {
            let mut idx = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), images.count, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..images.count).collect(),
    };
    let side = images.rows * images.cols;
    let mut data = Vec::with_capacity(chosen.len() * DIGIT_SIDE * DIGIT_SIDE);
    for &i in &chosen {
        let img: Vec<f64> = images.pixels[i * side..(i + 1) * side]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        if images.rows == DIGIT_SIDE && images.cols == DIGIT_SIDE {
            data.extend(img);
        } else {
            data.extend(resize_bilinear(&img, images.rows, images.cols, DIGIT_SIDE, DIGIT_SIDE));
        }
    }
    let raw = Tensor::matrix(chosen.len(), DIGIT_SIDE * DIGIT_SIDE, data)?;
    let stats = normalize.copied().unwrap_or_else(|| Standardizer::fit(&raw));
    let set = LabeledSet::new(
        stats.apply(&raw),
        chosen.iter().map(|&i| labels[i] as usize).collect(),
        Domain::Source,
        DIGIT_CLASSES,
    )?;
    Ok((set, stats))
}
