//! Frequency-domain and smoothness diagnostics.
//!
//! The spectrum tools operate on the whole image (not 8x8 blocks): an
//! orthonormal 2-D DCT per channel, an energy ratio above a normalized
//! frequency cutoff, and per-row total-variation profiles. Diagnostics are
//! usually run on the perturbation `x_adv - x_s` rather than raw images.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Orthonormal DCT-II matrix for extent `n` (rows index frequency).
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0f64; n * n];
    for k in 0..n {
        let s = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for x in 0..n {
            m[k * n + x] =
                s * (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * k as f64 / (2.0 * n as f64))
                    .cos();
        }
    }
    m
}

/// Full-image orthonormal 2-D DCT-II per channel. Parseval holds: the
/// coefficient tensor has the same L2 norm as the input.
pub fn full_dct(img: &ImageTensor) -> ImageTensor {
    transform(img, false)
}

/// Inverse of [`full_dct`].
pub fn full_idct(coeffs: &ImageTensor) -> ImageTensor {
    transform(coeffs, true)
}

fn transform(img: &ImageTensor, inverse: bool) -> ImageTensor {
    let (c, h, w) = img.shape();
    let mh = dct_matrix(h);
    let mw = dct_matrix(w);
    let mut out = ImageTensor::zeros(c, h, w);
    let mut tmp = vec![0.0f64; h * w];
    for ch in 0..c {
        let src = img.plane(ch);
        // rows: tmp = M_h (*) src   (or transpose for the inverse)
        for u in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for y in 0..h {
                    let m = if inverse { mh[y * h + u] } else { mh[u * h + y] };
                    acc += m * src[y * w + x];
                }
                tmp[u * w + x] = acc;
            }
        }
        let dst = out.plane_mut(ch);
        for u in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for x in 0..w {
                    let m = if inverse { mw[x * w + v] } else { mw[v * w + x] };
                    acc += m * tmp[u * w + x];
                }
                dst[u * w + v] = acc;
            }
        }
    }
    out
}

/// Fraction of spectral energy at or above the normalized frequency
/// cutoff: a coefficient at (u, v) counts as high frequency when
/// `(u/H + v/W) / 2 >= cutoff`.
pub fn hf_energy_ratio(coeffs: &ImageTensor, cutoff: f64) -> Result<f64> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::InvalidArgument(format!("cutoff must be in (0, 1), got {cutoff}")));
    }
    let (c, h, w) = coeffs.shape();
    let mut total = 0.0;
    let mut high = 0.0;
    for ch in 0..c {
        let plane = coeffs.plane(ch);
        for u in 0..h {
            for v in 0..w {
                let e = plane[u * w + v] * plane[u * w + v];
                total += e;
                if (u as f64 / h as f64 + v as f64 / w as f64) / 2.0 >= cutoff {
                    high += e;
                }
            }
        }
    }
    if total == 0.0 {
        return Err(Error::Numeric("zero image has no spectral energy".into()));
    }
    Ok(high / total)
}

/// Full spectrum plus the summary ratio, as written to reports.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub coefficients: ImageTensor,
    pub hf_energy_ratio: f64,
    pub cutoff: f64,
}

pub fn spectrum_report(img: &ImageTensor, cutoff: f64) -> Result<SpectrumReport> {
    let coefficients = full_dct(img);
    let ratio = hf_energy_ratio(&coefficients, cutoff)?;
    Ok(SpectrumReport {
        coefficients,
        hf_energy_ratio: ratio,
        cutoff,
    })
}

/// One channel of the spectrum as a log-magnitude heatmap scaled to
/// [0, 255], suitable for PGM export.
pub fn log_magnitude_heatmap(coeffs: &ImageTensor, channel: usize) -> Result<ImageTensor> {
    if channel >= coeffs.channels() {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range 0..{}",
            coeffs.channels()
        )));
    }
    let (h, w) = (coeffs.height(), coeffs.width());
    let logs: Vec<f64> = coeffs
        .plane(channel)
        .iter()
        .map(|&v| (1.0 + v.abs()).ln())
        .collect();
    let max = logs.iter().copied().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    ImageTensor::from_vec(1, h, w, logs.iter().map(|&v| v * scale).collect())
}

/// One image row per channel plus the summed total-variation statistic.
#[derive(Debug, Clone)]
pub struct NeighborProfile {
    pub row: usize,
    /// Pixel values of the requested row, one sequence per channel.
    pub values: Vec<Vec<f64>>,
    /// Sum over channels of the row's total variation.
    pub total_variation: f64,
}

/// Extracts the pixel profile of `row` and its total variation.
pub fn neighbor_profile(img: &ImageTensor, row: usize) -> Result<NeighborProfile> {
    if row >= img.height() {
        return Err(Error::InvalidArgument(format!(
            "row {row} out of range 0..{}",
            img.height()
        )));
    }
    let (c, _, w) = img.shape();
    let mut values = Vec::with_capacity(c);
    let mut tv = 0.0;
    for ch in 0..c {
        let plane = img.plane(ch);
        let row_vals: Vec<f64> = plane[row * w..(row + 1) * w].to_vec();
        tv += row_vals.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>();
        values.push(row_vals);
    }
    Ok(NeighborProfile {
        row,
        values,
        total_variation: tv,
    })
}
