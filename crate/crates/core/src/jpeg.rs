//! JPEG distortion simulator.
//!
//! Models the lossy part of JPEG exactly: RGB -> YCbCr (BT.601 full range),
//! per-8x8-block orthonormal 2-D DCT, division by quality-scaled
//! quantization tables, rounding, and the inverse pipeline. Entropy coding
//! is omitted — the quantization round-trip fully determines the pixel
//! domain distortion. Chroma is not subsampled (4:4:4).
//!
//! [`jpeg_differentiable`] swaps the hard rounding for the smooth surrogate
//! `r(x) = round(x) + (x - round(x))^3` and returns the exact transpose of
//! the resulting smooth pipeline for gradient-based attacks.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Standard base luminance quantization table, natural (row-major) order.
const BASE_LUMA: [u8; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard base chrominance quantization table, natural (row-major) order.
const BASE_CHROMA: [u8; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality factor plus the derived 8x8 quantization tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JpegProfile {
    pub quality_factor: u8,
    pub luma_table: [u8; 64],
    pub chroma_table: [u8; 64],
}

/// Derives quantization tables for a quality factor in 1..=100.
///
/// Scale S = 5000/qf for qf < 50, else 200 - 2*qf; each entry is
/// `clamp(floor((base*S + 50)/100), 1, 255)`. At qf 50 the tables equal
/// the base tables exactly; at qf 100 every entry clamps to 1.
pub fn tables_for_qf(qf: u8) -> Result<JpegProfile> {
    if qf < 1 || qf > 100 {
        return Err(Error::InvalidArgument(format!(
            "quality factor must be in 1..=100, got {qf}"
        )));
    }
    let s: i64 = if qf < 50 {
        5000 / qf as i64
    } else {
        200 - 2 * qf as i64
    };
    let scale = |base: &[u8; 64]| {
        let mut out = [0u8; 64];
        for (o, &b) in out.iter_mut().zip(base.iter()) {
            *o = ((b as i64 * s + 50) / 100).clamp(1, 255) as u8;
        }
        out
    };
    Ok(JpegProfile {
        quality_factor: qf,
        luma_table: scale(&BASE_LUMA),
        chroma_table: scale(&BASE_CHROMA),
    })
}

// --- orthonormal 8x8 DCT-II -------------------------------------------------

fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (k, row) in m.iter_mut().enumerate() {
            let s = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = s * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / 16.0).cos();
            }
        }
        m
    })
}

/// Forward orthonormal 2-D DCT of one 8x8 block: `C * B * C^T`.
pub fn dct8_forward(block: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    // tmp = C * B
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += c[i][k] * block[k * 8 + j];
            }
            tmp[i * 8 + j] = acc;
        }
    }
    let mut out = [0.0; 64];
    // out = tmp * C^T
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += tmp[i * 8 + k] * c[j][k];
            }
            out[i * 8 + j] = acc;
        }
    }
    out
}

/// Inverse of [`dct8_forward`]: `C^T * B * C`.
pub fn dct8_inverse(block: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    // tmp = C^T * B
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += c[k][i] * block[k * 8 + j];
            }
            tmp[i * 8 + j] = acc;
        }
    }
    let mut out = [0.0; 64];
    // out = tmp * C
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += tmp[i * 8 + k] * c[k][j];
            }
            out[i * 8 + j] = acc;
        }
    }
    out
}

// --- BT.601 full-range color transform --------------------------------------

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;
const CB_SCALE: f64 = 2.0 * (1.0 - KB); // 1.772
const CR_SCALE: f64 = 2.0 * (1.0 - KR); // 1.402

/// Row-major linear part of RGB -> YCbCr (offsets of 128 on Cb/Cr applied
/// separately).
fn color_forward_matrix() -> [[f64; 3]; 3] {
    [
        [KR, KG, KB],
        [-KR / CB_SCALE, -KG / CB_SCALE, (1.0 - KB) / CB_SCALE],
        [(1.0 - KR) / CR_SCALE, -KG / CR_SCALE, -KB / CR_SCALE],
    ]
}

/// Algebraic inverse of [`color_forward_matrix`].
fn color_inverse_matrix() -> [[f64; 3]; 3] {
    [
        [1.0, 0.0, CR_SCALE],
        [1.0, -KB * CB_SCALE / KG, -KR * CR_SCALE / KG],
        [1.0, CB_SCALE, 0.0],
    ]
}

#[inline]
fn apply3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
fn apply3_transposed(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

// --- smooth rounding surrogate ----------------------------------------------

/// `r(x) = round(x) + (x - round(x))^3`; within 0.125 of true rounding.
#[inline]
fn smooth_round(x: f64) -> f64 {
    let r = x.round();
    let d = x - r;
    r + d * d * d
}

/// Derivative of [`smooth_round`] away from half-integers: `3 (x - round(x))^2`.
#[inline]
fn smooth_round_grad(x: f64) -> f64 {
    let d = x - x.round();
    3.0 * d * d
}

// --- pipeline ----------------------------------------------------------------

fn padded_extent(n: usize) -> usize {
    n.div_ceil(8) * 8
}

/// Edge-replicating pad of a row-major plane to block-aligned dimensions.
fn pad_plane(src: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = vec![0.0; ph * pw];
    for py in 0..ph {
        let sy = py.min(h - 1);
        for px in 0..pw {
            let sx = px.min(w - 1);
            out[py * pw + px] = src[sy * w + sx];
        }
    }
    out
}

/// Transpose of [`pad_plane`]: every replicated cell accumulates into its
/// source cell.
fn pad_plane_adjoint(grad: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for py in 0..ph {
        let sy = py.min(h - 1);
        for px in 0..pw {
            let sx = px.min(w - 1);
            out[sy * w + sx] += grad[py * pw + px];
        }
    }
    out
}

/// State captured by the smooth forward pass, enough to apply the exact
/// transpose of the whole pipeline to any cotangent.
#[derive(Debug, Clone)]
pub struct JpegBackward {
    in_shape: (usize, usize, usize),
    padded: (usize, usize),
    /// Per component plane, r'(coefficient/q) at every padded position.
    round_grads: Vec<Vec<f64>>,
    /// 1.0 where the final clamp passed the value through, else 0.0.
    clamp_mask: Vec<f64>,
}

impl JpegBackward {
    /// Pulls a cotangent on the codec output back to the codec input.
    pub fn apply(&self, cotangent: &ImageTensor) -> Result<ImageTensor> {
        if cotangent.shape() != self.in_shape {
            return Err(Error::ShapeMismatch {
                expected: self.in_shape,
                got: cotangent.shape(),
            });
        }
        let (_, h, w) = self.in_shape;
        let (ph, pw) = self.padded;
        let n = h * w;
        let fwd = color_forward_matrix();
        let inv = color_inverse_matrix();

        // clamp mask, then transpose of the inverse color transform
        let mut comp = vec![vec![0.0f64; n]; 3];
        for i in 0..n {
            let g = [
                cotangent.data()[i] * self.clamp_mask[i],
                cotangent.data()[n + i] * self.clamp_mask[n + i],
                cotangent.data()[2 * n + i] * self.clamp_mask[2 * n + i],
            ];
            let t = apply3_transposed(&inv, g);
            comp[0][i] = t[0];
            comp[1][i] = t[1];
            comp[2][i] = t[2];
        }

        // block chain transpose on each component plane
        for (ci, plane) in comp.iter_mut().enumerate() {
            // crop adjoint: zero-pad to block-aligned dims
            let mut padded = vec![0.0f64; ph * pw];
            for y in 0..h {
                padded[y * pw..y * pw + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
            }
            let rg = &self.round_grads[ci];
            for by in (0..ph).step_by(8) {
                for bx in (0..pw).step_by(8) {
                    let mut block = [0.0f64; 64];
                    for y in 0..8 {
                        for x in 0..8 {
                            block[y * 8 + x] = padded[(by + y) * pw + bx + x];
                        }
                    }
                    // transpose of B -> C^T r(C B C^T / q) q C, with q cancelling
                    let mut g = dct8_forward(&block);
                    for y in 0..8 {
                        for x in 0..8 {
                            g[y * 8 + x] *= rg[(by + y) * pw + bx + x];
                        }
                    }
                    let g = dct8_inverse(&g);
                    for y in 0..8 {
                        for x in 0..8 {
                            padded[(by + y) * pw + bx + x] = g[y * 8 + x];
                        }
                    }
                }
            }
            // pad adjoint back to the original extent
            *plane = pad_plane_adjoint(&padded, h, w, ph, pw);
        }

        // transpose of the forward color transform
        let mut out = ImageTensor::zeros(3, h, w);
        for i in 0..n {
            let g = [comp[0][i], comp[1][i], comp[2][i]];
            let t = apply3_transposed(&fwd, g);
            out.data_mut()[i] = t[0];
            out.data_mut()[n + i] = t[1];
            out.data_mut()[2 * n + i] = t[2];
        }
        Ok(out)
    }
}

fn run_pipeline(
    img: &ImageTensor,
    profile: &JpegProfile,
    smooth: bool,
) -> Result<(ImageTensor, Option<JpegBackward>)> {
    if img.channels() != 3 {
        return Err(Error::ShapeMismatch {
            expected: (3, img.height(), img.width()),
            got: img.shape(),
        });
    }
    let (_, h, w) = img.shape();
    let (ph, pw) = (padded_extent(h), padded_extent(w));
    let n = h * w;
    let fwd = color_forward_matrix();
    let inv = color_inverse_matrix();

    // RGB -> YCbCr, level shift by -128. The +128 chroma offset and the
    // level shift cancel, so Cb/Cr planes hold the bare linear part.
    let mut comp = vec![vec![0.0f64; n]; 3];
    for i in 0..n {
        let rgb = [
            img.data()[i],
            img.data()[n + i],
            img.data()[2 * n + i],
        ];
        let ycc = apply3(&fwd, rgb);
        comp[0][i] = ycc[0] - 128.0;
        comp[1][i] = ycc[1];
        comp[2][i] = ycc[2];
    }

    let mut round_grads = if smooth {
        vec![vec![0.0f64; ph * pw]; 3]
    } else {
        Vec::new()
    };

    for (ci, plane) in comp.iter_mut().enumerate() {
        let table = if ci == 0 { &profile.luma_table } else { &profile.chroma_table };
        let mut padded = pad_plane(plane, h, w, ph, pw);
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [0.0f64; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = padded[(by + y) * pw + bx + x];
                    }
                }
                let mut coef = dct8_forward(&block);
                for k in 0..64 {
                    let q = table[k] as f64;
                    let scaled = coef[k] / q;
                    let rounded = if smooth {
                        round_grads[ci][(by + k / 8) * pw + bx + k % 8] =
                            smooth_round_grad(scaled);
                        smooth_round(scaled)
                    } else {
                        scaled.round()
                    };
                    coef[k] = rounded * q;
                }
                let rec = dct8_inverse(&coef);
                for y in 0..8 {
                    for x in 0..8 {
                        padded[(by + y) * pw + bx + x] = rec[y * 8 + x];
                    }
                }
            }
        }
        // crop back to the original extent
        for y in 0..h {
            plane[y * w..(y + 1) * w].copy_from_slice(&padded[y * pw..y * pw + w]);
        }
    }

    // unshift, YCbCr -> RGB, clamp
    let mut out = ImageTensor::zeros(3, h, w);
    let mut clamp_mask = if smooth { vec![0.0f64; 3 * n] } else { Vec::new() };
    for i in 0..n {
        let ycc = [comp[0][i] + 128.0, comp[1][i], comp[2][i]];
        let rgb = apply3(&inv, ycc);
        for (c, &v) in rgb.iter().enumerate() {
            out.data_mut()[c * n + i] = v.clamp(0.0, 255.0);
            if smooth {
                clamp_mask[c * n + i] = if v > 0.0 && v < 255.0 { 1.0 } else { 0.0 };
            }
        }
    }

    let backward = smooth.then(|| JpegBackward {
        in_shape: img.shape(),
        padded: (ph, pw),
        round_grads: std::mem::take(&mut round_grads),
        clamp_mask,
    });
    Ok((out, backward))
}

/// Exact JPEG quantization round-trip at the given profile. Deterministic;
/// output values lie in [0, 255].
pub fn jpeg_roundtrip(img: &ImageTensor, profile: &JpegProfile) -> Result<ImageTensor> {
    run_pipeline(img, profile, false).map(|(out, _)| out)
}

/// Smooth variant of [`jpeg_roundtrip`] whose rounding is the cubic
/// surrogate; returns the output and the exact transpose of the smooth
/// pipeline for backpropagation.
pub fn jpeg_differentiable(
    img: &ImageTensor,
    profile: &JpegProfile,
) -> Result<(ImageTensor, JpegBackward)> {
    run_pipeline(img, profile, true).map(|(out, back)| (out, back.expect("smooth pass")))
}
