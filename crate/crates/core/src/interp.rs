//! Bilinear resampling and its exact adjoint.
//!
//! The resampler uses the align-corners convention: output corner samples
//! coincide with input corners, and interior samples sit on the source grid
//! without half-pixel offsets. This convention is frozen — attack results
//! depend on it. Out-of-range source coordinates clamp to the border.
//!
//! The adjoint is implemented by scattering with the forward weights
//! (transpose of the gather), so `<resample(u), v> == <u, adjoint(v)>`
//! holds to machine precision rather than approximately.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Ratio of output size to input size for one resampling step.
/// Values below 1 shrink the image; the reciprocal restores it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpFactor(f64);

impl InterpFactor {
    pub fn new(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "interpolation factor must be a positive real, got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Output size for an input extent under this factor: `round(n * f)`,
    /// clamped to at least 1.
    pub fn scaled_size(self, n: usize) -> usize {
        ((n as f64 * self.0).round() as usize).max(1)
    }
}

/// Precomputed 1-D sample: the two source indices and the weight of the
/// right one. Align-corners; degenerate axes sample index 0.
#[inline]
fn axis_sample(out_i: usize, out_n: usize, in_n: usize) -> (usize, usize, f64) {
    if out_n <= 1 || in_n <= 1 {
        return (0, 0, 0.0);
    }
    let scale = (in_n - 1) as f64 / (out_n - 1) as f64;
    let src = (out_i as f64 * scale).clamp(0.0, (in_n - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_n - 1);
    (i0, i1, src - i0 as f64)
}

/// Resizes `img` by `factor` along both axes with bilinear interpolation.
pub fn resample(img: &ImageTensor, factor: InterpFactor) -> Result<ImageTensor> {
    let out_h = factor.scaled_size(img.height());
    let out_w = factor.scaled_size(img.width());
    resample_to(img, out_h, out_w)
}

/// Resizes `img` to an explicit target shape with bilinear interpolation.
pub fn resample_to(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate output size {out_h}x{out_w}"
        )));
    }
    let (c, in_h, in_w) = img.shape();
    let mut out = ImageTensor::zeros(c, out_h, out_w);
    for ch in 0..c {
        let src = img.plane(ch);
        let dst = out.plane_mut(ch);
        for oy in 0..out_h {
            let (y0, y1, wy) = axis_sample(oy, out_h, in_h);
            for ox in 0..out_w {
                let (x0, x1, wx) = axis_sample(ox, out_w, in_w);
                let top = src[y0 * in_w + x0] * (1.0 - wx) + src[y0 * in_w + x1] * wx;
                let bot = src[y1 * in_w + x0] * (1.0 - wx) + src[y1 * in_w + x1] * wx;
                dst[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Ok(out)
}

/// Exact transpose of [`resample`]: pulls a cotangent on the output grid
/// back to the input grid of shape `in_shape`.
pub fn resample_adjoint(
    grad_out: &ImageTensor,
    factor: InterpFactor,
    in_shape: (usize, usize, usize),
) -> Result<ImageTensor> {
    let (_, in_h, in_w) = in_shape;
    let expect = (
        in_shape.0,
        factor.scaled_size(in_h),
        factor.scaled_size(in_w),
    );
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch {
            expected: expect,
            got: grad_out.shape(),
        });
    }
    resample_adjoint_to(grad_out, in_shape)
}

/// Transpose of [`resample_to`] for an explicit input shape.
pub fn resample_adjoint_to(
    grad_out: &ImageTensor,
    in_shape: (usize, usize, usize),
) -> Result<ImageTensor> {
    let (c, in_h, in_w) = in_shape;
    if grad_out.channels() != c {
        return Err(Error::ShapeMismatch {
            expected: in_shape,
            got: grad_out.shape(),
        });
    }
    let (out_h, out_w) = (grad_out.height(), grad_out.width());
    let mut grad_in = ImageTensor::zeros(c, in_h, in_w);
    for ch in 0..c {
        let src = grad_out.plane(ch);
        let dst = grad_in.plane_mut(ch);
        for oy in 0..out_h {
            let (y0, y1, wy) = axis_sample(oy, out_h, in_h);
            for ox in 0..out_w {
                let (x0, x1, wx) = axis_sample(ox, out_w, in_w);
                let g = src[oy * out_w + ox];
                dst[y0 * in_w + x0] += g * (1.0 - wx) * (1.0 - wy);
                dst[y0 * in_w + x1] += g * wx * (1.0 - wy);
                dst[y1 * in_w + x0] += g * (1.0 - wx) * wy;
                dst[y1 * in_w + x1] += g * wx * wy;
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(c: usize, h: usize, w: usize, rng: &mut Rng) -> ImageTensor {
        let data = (0..c * h * w).map(|_| rng.uniform(0.0, 255.0)).collect();
        ImageTensor::from_vec(c, h, w, data).unwrap()
    }

    fn dot(a: &ImageTensor, b: &ImageTensor) -> f64 {
        a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn factor_must_be_positive() {
        assert!(InterpFactor::new(0.0).is_err());
        assert!(InterpFactor::new(-0.5).is_err());
        assert!(InterpFactor::new(f64::NAN).is_err());
        assert!(InterpFactor::new(0.5).is_ok());
    }

    #[test]
    fn constant_image_is_reproduced_for_many_factors() {
        // Weight partition of unity.
        let img = ImageTensor::constant(1, 9, 7, 128.0);
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let f = InterpFactor::new(rng.uniform(0.1, 4.0)).unwrap();
            let out = resample(&img, f).unwrap();
            for &v in out.data() {
                assert!((v - 128.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corners_are_exact_on_2x_upsample() {
        // Hand evaluation at the corner coordinates of a 2x2 source.
        let img = ImageTensor::from_vec(1, 2, 2, vec![0.0, 10.0, 20.0, 30.0]).unwrap();
        let out = resample(&img, InterpFactor::new(2.0).unwrap()).unwrap();
        assert_eq!(out.shape(), (1, 4, 4));
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(out.get(0, 0, 3), 10.0);
        assert_eq!(out.get(0, 3, 0), 20.0);
        assert_eq!(out.get(0, 3, 3), 30.0);
        // Interior: midpoint of the source square. Align-corners maps
        // output (1,1) to source (1/3, 1/3):
        // (1-1/3)^2*0 + (1/3)(2/3)*10 + (2/3)(1/3)*20 + (1/3)^2*30
        let expect = (2.0 / 9.0) * 10.0 + (2.0 / 9.0) * 20.0 + (1.0 / 9.0) * 30.0;
        assert!((out.get(0, 1, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn ramp_survives_half_then_double() {
        // Bilinear interpolation reproduces bilinear functions; direct
        // formula is the oracle.
        let (h, w) = (8, 8);
        let ramp = |y: f64, x: f64| x + 2.0 * y;
        let data: Vec<f64> = (0..h * w)
            .map(|i| ramp((i / w) as f64, (i % w) as f64))
            .collect();
        let img = ImageTensor::from_vec(1, h, w, data).unwrap();
        let down = resample(&img, InterpFactor::new(0.5).unwrap()).unwrap();
        assert_eq!(down.shape(), (1, 4, 4));
        let up = resample(&down, InterpFactor::new(2.0).unwrap()).unwrap();
        assert_eq!(up.shape(), (1, 8, 8));
        let sy: f64 = 7.0 / 3.0 * 3.0 / 7.0; // coarse grid spacing cancels exactly
        assert!((sy - 1.0).abs() < 1e-12);
        for y in 0..8 {
            for x in 0..8 {
                let expect = ramp(y as f64, x as f64);
                assert!(
                    (up.get(0, y, x) - expect).abs() < 1e-9,
                    "({y},{x}): {} vs {expect}",
                    up.get(0, y, x)
                );
            }
        }
    }

    #[test]
    fn identity_factor_is_bitwise_identity() {
        let mut rng = Rng::new(77);
        let img = random_image(3, 6, 5, &mut rng);
        let out = resample(&img, InterpFactor::new(1.0).unwrap()).unwrap();
        assert_eq!(out, img);
        let back = resample_adjoint(&img, InterpFactor::new(1.0).unwrap(), img.shape()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn adjoint_dot_product_identity() {
        let mut rng = Rng::new(99);
        let u = random_image(1, 4, 4, &mut rng);
        let f = InterpFactor::new(0.5).unwrap();
        let ru = resample(&u, f).unwrap();
        assert_eq!(ru.shape(), (1, 2, 2));
        let v = random_image(1, 2, 2, &mut rng);
        let lhs = dot(&ru, &v);
        let rhs = dot(&u, &resample_adjoint(&v, f, u.shape()).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn adjoint_dot_product_identity_random_cases() {
        let mut rng = Rng::new(2024);
        for case in 0..20 {
            let h = 2 + rng.below(9) as usize;
            let w = 2 + rng.below(9) as usize;
            let c = 1 + rng.below(3) as usize;
            let f = InterpFactor::new(rng.uniform(0.2, 3.0)).unwrap();
            let u = random_image(c, h, w, &mut rng);
            let ru = resample(&u, f).unwrap();
            let v = random_image(c, ru.height(), ru.width(), &mut rng);
            let lhs = dot(&ru, &v);
            let rhs = dot(&u, &resample_adjoint(&v, f, u.shape()).unwrap());
            let denom = lhs.abs().max(rhs.abs()).max(1.0);
            assert!(
                ((lhs - rhs) / denom).abs() < 1e-9,
                "case {case}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn adjoint_of_ones_matches_materialized_column_sums() {
        // Materialize the sparse forward matrix on a 6x6 -> 3x3 case by
        // resampling basis vectors; adjoint(ones) must equal its column sums.
        let f = InterpFactor::new(0.5).unwrap();
        let (h, w) = (6, 6);
        let mut col_sums = vec![0.0f64; h * w];
        for k in 0..h * w {
            let mut basis = vec![0.0f64; h * w];
            basis[k] = 1.0;
            let e = ImageTensor::from_vec(1, h, w, basis).unwrap();
            let re = resample(&e, f).unwrap();
            col_sums[k] = re.data().iter().sum();
        }
        let ones = ImageTensor::constant(1, 3, 3, 1.0);
        let adj = resample_adjoint(&ones, f, (1, h, w)).unwrap();
        for k in 0..h * w {
            assert!((adj.data()[k] - col_sums[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_shape_mismatch_is_reported() {
        let g = ImageTensor::zeros(1, 3, 3);
        let f = InterpFactor::new(0.5).unwrap();
        assert!(matches!(
            resample_adjoint(&g, f, (1, 8, 8)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn output_range_stays_within_input_range() {
        // Nonnegative weights cannot overshoot.
        let mut rng = Rng::new(31);
        for _ in 0..20 {
            let img = random_image(1, 7, 9, &mut rng);
            let f = InterpFactor::new(rng.uniform(0.2, 3.5)).unwrap();
            let out = resample(&img, f).unwrap();
            assert!(out.min_value() >= img.min_value() - 1e-12);
            assert!(out.max_value() <= img.max_value() + 1e-12);
        }
    }

    #[test]
    fn down_up_round_trip_smooths_noise() {
        // Total squared second difference must drop for random noise.
        let second_diff_energy = |img: &ImageTensor| -> f64 {
            let (c, h, w) = img.shape();
            let mut acc = 0.0;
            for ch in 0..c {
                let p = img.plane(ch);
                for y in 0..h {
                    for x in 1..w - 1 {
                        let d = p[y * w + x + 1] - 2.0 * p[y * w + x] + p[y * w + x - 1];
                        acc += d * d;
                    }
                }
                for x in 0..w {
                    for y in 1..h - 1 {
                        let d = p[(y + 1) * w + x] - 2.0 * p[y * w + x] + p[(y - 1) * w + x];
                        acc += d * d;
                    }
                }
            }
            acc
        };
        for seed in 0..20 {
            let mut rng = Rng::new(1000 + seed);
            let img = random_image(1, 16, 16, &mut rng);
            let down = resample(&img, InterpFactor::new(0.5).unwrap()).unwrap();
            let up = resample_to(&down, 16, 16).unwrap();
            assert!(
                second_diff_energy(&up) < second_diff_energy(&img),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn degenerate_output_size_is_rejected() {
        let img = ImageTensor::zeros(1, 4, 4);
        assert!(resample_to(&img, 0, 4).is_err());
    }
}
