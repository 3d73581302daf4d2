//! Embedding-model contract, the toy convolutional reference model, and the
//! distance/threshold machinery used to score attacks.
//!
//! The contract exposes the backward pass as a cotangent pullback so attack
//! code never sees model internals. The toy model is a deterministic
//! stand-in for a production face-embedding network: two strided 3x3
//! convolutions with a smooth nonlinearity, global average pooling, and a
//! linear head. Weights are fully determined by the construction seed.
//!
//! Different seeds share part of their weight structure (a fixed common
//! basis blended with seed-specific noise). Independently trained
//! recognition models overlap heavily in the low-level features they learn;
//! the blend reproduces that overlap so black-box transfer between two
//! seeds behaves like transfer between two real models rather than between
//! two unrelated random projections.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::ImageTensor;

/// Differentiable map from an image to an embedding vector.
pub trait EmbeddingModel: Send + Sync {
    fn embed_dim(&self) -> usize;

    /// Deterministic embedding of `img`.
    fn forward(&self, img: &ImageTensor) -> Result<Vec<f64>>;

    /// Pullback of `cotangent` through the forward map: the gradient of
    /// `<cotangent, forward(img)>` with respect to `img`.
    fn backward(&self, img: &ImageTensor, cotangent: &[f64]) -> Result<ImageTensor>;
}

/// Normalizes to unit L2 norm. Zero vectors have no direction and are a
/// numeric error.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numeric(format!("cannot normalize vector with norm {norm}")));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Squared L2 distance between the normalized embeddings of the two
/// images; ranges over [0, 4].
pub fn loss(model: &dyn EmbeddingModel, x_adv: &ImageTensor, x_t: &ImageTensor) -> Result<f64> {
    let u = normalize(&model.forward(x_adv)?)?;
    let w = normalize(&model.forward(x_t)?)?;
    Ok(u.iter().zip(w.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Exact gradient of [`loss`] with respect to `x_adv`, chained through the
/// normalization and the model's pullback.
pub fn loss_gradient(
    model: &dyn EmbeddingModel,
    x_adv: &ImageTensor,
    x_t: &ImageTensor,
) -> Result<ImageTensor> {
    let e = model.forward(x_adv)?;
    let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numeric(format!("embedding norm {norm}")));
    }
    let u: Vec<f64> = e.iter().map(|x| x / norm).collect();
    let w = normalize(&model.forward(x_t)?)?;
    let uw: f64 = u.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
    // d||u - w||^2 / de = (2 / ||e||) * ((u . w) u - w)
    let cot: Vec<f64> = u
        .iter()
        .zip(w.iter())
        .map(|(&ui, &wi)| 2.0 * (uw * ui - wi) / norm)
        .collect();
    model.backward(x_adv, &cot)
}

/// Verification threshold on squared normalized-embedding distance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecisionThreshold {
    pub threshold: f64,
    pub far_target: f64,
}

/// Linear-interpolation quantile of sorted data (the usual "type 7" rule).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Calibrates the decision threshold so that roughly `far_target` of the
/// given negative pairs fall below it.
pub fn calibrate_threshold(
    model: &dyn EmbeddingModel,
    negative_pairs: &[(ImageTensor, ImageTensor)],
    far_target: f64,
) -> Result<DecisionThreshold> {
    if negative_pairs.is_empty() {
        return Err(Error::InvalidArgument("empty negative pair set".into()));
    }
    if !(0.0..=1.0).contains(&far_target) {
        return Err(Error::InvalidArgument(format!("far target {far_target} outside [0, 1]")));
    }
    let mut distances = Vec::with_capacity(negative_pairs.len());
    for (a, b) in negative_pairs {
        distances.push(loss(model, a, b)?);
    }
    distances.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Ok(DecisionThreshold {
        threshold: quantile_sorted(&distances, far_target),
        far_target,
    })
}

// --- toy reference model ------------------------------------------------------

const CONV1_OUT: usize = 8;
const CONV2_OUT: usize = 16;
const EMBED_DIM: usize = 32;

/// Blend between the common weight basis and the seed-specific part.
/// 0 would make every seed identical; 1 would make seeds unrelated.
fn seed_blend() -> f64 {
    std::env::var("ADVKIT_CAL_BLEND").ok().and_then(|v| v.parse().ok()).unwrap_or(0.5)
}

/// Stream ids for deriving per-layer seeds.
const LAYER_STREAMS: [u64; 3] = [101, 202, 303];

/// Fixed seed for the weight structure shared by all model instances.
const SHARED_BASIS_SEED: u64 = 0x5EED_BA5E;

/// Deterministic two-layer convolutional embedding model.
#[derive(Debug, Clone)]
pub struct ToyConvModel {
    seed: u64,
    conv1_w: Vec<f64>, // [CONV1_OUT][3][3][3]
    conv1_b: Vec<f64>,
    conv2_w: Vec<f64>, // [CONV2_OUT][CONV1_OUT][3][3]
    conv2_b: Vec<f64>,
    head: Vec<f64>, // [EMBED_DIM][CONV2_OUT]
}

/// `0.5 (a + sqrt(a^2 + 1)) - 0.5`: a softplus-shaped rectifier built from
/// algebraic operations only, so results are bit-stable across platforms.
#[inline]
fn smooth_relu(a: f64) -> f64 {
    0.5 * (a + (a * a + 1.0).sqrt()) - 0.5
}

#[inline]
fn smooth_relu_grad(a: f64) -> f64 {
    0.5 * (1.0 + a / (a * a + 1.0).sqrt())
}

/// Blended draw: common basis + seed-specific noise at equal variance.
fn blended_weights(n: usize, sigma: f64, shared: &mut Rng, personal: &mut Rng) -> Vec<f64> {
    let blend = seed_blend();
    let wb = (1.0 - blend * blend).sqrt();
    (0..n)
        .map(|_| sigma * (wb * shared.normal() + blend * personal.normal()))
        .collect()
}

impl ToyConvModel {
    pub fn new(seed: u64) -> Self {
        let mut layers = Vec::new();
        for (idx, &stream) in LAYER_STREAMS.iter().enumerate() {
            let mut shared = Rng::new(Rng::derive_seed(SHARED_BASIS_SEED, stream));
            let mut personal = Rng::new(Rng::derive_seed(seed, stream));
            let (n_w, n_b, fan_in) = match idx {
                0 => (CONV1_OUT * 3 * 3 * 3, CONV1_OUT, 3 * 9),
                1 => (CONV2_OUT * CONV1_OUT * 3 * 3, CONV2_OUT, CONV1_OUT * 9),
                _ => (EMBED_DIM * CONV2_OUT, 0, CONV2_OUT),
            };
            let sigma = (2.0 / fan_in as f64).sqrt();
            let w = blended_weights(n_w, sigma, &mut shared, &mut personal);
            let b = blended_weights(n_b, 0.05, &mut shared, &mut personal);
            layers.push((w, b));
        }
        let head = layers.pop().expect("three layers");
        let conv2 = layers.pop().expect("three layers");
        let conv1 = layers.pop().expect("three layers");
        Self {
            seed,
            conv1_w: conv1.0,
            conv1_b: conv1.1,
            conv2_w: conv2.0,
            conv2_b: conv2.1,
            head: head.0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Persists weights as a flat binary file: magic, seed, dims,
    /// little-endian doubles.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(b"ADVKMDL1");
        out.extend_from_slice(&self.seed.to_le_bytes());
        for dim in [CONV1_OUT as u32, CONV2_OUT as u32, EMBED_DIM as u32] {
            out.extend_from_slice(&dim.to_le_bytes());
        }
        for part in [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.head] {
            for v in part.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let err = |offset: usize, message: &str| Error::Parse {
            offset,
            message: message.into(),
        };
        if bytes.len() < 28 || &bytes[0..8] != b"ADVKMDL1" {
            return Err(err(0, "bad model magic"));
        }
        let seed = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let mut at = 16;
        let mut dims = [0u32; 3];
        for d in dims.iter_mut() {
            *d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            at += 4;
        }
        if dims != [CONV1_OUT as u32, CONV2_OUT as u32, EMBED_DIM as u32] {
            return Err(err(16, "unsupported model dimensions"));
        }
        let counts = [
            CONV1_OUT * 27,
            CONV1_OUT,
            CONV2_OUT * CONV1_OUT * 9,
            CONV2_OUT,
            EMBED_DIM * CONV2_OUT,
        ];
        let need: usize = counts.iter().sum::<usize>() * 8 + at;
        if bytes.len() != need {
            return Err(err(bytes.len().min(need), "model file length mismatch"));
        }
        let mut parts: Vec<Vec<f64>> = Vec::new();
        for &count in &counts {
            let mut part = Vec::with_capacity(count);
            for _ in 0..count {
                let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                if !v.is_finite() {
                    return Err(err(at, "non-finite weight"));
                }
                part.push(v);
                at += 8;
            }
            parts.push(part);
        }
        let head = parts.pop().unwrap();
        let conv2_b = parts.pop().unwrap();
        let conv2_w = parts.pop().unwrap();
        let conv1_b = parts.pop().unwrap();
        let conv1_w = parts.pop().unwrap();
        Ok(Self { seed, conv1_w, conv1_b, conv2_w, conv2_b, head })
    }
}

/// 3x3 convolution, stride 2, zero padding 1: output extent is ceil(n/2).
fn conv_forward(
    input: &[f64],
    (ci, h, w): (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    co: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = vec![0.0f64; co * oh * ow];
    for oc in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..ci {
                    let wbase = ((oc * ci) + ic) * 9;
                    let ibase = ic * h * w;
                    for ky in 0..3 {
                        let iy = (2 * oy + ky).wrapping_sub(1);
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (2 * ox + kx).wrapping_sub(1);
                            if ix >= w {
                                continue;
                            }
                            acc += weights[wbase + ky * 3 + kx] * input[ibase + iy * w + ix];
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Input-gradient transpose of [`conv_forward`].
fn conv_backward_input(
    grad_out: &[f64],
    (ci, h, w): (usize, usize, usize),
    weights: &[f64],
    co: usize,
) -> Vec<f64> {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut grad_in = vec![0.0f64; ci * h * w];
    for oc in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out[(oc * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for ic in 0..ci {
                    let wbase = ((oc * ci) + ic) * 9;
                    let ibase = ic * h * w;
                    for ky in 0..3 {
                        let iy = (2 * oy + ky).wrapping_sub(1);
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (2 * ox + kx).wrapping_sub(1);
                            if ix >= w {
                                continue;
                            }
                            grad_in[ibase + iy * w + ix] += g * weights[wbase + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

impl EmbeddingModel for ToyConvModel {
    fn embed_dim(&self) -> usize {
        EMBED_DIM
    }

    fn forward(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let (c, h, w) = img.shape();
        if c != 3 {
            return Err(Error::ShapeMismatch {
                expected: (3, h, w),
                got: img.shape(),
            });
        }
        let z: Vec<f64> = img.data().iter().map(|&v| (v - 127.5) / 127.5).collect();
        let (a1, h1, w1) = conv_forward(&z, (3, h, w), &self.conv1_w, &self.conv1_b, CONV1_OUT);
        let f1: Vec<f64> = a1.iter().map(|&a| smooth_relu(a)).collect();
        let (a2, h2, w2) =
            conv_forward(&f1, (CONV1_OUT, h1, w1), &self.conv2_w, &self.conv2_b, CONV2_OUT);
        let f2: Vec<f64> = a2.iter().map(|&a| smooth_relu(a)).collect();
        // global average pool
        let spatial = (h2 * w2) as f64;
        let mut pooled = vec![0.0f64; CONV2_OUT];
        for ch in 0..CONV2_OUT {
            pooled[ch] = f2[ch * h2 * w2..(ch + 1) * h2 * w2].iter().sum::<f64>() / spatial;
        }
        let mut e = vec![0.0f64; EMBED_DIM];
        for (k, ek) in e.iter_mut().enumerate() {
            *ek = (0..CONV2_OUT).map(|j| self.head[k * CONV2_OUT + j] * pooled[j]).sum();
        }
        Ok(e)
    }

    fn backward(&self, img: &ImageTensor, cotangent: &[f64]) -> Result<ImageTensor> {
        if cotangent.len() != EMBED_DIM {
            return Err(Error::InvalidArgument(format!(
                "cotangent length {} != embed dim {EMBED_DIM}",
                cotangent.len()
            )));
        }
        let (c, h, w) = img.shape();
        if c != 3 {
            return Err(Error::ShapeMismatch {
                expected: (3, h, w),
                got: img.shape(),
            });
        }
        // re-run the forward chain, keeping pre-activations
        let z: Vec<f64> = img.data().iter().map(|&v| (v - 127.5) / 127.5).collect();
        let (a1, h1, w1) = conv_forward(&z, (3, h, w), &self.conv1_w, &self.conv1_b, CONV1_OUT);
        let f1: Vec<f64> = a1.iter().map(|&a| smooth_relu(a)).collect();
        let (a2, h2, w2) =
            conv_forward(&f1, (CONV1_OUT, h1, w1), &self.conv2_w, &self.conv2_b, CONV2_OUT);

        // head transpose
        let mut g_pool = vec![0.0f64; CONV2_OUT];
        for (k, &ck) in cotangent.iter().enumerate() {
            for (j, gp) in g_pool.iter_mut().enumerate() {
                *gp += self.head[k * CONV2_OUT + j] * ck;
            }
        }
        // pool transpose + nonlinearity
        let spatial = (h2 * w2) as f64;
        let mut g_a2 = vec![0.0f64; CONV2_OUT * h2 * w2];
        for ch in 0..CONV2_OUT {
            let g = g_pool[ch] / spatial;
            for i in 0..h2 * w2 {
                let idx = ch * h2 * w2 + i;
                g_a2[idx] = g * smooth_relu_grad(a2[idx]);
            }
        }
        let mut g_f1 = conv_backward_input(&g_a2, (CONV1_OUT, h1, w1), &self.conv2_w, CONV2_OUT);
        for (g, &a) in g_f1.iter_mut().zip(a1.iter()) {
            *g *= smooth_relu_grad(a);
        }
        let g_z = conv_backward_input(&g_f1, (3, h, w), &self.conv1_w, CONV1_OUT);
        let data: Vec<f64> = g_z.iter().map(|&g| g / 127.5).collect();
        ImageTensor::from_vec(3, h, w, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stub model: the embedding is the first `dim` pixels of the image.
    struct SliceModel {
        dim: usize,
        scale: f64,
    }

    impl EmbeddingModel for SliceModel {
        fn embed_dim(&self) -> usize {
            self.dim
        }
        fn forward(&self, img: &ImageTensor) -> Result<Vec<f64>> {
            Ok(img.data()[..self.dim].iter().map(|&v| v * self.scale).collect())
        }
        fn backward(&self, img: &ImageTensor, cot: &[f64]) -> Result<ImageTensor> {
            let mut g = ImageTensor::zeros(img.channels(), img.height(), img.width());
            for (i, &c) in cot.iter().enumerate() {
                g.data_mut()[i] = c * self.scale;
            }
            Ok(g)
        }
    }

    fn test_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = Rng::new(seed);
        let data = (0..3 * h * w).map(|_| rng.uniform(20.0, 235.0)).collect();
        ImageTensor::from_vec(3, h, w, data).unwrap()
    }

    #[test]
    fn normalize_three_four() {
        assert_eq!(normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn normalize_unit_vector_is_identity() {
        let v = normalize(&[0.6, 0.8]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_random_has_unit_norm() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let v: Vec<f64> = (0..32).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let n = normalize(&v).unwrap();
            let norm: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_zero_vector_fails() {
        assert!(normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn loss_of_identical_images_is_zero() {
        let model = ToyConvModel::new(1);
        let img = test_image(2, 16, 16);
        assert_eq!(loss(&model, &img, &img).unwrap(), 0.0);
    }

    #[test]
    fn loss_of_antipodal_embeddings_is_four() {
        let model = SliceModel { dim: 2, scale: 1.0 };
        let mut a = ImageTensor::zeros(3, 2, 2);
        a.data_mut()[0] = 3.0;
        a.data_mut()[1] = 4.0;
        let mut b = ImageTensor::zeros(3, 2, 2);
        b.data_mut()[0] = -3.0;
        b.data_mut()[1] = -4.0;
        assert!((loss(&model, &a, &b).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn loss_is_symmetric() {
        let model = ToyConvModel::new(3);
        let a = test_image(10, 16, 16);
        let b = test_image(11, 16, 16);
        let ab = loss(&model, &a, &b).unwrap();
        let ba = loss(&model, &b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn loss_ignores_embedding_scale() {
        // Normalization kills scale: a model emitting 7x the embedding
        // yields the identical loss.
        let m1 = SliceModel { dim: 4, scale: 1.0 };
        let m7 = SliceModel { dim: 4, scale: 7.0 };
        let a = test_image(21, 4, 4);
        let b = test_image(22, 4, 4);
        let l1 = loss(&m1, &a, &b).unwrap();
        let l7 = loss(&m7, &a, &b).unwrap();
        assert!((l1 - l7).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_independent_reimplementation() {
        // Dual-implementation oracle: direct conv/pool/head evaluation with
        // explicit zero-padded buffers, structured unlike the production
        // path.
        let model = ToyConvModel::new(7);
        let a = test_image(31, 16, 16);
        let b = test_image(32, 16, 16);

        let embed = |img: &ImageTensor| -> Vec<f64> {
            let (h, w) = (img.height(), img.width());
            // padded input, channel-major
            let pad = |src: Vec<Vec<f64>>, h: usize, w: usize| -> Vec<Vec<f64>> {
                src.into_iter()
                    .map(|plane| {
                        let mut padded = vec![0.0; (h + 2) * (w + 2)];
                        for y in 0..h {
                            for x in 0..w {
                                padded[(y + 1) * (w + 2) + x + 1] = plane[y * w + x];
                            }
                        }
                        padded
                    })
                    .collect()
            };
            let planes: Vec<Vec<f64>> = (0..3)
                .map(|c| img.plane(c).iter().map(|&v| (v - 127.5) / 127.5).collect())
                .collect();
            let conv = |planes: &[Vec<f64>], h: usize, w: usize, weights: &[f64], bias: &[f64], co: usize| {
                let padded = pad(planes.to_vec(), h, w);
                let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                let mut out = vec![vec![0.0; oh * ow]; co];
                for oc in 0..co {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[oc];
                            for (ic, plane) in padded.iter().enumerate() {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = 2 * oy + ky;
                                        let ix = 2 * ox + kx;
                                        acc += weights[((oc * padded.len()) + ic) * 9 + ky * 3 + kx]
                                            * plane[iy * (w + 2) + ix];
                                    }
                                }
                            }
                            out[oc][oy * ow + ox] = acc;
                        }
                    }
                }
                (out, oh, ow)
            };
            let (a1, h1, w1) = conv(&planes, h, w, &model.conv1_w, &model.conv1_b, CONV1_OUT);
            let f1: Vec<Vec<f64>> = a1
                .iter()
                .map(|p| p.iter().map(|&v| smooth_relu(v)).collect())
                .collect();
            let (a2, h2, w2) = conv(&f1, h1, w1, &model.conv2_w, &model.conv2_b, CONV2_OUT);
            let pooled: Vec<f64> = a2
                .iter()
                .map(|p| p.iter().map(|&v| smooth_relu(v)).sum::<f64>() / (h2 * w2) as f64)
                .collect();
            (0..EMBED_DIM)
                .map(|k| (0..CONV2_OUT).map(|j| model.head[k * CONV2_OUT + j] * pooled[j]).sum())
                .collect()
        };

        let ua = normalize(&embed(&a)).unwrap();
        let ub = normalize(&embed(&b)).unwrap();
        let expect: f64 = ua.iter().zip(ub.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        let got = loss(&model, &a, &b).unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn gradient_is_zero_at_the_target() {
        let model = ToyConvModel::new(2);
        let img = test_image(40, 16, 16);
        let g = loss_gradient(&model, &img, &img).unwrap();
        let norm: f64 = g.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-12, "norm {norm}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = ToyConvModel::new(9);
        let x = test_image(50, 16, 16);
        let t = test_image(51, 16, 16);
        let g = loss_gradient(&model, &x, &t).unwrap();
        let gmax = g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut rng = Rng::new(60);
        let step = 1e-2;
        let mut checked = 0;
        while checked < 20 {
            let k = rng.below(x.len() as u64) as usize;
            if g.data()[k].abs() < 1e-3 * gmax {
                continue;
            }
            let mut plus = x.clone();
            plus.data_mut()[k] += step;
            let mut minus = x.clone();
            minus.data_mut()[k] -= step;
            let fd = (loss(&model, &plus, &t).unwrap() - loss(&model, &minus, &t).unwrap())
                / (2.0 * step);
            let rel = (fd - g.data()[k]).abs() / fd.abs().max(g.data()[k].abs());
            assert!(rel <= 1e-3, "coordinate {k}: fd {fd} vs grad {} (rel {rel})", g.data()[k]);
            checked += 1;
        }
    }

    #[test]
    fn directional_derivative_along_gradient_is_positive() {
        let model = ToyConvModel::new(4);
        let x = test_image(70, 16, 16);
        let t = test_image(71, 16, 16);
        let g = loss_gradient(&model, &x, &t).unwrap();
        let gnorm: f64 = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(gnorm > 0.0);
        let h = 1e-2 / gnorm;
        let stepped_data: Vec<f64> = x
            .data()
            .iter()
            .zip(g.data().iter())
            .map(|(&xv, &gv)| xv + h * gv)
            .collect();
        let stepped = ImageTensor::from_vec(3, 16, 16, stepped_data).unwrap();
        assert!(loss(&model, &stepped, &t).unwrap() > loss(&model, &x, &t).unwrap());
    }

    #[test]
    fn backward_is_adjoint_of_forward_jvp() {
        // FD probe of <c, F(x + h d)> against <backward(x, c), d> on random
        // directions.
        let model = ToyConvModel::new(12);
        let x = test_image(80, 16, 16);
        let mut rng = Rng::new(81);
        let cot: Vec<f64> = (0..EMBED_DIM).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g = model.backward(&x, &cot).unwrap();
        for probe in 0..50 {
            let dir: Vec<f64> = (0..x.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let h = 1e-3;
            let xp_data: Vec<f64> =
                x.data().iter().zip(dir.iter()).map(|(&v, &d)| v + h * d).collect();
            let xm_data: Vec<f64> =
                x.data().iter().zip(dir.iter()).map(|(&v, &d)| v - h * d).collect();
            let xp = ImageTensor::from_vec(3, 16, 16, xp_data).unwrap();
            let xm = ImageTensor::from_vec(3, 16, 16, xm_data).unwrap();
            let ep = model.forward(&xp).unwrap();
            let em = model.forward(&xm).unwrap();
            let fd: f64 = ep
                .iter()
                .zip(em.iter())
                .zip(cot.iter())
                .map(|((p, m), c)| c * (p - m) / (2.0 * h))
                .sum();
            let an: f64 = g.data().iter().zip(dir.iter()).map(|(a, d)| a * d).sum();
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
            assert!(rel < 1e-3, "probe {probe}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn same_seed_same_weights_different_seed_different_weights() {
        let a = ToyConvModel::new(5);
        let b = ToyConvModel::new(5);
        let c = ToyConvModel::new(6);
        assert_eq!(a.conv1_w, b.conv1_w);
        assert_eq!(a.head, b.head);
        assert_ne!(a.conv1_w, c.conv1_w);
    }

    #[test]
    fn model_accepts_downsampled_inputs() {
        let model = ToyConvModel::new(8);
        let img = test_image(90, 32, 32);
        let e = model.forward(&img).unwrap();
        assert_eq!(e.len(), EMBED_DIM);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = ToyConvModel::new(17);
        model.save(&path).unwrap();
        let loaded = ToyConvModel::load(&path).unwrap();
        assert_eq!(model.seed(), loaded.seed());
        assert_eq!(model.conv1_w, loaded.conv1_w);
        assert_eq!(model.conv2_b, loaded.conv2_b);
        assert_eq!(model.head, loaded.head);
        let img = test_image(91, 16, 16);
        assert_eq!(model.forward(&img).unwrap(), loaded.forward(&img).unwrap());
    }

    #[test]
    fn load_rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = ToyConvModel::new(17);
        model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(ToyConvModel::load(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn calibrate_median_interpolation() {
        let model = SliceModel { dim: 1, scale: 1.0 };
        // distances under SliceModel(dim 1): embeddings are 1-d, normalize
        // maps to +-1, so craft pairs via a direct distance stub instead:
        // use the 4-distance example with a table-driven check of the
        // quantile rule itself.
        let _ = model;
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&sorted, 0.5), 2.5);
        assert_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(quantile_sorted(&sorted, 1.0), 4.0);
    }

    #[test]
    fn calibrate_identical_distances() {
        // all pairs at the same distance -> threshold is that distance
        let model = SliceModel { dim: 2, scale: 1.0 };
        let mut a = ImageTensor::zeros(3, 2, 2);
        a.data_mut()[0] = 1.0;
        let mut b = ImageTensor::zeros(3, 2, 2);
        b.data_mut()[1] = 1.0;
        let pairs: Vec<_> = (0..5).map(|_| (a.clone(), b.clone())).collect();
        let thr = calibrate_threshold(&model, &pairs, 0.5).unwrap();
        assert!((thr.threshold - 2.0).abs() < 1e-12); // orthogonal unit vectors
    }

    #[test]
    fn calibrate_far_bound_on_large_pair_set() {
        let model = ToyConvModel::new(1);
        let mut pairs = Vec::new();
        for i in 0..1000u64 {
            pairs.push((test_image(10_000 + i, 8, 8), test_image(20_000 + i, 8, 8)));
        }
        let thr = calibrate_threshold(&model, &pairs, 0.01).unwrap();
        let below = pairs
            .iter()
            .filter(|(a, b)| loss(&model, a, b).unwrap() < thr.threshold)
            .count();
        assert!(below <= 10, "{below} pairs below threshold");
    }

    #[test]
    fn calibrate_rejects_empty_pairs() {
        let model = ToyConvModel::new(1);
        assert!(calibrate_threshold(&model, &[], 0.01).is_err());
    }
}
