//! Sign-gradient attack family: the iterative baseline, its momentum and
//! input-diversity variants, the adaptive codec-aware baseline, and the
//! interpolation-smoothing wrapper.
//!
//! All attacks are impersonation attacks: they descend the embedding
//! distance to the victim image. Every iterate is projected onto the
//! L-infinity ball around the source image and the valid pixel range, so
//! emitted images always satisfy the budget.
//!
//! The smoothing wrapper resizes the iterate down by `f_inter` before each
//! gradient step and restores the original size afterwards. With
//! `f_inter = 1` the two resampling steps are exact identities and the
//! wrapper is bit-for-bit the base attack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{resample, resample_adjoint_to, resample_to, InterpFactor};
use crate::jpeg::{jpeg_differentiable, tables_for_qf};
use crate::model::{loss, loss_gradient, EmbeddingModel};
use crate::rng::Rng;
use crate::tensor::{linf_distance, linf_project, ImageTensor};

/// Hyperparameters shared by the whole attack family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L-infinity budget on the 0..255 pixel scale.
    pub epsilon: f64,
    /// Step size per iteration (0 is allowed to probe no-op behavior).
    pub step: f64,
    /// Number of iterations.
    pub n_max: usize,
    /// Resize ratio used by the smoothing wrapper, in (0, 1].
    pub f_inter: f64,
    /// Momentum decay for the momentum variant.
    pub momentum_decay: f64,
    /// Probability that the input-diversity transform fires.
    pub di_probability: f64,
    /// Maximum shrink (in pixels) of the input-diversity resize.
    pub di_max_pad: usize,
    /// Preset quality factor for the codec-aware baseline.
    pub jpegss_qf: Option<u8>,
    /// Seed for every stochastic choice inside the attack.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 10.0,
            step: 1.0,
            n_max: 10,
            f_inter: 0.5,
            momentum_decay: 1.0,
            di_probability: 0.5,
            di_max_pad: 8,
            jpegss_qf: None,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be >= 0, got {}", self.step)));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        if !(self.f_inter > 0.0 && self.f_inter <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "f_inter must be in (0, 1], got {}",
                self.f_inter
            )));
        }
        if !(0.0..=1.0).contains(&self.di_probability) {
            return Err(Error::InvalidArgument(format!(
                "di_probability must be in [0, 1], got {}",
                self.di_probability
            )));
        }
        if !(self.momentum_decay >= 0.0 && self.momentum_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "momentum_decay must be >= 0, got {}",
                self.momentum_decay
            )));
        }
        if let Some(qf) = self.jpegss_qf {
            if qf < 1 || qf > 100 {
                return Err(Error::InvalidArgument(format!("jpegss_qf {qf} outside 1..=100")));
            }
        }
        Ok(())
    }
}

/// Base gradient method the smoothing wrapper can be applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bim,
    Mi,
    Di,
    Jpegss,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bim => "bim",
            Method::Mi => "mi",
            Method::Di => "di",
            Method::Jpegss => "jpegss",
        }
    }
}

/// A method plus the smoothing-wrapper switch; the unit the harness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: Method,
    pub iam: bool,
}

impl AttackSpec {
    pub fn name(&self) -> String {
        if self.iam {
            format!("{}+iam", self.method.name())
        } else {
            self.method.name().to_string()
        }
    }
}

impl std::str::FromStr for AttackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, iam) = match s.strip_suffix("+iam") {
            Some(prefix) => (prefix, true),
            None => (s, false),
        };
        let method = match base {
            "bim" => Method::Bim,
            "mi" => Method::Mi,
            "di" => Method::Di,
            "jpegss" => Method::Jpegss,
            other => {
                return Err(Error::InvalidArgument(format!("unknown attack '{other}'")));
            }
        };
        if method == Method::Jpegss && iam {
            return Err(Error::InvalidArgument(
                "jpegss is a standalone baseline and cannot be wrapped".into(),
            ));
        }
        Ok(Self { method, iam })
    }
}

/// Per-run diagnostics: loss after every iteration plus the final budget use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackTrace {
    pub method: String,
    pub losses: Vec<f64>,
    pub final_linf: f64,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Momentum accumulator: `g <- decay * g + raw / ||raw||_1`.
struct MomentumState {
    decay: f64,
    acc: Option<ImageTensor>,
}

impl MomentumState {
    fn new(decay: f64) -> Self {
        Self { decay, acc: None }
    }

    /// Folds a raw gradient in and returns the accumulated direction.
    fn update(&mut self, raw: &ImageTensor) -> ImageTensor {
        let (c, h, w) = raw.shape();
        let acc = self
            .acc
            .get_or_insert_with(|| ImageTensor::zeros(c, h, w));
        let l1: f64 = raw.data().iter().map(|v| v.abs()).sum();
        for (a, &r) in acc.data_mut().iter_mut().zip(raw.data().iter()) {
            *a *= self.decay;
            if l1 > 0.0 {
                *a += r / l1;
            }
        }
        acc.clone()
    }
}

/// Parameters of one input-diversity draw.
struct DiDraw {
    apply: bool,
    size_h: usize,
    size_w: usize,
    top: usize,
    left: usize,
}

fn sample_di(cfg: &AttackConfig, (h, w): (usize, usize), rng: &mut Rng) -> DiDraw {
    if rng.next_f64() >= cfg.di_probability {
        return DiDraw { apply: false, size_h: h, size_w: w, top: 0, left: 0 };
    }
    let shrink = if cfg.di_max_pad == 0 {
        0
    } else {
        rng.below(cfg.di_max_pad.min(h.saturating_sub(1)).min(w.saturating_sub(1)) as u64 + 1)
            as usize
    };
    let size_h = h - shrink;
    let size_w = w - shrink;
    let top = if h > size_h { rng.below((h - size_h) as u64 + 1) as usize } else { 0 };
    let left = if w > size_w { rng.below((w - size_w) as u64 + 1) as usize } else { 0 };
    DiDraw { apply: true, size_h, size_w, top, left }
}

fn apply_di(img: &ImageTensor, draw: &DiDraw) -> Result<ImageTensor> {
    if !draw.apply || (draw.size_h == img.height() && draw.size_w == img.width()) {
        return Ok(img.clone());
    }
    let resized = resample_to(img, draw.size_h, draw.size_w)?;
    // zero-pad back to the original extent at the drawn offset
    let (c, h, w) = img.shape();
    let mut out = ImageTensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..draw.size_h {
            for x in 0..draw.size_w {
                out.set(ch, y + draw.top, x + draw.left, resized.get(ch, y, x));
            }
        }
    }
    Ok(out)
}

fn di_adjoint(grad: &ImageTensor, draw: &DiDraw, in_shape: (usize, usize, usize)) -> Result<ImageTensor> {
    if !draw.apply || (draw.size_h == in_shape.1 && draw.size_w == in_shape.2) {
        return Ok(grad.clone());
    }
    let (c, _, _) = in_shape;
    // crop is the transpose of zero-padding
    let mut cropped = ImageTensor::zeros(c, draw.size_h, draw.size_w);
    for ch in 0..c {
        for y in 0..draw.size_h {
            for x in 0..draw.size_w {
                cropped.set(ch, y, x, grad.get(ch, y + draw.top, x + draw.left));
            }
        }
    }
    resample_adjoint_to(&cropped, in_shape)
}

/// Random resize-and-pad input transform. With probability
/// `di_probability` the image is shrunk by up to `di_max_pad` pixels and
/// zero-padded back at a random offset; otherwise it passes through
/// unchanged. Output shape always equals input shape.
pub fn di_transform(img: &ImageTensor, cfg: &AttackConfig, rng: &mut Rng) -> Result<ImageTensor> {
    let draw = sample_di(cfg, (img.height(), img.width()), rng);
    apply_di(img, &draw)
}

/// Evaluates the method's gradient at the working-resolution iterate.
fn method_gradient(
    model: &dyn EmbeddingModel,
    work: &ImageTensor,
    x_t: &ImageTensor,
    cfg: &AttackConfig,
    method: Method,
    momentum: &mut MomentumState,
    rng: &mut Rng,
) -> Result<ImageTensor> {
    match method {
        Method::Bim => loss_gradient(model, work, x_t),
        Method::Mi => {
            let raw = loss_gradient(model, work, x_t)?;
            Ok(momentum.update(&raw))
        }
        Method::Di => {
            let draw = sample_di(cfg, (work.height(), work.width()), rng);
            let transformed = apply_di(work, &draw)?;
            let g = loss_gradient(model, &transformed, x_t)?;
            di_adjoint(&g, &draw, work.shape())
        }
        Method::Jpegss => {
            let qf = cfg.jpegss_qf.ok_or_else(|| {
                Error::InvalidArgument("jpegss requires a preset quality factor".into())
            })?;
            let profile = tables_for_qf(qf)?;
            let (compressed, back) = jpeg_differentiable(work, &profile)?;
            let g = loss_gradient(model, &compressed, x_t)?;
            back.apply(&g)
        }
    }
}

fn run_attack(
    model: &dyn EmbeddingModel,
    x_s: &ImageTensor,
    x_t: &ImageTensor,
    cfg: &AttackConfig,
    method: Method,
    iam: bool,
) -> Result<(ImageTensor, AttackTrace)> {
    cfg.validate()?;
    x_s.check_same_shape(x_t)?;
    let (_, h, w) = x_s.shape();
    let factor = InterpFactor::new(cfg.f_inter)?;
    let mut rng = Rng::new(cfg.seed);
    let mut momentum = MomentumState::new(cfg.momentum_decay);
    let mut x = x_s.clone();
    let mut losses = Vec::with_capacity(cfg.n_max);

    for _ in 0..cfg.n_max {
        let work = if iam { resample(&x, factor)? } else { x.clone() };
        let g = method_gradient(model, &work, x_t, cfg, method, &mut momentum, &mut rng)?;
        let stepped_data: Vec<f64> = work
            .data()
            .iter()
            .zip(g.data().iter())
            .map(|(&v, &gv)| v - cfg.step * sign(gv))
            .collect();
        let stepped =
            ImageTensor::from_vec(work.channels(), work.height(), work.width(), stepped_data)?;
        x = if iam { resample_to(&stepped, h, w)? } else { stepped };
        x = linf_project(&x, x_s, cfg.epsilon)?;
        losses.push(loss(model, &x, x_t)?);
    }

    let final_linf = linf_distance(&x, x_s)?;
    let trace = AttackTrace {
        method: AttackSpec { method, iam }.name(),
        losses,
        final_linf,
    };
    Ok((x, trace))
}

/// Iterative sign-gradient impersonation attack.
pub fn bim(
    model: &dyn EmbeddingModel,
    x_s: &ImageTensor,
    x_t: &ImageTensor,
    cfg: &AttackConfig,
) -> Result<(ImageTensor, AttackTrace)> {
    run_attack(model, x_s, x_t, cfg, Method::Bim, false)
}

/// Momentum variant: the sign step is taken on an L1-normalized
/// accumulated gradient. Decay 0 reduces exactly to the plain attack.
pub fn mi(
    model: &dyn EmbeddingModel,
    x_s: &ImageTensor,
    x_t: &ImageTensor,
    cfg: &AttackConfig,
) -> Result<(ImageTensor, AttackTrace)> {
    run_attack(model, x_s, x_t, cfg, Method::Mi, false)
}

/// Input-diversity variant: each gradient is evaluated through a random
/// resize-and-pad transform (chained through its exact adjoint).
pub fn di(
    model: &dyn EmbeddingModel,
    x_s: &ImageTensor,
    x_t: &ImageTensor,
    cfg: &AttackConfig,
) -> Result<(ImageTensor, AttackTrace)> {
    run_attack(model, x_s, x_t, cfg, Method::Di, false)
}

/// Smoothing wrapper around a base method: downsample by `f_inter`, take
/// the base method's sign step at low resolution, upsample back, project.
pub fn iam(
    model: &dyn EmbeddingModel,
    x_s: &ImageTensor,
    x_t: &ImageTensor,
    cfg: &AttackConfig,
    base: Method,
) -> Result<(ImageTensor, AttackTrace)> {
    if base == Method::Jpegss {
        return Err(Error::InvalidArgument(
            "jpegss is a standalone baseline and cannot be wrapped".into(),
        ));
    }
    run_attack(model, x_s, x_t, cfg, base, true)
}

/// Codec-aware adaptive baseline: every gradient is taken through the
/// differentiable compression surrogate at the preset quality factor.
pub fn jpegss(
    model: &dyn EmbeddingModel,
    x_s: &ImageTensor,
    x_t: &ImageTensor,
    cfg: &AttackConfig,
) -> Result<(ImageTensor, AttackTrace)> {
    run_attack(model, x_s, x_t, cfg, Method::Jpegss, false)
}

/// Runs the attack described by `spec`.
pub fn run(
    model: &dyn EmbeddingModel,
    x_s: &ImageTensor,
    x_t: &ImageTensor,
    cfg: &AttackConfig,
    spec: AttackSpec,
) -> Result<(ImageTensor, AttackTrace)> {
    if spec.iam {
        iam(model, x_s, x_t, cfg, spec.method)
    } else {
        run_attack(model, x_s, x_t, cfg, spec.method, false)
    }
}
