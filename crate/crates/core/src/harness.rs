//! Experiment driver: synthetic corpus generation, attack-matrix execution,
//! success-rate computation under compression, and sweep reports.
//!
//! Reports are deterministic: identical seeds and configs produce
//! byte-identical CSV, and parallel execution gathers results by pair index
//! so it matches serial execution exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{run, AttackConfig, AttackSpec};
use crate::error::{Error, Result};
use crate::jpeg::{jpeg_roundtrip, tables_for_qf, JpegProfile};
use crate::model::{calibrate_threshold, normalize, DecisionThreshold, EmbeddingModel};
use crate::rng::Rng;
use crate::tensor::{clamp_pixels, ImageTensor};

/// Negative image pairs (attacker, victim) plus their generation recipe.
#[derive(Debug, Clone)]
pub struct PairCorpus {
    pub pairs: Vec<(ImageTensor, ImageTensor)>,
    pub seed: u64,
    pub size: usize,
}

/// One scored row of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrRow {
    pub attack: String,
    pub base_method: String,
    /// `None` means the adversarial image was scored uncompressed.
    pub qf: Option<u8>,
    pub surrogate: String,
    pub victim: String,
    pub successes: usize,
    pub total: usize,
    pub asr_pct: f64,
    pub threshold: f64,
    pub far_target: f64,
    pub config_hash: String,
}

/// Report emitted by the matrix and sweep drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    pub rows: Vec<AsrRow>,
}

impl AsrReport {
    /// Byte-stable CSV: fixed column order, fixed float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "attack,base_method,qf,surrogate,victim,successes,total,asr_pct,threshold,far_target,config_hash\n",
        );
        for r in &self.rows {
            let qf = match r.qf {
                Some(q) => q.to_string(),
                None => "uncompressed".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.2},{:.9},{},{}\n",
                r.attack,
                r.base_method,
                qf,
                r.surrogate,
                r.victim,
                r.successes,
                r.total,
                r.asr_pct,
                r.threshold,
                r.far_target,
                r.config_hash
            ));
        }
        out
    }
}

/// Execution knobs that do not affect the science of a run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub far_target: f64,
    pub parallel: bool,
    pub allow_whitebox: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            far_target: 0.01,
            parallel: true,
            allow_whitebox: false,
        }
    }
}

/// Structured-noise image: a handful of smooth random blobs over mid gray,
/// so compression behaves like it does on natural content.
fn blob_image(size: usize, seed: u64) -> ImageTensor {
    let mut rng = Rng::new(seed);
    let mut img = ImageTensor::constant(3, size, size, 128.0);
    let blobs = 6;
    for _ in 0..blobs {
        let cy = rng.uniform(0.0, size as f64);
        let cx = rng.uniform(0.0, size as f64);
        let sigma = rng.uniform(size as f64 / 10.0, size as f64 / 4.0);
        let amp_max: f64 = std::env::var("ADVKIT_CAL_AMP").ok().and_then(|v| v.parse().ok()).unwrap_or(55.0);
        let amp = [
            rng.uniform(-amp_max, amp_max),
            rng.uniform(-amp_max, amp_max),
            rng.uniform(-amp_max, amp_max),
        ];
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in 0..size {
            for x in 0..size {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let w = (-(dy * dy + dx * dx) * inv).exp();
                for c in 0..3 {
                    let v = img.get(c, y, x) + amp[c] * w;
                    img.set(c, y, x, v);
                }
            }
        }
    }
    clamp_pixels(&img, 0.0, 255.0)
}

/// Generates `n` deterministic negative pairs of `size` x `size` images.
pub fn generate_corpus(n: usize, size: usize, seed: u64) -> Result<PairCorpus> {
    if n == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one pair".into()));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("corpus image size {size} below 8")));
    }
    let pairs = (0..n)
        .map(|i| {
            (
                blob_image(size, Rng::derive_seed(seed, 2 * i as u64)),
                blob_image(size, Rng::derive_seed(seed, 2 * i as u64 + 1)),
            )
        })
        .collect();
    Ok(PairCorpus { pairs, seed, size })
}

#[derive(Serialize)]
struct RunDescriptor<'a> {
    corpus_seed: u64,
    corpus_pairs: usize,
    corpus_size: usize,
    far_target: f64,
    surrogate: &'a str,
    victims: Vec<&'a str>,
    attacks: Vec<String>,
    qf_list: &'a [Option<u8>],
    cfg: &'a AttackConfig,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash of the full run recipe, recorded in every row it produced.
pub fn config_hash(
    corpus: &PairCorpus,
    surrogate_id: &str,
    victim_ids: &[&str],
    attacks: &[AttackSpec],
    qf_list: &[Option<u8>],
    cfg: &AttackConfig,
    far_target: f64,
) -> String {
    let desc = RunDescriptor {
        corpus_seed: corpus.seed,
        corpus_pairs: corpus.pairs.len(),
        corpus_size: corpus.size,
        far_target,
        surrogate: surrogate_id,
        victims: victim_ids.to_vec(),
        attacks: attacks.iter().map(|a| a.name()).collect(),
        qf_list,
        cfg,
    };
    let json = serde_json::to_string(&desc).expect("descriptor serializes");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs `op` over pair indices, serially or pair-parallel; results are
/// gathered by index either way.
fn for_pairs<T: Send>(
    n: usize,
    parallel: bool,
    op: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if parallel {
        (0..n).into_par_iter().map(op).collect()
    } else {
        (0..n).map(op).collect()
    }
}

struct VictimState {
    threshold: DecisionThreshold,
    /// Normalized embedding of each pair's victim image.
    targets: Vec<Vec<f64>>,
}

fn prepare_victim(
    model: &dyn EmbeddingModel,
    corpus: &PairCorpus,
    far_target: f64,
    parallel: bool,
) -> Result<VictimState> {
    let threshold = calibrate_threshold(model, &corpus.pairs, far_target)?;
    let targets = for_pairs(corpus.pairs.len(), parallel, |i| {
        normalize(&model.forward(&corpus.pairs[i].1)?)
    })?;
    Ok(VictimState { threshold, targets })
}

/// Crafts every attack on the surrogate and scores success on each victim
/// at each compression level.
///
/// Success for pair i: the victim's distance between the (compressed)
/// adversarial image and the victim image falls strictly below the
/// victim's calibrated threshold. Per-pair attack seeds are derived from
/// `cfg.seed` and the pair index, so runs are reproducible regardless of
/// execution order.
pub fn run_matrix(
    corpus: &PairCorpus,
    surrogate: (&str, &dyn EmbeddingModel),
    victims: &[(&str, &dyn EmbeddingModel)],
    attacks: &[AttackSpec],
    qf_list: &[Option<u8>],
    cfg: &AttackConfig,
    opts: &RunOptions,
) -> Result<AsrReport> {
    if attacks.is_empty() {
        return Err(Error::InvalidArgument("empty attack list".into()));
    }
    if victims.is_empty() {
        return Err(Error::InvalidArgument("empty victim list".into()));
    }
    if qf_list.is_empty() {
        return Err(Error::InvalidArgument("empty qf list".into()));
    }
    cfg.validate()?;
    let (surrogate_id, surrogate_model) = surrogate;
    if !opts.allow_whitebox {
        if let Some((id, _)) = victims.iter().find(|(id, _)| *id == surrogate_id) {
            return Err(Error::InvalidArgument(format!(
                "victim '{id}' equals the surrogate; pass allow_whitebox for white-box rows"
            )));
        }
    }

    let victim_ids: Vec<&str> = victims.iter().map(|(id, _)| *id).collect();
    let hash = config_hash(corpus, surrogate_id, &victim_ids, attacks, qf_list, cfg, opts.far_target);

    let victim_states: Vec<VictimState> = victims
        .iter()
        .map(|(_, m)| prepare_victim(*m, corpus, opts.far_target, opts.parallel))
        .collect::<Result<_>>()?;

    let n = corpus.pairs.len();
    let mut rows = Vec::new();
    for spec in attacks {
        // craft once per attack; compression/victim dimensions reuse it
        let adversarial: Vec<ImageTensor> = for_pairs(n, opts.parallel, |i| {
            let (x_s, x_t) = &corpus.pairs[i];
            let pair_cfg = AttackConfig {
                seed: Rng::derive_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            run(surrogate_model, x_s, x_t, &pair_cfg, *spec).map(|(img, _)| img)
        })?;

        for qf in qf_list {
            let profile: Option<JpegProfile> = match qf {
                Some(q) => Some(tables_for_qf(*q)?),
                None => None,
            };
            let scored: Vec<ImageTensor> = for_pairs(n, opts.parallel, |i| match &profile {
                Some(p) => jpeg_roundtrip(&adversarial[i], p),
                None => Ok(adversarial[i].clone()),
            })?;

            for ((victim_id, victim_model), state) in victims.iter().zip(victim_states.iter()) {
                let hits = for_pairs(n, opts.parallel, |i| {
                    let emb = normalize(&victim_model.forward(&scored[i])?)?;
                    Ok(squared_distance(&emb, &state.targets[i]) < state.threshold.threshold)
                })?;
                let successes = hits.iter().filter(|&&h| h).count();
                rows.push(AsrRow {
                    attack: spec.name(),
                    base_method: spec.method.name().to_string(),
                    qf: *qf,
                    surrogate: surrogate_id.to_string(),
                    victim: victim_id.to_string(),
                    successes,
                    total: n,
                    asr_pct: 100.0 * successes as f64 / n as f64,
                    threshold: state.threshold.threshold,
                    far_target: opts.far_target,
                    config_hash: hash.clone(),
                });
            }
        }
    }
    Ok(AsrReport { rows })
}

/// One [`run_matrix`] row set per quality factor in an ascending range.
pub fn sweep_qf(
    corpus: &PairCorpus,
    surrogate: (&str, &dyn EmbeddingModel),
    victims: &[(&str, &dyn EmbeddingModel)],
    attacks: &[AttackSpec],
    qf_range: &[u8],
    cfg: &AttackConfig,
    opts: &RunOptions,
) -> Result<AsrReport> {
    if qf_range.is_empty() {
        return Err(Error::InvalidArgument("empty qf range".into()));
    }
    if qf_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("qf range must be strictly ascending".into()));
    }
    let qf_list: Vec<Option<u8>> = qf_range.iter().map(|&q| Some(q)).collect();
    run_matrix(corpus, surrogate, victims, attacks, &qf_list, cfg, opts)
}

/// Smoothing-factor sweep at a fixed evaluation quality factor: one
/// wrapped-baseline run per factor. Factor 1 degenerates to the plain
/// baseline.
pub fn sweep_finter(
    corpus: &PairCorpus,
    surrogate: (&str, &dyn EmbeddingModel),
    victims: &[(&str, &dyn EmbeddingModel)],
    factors: &[f64],
    eval_qf: u8,
    cfg: &AttackConfig,
    opts: &RunOptions,
) -> Result<AsrReport> {
    if factors.is_empty() {
        return Err(Error::InvalidArgument("empty factor list".into()));
    }
    if factors.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::InvalidArgument("factors must lie in (0, 1]".into()));
    }
    let spec = AttackSpec { method: crate::attack::Method::Bim, iam: true };
    let mut rows = Vec::new();
    for &factor in factors {
        let factor_cfg = AttackConfig { f_inter: factor, ..cfg.clone() };
        let report = run_matrix(
            corpus,
            surrogate,
            victims,
            &[spec],
            &[Some(eval_qf)],
            &factor_cfg,
            opts,
        )?;
        for mut row in report.rows {
            row.attack = format!("bim+iam(f={factor:.4})");
            rows.push(row);
        }
    }
    Ok(AsrReport { rows })
}
