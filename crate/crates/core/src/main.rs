//! Command-line driver for corpus generation, attacks, evaluation
//! matrices, sweeps, and spectrum analysis.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advkit::analysis::{log_magnitude_heatmap, neighbor_profile, spectrum_report};
use advkit::attack::{self, AttackConfig, AttackSpec};
use advkit::harness::{generate_corpus, run_matrix, sweep_finter, sweep_qf, RunOptions};
use advkit::model::ToyConvModel;
use advkit::ppm::{read_ppm, write_pgm, write_ppm};
use advkit::tensor::subtract;
use advkit::{Error, Result};

#[derive(Parser)]
#[command(name = "advkit", version, about = "Compression-resistant adversarial attack toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Attack hyperparameters shared by every attack-running subcommand.
#[derive(Args, Clone)]
struct AttackArgs {
    /// L-infinity perturbation budget on the 0..255 scale
    #[arg(long, default_value_t = 10.0)]
    eps: f64,
    /// Step size per iteration
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Number of iterations
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Smoothing resize factor in (0, 1]
    #[arg(long, default_value_t = 0.5)]
    f_inter: f64,
    /// Momentum decay for the mi method
    #[arg(long, default_value_t = 1.0)]
    momentum: f64,
    /// Probability that the di transform fires
    #[arg(long, default_value_t = 0.5)]
    di_prob: f64,
    /// Maximum shrink of the di resize, in pixels
    #[arg(long, default_value_t = 8)]
    di_pad: usize,
    /// Preset quality factor for the jpegss method
    #[arg(long)]
    qf: Option<u8>,
    /// Seed for stochastic attack choices
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl AttackArgs {
    fn to_config(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.eps,
            step: self.step,
            n_max: self.iters,
            f_inter: self.f_inter,
            momentum_decay: self.momentum,
            di_probability: self.di_prob,
            di_max_pad: self.di_pad,
            jpegss_qf: self.qf,
            seed: self.seed,
        }
    }
}

/// Corpus and model selection shared by the matrix/sweep subcommands.
#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Number of image pairs
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    /// Square image size in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Corpus generation seed
    #[arg(long, default_value_t = 42)]
    corpus_seed: u64,
    /// Seed of the surrogate (attacker) model
    #[arg(long, default_value_t = 1)]
    surrogate_seed: u64,
    /// Seeds of the victim models, comma separated
    #[arg(long, value_delimiter = ',', default_value = "2")]
    victim_seeds: Vec<u64>,
    /// Target false-accept rate for threshold calibration
    #[arg(long, default_value_t = 0.01)]
    far: f64,
    /// Run pairs serially instead of in parallel
    #[arg(long, default_value_t = false)]
    serial: bool,
    /// Allow victim seeds equal to the surrogate seed (white-box rows)
    #[arg(long, default_value_t = false)]
    allow_whitebox: bool,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

impl ExperimentArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            far_target: self.far,
            parallel: !self.serial,
            allow_whitebox: self.allow_whitebox,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic pair corpus as PPM files
    GenCorpus {
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory for pair_NNN_{source,target}.ppm and corpus.json
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Attack a single source/target PPM pair
    Attack {
        /// Attacker image (PPM)
        #[arg(long)]
        source: PathBuf,
        /// Victim image (PPM)
        #[arg(long)]
        target: PathBuf,
        /// bim | mi | di | jpegss
        #[arg(long, default_value = "bim")]
        method: String,
        /// on | off: wrap the method with interpolation smoothing
        #[arg(long, default_value = "off")]
        iam: String,
        #[arg(long, default_value_t = 1)]
        surrogate_seed: u64,
        #[command(flatten)]
        attack: AttackArgs,
        /// Output adversarial image (PPM)
        #[arg(long)]
        out_image: PathBuf,
        /// Output per-iteration trace (JSON)
        #[arg(long)]
        out_trace: Option<PathBuf>,
    },
    /// Full attack x quality-factor x victim success-rate matrix
    Matrix {
        /// Comma-separated attack names, e.g. bim,bim+iam,jpegss
        #[arg(long, value_delimiter = ',', default_value = "bim,bim+iam")]
        attacks: Vec<String>,
        /// Comma-separated quality factors; "uncompressed" scores raw images
        #[arg(long, value_delimiter = ',', default_value = "uncompressed,25,50,75")]
        qfs: Vec<String>,
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Success-rate curve over a quality-factor range
    SweepQf {
        #[arg(long, value_delimiter = ',', default_value = "bim,bim+iam,jpegss")]
        attacks: Vec<String>,
        /// Ascending quality factors
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80,90")]
        qfs: Vec<u8>,
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Success rates of the smoothing wrapper across resize factors
    SweepFinter {
        /// Factors in (0, 1]
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.75,0.5,0.33,0.25")]
        factors: Vec<f64>,
        /// Quality factor applied before scoring
        #[arg(long, default_value_t = 50)]
        eval_qf: u8,
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Spectrum and smoothness diagnostics for an image or perturbation
    Analyze {
        /// Image to analyze (PPM)
        #[arg(long)]
        input: PathBuf,
        /// Reference image; the diagnostics run on input - baseline
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Analyze the raw image instead of a perturbation
        #[arg(long, default_value_t = false)]
        raw: bool,
        /// Normalized frequency cutoff for the high-frequency ratio
        #[arg(long, default_value_t = 0.5)]
        cutoff: f64,
        /// Row for the neighbor profile; defaults to the middle row
        #[arg(long)]
        row: Option<usize>,
        /// Prefix for the emitted CSV and PGM heatmaps
        #[arg(long)]
        out_prefix: PathBuf,
    },
}

fn parse_attacks(tokens: &[String]) -> Result<Vec<AttackSpec>> {
    tokens.iter().map(|t| t.parse()).collect()
}

fn parse_qfs(tokens: &[String]) -> Result<Vec<Option<u8>>> {
    tokens
        .iter()
        .map(|t| {
            if t == "uncompressed" {
                Ok(None)
            } else {
                t.parse::<u8>()
                    .map(Some)
                    .map_err(|_| Error::InvalidArgument(format!("bad quality factor '{t}'")))
            }
        })
        .collect()
}

fn build_models(
    surrogate_seed: u64,
    victim_seeds: &[u64],
) -> (String, ToyConvModel, Vec<(String, ToyConvModel)>) {
    let surrogate = ToyConvModel::new(surrogate_seed);
    let victims: Vec<(String, ToyConvModel)> = victim_seeds
        .iter()
        .map(|&s| (format!("toy-{s}"), ToyConvModel::new(s)))
        .collect();
    (format!("toy-{surrogate_seed}"), surrogate, victims)
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenCorpus { pairs, size, seed, out_dir } => {
            let corpus = generate_corpus(pairs, size, seed)?;
            fs::create_dir_all(&out_dir)?;
            for (i, (src, tgt)) in corpus.pairs.iter().enumerate() {
                write_ppm(src, out_dir.join(format!("pair_{i:03}_source.ppm")))?;
                write_ppm(tgt, out_dir.join(format!("pair_{i:03}_target.ppm")))?;
            }
            let manifest = serde_json::json!({
                "pairs": pairs,
                "size": size,
                "seed": seed,
            });
            fs::write(out_dir.join("corpus.json"), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
            println!("wrote {} pairs to {}", pairs, out_dir.display());
        }
        Command::Attack {
            source,
            target,
            method,
            iam,
            surrogate_seed,
            attack: attack_args,
            out_image,
            out_trace,
        } => {
            let iam_on = match iam.as_str() {
                "on" => true,
                "off" => false,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "--iam must be 'on' or 'off', got '{other}'"
                    )));
                }
            };
            let spec: AttackSpec = if iam_on {
                format!("{method}+iam").parse()?
            } else {
                method.parse()?
            };
            let x_s = read_ppm(&source)?;
            let x_t = read_ppm(&target)?;
            let cfg = attack_args.to_config();
            let model = ToyConvModel::new(surrogate_seed);
            let (adv, trace) = attack::run(&model, &x_s, &x_t, &cfg, spec)?;
            write_ppm(&adv, &out_image)?;
            if let Some(path) = out_trace {
                fs::write(path, serde_json::to_string_pretty(&trace).expect("trace serializes"))?;
            }
            println!(
                "{}: final loss {:.6}, linf {:.3}",
                trace.method,
                trace.losses.last().copied().unwrap_or(f64::NAN),
                trace.final_linf
            );
        }
        Command::Matrix { attacks, qfs, experiment, attack: attack_args } => {
            let specs = parse_attacks(&attacks)?;
            let qf_list = parse_qfs(&qfs)?;
            let corpus = generate_corpus(experiment.pairs, experiment.size, experiment.corpus_seed)?;
            let (sid, surrogate, victims) =
                build_models(experiment.surrogate_seed, &experiment.victim_seeds);
            let victim_refs: Vec<(&str, &dyn advkit::model::EmbeddingModel)> =
                victims.iter().map(|(id, m)| (id.as_str(), m as _)).collect();
            let report = run_matrix(
                &corpus,
                (sid.as_str(), &surrogate),
                &victim_refs,
                &specs,
                &qf_list,
                &attack_args.to_config(),
                &experiment.options(),
            )?;
            fs::write(&experiment.out, report.to_csv())?;
            println!("wrote {} rows to {}", report.rows.len(), experiment.out.display());
        }
        Command::SweepQf { attacks, qfs, experiment, attack: attack_args } => {
            let specs = parse_attacks(&attacks)?;
            let corpus = generate_corpus(experiment.pairs, experiment.size, experiment.corpus_seed)?;
            let (sid, surrogate, victims) =
                build_models(experiment.surrogate_seed, &experiment.victim_seeds);
            let victim_refs: Vec<(&str, &dyn advkit::model::EmbeddingModel)> =
                victims.iter().map(|(id, m)| (id.as_str(), m as _)).collect();
            let report = sweep_qf(
                &corpus,
                (sid.as_str(), &surrogate),
                &victim_refs,
                &specs,
                &qfs,
                &attack_args.to_config(),
                &experiment.options(),
            )?;
            fs::write(&experiment.out, report.to_csv())?;
            println!("wrote {} rows to {}", report.rows.len(), experiment.out.display());
        }
        Command::SweepFinter { factors, eval_qf, experiment, attack: attack_args } => {
            let corpus = generate_corpus(experiment.pairs, experiment.size, experiment.corpus_seed)?;
            let (sid, surrogate, victims) =
                build_models(experiment.surrogate_seed, &experiment.victim_seeds);
            let victim_refs: Vec<(&str, &dyn advkit::model::EmbeddingModel)> =
                victims.iter().map(|(id, m)| (id.as_str(), m as _)).collect();
            let report = sweep_finter(
                &corpus,
                (sid.as_str(), &surrogate),
                &victim_refs,
                &factors,
                eval_qf,
                &attack_args.to_config(),
                &experiment.options(),
            )?;
            fs::write(&experiment.out, report.to_csv())?;
            println!("wrote {} rows to {}", report.rows.len(), experiment.out.display());
        }
        Command::Analyze { input, baseline, raw, cutoff, row, out_prefix } => {
            let img = read_ppm(&input)?;
            let subject = if raw {
                img
            } else {
                let base_path = baseline.ok_or_else(|| {
                    Error::InvalidArgument(
                        "--baseline is required unless --raw is set (diagnostics run on the perturbation)".into(),
                    )
                })?;
                let base = read_ppm(&base_path)?;
                subtract(&img, &base)?
            };
            let report = spectrum_report(&subject, cutoff)?;
            let row = row.unwrap_or(subject.height() / 2);
            let profile = neighbor_profile(&subject, row)?;
            if let Some(dir) = out_prefix.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir)?;
                }
            }
            let csv_path = out_prefix.with_extension("csv");
            let mut csv = String::from(
                "input,mode,channels,height,width,cutoff,hf_energy_ratio,row,row_total_variation\n",
            );
            csv.push_str(&format!(
                "{},{},{},{},{},{},{:.9},{},{:.6}\n",
                input.display(),
                if raw { "raw" } else { "perturbation" },
                subject.channels(),
                subject.height(),
                subject.width(),
                cutoff,
                report.hf_energy_ratio,
                row,
                profile.total_variation
            ));
            fs::write(&csv_path, csv)?;
            for c in 0..subject.channels() {
                let map = log_magnitude_heatmap(&report.coefficients, c)?;
                let pgm_path = out_prefix.with_extension(format!("c{c}.pgm"));
                write_pgm(&map, pgm_path)?;
            }
            println!(
                "hf_energy_ratio {:.6} (cutoff {cutoff}), row {row} tv {:.3}; wrote {}",
                report.hf_energy_ratio,
                profile.total_variation,
                csv_path.display()
            );
        }
    }
    Ok(())
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::ShapeMismatch { .. } => "shape_mismatch",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Parse { .. } => "parse",
        Error::Numeric(_) => "numeric",
        Error::Io(_) => "io",
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({
                "error": { "kind": error_kind(&err), "message": err.to_string() }
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
