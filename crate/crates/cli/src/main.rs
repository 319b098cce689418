use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use segrefine::checkpoint::{load_denoiser, load_segmenter, save_denoiser, save_segmenter};
use segrefine::diffusion::{build_denoiser, prepare_cases, sample, train_diffusion, ConditioningVariant, TargetMode};
use segrefine::discrepancy::{apply_correction, binarize_discrepancy};
use segrefine::harness::{crossval, ExperimentConfig, Report, ReportFormat, ScoreTable, ScoredCase, DELTA_FILE};
use segrefine::io::{
    list_masks, load_case, load_dataset, read_case, read_discrepancy, read_mask, write_discrepancy, write_mask,
    write_phantom_dataset, write_probs, MASK_FILE, PROBS_FILE,
};
use segrefine::labels::to_regions;
use segrefine::metrics::{evaluate_case_with, MetricConventions};
use segrefine::phantom::PhantomSpec;
use segrefine::segmenter::{binarize, build_segmenter, predict, train_segmenter, TrainConfig};

#[derive(Parser)]
#[command(name = "segrefine", version, about = "Diffusion refinement of 3D tumor segmentations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cases: usize,
        /// Grid size as D,W,H.
        #[arg(long, value_parser = parse_triple::<usize>, default_value = "32,32,32")]
        dims: [usize; 3],
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Voxel spacing in mm as a,b,c.
        #[arg(long, value_parser = parse_triple::<f64>, default_value = "1,1,1")]
        spacing: [f64; 3],
    },
    /// Train the baseline segmenter on every case of a dataset.
    TrainBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Experiment config; only its `baseline` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a diffusion model on a frozen baseline's predictions.
    TrainDiffusion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, value_parser = parse_variant, default_value = "concat")]
        variant: ConditioningVariant,
        #[arg(long, value_parser = parse_target, default_value = "discrepancy")]
        target: TargetMode,
        #[arg(long)]
        out: PathBuf,
        /// Experiment config; only its `diffusion` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write baseline probabilities and mask for one case.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
    },
    /// Sample a mask or discrepancy for one case.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// Baseline checkpoint providing the conditioning prediction.
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
    },
    /// Flip the voxels of a baseline mask marked by a discrepancy mask.
    Refine {
        /// Directory with mask.nii, or with one such directory per case.
        #[arg(long)]
        baseline_pred: PathBuf,
        /// Directory with delta.nii, laid out like --baseline-pred.
        #[arg(long)]
        delta: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against a dataset's ground truth.
    Evaluate {
        /// Directory with one <case_id>/mask.nii per case.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_parser = parse_triple::<f64>)]
        spacing: Option<[f64; 3]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full cross-validation study.
    Crossval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tabulate finished runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_parser = parse_format, default_value = "md")]
        format: ReportFormat,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|e| format!("{p:?}: {e}"))?);
    }
    out.try_into().map_err(|_| "three values".to_string())
}

fn parse_variant(s: &str) -> Result<ConditioningVariant, String> {
    s.parse().map_err(|e: segrefine::Error| e.to_string())
}

fn parse_target(s: &str) -> Result<TargetMode, String> {
    s.parse().map_err(|e: segrefine::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: segrefine::Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ExperimentConfig::new("data", "runs")),
    }
}

/// `(case id, directory)` pairs: the directory itself if it holds `file`,
/// otherwise each subdirectory that does.
fn case_dirs(dir: &Path, file: &str) -> Result<Vec<(String, PathBuf)>> {
    if dir.join(file).is_file() {
        let id = dir.file_name().map_or_else(|| "case".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(id, dir.to_owned())]);
    }
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(file).is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no {file} found in {} or its subdirectories", dir.display());
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            cases,
            dims,
            seed,
            spacing,
        } => {
            let spec = PhantomSpec {
                dims,
                spacing,
                seed,
                ..Default::default()
            };
            let ids = write_phantom_dataset(&out, &spec, cases)?;
            println!("wrote {} cases to {}", ids.len(), out.display());
        }
        Command::TrainBaseline {
            data,
            out,
            config,
            seed,
        } => {
            let cfg = load_config(config.as_deref())?;
            let cases = load_dataset(&data)?;
            let model = build_segmenter(&cfg.baseline.model, seed)?;
            let hyper = TrainConfig {
                seed,
                ..cfg.baseline.train
            };
            let trained = train_segmenter(model, &cases, &hyper)?;
            save_segmenter(&out, &trained.model)?;
            println!(
                "trained on {} cases for {} epochs; loss {:.5} -> {:.5}",
                cases.len(),
                hyper.epochs,
                trained.loss_trace.first().unwrap_or(&f64::NAN),
                trained.loss_trace.last().unwrap_or(&f64::NAN)
            );
        }
        Command::TrainDiffusion {
            data,
            baseline,
            variant,
            target,
            out,
            config,
            seed,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut dcfg = cfg.diffusion.model;
            dcfg.conditioning.variant = variant;
            dcfg.target = target;
            let seg = load_segmenter(&baseline)?;
            let cases = load_dataset(&data)?;
            let upreds = cases
                .iter()
                .map(|c| predict(&seg, &c.image))
                .collect::<segrefine::Result<Vec<_>>>()?;
            let dcases = prepare_cases(&dcfg, &cases, &upreds)?;
            let hyper = segrefine::diffusion::DiffusionTrainConfig {
                seed,
                ..cfg.diffusion.train
            };
            let trained = train_diffusion(build_denoiser(&dcfg, seed)?, &dcases, &hyper)?;
            save_denoiser(&out, &trained.model)?;
            println!(
                "trained {}/{} model on {} cases; loss {:.5} -> {:.5}",
                variant.as_str(),
                target.as_str(),
                cases.len(),
                trained.loss_trace.first().unwrap_or(&f64::NAN),
                trained.loss_trace.last().unwrap_or(&f64::NAN)
            );
        }
        Command::Predict {
            model,
            case,
            out,
            threshold,
        } => {
            let seg = load_segmenter(&model)?;
            let case = load_case(&case)?;
            let probs = predict(&seg, &case.image)?;
            write_probs(&out.join(PROBS_FILE), &probs)?;
            write_mask(&out.join(MASK_FILE), &binarize(&probs, threshold)?)?;
            println!("wrote baseline prediction for {} to {}", case.id, out.display());
        }
        Command::Sample {
            model,
            baseline,
            case,
            steps,
            seed,
            out,
            threshold,
        } => {
            let den = load_denoiser(&model)?;
            let seg = load_segmenter(&baseline)?;
            let case = load_case(&case)?;
            let upred = predict(&seg, &case.image)?;
            let soft = sample(&den, &case.image, &upred, steps, seed)?;
            write_probs(&out.join(PROBS_FILE), &soft)?;
            match den.config.target {
                TargetMode::DirectMask => write_mask(&out.join(MASK_FILE), &binarize(&soft, threshold)?)?,
                TargetMode::Discrepancy => {
                    write_discrepancy(&out.join(DELTA_FILE), &binarize_discrepancy(&soft, threshold)?)?
                }
            }
            println!("sampled {} with {steps} steps into {}", case.id, out.display());
        }
        Command::Refine {
            baseline_pred,
            delta,
            out,
        } => {
            let single = baseline_pred.join(MASK_FILE).is_file();
            for (id, dir) in case_dirs(&baseline_pred, MASK_FILE)? {
                let delta_path = if single {
                    delta.join(DELTA_FILE)
                } else {
                    delta.join(&id).join(DELTA_FILE)
                };
                let fixed = apply_correction(&read_mask(&dir.join(MASK_FILE))?, &read_discrepancy(&delta_path)?)?;
                let target = if single { out.join(MASK_FILE) } else { out.join(&id).join(MASK_FILE) };
                write_mask(&target, &fixed)?;
            }
            println!("wrote refined masks to {}", out.display());
        }
        Command::Evaluate {
            pred,
            gt,
            spacing,
            out,
        } => {
            let conventions = MetricConventions::default();
            let mut cases = Vec::new();
            for (id, mask_path) in list_masks(&pred)? {
                let mask = read_mask(&mask_path)?;
                let (meta, _, labels) = read_case(&gt.join(&id)).with_context(|| format!("ground truth for {id}"))?;
                let truth = to_regions(&labels)?;
                let spacing = spacing.unwrap_or(meta.spacing);
                cases.push(ScoredCase {
                    scores: evaluate_case_with(&mask, &truth, spacing, &conventions)?,
                    id,
                });
            }
            if cases.is_empty() {
                bail!("no <case_id>/{MASK_FILE} found under {}", pred.display());
            }
            let table = ScoreTable {
                cases,
                conventions,
            };
            table.write(&out)?;
            let s = table.summary()?;
            println!(
                "{} cases: mean Dice {:.4}, mean HD95 {}",
                s.cases,
                s.dice_avg,
                s.hd95_avg.map_or("n/a".into(), |v| format!("{v:.3} mm"))
            );
        }
        Command::Crossval { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("reading config {}", config.display()))?;
            let outcome = crossval(&cfg)?;
            println!(
                "{} runs over {} folds written to {}",
                outcome.runs.len(),
                cfg.folds,
                cfg.run_dir.display()
            );
        }
        Command::Report { runs, format, out } => {
            let text = Report::load(&runs)?.render(format);
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
