//! Command-line interface for the enhancement / detection-evaluation
//! pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tigerlight::pipeline::{
    self, cmd_compare, cmd_detect, cmd_enhance, cmd_eval, cmd_stats, CompareSource, PipelineError,
    RunConfig,
};

#[derive(Parser)]
#[command(
    name = "tigerlight",
    version,
    about = "Low-light enhancement and single-class detection evaluation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus command-line overrides. Precedence: CLI flags beat the
/// TIGERLIGHT_DATASET_ROOT environment variable, which beats the file.
#[derive(Args, Debug, Default, Clone)]
struct ConfigOpts {
    /// Run config file: flat `key = value` lines with dotted section keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root directory.
    #[arg(long)]
    dataset: Option<String>,
    /// Split list file (one image id per line).
    #[arg(long)]
    split: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Worker thread count for image fan-out.
    #[arg(long)]
    workers: Option<String>,
    /// IoU thresholds: `start:step:end` or a comma list.
    #[arg(long)]
    thresholds: Option<String>,
    /// Threshold comparison rule: `strict` (IoU > t) or `non-strict` (>=).
    #[arg(long = "threshold-rule")]
    threshold_rule: Option<String>,
    /// Include objects flagged difficult in matching and denominators.
    #[arg(long = "include-difficult", value_name = "BOOL")]
    include_difficult: Option<String>,
    #[arg(long = "enhancer.kind", value_name = "KIND")]
    enhancer_kind: Option<String>,
    #[arg(long = "enhancer.gamma", value_name = "GAMMA")]
    enhancer_gamma: Option<String>,
    #[arg(long = "enhancer.model_path", value_name = "PATH")]
    enhancer_model_path: Option<String>,
    #[arg(long = "enhancer.precomputed_dir", value_name = "DIR")]
    enhancer_precomputed_dir: Option<String>,
    #[arg(long = "enhancer.multiply_with", value_name = "MAP")]
    enhancer_multiply_with: Option<String>,
    #[arg(long = "detector.kind", value_name = "KIND")]
    detector_kind: Option<String>,
    #[arg(long = "detector.model_path", value_name = "PATH")]
    detector_model_path: Option<String>,
    #[arg(long = "detector.predictions_path", value_name = "PATH")]
    detector_predictions_path: Option<String>,
    #[arg(long = "detector.score_floor", value_name = "SCORE")]
    detector_score_floor: Option<String>,
    #[arg(long = "detector.nms_iou", value_name = "IOU")]
    detector_nms_iou: Option<String>,
}

impl ConfigOpts {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::new();
        let mut push = |key: &str, value: &Option<String>| {
            if let Some(v) = value {
                pairs.push((key.to_string(), v.clone()));
            }
        };
        push("dataset_root", &self.dataset);
        push("split_list", &self.split);
        push("output_dir", &self.out);
        push("workers", &self.workers);
        push("thresholds", &self.thresholds);
        push("threshold_rule", &self.threshold_rule);
        push("include_difficult", &self.include_difficult);
        push("enhancer.kind", &self.enhancer_kind);
        push("enhancer.gamma", &self.enhancer_gamma);
        push("enhancer.model_path", &self.enhancer_model_path);
        push("enhancer.precomputed_dir", &self.enhancer_precomputed_dir);
        push("enhancer.multiply_with", &self.enhancer_multiply_with);
        push("detector.kind", &self.detector_kind);
        push("detector.model_path", &self.detector_model_path);
        push("detector.predictions_path", &self.detector_predictions_path);
        push("detector.score_floor", &self.detector_score_floor);
        push("detector.nms_iou", &self.detector_nms_iou);
        pairs
    }

    fn build(&self) -> Result<RunConfig, PipelineError> {
        RunConfig::from_sources(self.config.as_deref(), &self.overrides())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Enhance every split image and write a manifest.
    Enhance {
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Run the detector over a directory of images, writing JSON-lines
    /// predictions.
    Detect {
        #[command(flatten)]
        opts: ConfigOpts,
        /// Directory of images to detect on (defaults to the dataset images).
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Evaluate a predictions file against ground truth; prints mAP[0.5:0.95].
    Eval {
        #[command(flatten)]
        opts: ConfigOpts,
        /// JSON-lines predictions file.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Evaluate two runs (or prediction files) against the same ground truth.
    Compare {
        #[command(flatten)]
        opts: ConfigOpts,
        /// Run config for side A (enhance + detect + eval).
        #[arg(long = "config-a")]
        config_a: Option<PathBuf>,
        /// Run config for side B.
        #[arg(long = "config-b")]
        config_b: Option<PathBuf>,
        /// Existing predictions file for side A.
        #[arg(long = "predictions-a")]
        predictions_a: Option<PathBuf>,
        /// Existing predictions file for side B.
        #[arg(long = "predictions-b")]
        predictions_b: Option<PathBuf>,
        /// Comma-separated row labels.
        #[arg(long, default_value = "baseline,candidate")]
        labels: String,
    },
    /// Print dataset statistics (image, box, and per-class counts).
    Stats {
        #[command(flatten)]
        opts: ConfigOpts,
    },
}

fn compare_source(
    predictions: &Option<PathBuf>,
    config: &Option<PathBuf>,
    opts: &ConfigOpts,
    side: &str,
) -> Result<CompareSource, PipelineError> {
    match (predictions, config) {
        (Some(path), None) => Ok(CompareSource::Predictions(path.clone())),
        (None, Some(path)) => {
            let cfg = RunConfig::from_sources(Some(path), &opts.overrides())?;
            Ok(CompareSource::Run(Box::new(cfg)))
        }
        (Some(_), Some(_)) => Err(PipelineError::Config(format!(
            "side {side}: give either --predictions-{side} or --config-{side}, not both"
        ))),
        (None, None) => Err(PipelineError::Config(format!(
            "side {side}: --predictions-{side} or --config-{side} is required"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Enhance { opts } => {
            let cfg = opts.build()?;
            let summary = cmd_enhance(&cfg)?;
            for record in &summary.records {
                if let Some(error) = &record.error {
                    eprintln!("warning: {}: {}", record.image_id, error);
                }
            }
            println!(
                "enhanced {} images ({} skipped, {} failed) -> {}",
                summary.enhanced,
                summary.skipped,
                summary.failed,
                summary.images_dir.display()
            );
            println!("manifest: {}", summary.manifest_path.display());
            Ok(())
        }
        Command::Detect { opts, images } => {
            let cfg = opts.build()?;
            let images_dir = match images {
                Some(dir) => dir,
                None => pipeline::resolve_images_dir(cfg.dataset_root()?),
            };
            let summary = cmd_detect(&cfg, &images_dir)?;
            for warning in &summary.warnings {
                eprintln!("warning: {}", warning);
            }
            println!(
                "detected {} boxes over {} images -> {}",
                summary.detection_count,
                summary.image_count,
                summary.predictions_path.display()
            );
            Ok(())
        }
        Command::Eval { opts, predictions } => {
            let cfg = opts.build()?;
            let outcome = cmd_eval(&cfg, &predictions)?;
            for warning in &outcome.report.warnings {
                eprintln!("warning: {}", warning);
            }
            for path in &outcome.written {
                eprintln!("wrote {}", path.display());
            }
            println!("{:.3}", outcome.report.map_coco);
            Ok(())
        }
        Command::Compare {
            opts,
            config_a,
            config_b,
            predictions_a,
            predictions_b,
            labels,
        } => {
            let base = match (&opts.config, &config_a) {
                (Some(_), _) | (None, None) => opts.build()?,
                // Without --config, side A's config provides the shared
                // ground truth and evaluation settings.
                (None, Some(path)) => RunConfig::from_sources(Some(path), &opts.overrides())?,
            };
            let (label_a, label_b) = labels
                .split_once(',')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| {
                    PipelineError::Config("--labels must be two comma-separated names".into())
                })?;
            let source_a = compare_source(&predictions_a, &config_a, &opts, "a")?;
            let source_b = compare_source(&predictions_b, &config_b, &opts, "b")?;
            let outcome = cmd_compare(&base, &source_a, &source_b, &label_a, &label_b)?;
            print!("{}", outcome.table);
            eprintln!("wrote {}", outcome.table_path.display());
            eprintln!("wrote {}", outcome.csv_path.display());
            eprintln!("wrote {}", outcome.chart_path.display());
            Ok(())
        }
        Command::Stats { opts } => {
            let cfg = opts.build()?;
            let stats = cmd_stats(&cfg)?;
            println!("images = {}", stats.image_count);
            println!("boxes = {}", stats.box_count);
            for (name, count) in &stats.per_class {
                println!("class {} = {}", name, count);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
