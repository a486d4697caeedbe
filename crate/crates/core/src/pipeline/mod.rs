//! Batch pipeline orchestration: enhance → detect → eval → compare, with
//! deterministic parallel fan-out.
//!
//! Image-level work fans out across a fixed-size worker pool; results are
//! collected in input order and every aggregation step is single-threaded
//! over canonically sorted data, so identical configs and inputs produce
//! byte-identical reports regardless of worker count.

pub mod chart;
pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotations::{
    dataset_stats, load_ground_truth, parse_predictions, read_split_list, AnnotationError,
    ClassTable, DatasetStats, GroundTruthSet, PredictionSet,
};
use crate::detect::{DetectError, Detector};
use crate::enhance::{EnhanceError, Enhancer};
use crate::image::{load_image, save_image, ImageError};
use crate::kv::KvError;
use crate::metrics::{evaluate, EvalReport, MetricsError};

pub use config::{RunConfig, DATASET_ROOT_ENV};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 0 success, 1 usage/config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Kv(_) => 1,
            Self::Data(_)
            | Self::Annotation(_)
            | Self::Metrics(_)
            | Self::Image(_)
            | Self::Io { .. } => 2,
            Self::Enhance(e) => match e {
                EnhanceError::InvalidConfig(_) => 1,
                EnhanceError::MissingPrecomputed { .. } | EnhanceError::Image(_) => 2,
                _ => 3,
            },
            Self::Detect(e) => match e {
                DetectError::PredictionsMissing(_)
                | DetectError::Predictions(_)
                | DetectError::InvalidDetection(_) => 2,
                _ => 3,
            },
            Self::Backend(_) => 3,
        }
    }
}

/// `<root>/annotations` or `<root>/Annotations` when present, else the root.
pub fn resolve_annotations_dir(root: &Path) -> PathBuf {
    for candidate in ["annotations", "Annotations"] {
        let p = root.join(candidate);
        if p.is_dir() {
            return p;
        }
    }
    root.to_path_buf()
}

/// `<root>/images` or `<root>/JPEGImages` when present, else the root.
pub fn resolve_images_dir(root: &Path) -> PathBuf {
    for candidate in ["images", "JPEGImages"] {
        let p = root.join(candidate);
        if p.is_dir() {
            return p;
        }
    }
    root.to_path_buf()
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Locates `<dir>/<id>.{png,jpg,jpeg}`, trying extensions in a fixed order.
pub fn find_image_file(dir: &Path, image_id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{}.{}", image_id, ext)))
        .find(|p| p.exists())
}

/// Image ids (file stems) present in a directory, sorted and deduplicated.
pub fn scan_image_ids(dir: &Path) -> Result<Vec<String>, PipelineError> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
        })
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// Split ids from the configured list file, or `None` when no list is set.
fn split_ids(cfg: &RunConfig) -> Result<Option<Vec<String>>, PipelineError> {
    match &cfg.split_list {
        Some(path) => Ok(Some(read_split_list(path)?)),
        None => Ok(None),
    }
}

/// Maps `f` over `items` on a pool of `workers` threads, preserving input
/// order in the result.
fn fan_out<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>, PipelineError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return Ok(items.iter().map(&f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Backend(format!("failed to build worker pool: {}", e)))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

fn content_hash(image_bytes: &[u8], settings: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(image_bytes);
    hasher.update([0u8]);
    hasher.update(settings.as_bytes());
    hex::encode(hasher.finalize())
}

/// One manifest line recording the fate of an image in the enhance stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnhanceRecord {
    pub image_id: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EnhanceSummary {
    pub total: usize,
    pub enhanced: usize,
    pub skipped: usize,
    pub failed: usize,
    pub images_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub records: Vec<EnhanceRecord>,
}

fn read_prior_manifest(path: &Path) -> BTreeMap<String, EnhanceRecord> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return BTreeMap::new();
    };
    text.lines()
        .filter_map(|line| serde_json::from_str::<EnhanceRecord>(line).ok())
        .map(|r| (r.image_id.clone(), r))
        .collect()
}

/// Enhances every split image into `<output_dir>/enhanced/<id>.png` and
/// writes a JSON-lines manifest.
///
/// Per-image failures become error records; the command fails outright only
/// when every image failed. Re-runs skip images whose content hash (source
/// bytes + enhancer settings) matches the manifest and whose output exists.
pub fn cmd_enhance(cfg: &RunConfig) -> Result<EnhanceSummary, PipelineError> {
    let root = cfg.dataset_root()?;
    let source_dir = resolve_images_dir(root);
    let ids = match split_ids(cfg)? {
        Some(ids) => ids,
        None => scan_image_ids(&source_dir)?,
    };

    let out_images = cfg.output_dir.join("enhanced");
    std::fs::create_dir_all(&out_images).map_err(|e| PipelineError::io(&out_images, e))?;
    let manifest_path = cfg.output_dir.join("enhance_manifest.jsonl");
    let prior = read_prior_manifest(&manifest_path);
    let settings = cfg.enhancer.settings_string();

    // Backends load once; a failure here fails every image, so record it in
    // the manifest and surface the underlying error.
    let enhancer = match Enhancer::from_config(&cfg.enhancer) {
        Ok(enhancer) => enhancer,
        Err(e) => {
            let message = e.to_string();
            let mut sorted_ids = ids.clone();
            sorted_ids.sort();
            let mut manifest_text = String::new();
            for image_id in sorted_ids {
                let record = EnhanceRecord {
                    image_id,
                    status: "error".into(),
                    output: None,
                    content_hash: None,
                    error: Some(message.clone()),
                };
                manifest_text.push_str(&serde_json::to_string(&record).expect("record serializes"));
                manifest_text.push('\n');
            }
            std::fs::write(&manifest_path, manifest_text)
                .map_err(|io| PipelineError::io(&manifest_path, io))?;
            return Err(e.into());
        }
    };

    let records: Vec<EnhanceRecord> = fan_out(&ids, cfg.worker_count, |image_id| {
        let fail = |message: String| EnhanceRecord {
            image_id: image_id.clone(),
            status: "error".into(),
            output: None,
            content_hash: None,
            error: Some(message),
        };
        let Some(source) = find_image_file(&source_dir, image_id) else {
            return fail(format!(
                "no source image for '{}' in {}",
                image_id,
                source_dir.display()
            ));
        };
        let bytes = match std::fs::read(&source) {
            Ok(b) => b,
            Err(e) => return fail(format!("read {}: {}", source.display(), e)),
        };
        let hash = content_hash(&bytes, &settings);
        let out_rel = format!("enhanced/{}.png", image_id);
        let out_path = out_images.join(format!("{}.png", image_id));

        if let Some(previous) = prior.get(image_id) {
            if previous.content_hash.as_deref() == Some(hash.as_str()) && out_path.exists() {
                return EnhanceRecord {
                    image_id: image_id.clone(),
                    status: "skipped".into(),
                    output: Some(out_rel),
                    content_hash: Some(hash),
                    error: None,
                };
            }
        }

        let img = match load_image(&source) {
            Ok(img) => img,
            Err(e) => return fail(e.to_string()),
        };
        let enhanced = match enhancer.enhance(&img, image_id) {
            Ok(img) => img,
            Err(e) => return fail(e.to_string()),
        };
        if let Err(e) = save_image(&enhanced, &out_path) {
            return fail(e.to_string());
        }
        EnhanceRecord {
            image_id: image_id.clone(),
            status: "ok".into(),
            output: Some(out_rel),
            content_hash: Some(hash),
            error: None,
        }
    })?;

    let mut sorted = records;
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut manifest_text = String::new();
    for record in &sorted {
        manifest_text.push_str(&serde_json::to_string(record).expect("record serializes"));
        manifest_text.push('\n');
    }
    std::fs::write(&manifest_path, manifest_text)
        .map_err(|e| PipelineError::io(&manifest_path, e))?;

    let enhanced = sorted.iter().filter(|r| r.status == "ok").count();
    let skipped = sorted.iter().filter(|r| r.status == "skipped").count();
    let failed = sorted.iter().filter(|r| r.status == "error").count();
    let summary = EnhanceSummary {
        total: sorted.len(),
        enhanced,
        skipped,
        failed,
        images_dir: out_images,
        manifest_path,
        records: sorted,
    };
    if summary.total > 0 && summary.failed == summary.total {
        return Err(PipelineError::Data(format!(
            "all {} images failed to enhance; first error: {}",
            summary.total,
            summary.records[0].error.as_deref().unwrap_or("unknown")
        )));
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct DetectSummary {
    pub predictions_path: PathBuf,
    pub image_count: usize,
    pub detection_count: usize,
    pub failed: usize,
    pub warnings: Vec<String>,
}

/// Runs the detector over every image in `images_dir` and writes one
/// JSON-lines predictions file sorted by (image id, score desc).
pub fn cmd_detect(cfg: &RunConfig, images_dir: &Path) -> Result<DetectSummary, PipelineError> {
    let detector = Detector::from_config(cfg.detector()?)?;
    let ids = match split_ids(cfg)? {
        Some(ids) => ids,
        None => scan_image_ids(images_dir)?,
    };

    type PerImage = (String, Result<crate::detect::DetectOutput, String>);
    let results: Vec<PerImage> = fan_out(&ids, cfg.worker_count, |image_id| {
        let Some(path) = find_image_file(images_dir, image_id) else {
            return (
                image_id.clone(),
                Err(format!(
                    "no image for '{}' in {}",
                    image_id,
                    images_dir.display()
                )),
            );
        };
        let outcome = load_image(&path)
            .map_err(|e| e.to_string())
            .and_then(|img| detector.detect(&img, image_id).map_err(|e| e.to_string()));
        (image_id.clone(), outcome)
    })?;

    let mut set = PredictionSet::new();
    let mut warnings = Vec::new();
    let mut detection_count = 0usize;
    let mut failed = 0usize;
    for (image_id, outcome) in &results {
        match outcome {
            Ok(output) => {
                warnings.extend(output.warnings.iter().cloned());
                detection_count += output.detections.len();
                for det in &output.detections {
                    set.insert(image_id, *det);
                }
            }
            Err(message) => {
                failed += 1;
                warnings.push(format!("{}: {}", image_id, message));
            }
        }
    }
    if !ids.is_empty() && failed == ids.len() {
        return Err(PipelineError::Data(format!(
            "all {} images failed to detect; first error: {}",
            ids.len(),
            warnings.first().map(String::as_str).unwrap_or("unknown")
        )));
    }

    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| PipelineError::io(&cfg.output_dir, e))?;
    let predictions_path = cfg.output_dir.join("predictions.jsonl");
    crate::annotations::write_predictions(&set, &predictions_path)?;
    Ok(DetectSummary {
        predictions_path,
        image_count: ids.len(),
        detection_count,
        failed,
        warnings,
    })
}

/// Loads the configured ground truth (annotations dir + optional split).
pub fn load_configured_ground_truth(cfg: &RunConfig) -> Result<GroundTruthSet, PipelineError> {
    let root = cfg.dataset_root()?;
    let ann_dir = resolve_annotations_dir(root);
    let split = split_ids(cfg)?;
    Ok(load_ground_truth(
        &ann_dir,
        split.as_deref(),
        &ClassTable::default(),
    )?)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub written: Vec<PathBuf>,
}

/// Evaluates a predictions file against the configured ground truth and
/// writes the report files (text, CSV, PR curves).
pub fn cmd_eval(cfg: &RunConfig, predictions_path: &Path) -> Result<EvalOutcome, PipelineError> {
    let gts = load_configured_ground_truth(cfg)?;
    let preds = parse_predictions(predictions_path)?;
    let mut report = evaluate(&preds, &gts, &cfg.eval_options())?;
    report.config_echo = cfg.echo();
    let written = report::write_eval_outputs(&report, &cfg.output_dir)?;
    Ok(EvalOutcome { report, written })
}

/// Two mAP rows plus their difference (second minus first).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<(String, f64)>,
    pub delta: f64,
}

/// One side of a comparison: an existing predictions file, or a full
/// enhance → detect run under its own config.
#[derive(Debug, Clone)]
pub enum CompareSource {
    Predictions(PathBuf),
    Run(Box<RunConfig>),
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub report: ComparisonReport,
    pub table_path: PathBuf,
    pub csv_path: PathBuf,
    pub chart_path: PathBuf,
    pub table: String,
}

fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn resolve_compare_side(
    base: &RunConfig,
    source: &CompareSource,
    label: &str,
) -> Result<PathBuf, PipelineError> {
    match source {
        CompareSource::Predictions(path) => {
            if !path.exists() {
                return Err(PipelineError::Data(format!(
                    "predictions file not found: {}",
                    path.display()
                )));
            }
            Ok(path.clone())
        }
        CompareSource::Run(run_cfg) => {
            if run_cfg.dataset_root != base.dataset_root || run_cfg.split_list != base.split_list {
                return Err(PipelineError::Data(
                    "comparison runs must share dataset_root and split_list".into(),
                ));
            }
            let mut sub = (**run_cfg).clone();
            sub.output_dir = base.output_dir.join(sanitize_label(label));
            let enhance_summary = cmd_enhance(&sub)?;
            let detect_summary = cmd_detect(&sub, &enhance_summary.images_dir)?;
            Ok(detect_summary.predictions_path)
        }
    }
}

/// Evaluates two prediction sources against the same ground truth and emits
/// an aligned table, a CSV, and an SVG bar chart.
pub fn cmd_compare(
    cfg: &RunConfig,
    source_a: &CompareSource,
    source_b: &CompareSource,
    label_a: &str,
    label_b: &str,
) -> Result<CompareOutcome, PipelineError> {
    let gts = load_configured_ground_truth(cfg)?;
    let opts = cfg.eval_options();

    let path_a = resolve_compare_side(cfg, source_a, label_a)?;
    let path_b = resolve_compare_side(cfg, source_b, label_b)?;

    let report_a = evaluate(&parse_predictions(&path_a)?, &gts, &opts)?;
    let report_b = evaluate(&parse_predictions(&path_b)?, &gts, &opts)?;

    let rows = vec![
        (label_a.to_string(), report_a.map_coco),
        (label_b.to_string(), report_b.map_coco),
    ];
    let delta = report_b.map_coco - report_a.map_coco;
    let comparison = ComparisonReport {
        rows: rows.clone(),
        delta,
    };

    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| PipelineError::io(&cfg.output_dir, e))?;
    let table = report::render_comparison_table(&rows, delta);
    let table_path = cfg.output_dir.join("comparison.txt");
    std::fs::write(&table_path, &table).map_err(|e| PipelineError::io(&table_path, e))?;
    let csv_path = cfg.output_dir.join("comparison.csv");
    std::fs::write(&csv_path, report::render_comparison_csv(&rows, delta))
        .map_err(|e| PipelineError::io(&csv_path, e))?;
    let chart_path = cfg.output_dir.join("comparison.svg");
    std::fs::write(
        &chart_path,
        chart::bar_chart_svg("mAP[0.5:0.95] comparison", &rows),
    )
    .map_err(|e| PipelineError::io(&chart_path, e))?;

    Ok(CompareOutcome {
        report: comparison,
        table_path,
        csv_path,
        chart_path,
        table,
    })
}

/// Dataset statistics for the configured annotations and split.
pub fn cmd_stats(cfg: &RunConfig) -> Result<DatasetStats, PipelineError> {
    let gts = load_configured_ground_truth(cfg)?;
    Ok(dataset_stats(&gts))
}
