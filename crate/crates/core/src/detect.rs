//! Detector backend boundary and standard post-processing: confidence
//! filtering, box clipping, and greedy non-maximum suppression.
//!
//! The detector internals stay behind [`DetectorBackend`]; this module turns
//! whatever a backend emits into a deterministic, filtered list of scored
//! boxes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::annotations::{parse_predictions, AnnotationError};
use crate::image::RasterImage;
use crate::kv::{self, KvError};
use crate::metrics::iou;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("model file not found: {0}")]
    ModelMissing(PathBuf),
    #[error("predictions file not found: {0}")]
    PredictionsMissing(PathBuf),
    #[error("invalid detector manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    ManifestRead(#[from] KvError),
    #[error("detector backend failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Predictions(#[from] AnnotationError),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
}

/// Axis-aligned box in image coordinates, origin top-left, real-valued.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    /// Validates the positive-area invariant: `x_min < x_max`, `y_min < y_max`,
    /// all coordinates finite.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, DetectError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite()) {
            return Err(DetectError::InvalidDetection(format!(
                "non-finite coordinates {:?}",
                b
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(DetectError::InvalidDetection(format!(
                "box must have positive area, got {:?}",
                b
            )));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Lexicographic coordinate order used for deterministic tie-breaking.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        self.x_min
            .total_cmp(&other.x_min)
            .then(self.y_min.total_cmp(&other.y_min))
            .then(self.x_max.total_cmp(&other.x_max))
            .then(self.y_max.total_cmp(&other.y_max))
    }
}

/// A scored, classed box. `class_id` 0 is the tiger class in single-class runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64, class_id: u32) -> Result<Self, DetectError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectError::InvalidDetection(format!(
                "score {} is outside [0, 1]",
                score
            )));
        }
        Ok(Self {
            bbox,
            score,
            class_id,
        })
    }

    /// Canonical ordering: score descending, then box lexicographic, then
    /// class id. Total and deterministic.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.bbox.lex_cmp(&other.bbox))
            .then(self.class_id.cmp(&other.class_id))
    }
}

/// Sorts detections into the canonical deterministic order.
pub fn sort_canonical(dets: &mut [Detection]) {
    dets.sort_by(Detection::canonical_cmp);
}

/// Clamps a box to `[0, width] × [0, height]`. Returns `None` when clamping
/// destroys positive area (the caller drops such boxes).
pub fn clip_box(bbox: &BoundingBox, width: f64, height: f64) -> Option<BoundingBox> {
    let x_min = bbox.x_min.clamp(0.0, width);
    let y_min = bbox.y_min.clamp(0.0, height);
    let x_max = bbox.x_max.clamp(0.0, width);
    let y_max = bbox.y_max.clamp(0.0, height);
    if x_min < x_max && y_min < y_max {
        Some(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    } else {
        None
    }
}

/// Greedy class-wise non-maximum suppression.
///
/// Repeatedly keeps the highest-score remaining detection and discards every
/// same-class detection whose IoU with it exceeds `iou_thresh` (strictly).
/// Ties on score break by box coordinates, so the result is independent of
/// input order. The output keeps the canonical ordering.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut sorted: Vec<Detection> = dets.to_vec();
    sort_canonical(&mut sorted);

    let mut kept = Vec::new();
    let mut suppressed = vec![false; sorted.len()];
    for i in 0..sorted.len() {
        if suppressed[i] {
            continue;
        }
        kept.push(sorted[i]);
        for j in (i + 1)..sorted.len() {
            if suppressed[j] || sorted[j].class_id != sorted[i].class_id {
                continue;
            }
            if iou(&sorted[i].bbox, &sorted[j].bbox) > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// How detections are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorKind {
    /// Run a model backend declared by a manifest file.
    Model { model_path: PathBuf },
    /// Look detections up in a JSON-lines predictions file keyed by image id.
    Precomputed { predictions_path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Detections below this score are dropped. Low default keeps the
    /// low-confidence tail that mAP evaluation needs.
    pub score_floor: f64,
    /// IoU threshold for NMS suppression.
    pub nms_iou: f64,
}

pub const DEFAULT_SCORE_FLOOR: f64 = 0.001;
pub const DEFAULT_NMS_IOU: f64 = 0.7;

impl DetectorConfig {
    pub fn precomputed(predictions_path: PathBuf) -> Self {
        Self {
            kind: DetectorKind::Precomputed { predictions_path },
            score_floor: DEFAULT_SCORE_FLOOR,
            nms_iou: DEFAULT_NMS_IOU,
        }
    }

    pub fn model(model_path: PathBuf) -> Self {
        Self {
            kind: DetectorKind::Model { model_path },
            score_floor: DEFAULT_SCORE_FLOOR,
            nms_iou: DEFAULT_NMS_IOU,
        }
    }
}

/// A model backend produces raw detections for an image; post-processing is
/// applied by [`Detector::detect`]. Implementations must be safe to call from
/// multiple threads.
pub trait DetectorBackend: Send + Sync {
    fn infer(&self, img: &RasterImage) -> Result<Vec<Detection>, DetectError>;
}

/// Emits one fixed box per image; used for pipeline tests and dry runs.
pub struct FixedBoxBackend {
    pub bbox: BoundingBox,
    pub score: f64,
    pub class_id: u32,
}

impl DetectorBackend for FixedBoxBackend {
    fn infer(&self, _img: &RasterImage) -> Result<Vec<Detection>, DetectError> {
        Ok(vec![Detection::new(self.bbox, self.score, self.class_id)?])
    }
}

enum DetectorImpl {
    Precomputed(BTreeMap<String, Vec<Detection>>),
    Model(Box<dyn DetectorBackend>),
}

/// Per-image results plus any non-fatal warnings raised while producing them.
#[derive(Debug, Clone, Default)]
pub struct DetectOutput {
    pub detections: Vec<Detection>,
    pub warnings: Vec<String>,
}

/// A detector instance resolved from a [`DetectorConfig`]. Precomputed
/// predictions are loaded once at construction; backends are loaded once and
/// shared across images.
pub struct Detector {
    inner: DetectorImpl,
    score_floor: f64,
    nms_iou: f64,
}

impl Detector {
    pub fn from_config(cfg: &DetectorConfig) -> Result<Self, DetectError> {
        let inner = match &cfg.kind {
            DetectorKind::Precomputed { predictions_path } => {
                if !predictions_path.exists() {
                    return Err(DetectError::PredictionsMissing(predictions_path.clone()));
                }
                let set = parse_predictions(predictions_path)?;
                DetectorImpl::Precomputed(set.into_map())
            }
            DetectorKind::Model { model_path } => {
                DetectorImpl::Model(load_detector_backend(model_path)?)
            }
        };
        Ok(Self {
            inner,
            score_floor: cfg.score_floor,
            nms_iou: cfg.nms_iou,
        })
    }

    /// Produces post-processed detections for one image: clip to image
    /// bounds, drop sub-floor scores, suppress duplicates, sort canonically.
    ///
    /// An image id absent from precomputed predictions yields zero detections
    /// plus a warning record rather than an error.
    pub fn detect(&self, img: &RasterImage, image_id: &str) -> Result<DetectOutput, DetectError> {
        let mut warnings = Vec::new();
        let raw = match &self.inner {
            DetectorImpl::Precomputed(map) => match map.get(image_id) {
                Some(dets) => dets.clone(),
                None => {
                    warnings.push(format!(
                        "image id '{}' has no precomputed predictions; treating as zero detections",
                        image_id
                    ));
                    Vec::new()
                }
            },
            DetectorImpl::Model(backend) => backend.infer(img)?,
        };

        let (w, h) = (img.width() as f64, img.height() as f64);
        let filtered: Vec<Detection> = raw
            .into_iter()
            .filter_map(|d| {
                clip_box(&d.bbox, w, h).map(|bbox| Detection {
                    bbox,
                    score: d.score,
                    class_id: d.class_id,
                })
            })
            .filter(|d| d.score >= self.score_floor)
            .collect();

        Ok(DetectOutput {
            detections: nms(&filtered, self.nms_iou),
            warnings,
        })
    }
}

/// One-shot form of [`Detector::detect`]; resolves the config, runs a single
/// image, and discards the instance.
pub fn detect(
    img: &RasterImage,
    image_id: &str,
    cfg: &DetectorConfig,
) -> Result<DetectOutput, DetectError> {
    Detector::from_config(cfg)?.detect(img, image_id)
}

/// Resolves a model path to a backend.
///
/// `stub:fixed-box:X0,Y0,X1,Y1,SCORE` builds the fixed-box stub directly.
/// Any other path must name a flat key-value manifest with a `backend` key;
/// `fixed-box` reads `box`, `score` and `class_id` keys from the manifest.
pub fn load_detector_backend(model_path: &Path) -> Result<Box<dyn DetectorBackend>, DetectError> {
    let spec = model_path.to_string_lossy();
    if let Some(rest) = spec.strip_prefix("stub:fixed-box:") {
        let backend = parse_fixed_box(rest).map_err(|message| DetectError::Manifest {
            path: model_path.to_path_buf(),
            message,
        })?;
        return Ok(Box::new(backend));
    }
    if !model_path.exists() {
        return Err(DetectError::ModelMissing(model_path.to_path_buf()));
    }
    let manifest = kv::parse_kv_file(model_path)?;
    let backend_name =
        manifest
            .get("backend")
            .map(String::as_str)
            .ok_or_else(|| DetectError::Manifest {
                path: model_path.to_path_buf(),
                message: "missing 'backend' key".into(),
            })?;
    match backend_name {
        "fixed-box" => {
            let bbox = manifest.get("box").ok_or_else(|| DetectError::Manifest {
                path: model_path.to_path_buf(),
                message: "fixed-box backend requires a 'box' key".into(),
            })?;
            let score = manifest.get("score").map(String::as_str).unwrap_or("1.0");
            let class_id = manifest.get("class_id").map(String::as_str).unwrap_or("0");
            let spec = format!("{},{}", bbox, score);
            let mut backend = parse_fixed_box(&spec).map_err(|message| DetectError::Manifest {
                path: model_path.to_path_buf(),
                message,
            })?;
            backend.class_id = class_id.parse().map_err(|_| DetectError::Manifest {
                path: model_path.to_path_buf(),
                message: format!("invalid class_id '{}'", class_id),
            })?;
            Ok(Box::new(backend))
        }
        other => Err(DetectError::Manifest {
            path: model_path.to_path_buf(),
            message: format!("unknown detector backend '{}'", other),
        }),
    }
}

fn parse_fixed_box(spec: &str) -> Result<FixedBoxBackend, String> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("invalid fixed-box spec '{}': {}", spec, e))?;
    if parts.len() != 5 {
        return Err(format!(
            "fixed-box spec needs 5 comma-separated values (x0,y0,x1,y1,score), got {}",
            parts.len()
        ));
    }
    let bbox =
        BoundingBox::new(parts[0], parts[1], parts[2], parts[3]).map_err(|e| e.to_string())?;
    if !(0.0..=1.0).contains(&parts[4]) {
        return Err(format!("fixed-box score {} outside [0, 1]", parts[4]));
    }
    Ok(FixedBoxBackend {
        bbox,
        score: parts[4],
        class_id: 0,
    })
}
