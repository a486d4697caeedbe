//! Run configuration: flat key-value files with dotted section keys, merged
//! with environment and command-line overrides (CLI > env > file > defaults).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::detect::{DetectorConfig, DetectorKind, DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR};
use crate::enhance::{EnhancerConfig, EnhancerKind};
use crate::image::MapSelector;
use crate::kv;
use crate::metrics::{coco_thresholds, EvalOptions, ThresholdRule};

use super::PipelineError;

/// Environment variable that overrides `dataset_root`.
pub const DATASET_ROOT_ENV: &str = "TIGERLIGHT_DATASET_ROOT";

/// Everything one pipeline run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub split_list: Option<PathBuf>,
    pub enhancer: EnhancerConfig,
    pub detector: Option<DetectorConfig>,
    pub thresholds: Vec<f64>,
    pub threshold_rule: ThresholdRule,
    pub include_difficult: bool,
    pub output_dir: PathBuf,
    pub worker_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            split_list: None,
            enhancer: EnhancerConfig::identity(),
            detector: None,
            thresholds: coco_thresholds(),
            threshold_rule: ThresholdRule::Strict,
            include_difficult: false,
            output_dir: PathBuf::from("tigerlight-out"),
            worker_count: 1,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "dataset_root",
    "split_list",
    "output_dir",
    "workers",
    "thresholds",
    "threshold_rule",
    "include_difficult",
    "enhancer.kind",
    "enhancer.gamma",
    "enhancer.model_path",
    "enhancer.precomputed_dir",
    "enhancer.multiply_with",
    "detector.kind",
    "detector.model_path",
    "detector.predictions_path",
    "detector.score_floor",
    "detector.nms_iou",
];

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

/// Parses `start:step:end` (inclusive) or a comma-separated list. Values are
/// rounded to 9 decimals so ranges land on canonical threshold values.
pub fn parse_thresholds(spec: &str) -> Result<Vec<f64>, PipelineError> {
    let parse_one = |s: &str| -> Result<f64, PipelineError> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| config_err(format!("invalid threshold value '{}'", s)))
    };
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(config_err(format!(
                "threshold range must be start:step:end, got '{}'",
                spec
            )));
        }
        let (start, step, end) = (
            parse_one(parts[0])?,
            parse_one(parts[1])?,
            parse_one(parts[2])?,
        );
        if step <= 0.0 {
            return Err(config_err("threshold range step must be positive"));
        }
        let mut values = Vec::new();
        let mut i = 0u32;
        loop {
            let v = ((start + f64::from(i) * step) * 1e9).round() / 1e9;
            if v > end + 1e-9 {
                break;
            }
            values.push(v);
            i += 1;
            if i > 10_000 {
                return Err(config_err("threshold range produces too many values"));
            }
        }
        values
    } else {
        spec.split(',')
            .map(parse_one)
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err(config_err(format!("no thresholds in '{}'", spec)));
    }
    Ok(values)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(config_err(format!(
            "{}: expected a boolean, got '{}'",
            key, value
        ))),
    }
}

fn build_enhancer(map: &BTreeMap<String, String>) -> Result<EnhancerConfig, PipelineError> {
    let kind_name = map
        .get("enhancer.kind")
        .map(String::as_str)
        .unwrap_or("identity");
    let require = |key: &str| {
        map.get(key)
            .ok_or_else(|| config_err(format!("enhancer.kind = {} requires {}", kind_name, key)))
    };
    let forbid = |keys: &[&str]| -> Result<(), PipelineError> {
        for key in keys {
            if map.contains_key(*key) {
                return Err(config_err(format!(
                    "{} does not apply to enhancer.kind = {}",
                    key, kind_name
                )));
            }
        }
        Ok(())
    };

    let kind = match kind_name {
        "identity" => {
            forbid(&[
                "enhancer.gamma",
                "enhancer.model_path",
                "enhancer.precomputed_dir",
            ])?;
            EnhancerKind::Identity
        }
        "gamma" => {
            forbid(&["enhancer.model_path", "enhancer.precomputed_dir"])?;
            let gamma: f64 = require("enhancer.gamma")?
                .parse()
                .map_err(|_| config_err("enhancer.gamma must be a number"))?;
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(config_err(format!(
                    "enhancer.gamma must be positive, got {}",
                    gamma
                )));
            }
            EnhancerKind::Gamma { gamma }
        }
        "hist-equalization" => {
            forbid(&[
                "enhancer.gamma",
                "enhancer.model_path",
                "enhancer.precomputed_dir",
            ])?;
            EnhancerKind::HistEqualization
        }
        "generator-model" => {
            forbid(&["enhancer.gamma", "enhancer.precomputed_dir"])?;
            EnhancerKind::GeneratorModel {
                model_path: PathBuf::from(require("enhancer.model_path")?),
            }
        }
        "precomputed" => {
            forbid(&["enhancer.gamma", "enhancer.model_path"])?;
            EnhancerKind::Precomputed {
                dir: PathBuf::from(require("enhancer.precomputed_dir")?),
            }
        }
        other => {
            return Err(config_err(format!("unknown enhancer.kind '{}'", other)));
        }
    };

    let multiply_with = match map.get("enhancer.multiply_with") {
        Some(v) => MapSelector::parse(v)
            .ok_or_else(|| config_err(format!("invalid enhancer.multiply_with '{}'", v)))?,
        None => MapSelector::Illumination,
    };
    Ok(EnhancerConfig {
        kind,
        multiply_with,
    })
}

fn build_detector(map: &BTreeMap<String, String>) -> Result<Option<DetectorConfig>, PipelineError> {
    let Some(kind_name) = map.get("detector.kind") else {
        for key in ["detector.model_path", "detector.predictions_path"] {
            if map.contains_key(key) {
                return Err(config_err(format!("{} requires detector.kind", key)));
            }
        }
        return Ok(None);
    };
    let kind = match kind_name.as_str() {
        "model" => {
            if map.contains_key("detector.predictions_path") {
                return Err(config_err(
                    "detector.predictions_path does not apply to detector.kind = model",
                ));
            }
            DetectorKind::Model {
                model_path: PathBuf::from(map.get("detector.model_path").ok_or_else(|| {
                    config_err("detector.kind = model requires detector.model_path")
                })?),
            }
        }
        "precomputed" => {
            if map.contains_key("detector.model_path") {
                return Err(config_err(
                    "detector.model_path does not apply to detector.kind = precomputed",
                ));
            }
            DetectorKind::Precomputed {
                predictions_path: PathBuf::from(map.get("detector.predictions_path").ok_or_else(
                    || config_err("detector.kind = precomputed requires detector.predictions_path"),
                )?),
            }
        }
        other => return Err(config_err(format!("unknown detector.kind '{}'", other))),
    };
    let score_floor = match map.get("detector.score_floor") {
        Some(v) => {
            let f: f64 = v
                .parse()
                .map_err(|_| config_err("detector.score_floor must be a number"))?;
            if !(0.0..=1.0).contains(&f) {
                return Err(config_err(format!(
                    "detector.score_floor must be in [0, 1], got {}",
                    f
                )));
            }
            f
        }
        None => DEFAULT_SCORE_FLOOR,
    };
    let nms_iou = match map.get("detector.nms_iou") {
        Some(v) => {
            let f: f64 = v
                .parse()
                .map_err(|_| config_err("detector.nms_iou must be a number"))?;
            if !(f > 0.0 && f < 1.0) {
                return Err(config_err(format!(
                    "detector.nms_iou must be in (0, 1), got {}",
                    f
                )));
            }
            f
        }
        None => DEFAULT_NMS_IOU,
    };
    Ok(Some(DetectorConfig {
        kind,
        score_floor,
        nms_iou,
    }))
}

impl RunConfig {
    /// Builds a config from an optional file plus override pairs.
    /// Precedence: overrides > `TIGERLIGHT_DATASET_ROOT` > file > defaults.
    pub fn from_sources(
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self, PipelineError> {
        let mut map = match file {
            Some(path) => kv::parse_kv_file(path)?,
            None => BTreeMap::new(),
        };
        if let Ok(root) = std::env::var(DATASET_ROOT_ENV) {
            if !root.is_empty() {
                map.insert("dataset_root".to_string(), root);
            }
        }
        for (key, value) in overrides {
            map.insert(key.clone(), value.clone());
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, PipelineError> {
        for key in map.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(config_err(format!("unknown config key '{}'", key)));
            }
        }

        let thresholds = match map.get("thresholds") {
            Some(spec) => parse_thresholds(spec)?,
            None => coco_thresholds(),
        };
        let threshold_rule = match map.get("threshold_rule") {
            Some(v) => ThresholdRule::parse(v)
                .ok_or_else(|| config_err(format!("invalid threshold_rule '{}'", v)))?,
            None => ThresholdRule::Strict,
        };
        let include_difficult = match map.get("include_difficult") {
            Some(v) => parse_bool("include_difficult", v)?,
            None => false,
        };
        let worker_count = match map.get("workers") {
            Some(v) => {
                let n: usize = v
                    .parse()
                    .map_err(|_| config_err("workers must be a positive integer"))?;
                if n == 0 {
                    return Err(config_err("workers must be at least 1"));
                }
                n
            }
            None => 1,
        };

        let cfg = Self {
            dataset_root: map.get("dataset_root").map(PathBuf::from),
            split_list: map.get("split_list").map(PathBuf::from),
            enhancer: build_enhancer(map)?,
            detector: build_detector(map)?,
            thresholds,
            threshold_rule,
            include_difficult,
            output_dir: map
                .get("output_dir")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("tigerlight-out")),
            worker_count,
        };
        cfg.eval_options().validate().map_err(PipelineError::from)?;
        Ok(cfg)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            thresholds: self.thresholds.clone(),
            rule: self.threshold_rule,
            include_difficult: self.include_difficult,
        }
    }

    pub fn dataset_root(&self) -> Result<&Path, PipelineError> {
        self.dataset_root
            .as_deref()
            .ok_or_else(|| config_err("dataset_root is required (config key, --dataset, or env)"))
    }

    pub fn detector(&self) -> Result<&DetectorConfig, PipelineError> {
        self.detector
            .as_ref()
            .ok_or_else(|| config_err("detector.kind is required for this command"))
    }

    /// Evaluation-relevant settings echoed into reports. Worker count and
    /// output directory are excluded: they must not affect report bytes.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut echo = BTreeMap::new();
        if let Some(root) = &self.dataset_root {
            echo.insert("dataset_root".into(), root.display().to_string());
        }
        if let Some(split) = &self.split_list {
            echo.insert("split_list".into(), split.display().to_string());
        }
        echo.insert("enhancer".into(), self.enhancer.settings_string());
        if let Some(det) = &self.detector {
            let kind = match &det.kind {
                DetectorKind::Model { model_path } => {
                    format!("kind=model,model_path={}", model_path.display())
                }
                DetectorKind::Precomputed { predictions_path } => format!(
                    "kind=precomputed,predictions_path={}",
                    predictions_path.display()
                ),
            };
            echo.insert(
                "detector".into(),
                format!(
                    "{},score_floor={},nms_iou={}",
                    kind, det.score_floor, det.nms_iou
                ),
            );
        }
        echo.insert(
            "thresholds".into(),
            self.thresholds
                .iter()
                .map(|t| super::report::fmt_threshold(*t))
                .collect::<Vec<_>>()
                .join(","),
        );
        echo.insert("threshold_rule".into(), self.threshold_rule.as_str().into());
        echo.insert(
            "include_difficult".into(),
            self.include_difficult.to_string(),
        );
        echo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn defaults_are_sane() {
        let cfg = RunConfig::from_map(&BTreeMap::new()).unwrap();
        assert_eq!(cfg.thresholds, coco_thresholds());
        assert_eq!(cfg.worker_count, 1);
        assert_eq!(cfg.enhancer.kind, EnhancerKind::Identity);
        assert!(cfg.detector.is_none());
        assert_eq!(cfg.threshold_rule, ThresholdRule::Strict);
    }

    #[test]
    fn threshold_range_matches_canonical_values() {
        let parsed = parse_thresholds("0.50:0.05:0.95").unwrap();
        assert_eq!(parsed, coco_thresholds());

        let listed = parse_thresholds("0.5,0.75").unwrap();
        assert_eq!(listed, vec![0.5, 0.75]);

        assert!(parse_thresholds("0.9:0.05").is_err());
        assert!(parse_thresholds("0.5:-0.05:0.9").is_err());
        assert!(parse_thresholds("abc").is_err());
    }

    #[test]
    fn gamma_kind_requires_and_validates_gamma() {
        let err = RunConfig::from_map(&map(&[("enhancer.kind", "gamma")])).unwrap_err();
        assert!(err.to_string().contains("enhancer.gamma"));

        let err = RunConfig::from_map(&map(&[
            ("enhancer.kind", "gamma"),
            ("enhancer.gamma", "-1"),
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("positive"));

        let cfg = RunConfig::from_map(&map(&[
            ("enhancer.kind", "gamma"),
            ("enhancer.gamma", "0.5"),
        ]))
        .unwrap();
        assert_eq!(cfg.enhancer.kind, EnhancerKind::Gamma { gamma: 0.5 });
    }

    #[test]
    fn inapplicable_fields_are_rejected() {
        let err = RunConfig::from_map(&map(&[
            ("enhancer.kind", "identity"),
            ("enhancer.gamma", "0.5"),
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("does not apply"));

        let err = RunConfig::from_map(&map(&[
            ("detector.kind", "model"),
            ("detector.model_path", "m"),
            ("detector.predictions_path", "p"),
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("does not apply"));
    }

    #[test]
    fn unknown_keys_fail_loudly() {
        let err = RunConfig::from_map(&map(&[("enhancer.gama", "0.5")])).unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn detector_defaults_apply() {
        let cfg = RunConfig::from_map(&map(&[
            ("detector.kind", "precomputed"),
            ("detector.predictions_path", "preds.jsonl"),
        ]))
        .unwrap();
        let det = cfg.detector().unwrap();
        assert_eq!(det.score_floor, DEFAULT_SCORE_FLOOR);
        assert_eq!(det.nms_iou, DEFAULT_NMS_IOU);
    }

    #[test]
    fn echo_excludes_worker_count() {
        let one =
            RunConfig::from_map(&map(&[("workers", "1"), ("dataset_root", "/data")])).unwrap();
        let eight =
            RunConfig::from_map(&map(&[("workers", "8"), ("dataset_root", "/data")])).unwrap();
        assert_eq!(one.echo(), eight.echo());
        assert!(!one.echo().contains_key("workers"));
        assert_eq!(one.echo()["dataset_root"], "/data");
        assert_eq!(one.echo()["threshold_rule"], "strict");
    }

    #[test]
    fn overrides_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "workers = 2\nenhancer.kind = identity\n").unwrap();
        let cfg = RunConfig::from_sources(Some(&path), &[("workers".to_string(), "7".to_string())])
            .unwrap();
        assert_eq!(cfg.worker_count, 7);
    }
}
