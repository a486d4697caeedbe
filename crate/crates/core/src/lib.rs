//! Tigerlight — low-light image enhancement and single-class detection
//! evaluation for wildlife camera imagery.
//!
//! The library is organized around a batch pipeline:
//!
//! 1. **image** – raster images in `[0,1]`, illumination maps, and the
//!    attention-guided multiply-add composition used by residual enhancers.
//! 2. **enhance** – pluggable enhancement stage: identity, gamma correction,
//!    histogram equalization, a generator-model pathway, and precomputed
//!    outputs loaded from disk.
//! 3. **detect** – detector backend boundary plus confidence filtering and
//!    non-maximum suppression.
//! 4. **annotations** – VOC-style XML ground truth, JSON-lines predictions,
//!    split lists, and dataset statistics.
//! 5. **metrics** – IoU, greedy matching, precision-recall curves, average
//!    precision, and COCO-style mAP over an IoU-threshold sweep.
//! 6. **pipeline** – CLI orchestration: enhance → detect → eval → compare,
//!    with deterministic parallel fan-out and report generation.

pub mod annotations;
pub mod detect;
pub mod enhance;
pub mod image;
pub mod kv;
pub mod metrics;
#[cfg(feature = "onnx")]
pub mod onnx;
pub mod pipeline;
