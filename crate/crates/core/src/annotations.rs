//! Dataset ingestion: VOC-style XML ground truth, JSON-lines prediction
//! files, split lists, and dataset statistics.
//!
//! Coordinate convention: VOC boxes are 1-based integer pixel coordinates;
//! on ingest they convert to the 0-based continuous frame by subtracting 1
//! from `xmin`/`ymin`. Writers invert the conversion so a parse → write →
//! parse round trip is the identity on the data model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{BoundingBox, Detection};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed XML in {path}: {message}")]
    Xml { path: PathBuf, message: String },
    #[error("{path}: missing required element '{element}'")]
    MissingElement { path: PathBuf, element: String },
    #[error("{path}: element '{element}' has invalid value '{value}'")]
    InvalidValue {
        path: PathBuf,
        element: String,
        value: String,
    },
    #[error("{path}: object {index}: unknown class name '{name}'")]
    UnknownClass {
        path: PathBuf,
        index: usize,
        name: String,
    },
    #[error("{path}: object {index}: degenerate box ({detail})")]
    DegenerateBox {
        path: PathBuf,
        index: usize,
        detail: String,
    },
    #[error("{path}:{line}: {message}")]
    PredictionLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate image id '{0}' in ground-truth set")]
    DuplicateImage(String),
    #[error("split list references '{image_id}' but {path} does not exist")]
    SplitEntryMissing { image_id: String, path: PathBuf },
}

/// Class name ↔ id table. Defaults to the single-class `{tiger: 0}` mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    name_to_id: BTreeMap<String, u32>,
    id_to_name: BTreeMap<u32, String>,
}

impl Default for ClassTable {
    fn default() -> Self {
        Self::from_pairs([("tiger", 0)])
    }
}

impl ClassTable {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, u32)>) -> Self {
        let mut name_to_id = BTreeMap::new();
        let mut id_to_name = BTreeMap::new();
        for (name, id) in pairs {
            name_to_id.insert(name.to_string(), id);
            id_to_name.insert(id, name.to_string());
        }
        Self {
            name_to_id,
            id_to_name,
        }
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.name_to_id.get(name).copied()
    }

    pub fn name_of(&self, id: u32) -> Option<&str> {
        self.id_to_name.get(&id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.id_to_name.keys().copied()
    }
}

/// One dataset image: id (file stem), source path, and pixel dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub file_path: PathBuf,
    pub width: usize,
    pub height: usize,
}

/// A ground-truth object: box, class, and the VOC `difficult` flag.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub bbox: BoundingBox,
    pub class_id: u32,
    pub difficult: bool,
}

/// Per-image ground-truth boxes plus their image records.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthSet {
    images: BTreeMap<String, ImageRecord>,
    records: BTreeMap<String, Vec<GtObject>>,
    classes: ClassTable,
}

impl GroundTruthSet {
    pub fn new(classes: ClassTable) -> Self {
        Self {
            images: BTreeMap::new(),
            records: BTreeMap::new(),
            classes,
        }
    }

    /// Adds one image and its objects; image ids must be unique.
    pub fn insert(
        &mut self,
        record: ImageRecord,
        objects: Vec<GtObject>,
    ) -> Result<(), AnnotationError> {
        if self.images.contains_key(&record.image_id) {
            return Err(AnnotationError::DuplicateImage(record.image_id));
        }
        self.records.insert(record.image_id.clone(), objects);
        self.images.insert(record.image_id.clone(), record);
        Ok(())
    }

    pub fn images(&self) -> &BTreeMap<String, ImageRecord> {
        &self.images
    }

    pub fn records(&self) -> &BTreeMap<String, Vec<GtObject>> {
        &self.records
    }

    pub fn classes(&self) -> &ClassTable {
        &self.classes
    }

    pub fn objects_for(&self, image_id: &str) -> Option<&[GtObject]> {
        self.records.get(image_id).map(Vec::as_slice)
    }

    pub fn has_image(&self, image_id: &str) -> bool {
        self.images.contains_key(image_id)
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }
}

/// Per-image detections, keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    by_image: BTreeMap<String, Vec<Detection>>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(by_image: BTreeMap<String, Vec<Detection>>) -> Self {
        Self { by_image }
    }

    pub fn insert(&mut self, image_id: &str, det: Detection) {
        self.by_image
            .entry(image_id.to_string())
            .or_default()
            .push(det);
    }

    pub fn by_image(&self) -> &BTreeMap<String, Vec<Detection>> {
        &self.by_image
    }

    pub fn into_map(self) -> BTreeMap<String, Vec<Detection>> {
        self.by_image
    }

    pub fn detections_for(&self, image_id: &str) -> &[Detection] {
        self.by_image
            .get(image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn total_detections(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }
}

fn xml_text_child<'a>(
    node: roxmltree::Node<'a, 'a>,
    name: &str,
    path: &Path,
) -> Result<&'a str, AnnotationError> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .and_then(|c| c.text())
        .map(str::trim)
        .ok_or_else(|| AnnotationError::MissingElement {
            path: path.to_path_buf(),
            element: name.to_string(),
        })
}

fn parse_number(path: &Path, element: &str, raw: &str) -> Result<f64, AnnotationError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| AnnotationError::InvalidValue {
            path: path.to_path_buf(),
            element: element.to_string(),
            value: raw.to_string(),
        })
}

/// Parses one VOC XML annotation file.
///
/// Boxes are validated (`xmax > xmin`, `ymax > ymin`) before the 1-based →
/// 0-based conversion; class names map through `classes` and unknown names
/// are rejected.
pub fn parse_voc_xml(
    path: &Path,
    classes: &ClassTable,
) -> Result<(ImageRecord, Vec<GtObject>), AnnotationError> {
    let text = std::fs::read_to_string(path).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| AnnotationError::Xml {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(AnnotationError::Xml {
            path: path.to_path_buf(),
            message: format!(
                "expected <annotation> root, got <{}>",
                root.tag_name().name()
            ),
        });
    }

    let size = root
        .children()
        .find(|c| c.has_tag_name("size"))
        .ok_or_else(|| AnnotationError::MissingElement {
            path: path.to_path_buf(),
            element: "size".into(),
        })?;
    let width = parse_number(path, "size/width", xml_text_child(size, "width", path)?)? as usize;
    let height = parse_number(path, "size/height", xml_text_child(size, "height", path)?)? as usize;
    if width == 0 || height == 0 {
        return Err(AnnotationError::InvalidValue {
            path: path.to_path_buf(),
            element: "size".into(),
            value: format!("{}x{}", width, height),
        });
    }

    let filename = root
        .children()
        .find(|c| c.has_tag_name("filename"))
        .and_then(|c| c.text())
        .map(str::trim)
        .filter(|s| !s.is_empty());
    let (image_id, file_path) = match filename {
        Some(name) => {
            let p = PathBuf::from(name);
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| name.to_string());
            (stem, p)
        }
        None => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (stem.clone(), PathBuf::from(stem))
        }
    };

    let mut objects = Vec::new();
    for (index, obj) in root
        .children()
        .filter(|c| c.has_tag_name("object"))
        .enumerate()
    {
        let name = xml_text_child(obj, "name", path)?;
        let class_id = classes
            .id_of(name)
            .ok_or_else(|| AnnotationError::UnknownClass {
                path: path.to_path_buf(),
                index,
                name: name.to_string(),
            })?;
        let difficult = obj
            .children()
            .find(|c| c.has_tag_name("difficult"))
            .and_then(|c| c.text())
            .map(str::trim)
            .map(|s| s == "1" || s.eq_ignore_ascii_case("true"))
            .unwrap_or(false);
        let bndbox = obj
            .children()
            .find(|c| c.has_tag_name("bndbox"))
            .ok_or_else(|| AnnotationError::MissingElement {
                path: path.to_path_buf(),
                element: format!("object[{}]/bndbox", index),
            })?;
        let xmin = parse_number(path, "xmin", xml_text_child(bndbox, "xmin", path)?)?;
        let ymin = parse_number(path, "ymin", xml_text_child(bndbox, "ymin", path)?)?;
        let xmax = parse_number(path, "xmax", xml_text_child(bndbox, "xmax", path)?)?;
        let ymax = parse_number(path, "ymax", xml_text_child(bndbox, "ymax", path)?)?;
        if xmax <= xmin || ymax <= ymin {
            return Err(AnnotationError::DegenerateBox {
                path: path.to_path_buf(),
                index,
                detail: format!("xmin={} ymin={} xmax={} ymax={}", xmin, ymin, xmax, ymax),
            });
        }
        // 1-based VOC pixel coordinates → 0-based continuous frame.
        let bbox = BoundingBox::new(xmin - 1.0, ymin - 1.0, xmax, ymax).map_err(|e| {
            AnnotationError::DegenerateBox {
                path: path.to_path_buf(),
                index,
                detail: e.to_string(),
            }
        })?;
        objects.push(GtObject {
            bbox,
            class_id,
            difficult,
        });
    }

    Ok((
        ImageRecord {
            image_id,
            file_path,
            width,
            height,
        },
        objects,
    ))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes one VOC XML annotation file, inverting the parse-time coordinate
/// conversion.
pub fn write_voc_xml(
    record: &ImageRecord,
    objects: &[GtObject],
    classes: &ClassTable,
    path: &Path,
) -> Result<(), AnnotationError> {
    let mut out = String::new();
    let filename = record.file_path.to_string_lossy();
    writeln!(out, "<annotation>").unwrap();
    writeln!(out, "  <filename>{}</filename>", xml_escape(&filename)).unwrap();
    writeln!(out, "  <size>").unwrap();
    writeln!(out, "    <width>{}</width>", record.width).unwrap();
    writeln!(out, "    <height>{}</height>", record.height).unwrap();
    writeln!(out, "    <depth>3</depth>").unwrap();
    writeln!(out, "  </size>").unwrap();
    for obj in objects {
        let name = classes.name_of(obj.class_id).unwrap_or("unknown");
        writeln!(out, "  <object>").unwrap();
        writeln!(out, "    <name>{}</name>", xml_escape(name)).unwrap();
        writeln!(
            out,
            "    <difficult>{}</difficult>",
            u8::from(obj.difficult)
        )
        .unwrap();
        writeln!(out, "    <bndbox>").unwrap();
        writeln!(out, "      <xmin>{}</xmin>", obj.bbox.x_min + 1.0).unwrap();
        writeln!(out, "      <ymin>{}</ymin>", obj.bbox.y_min + 1.0).unwrap();
        writeln!(out, "      <xmax>{}</xmax>", obj.bbox.x_max).unwrap();
        writeln!(out, "      <ymax>{}</ymax>", obj.bbox.y_max).unwrap();
        writeln!(out, "    </bndbox>").unwrap();
        writeln!(out, "  </object>").unwrap();
    }
    writeln!(out, "</annotation>").unwrap();
    std::fs::write(path, out).map_err(|source| AnnotationError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Wire format of one prediction line.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    image_id: String,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    score: f64,
    class_id: u32,
}

/// Parses a JSON-lines predictions file (one object per detection) into a
/// [`PredictionSet`]. Malformed lines and out-of-range scores are reported
/// with their line number.
pub fn parse_predictions(path: &Path) -> Result<PredictionSet, AnnotationError> {
    let file = std::fs::File::open(path).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut set = PredictionSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| AnnotationError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionLine =
            serde_json::from_str(&line).map_err(|e| AnnotationError::PredictionLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        let bbox = BoundingBox::new(record.x_min, record.y_min, record.x_max, record.y_max)
            .map_err(|e| AnnotationError::PredictionLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        let det = Detection::new(bbox, record.score, record.class_id).map_err(|e| {
            AnnotationError::PredictionLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            }
        })?;
        set.insert(&record.image_id, det);
    }
    Ok(set)
}

/// Writes predictions as JSON-lines, sorted by image id then canonical
/// detection order, so output is deterministic.
pub fn write_predictions(set: &PredictionSet, path: &Path) -> Result<(), AnnotationError> {
    let mut file = std::fs::File::create(path).map_err(|source| AnnotationError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    for (image_id, dets) in set.by_image() {
        let mut dets = dets.clone();
        crate::detect::sort_canonical(&mut dets);
        for d in dets {
            let line = PredictionLine {
                image_id: image_id.clone(),
                x_min: d.bbox.x_min,
                y_min: d.bbox.y_min,
                x_max: d.bbox.x_max,
                y_max: d.bbox.y_max,
                score: d.score,
                class_id: d.class_id,
            };
            let json = serde_json::to_string(&line).expect("prediction line serializes");
            writeln!(file, "{}", json).map_err(|source| AnnotationError::Write {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    Ok(())
}

/// Exact dataset counts: images, boxes, and per-class box histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub image_count: usize,
    pub box_count: usize,
    pub per_class: BTreeMap<String, usize>,
}

pub fn dataset_stats(gts: &GroundTruthSet) -> DatasetStats {
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    let mut box_count = 0;
    for objects in gts.records().values() {
        for obj in objects {
            box_count += 1;
            let name = gts
                .classes()
                .name_of(obj.class_id)
                .map(str::to_string)
                .unwrap_or_else(|| format!("class_{}", obj.class_id));
            *per_class.entry(name).or_default() += 1;
        }
    }
    DatasetStats {
        image_count: gts.image_count(),
        box_count,
        per_class,
    }
}

/// Reads a split list: one image id per line, blank lines and `#` comments
/// skipped.
pub fn read_split_list(path: &Path) -> Result<Vec<String>, AnnotationError> {
    let text = std::fs::read_to_string(path).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Loads ground truth from a directory of VOC XML files.
///
/// With a split the loader reads exactly `<dir>/<id>.xml` for each listed id;
/// without one it reads every `*.xml` in the directory in sorted order.
pub fn load_ground_truth(
    annotations_dir: &Path,
    split: Option<&[String]>,
    classes: &ClassTable,
) -> Result<GroundTruthSet, AnnotationError> {
    let mut set = GroundTruthSet::new(classes.clone());
    match split {
        Some(ids) => {
            for id in ids {
                let path = annotations_dir.join(format!("{}.xml", id));
                if !path.exists() {
                    return Err(AnnotationError::SplitEntryMissing {
                        image_id: id.clone(),
                        path,
                    });
                }
                let (mut record, objects) = parse_voc_xml(&path, classes)?;
                // The split id is authoritative for keying.
                record.image_id = id.clone();
                set.insert(record, objects)?;
            }
        }
        None => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(annotations_dir)
                .map_err(|source| AnnotationError::Io {
                    path: annotations_dir.to_path_buf(),
                    source,
                })?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("xml"))
                .collect();
            paths.sort();
            for path in paths {
                let (mut record, objects) = parse_voc_xml(&path, classes)?;
                if let Some(stem) = path.file_stem() {
                    record.image_id = stem.to_string_lossy().into_owned();
                }
                set.insert(record, objects)?;
            }
        }
    }
    Ok(set)
}
