//! COCO ground-truth ingest and the harness's detections file format.
//!
//! Ground truth is read from a standard COCO annotation document. Only the
//! `images`, `annotations` and `categories` arrays are consulted; `iscrowd`,
//! `segmentation` and `area` are ignored.
//!
//! Detections files look like:
//!
//! ```json
//! {
//!   "provenance": {"backend": "mock", "prompt": "cattle muzzle", "seed": 7, "timestamp": "..."},
//!   "detections": [{"image_id": 1, "bbox": [10, 10, 50, 50], "score": 0.91, "phrase": "muzzle"}]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::{validate_box, BoundingBox, BoxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefKind {
    Image,
    Category,
}

impl fmt::Display for RefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefKind::Image => f.write_str("image_id"),
            RefKind::Category => f.write_str("category_id"),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("{element}: missing or mistyped field `{field}`")]
    MissingField {
        element: String,
        field: &'static str,
    },
    #[error("duplicate {kind} {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("image {image_id}: width and height must be positive")]
    InvalidImage { image_id: u64 },
    #[error("annotation {annotation_id} references missing {kind} {id}")]
    DanglingReference {
        annotation_id: u64,
        kind: RefKind,
        id: u64,
    },
    #[error("annotation {annotation_id}: invalid box: {source}")]
    InvalidBox {
        annotation_id: u64,
        #[source]
        source: BoxError,
    },
    #[error("annotation {annotation_id}: box lies entirely outside its image")]
    OutsideImage { annotation_id: u64 },
    #[error("more than one active category: {0:?}")]
    MultipleCategories(Vec<u64>),
    #[error("detection {index}: score {score} outside [0, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("detection {index}: invalid box: {source}")]
    InvalidDetectionBox {
        index: usize,
        #[source]
        source: BoxError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// Validated ground truth. Immutable once built.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthDataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Clip boxes that overshoot the image. When false they are kept raw.
    pub clip_out_of_bounds: bool,
    /// Refuse documents whose annotations use more than one category.
    pub single_category: bool,
    /// Drop invalid elements and list them in the report instead of failing.
    pub skip_invalid: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            clip_out_of_bounds: true,
            single_category: true,
            skip_invalid: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub element: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub source_images: usize,
    pub source_annotations: usize,
    pub source_categories: usize,
    pub rejected: Vec<Rejection>,
    /// Annotation ids whose boxes were clipped to the image.
    pub clipped: Vec<u64>,
    /// Annotation ids left overshooting the image (clipping disabled).
    pub out_of_bounds: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: GroundTruthDataset,
    pub report: IngestReport,
}

fn field_u64(
    obj: &Map<String, Value>,
    field: &'static str,
    element: &str,
) -> Result<u64, IngestError> {
    obj.get(field)
        .and_then(Value::as_u64)
        .ok_or_else(|| IngestError::MissingField {
            element: element.to_string(),
            field,
        })
}

fn field_f64(
    obj: &Map<String, Value>,
    field: &'static str,
    element: &str,
) -> Result<f64, IngestError> {
    obj.get(field)
        .and_then(Value::as_f64)
        .ok_or_else(|| IngestError::MissingField {
            element: element.to_string(),
            field,
        })
}

fn field_str(
    obj: &Map<String, Value>,
    field: &'static str,
    element: &str,
) -> Result<String, IngestError> {
    obj.get(field)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| IngestError::MissingField {
            element: element.to_string(),
            field,
        })
}

fn top_array<'a>(
    doc: &'a Map<String, Value>,
    key: &'static str,
) -> Result<&'a Vec<Value>, IngestError> {
    doc.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| IngestError::MissingField {
            element: "document".to_string(),
            field: key,
        })
}

fn as_object<'a>(v: &'a Value, element: &str) -> Result<&'a Map<String, Value>, IngestError> {
    v.as_object()
        .ok_or_else(|| IngestError::MalformedDocument(format!("{element} is not an object")))
}

fn parse_image(v: &Value, idx: usize) -> Result<ImageInfo, IngestError> {
    let label = format!("images[{idx}]");
    let obj = as_object(v, &label)?;
    let id = field_u64(obj, "id", &label)?;
    let label = format!("image {id}");
    let width = field_f64(obj, "width", &label)?;
    let height = field_f64(obj, "height", &label)?;
    if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
        return Err(IngestError::InvalidImage { image_id: id });
    }
    Ok(ImageInfo {
        id,
        file_name: field_str(obj, "file_name", &label)?,
        width,
        height,
    })
}

fn parse_category(v: &Value, idx: usize) -> Result<Category, IngestError> {
    let label = format!("categories[{idx}]");
    let obj = as_object(v, &label)?;
    let id = field_u64(obj, "id", &label)?;
    Ok(Category {
        id,
        name: field_str(obj, "name", &format!("category {id}"))?,
    })
}

fn parse_bbox(obj: &Map<String, Value>, element: &str) -> Result<BoundingBox, IngestError> {
    let missing = || IngestError::MissingField {
        element: element.to_string(),
        field: "bbox",
    };
    let arr = obj
        .get("bbox")
        .and_then(Value::as_array)
        .ok_or_else(missing)?;
    if arr.len() != 4 {
        return Err(missing());
    }
    let mut xywh = [0.0; 4];
    for (slot, v) in xywh.iter_mut().zip(arr) {
        *slot = v.as_f64().ok_or_else(missing)?;
    }
    Ok(BoundingBox::from(xywh))
}

impl GroundTruthDataset {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Annotations grouped by image id, in annotation order. Every image of
    /// the dataset has an entry, possibly empty.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut out: BTreeMap<u64, Vec<&Annotation>> =
            self.images.iter().map(|im| (im.id, Vec::new())).collect();
        for a in &self.annotations {
            out.entry(a.image_id).or_default().push(a);
        }
        out
    }

    /// Distinct category ids used by at least one annotation.
    pub fn active_categories(&self) -> Vec<u64> {
        self.annotations
            .iter()
            .map(|a| a.category_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Restricts the dataset to the given image ids, keeping source order.
    pub fn retain_images(&self, keep: &HashSet<u64>) -> Self {
        Self {
            images: self
                .images
                .iter()
                .filter(|im| keep.contains(&im.id))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }

    pub fn from_json_str(text: &str, opts: &IngestOptions) -> Result<Ingested, IngestError> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
        let doc = doc
            .as_object()
            .ok_or_else(|| IngestError::MalformedDocument("top level is not an object".into()))?;
        let raw_images = top_array(doc, "images")?;
        let raw_annotations = top_array(doc, "annotations")?;
        let raw_categories = top_array(doc, "categories")?;

        let mut report = IngestReport {
            source_images: raw_images.len(),
            source_annotations: raw_annotations.len(),
            source_categories: raw_categories.len(),
            ..Default::default()
        };
        let mut errors: Vec<IngestError> = Vec::new();
        let mut reject = |element: String, err: IngestError, report: &mut IngestReport| {
            report.rejected.push(Rejection {
                element,
                error: err.to_string(),
            });
            errors.push(err);
        };

        let mut images = Vec::with_capacity(raw_images.len());
        let mut image_ids = HashSet::new();
        for (idx, v) in raw_images.iter().enumerate() {
            match parse_image(v, idx) {
                Ok(im) if !image_ids.insert(im.id) => {
                    let id = im.id;
                    reject(
                        format!("images[{idx}]"),
                        IngestError::DuplicateId { kind: "image", id },
                        &mut report,
                    )
                }
                Ok(im) => images.push(im),
                Err(e @ IngestError::MalformedDocument(_)) => return Err(e),
                Err(e) => reject(format!("images[{idx}]"), e, &mut report),
            }
        }

        let mut categories = Vec::with_capacity(raw_categories.len());
        let mut category_ids = HashSet::new();
        for (idx, v) in raw_categories.iter().enumerate() {
            match parse_category(v, idx) {
                Ok(c) if !category_ids.insert(c.id) => {
                    let id = c.id;
                    reject(
                        format!("categories[{idx}]"),
                        IngestError::DuplicateId {
                            kind: "category",
                            id,
                        },
                        &mut report,
                    )
                }
                Ok(c) => categories.push(c),
                Err(e @ IngestError::MalformedDocument(_)) => return Err(e),
                Err(e) => reject(format!("categories[{idx}]"), e, &mut report),
            }
        }

        let dims: BTreeMap<u64, (f64, f64)> = images
            .iter()
            .map(|im| (im.id, (im.width, im.height)))
            .collect();
        let mut annotations = Vec::with_capacity(raw_annotations.len());
        let mut annotation_ids = HashSet::new();
        for (idx, v) in raw_annotations.iter().enumerate() {
            let element = format!("annotations[{idx}]");
            let parsed = (|| {
                let obj = as_object(v, &element)?;
                let id = field_u64(obj, "id", &element)?;
                let label = format!("annotation {id}");
                let image_id = field_u64(obj, "image_id", &label)?;
                let category_id = field_u64(obj, "category_id", &label)?;
                let bbox = parse_bbox(obj, &label)?;
                if !annotation_ids.insert(id) {
                    return Err(IngestError::DuplicateId {
                        kind: "annotation",
                        id,
                    });
                }
                let &(w, h) = dims.get(&image_id).ok_or(IngestError::DanglingReference {
                    annotation_id: id,
                    kind: RefKind::Image,
                    id: image_id,
                })?;
                if !category_ids.contains(&category_id) {
                    return Err(IngestError::DanglingReference {
                        annotation_id: id,
                        kind: RefKind::Category,
                        id: category_id,
                    });
                }
                let check =
                    validate_box(&bbox, w, h).map_err(|source| IngestError::InvalidBox {
                        annotation_id: id,
                        source,
                    })?;
                let mut ann = Annotation {
                    id,
                    image_id,
                    category_id,
                    bbox,
                };
                if check.out_of_bounds {
                    if opts.clip_out_of_bounds {
                        ann.bbox = bbox
                            .clip_to(w, h)
                            .ok_or(IngestError::OutsideImage { annotation_id: id })?;
                    }
                    return Ok((ann, true));
                }
                Ok((ann, false))
            })();
            match parsed {
                Ok((ann, overshoot)) => {
                    if overshoot {
                        if opts.clip_out_of_bounds {
                            report.clipped.push(ann.id);
                        } else {
                            report.out_of_bounds.push(ann.id);
                        }
                    }
                    annotations.push(ann);
                }
                Err(e @ IngestError::MalformedDocument(_)) => return Err(e),
                Err(e) => reject(element, e, &mut report),
            }
        }

        if !opts.skip_invalid {
            if let Some(first) = errors.into_iter().next() {
                return Err(first);
            }
        }

        let dataset = GroundTruthDataset {
            images,
            annotations,
            categories,
        };
        if opts.single_category {
            let active = dataset.active_categories();
            if active.len() > 1 {
                return Err(IngestError::MultipleCategories(active));
            }
        }
        Ok(Ingested { dataset, report })
    }

    /// Serializes as a minimal COCO document.
    pub fn to_coco_json(&self) -> String {
        let doc = serde_json::json!({
            "images": self.images.iter().map(|im| serde_json::json!({
                "id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height,
            })).collect::<Vec<_>>(),
            "annotations": self.annotations.iter().map(|a| serde_json::json!({
                "id": a.id, "image_id": a.image_id, "category_id": a.category_id,
                "bbox": <[f64; 4]>::from(a.bbox), "iscrowd": 0, "area": a.bbox.area(),
            })).collect::<Vec<_>>(),
            "categories": self.categories.iter().map(|c| serde_json::json!({
                "id": c.id, "name": c.name,
            })).collect::<Vec<_>>(),
        });
        serde_json::to_string_pretty(&doc).expect("dataset serializes")
    }
}

pub fn parse_ground_truth(path: &Path, opts: &IngestOptions) -> Result<Ingested, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    GroundTruthDataset::from_json_str(&text, opts)
}

/// Where a detection set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub prompt: String,
    pub seed: u64,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: BoundingBox,
    pub score: f64,
    #[serde(default)]
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub provenance: Provenance,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            detections: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        for (index, d) in self.detections.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(IngestError::ScoreOutOfRange {
                    index,
                    score: d.score,
                });
            }
            d.bbox
                .check_shape()
                .map_err(|source| IngestError::InvalidDetectionBox { index, source })?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, IngestError> {
        let set: DetectionSet = serde_json::from_str(text)
            .map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("detection set serializes")
    }

    /// Keeps only the highest-scoring detection of each image (first one on ties).
    pub fn top1_per_image(&self) -> Self {
        let mut best: BTreeMap<u64, usize> = BTreeMap::new();
        for (i, d) in self.detections.iter().enumerate() {
            match best.get(&d.image_id) {
                Some(&j) if self.detections[j].score >= d.score => {}
                _ => {
                    best.insert(d.image_id, i);
                }
            }
        }
        let keep: BTreeSet<usize> = best.into_values().collect();
        Self {
            provenance: self.provenance.clone(),
            detections: keep
                .into_iter()
                .map(|i| self.detections[i].clone())
                .collect(),
        }
    }
}

pub fn parse_detections(path: &Path) -> Result<DetectionSet, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    DetectionSet::from_json_str(&text)
}

pub fn write_detections(d: &DetectionSet, path: &Path) -> std::io::Result<()> {
    fs::write(path, d.to_json_string())
}
