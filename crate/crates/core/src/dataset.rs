//! Scene manifests: the ground-truth side of every experiment.
//!
//! A manifest is UTF-8 JSON Lines, one scene per line, with exactly these keys:
//!
//! ```text
//! {"scene_id": "s001", "image_path": "img/s001.jpg", "width": 1920, "height": 1280,
//!  "has_pedestrian": true, "gt_boxes": [[880, 410, 960, 650]], "tags": ["dusk"]}
//! ```
//!
//! Blank lines are ignored. Every violation in the file is collected before
//! the load is aborted, so a single run reports all problems at once.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Tags that mark difficult lighting conditions.
pub const LOW_LIGHT_TAGS: [&str; 4] = ["dusk", "sunset", "shade", "solar_glare"];

/// Controlled tag vocabulary used by the bundled fixtures and the curation filter.
pub const TAG_VOCABULARY: [&str; 8] = [
    "dusk",
    "sunset",
    "shade",
    "solar_glare",
    "night",
    "day",
    "single_pedestrian",
    "crosswalk_center",
];

const MANIFEST_KEYS: [&str; 7] = [
    "scene_id",
    "image_path",
    "width",
    "height",
    "has_pedestrian",
    "gt_boxes",
    "tags",
];

/// Ground-truth box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PixelBBox {
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        let (w, h) = (f64::from(width), f64::from(height));
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= w
            && self.y_max <= h
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub has_pedestrian: bool,
    pub gt_boxes: Vec<PixelBBox>,
    pub tags: BTreeSet<String>,
}

impl SceneRecord {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn is_low_light(&self) -> bool {
        LOW_LIGHT_TAGS.iter().any(|t| self.has_tag(t))
    }

    fn check(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err("width and height must be positive".into());
        }
        if self.has_pedestrian == self.gt_boxes.is_empty() {
            return Err(if self.has_pedestrian {
                "has_pedestrian is true but gt_boxes is empty".into()
            } else {
                "has_pedestrian is false but gt_boxes is not empty".into()
            });
        }
        for (i, b) in self.gt_boxes.iter().enumerate() {
            if !b.fits_within(self.width, self.height) {
                return Err(format!(
                    "gt_boxes[{i}] {:?} is empty or exceeds the {}x{} image",
                    [b.x_min, b.y_min, b.x_max, b.y_max],
                    self.width,
                    self.height
                ));
            }
        }
        Ok(())
    }
}

/// Validated scenes, split into pedestrian and control subsets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneSet {
    pub positives: Vec<SceneRecord>,
    pub negatives: Vec<SceneRecord>,
}

impl SceneSet {
    /// Splits records by `has_pedestrian`, preserving order. Fails on a
    /// duplicate `scene_id` or any record invariant.
    pub fn from_records(records: Vec<SceneRecord>) -> Result<Self, ManifestError> {
        let mut violations = Vec::new();
        let mut seen = HashSet::new();
        let mut set = SceneSet::default();
        for record in records {
            if let Err(reason) = record.check() {
                violations.push(Violation::Invariant {
                    scene_id: record.scene_id.clone(),
                    reason,
                });
                continue;
            }
            if !seen.insert(record.scene_id.clone()) {
                violations.push(Violation::Invariant {
                    scene_id: record.scene_id.clone(),
                    reason: "duplicate scene_id".into(),
                });
                continue;
            }
            if record.has_pedestrian {
                set.positives.push(record);
            } else {
                set.negatives.push(record);
            }
        }
        if violations.is_empty() {
            Ok(set)
        } else {
            Err(ManifestError::Invalid(violations))
        }
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positives followed by negatives.
    pub fn iter(&self) -> impl Iterator<Item = &SceneRecord> {
        self.positives.iter().chain(self.negatives.iter())
    }

    pub fn get(&self, scene_id: &str) -> Option<&SceneRecord> {
        self.iter().find(|s| s.scene_id == scene_id)
    }

    /// `(scene_id, has_pedestrian)` pairs for every scene.
    pub fn labels(&self) -> Vec<(String, bool)> {
        self.iter()
            .map(|s| (s.scene_id.clone(), s.has_pedestrian))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    Invariant {
        scene_id: String,
        reason: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Schema {
                line,
                field,
                message,
            } => write!(f, "line {line}, field `{field}`: {message}"),
            Violation::Invariant { scene_id, reason } => {
                write!(f, "scene `{scene_id}`: {reason}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest rejected with {} violation(s):\n{}", .0.len(), join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reads and validates a manifest file. Relative `image_path`s are kept as
/// written; [`FsImages::for_manifest`] anchors them to the manifest.
pub fn load_manifest(path: &Path) -> Result<SceneSet, ManifestError> {
    if !path.is_file() {
        return Err(ManifestError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

/// Parses manifest text. See the module docs for the format.
pub fn parse_manifest(text: &str) -> Result<SceneSet, ManifestError> {
    let mut violations = Vec::new();
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(idx + 1, line) {
            Ok(record) => records.push(record),
            Err(mut v) => violations.append(&mut v),
        }
    }
    match SceneSet::from_records(records) {
        Ok(set) if violations.is_empty() => Ok(set),
        Ok(_) => Err(ManifestError::Invalid(violations)),
        Err(ManifestError::Invalid(mut more)) => {
            violations.append(&mut more);
            Err(ManifestError::Invalid(violations))
        }
        Err(other) => Err(other),
    }
}

fn parse_line(line: usize, text: &str) -> Result<SceneRecord, Vec<Violation>> {
    let schema = |field: &str, message: String| Violation::Schema {
        line,
        field: field.to_string(),
        message,
    };
    let value: Value = serde_json::from_str(text)
        .map_err(|e| vec![schema("<record>", format!("not valid JSON: {e}"))])?;
    let Value::Object(obj) = value else {
        return Err(vec![schema("<record>", "expected a JSON object".into())]);
    };

    let mut errs = Vec::new();
    for key in obj.keys() {
        if !MANIFEST_KEYS.contains(&key.as_str()) {
            errs.push(schema(key, "unknown key".into()));
        }
    }

    let scene_id = field(&obj, "scene_id", line, &mut errs, |v| {
        v.as_str()
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .ok_or("expected a non-empty string")
    });
    let image_path = field(&obj, "image_path", line, &mut errs, |v| {
        v.as_str().map(PathBuf::from).ok_or("expected a string")
    });
    let dim = |v: &Value| {
        v.as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or("expected a non-negative integer")
    };
    let width = field(&obj, "width", line, &mut errs, dim);
    let height = field(&obj, "height", line, &mut errs, dim);
    let has_pedestrian = field(&obj, "has_pedestrian", line, &mut errs, |v| {
        v.as_bool().ok_or("expected true or false")
    });
    let gt_boxes = field(&obj, "gt_boxes", line, &mut errs, |v| {
        v.as_array()
            .ok_or("expected a list of [x_min, y_min, x_max, y_max]")?
            .iter()
            .map(|b| {
                let nums: Option<Vec<f64>> = b
                    .as_array()
                    .filter(|a| a.len() == 4)
                    .map(|a| a.iter().map(Value::as_f64).collect())
                    .unwrap_or(None);
                match nums.as_deref() {
                    Some(&[x_min, y_min, x_max, y_max]) => Ok(PixelBBox {
                        x_min,
                        y_min,
                        x_max,
                        y_max,
                    }),
                    _ => Err("each box must be a list of 4 numbers"),
                }
            })
            .collect::<Result<Vec<_>, _>>()
    });
    let tags = field(&obj, "tags", line, &mut errs, |v| {
        v.as_array()
            .ok_or("expected a list of strings")?
            .iter()
            .map(|t| {
                t.as_str()
                    .map(str::to_string)
                    .ok_or("expected a list of strings")
            })
            .collect::<Result<BTreeSet<_>, _>>()
    });

    match (
        scene_id,
        image_path,
        width,
        height,
        has_pedestrian,
        gt_boxes,
        tags,
    ) {
        (
            Some(scene_id),
            Some(image_path),
            Some(width),
            Some(height),
            Some(hp),
            Some(gt),
            Some(tags),
        ) if errs.is_empty() => Ok(SceneRecord {
            scene_id,
            image_path,
            width,
            height,
            has_pedestrian: hp,
            gt_boxes: gt,
            tags,
        }),
        _ => Err(errs),
    }
}

fn field<T>(
    obj: &Map<String, Value>,
    key: &str,
    line: usize,
    errs: &mut Vec<Violation>,
    convert: impl FnOnce(&Value) -> Result<T, &'static str>,
) -> Option<T> {
    let Some(value) = obj.get(key) else {
        errs.push(Violation::Schema {
            line,
            field: key.to_string(),
            message: "missing".into(),
        });
        return None;
    };
    match convert(value) {
        Ok(v) => Some(v),
        Err(message) => {
            errs.push(Violation::Schema {
                line,
                field: key.to_string(),
                message: message.into(),
            });
            None
        }
    }
}

/// Serializes one record as a manifest line, keys in schema order.
pub fn manifest_line(record: &SceneRecord) -> String {
    let boxes: Vec<[f64; 4]> = record
        .gt_boxes
        .iter()
        .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max])
        .collect();
    let values: [Value; 7] = [
        record.scene_id.clone().into(),
        record.image_path.to_string_lossy().into_owned().into(),
        record.width.into(),
        record.height.into(),
        record.has_pedestrian.into(),
        serde_json::to_value(boxes).expect("boxes serialize"),
        serde_json::to_value(&record.tags).expect("tags serialize"),
    ];
    let parts: Vec<String> = MANIFEST_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{}:{v}", Value::from(*k)))
        .collect();
    format!("{{{}}}", parts.join(","))
}

/// Supplies the encoded image bytes for a scene.
pub trait ImageSource: Sync {
    fn load(&self, scene: &SceneRecord) -> std::io::Result<Vec<u8>>;
}

/// Reads images from disk, resolving relative paths against `base_dir`.
#[derive(Debug, Clone)]
pub struct FsImages {
    pub base_dir: PathBuf,
}

impl FsImages {
    /// Resolves relative image paths against the manifest's directory.
    pub fn for_manifest(manifest: &Path) -> Self {
        Self {
            base_dir: manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
        }
    }
}

impl ImageSource for FsImages {
    fn load(&self, scene: &SceneRecord) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.base_dir.join(&scene.image_path))
    }
}

/// Stands in the UTF-8 bytes of the image path for the image itself. Only
/// useful with a scripted backend, which never looks at the pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct PathStubImages;

impl ImageSource for PathStubImages {
    fn load(&self, scene: &SceneRecord) -> std::io::Result<Vec<u8>> {
        Ok(scene.image_path.to_string_lossy().into_owned().into_bytes())
    }
}

/// Keeps the positives that carry every required tag and at most `max_boxes`
/// ground-truth boxes. Negatives pass through untouched.
pub fn apply_curation_filter(
    set: &SceneSet,
    required_tags: &BTreeSet<String>,
    max_boxes: Option<usize>,
) -> SceneSet {
    let limit = max_boxes.unwrap_or(usize::MAX);
    SceneSet {
        positives: set
            .positives
            .iter()
            .filter(|s| required_tags.iter().all(|t| s.has_tag(t)) && s.gt_boxes.len() <= limit)
            .cloned()
            .collect(),
        negatives: set.negatives.clone(),
    }
}
