//! Cooperative perception through a remote vehicle's onboard vision-language
//! model, and the evaluation harness that measures how well such a model
//! detects and localizes pedestrians.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: scene manifests with ground-truth boxes and lighting tags.
//! - [`geometry`]: unit-frame boxes, overlap recall, IoU.
//! - [`stats`]: confusion matrices and localization aggregates.
//! - [`gateway`]: OpenAI-compatible vision client and a scripted mock.
//! - [`perception`]: the prompt registry and reply parsers.
//! - [`experiments`]: binary detection, localization, prompt comparison,
//!   run consistency and low-light analysis.
//! - [`v2v`]: message interchange format, ego/remote dialogue, link model.
//! - [`report`]: CSV, JSON Lines and SVG rendering of results.

pub mod dataset;
pub mod experiments;
pub mod gateway;
pub mod geometry;
pub mod perception;
pub mod report;
pub mod stats;
pub mod v2v;

pub use dataset::{apply_curation_filter, load_manifest, PixelBBox, SceneRecord, SceneSet};
pub use gateway::{Gateway, MockBackend, QueryParams, RawResponse, VisionBackend};
pub use geometry::{iou, overlap_recall, overlaps, CanonicalBBox, NormalizedBBox};
pub use perception::{DetectionOutcome, FailureKind, ParsedDetection, PromptId};
pub use stats::{ConfusionMatrix, DetectionStats, LocalizationSummary};
pub use v2v::{LinkModel, V2VMessage};
