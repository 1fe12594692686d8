//! Turns count-labelled product photos into boxed, occlusion-augmented
//! detection data.
//!
//! Stages: [`proposal`] generates candidate boxes, [`extract`] merges them
//! down to the declared object count, [`confirm`] gates boxes through a
//! classifier, [`occlusion`] builds augmented images from a patch database,
//! [`annotation`] persists VOC XML and manifests, and [`metrics`] scores
//! detections. [`synth`] renders ground-truthed scenes for testing.

pub mod annotation;
pub mod confirm;
pub mod error;
pub mod extract;
pub mod features;
mod fsutil;
pub mod geometry;
pub mod metrics;
pub mod occlusion;
pub mod patchdb;
pub mod proposal;
pub mod raster;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
pub use geometry::{iou, union_box, BBox};
pub use raster::{BinaryMask, RasterImage, Rgb8};
