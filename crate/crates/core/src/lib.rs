//! Synthetic chest radiographs from CT volumes and cross-modal mask transfer.
//!
//! The crate is organised along the processing chain:
//!
//! - [`io`]: MetaImage-style volume files, raw float rasters with JSON
//!   sidecars, and binary PGM masks.
//! - [`prep`]: Hounsfield/attenuation conversion, isotropic resampling and
//!   field-of-view truncation checks.
//! - [`projector`]: point-source cone-beam line integrals by exact voxel
//!   traversal, projected binary and depth masks.
//! - [`registration`]: lung-ROI mutual-information affine registration,
//!   candidate selection and mask warping.
//! - [`metrics`]: Dice overlap and rank-based ROC-AUC with report tables.
//! - [`pipeline`]: manifest ingestion, CT/XR pairing, the projection sweep,
//!   transfer, manual-edit round trip and the aggregated run report.
//!
//! Volumes use x-fastest ordering throughout: linear index
//! `x + nx * (y + ny * z)`. Axes follow the LPS patient convention
//! (x towards patient left, y towards posterior, z towards head).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod prep;
pub mod projector;
pub mod raster;
pub mod registration;
pub mod volume;

pub use error::{DrrError, Result};
pub use geometry::{ProjectionGeometry, View};
pub use raster::{Gray8, Image2D, ImageKind, Mask2D};
pub use volume::{ByteOrder, CtVolume, ElementKind, MaskVolume, ValueKind, VolumeHeader};
