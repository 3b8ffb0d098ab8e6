//! Pixel-level coordinate tracking through image edits, dense patch
//! supervision derived from it, contrastive losses with exact gradients,
//! and retrieval evaluation for image copy detection.

pub mod coord_table;
pub mod edit_ops;
pub mod error;
pub mod grad_suite;
pub mod heatmap;
pub mod image;
pub mod loss_kernel;
pub mod matrix;
pub mod retrieval_eval;
pub mod rng;
pub mod sampling;
pub mod supervision;
pub mod synth;
pub mod tokens;
pub mod toy_encoder;

pub use coord_table::{Coord, CoordTable, Dims};
pub use edit_ops::{apply_edit, apply_pipeline, make_pair, EditOp, EditPipeline, EditedPair};
pub use error::{Error, ErrorClass, Result};
pub use image::Image;
pub use loss_kernel::{LossResult, Objective};
pub use matrix::{Matrix, TokenMatrix};
pub use retrieval_eval::{GroundTruth, Metrics, ScoredPair};
pub use supervision::{PatchGrid, TargetDistribution};
pub use toy_encoder::ToyEncoderConfig;
