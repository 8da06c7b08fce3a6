//! Hierarchical dynamic masks.
//!
//! Learned perturbation masks that explain a differentiable classifier's
//! decision. A DM block trains small benchmark mask grids, grows finer
//! auxiliary grids guided by their coarser predecessors, stacks them and
//! thresholds the result into an overlay mask. HDM chains several DM blocks,
//! suppressing the regions already found before each new stage, and learns
//! a monotone weighting of the stage masks.
//!
//! The crate also ships the evaluation harness (average drop and increase,
//! deletion and insertion curves, energy proportion), a saliency file
//! format, JET rendering and a synthetic planted-patch testbed with a
//! closed-form linear classifier.

pub mod config;
pub mod dynamic_mask;
pub mod error;
pub mod gateway;
pub mod hierarchy;
pub mod io;
pub mod mask_math;
pub mod metrics;
pub mod render;
pub mod testbed;

pub use config::Preset;
pub use dynamic_mask::{run_dm, CascadeEntry, DmConfig, DmResult, StackMode};
pub use error::{Error, Result};
pub use gateway::{
    predict, preprocess, target_score_and_gradient, Classifier, Prediction, PreparedImage,
    PreprocessConfig, RawImage, ScoreKind, Serialized,
};
pub use hierarchy::{explain, explain_prepared, HdmConfig, HdmResult};
pub use mask_math::{normalize, upsample, upsample_adjoint, MaskGrid};
pub use metrics::SaliencyRecord;
