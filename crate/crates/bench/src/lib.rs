//! Shared fixtures for the criterion benchmarks.

use hdm_core::gateway::PreparedImage;
use hdm_core::testbed::{fit_linear, generate_dataset, LinearClassifier, PatchMode};

/// A fitted single-patch testbed model and its first image.
pub fn testbed_fixture() -> (LinearClassifier, PreparedImage) {
    let ds = generate_dataset(5, 4, PatchMode::Single).expect("testbed");
    let model = fit_linear(&ds).expect("fit");
    let x = ds.prepared().expect("prepare").remove(0);
    (model, x)
}
