//! Central-difference checks of every head and embedding at 100 random points.

mod common;

use common::{embedding_gradient_errors, head_gradient_errors, FD_TOL};

#[test]
fn every_head_matches_central_differences() {
    for (name, worst) in head_gradient_errors() {
        assert!(worst < FD_TOL, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn every_embedding_matches_central_differences() {
    for (name, worst) in embedding_gradient_errors() {
        assert!(worst < FD_TOL, "{name}: worst relative error {worst:e}");
    }
}
