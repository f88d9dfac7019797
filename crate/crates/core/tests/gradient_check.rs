mod common;

use common::TOL;

#[test]
fn score_model_gradients_match_finite_differences() {
    let worst = common::score_model_worst(100);
    assert!(worst < TOL, "max relative error {worst}");
}

#[test]
fn leaky_mlp_gradients_match_finite_differences() {
    let worst = common::leaky_mlp_worst(100);
    assert!(worst < TOL, "max relative error {worst}");
}

#[test]
fn dsm_loss_gradients_match_finite_differences() {
    let worst = common::dsm_loss_worst(100);
    assert!(worst < TOL, "max relative error {worst}");
}
