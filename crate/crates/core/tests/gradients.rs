mod criteria;

use criteria::gradients::{self, LayerResult, TOL};

fn assert_layer(r: LayerResult) {
    assert!(r.passed(), "{r:?}");
    assert!(r.checked > 4 * r.skipped, "too many kinked coordinates: {r:?}");
}

#[test]
fn conv_matches_finite_differences() {
    assert_layer(gradients::conv(1));
}

#[test]
fn pool_matches_finite_differences() {
    assert_layer(gradients::pool(2));
}

#[test]
fn relu_matches_finite_differences() {
    assert_layer(gradients::relu(3));
}

#[test]
fn fc_matches_finite_differences() {
    assert_layer(gradients::fc(4));
}

#[test]
fn softmax_xent_matches_finite_differences() {
    assert_layer(gradients::softmax_xent_layer(5));
}

#[test]
fn roi_maxpool_matches_finite_differences() {
    assert_layer(gradients::roi(6));
}

#[test]
fn tolerance_is_one_in_a_thousand() {
    assert_eq!(TOL, 1e-3);
    assert_eq!(gradients::H, 1e-3);
}
