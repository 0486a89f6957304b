mod common;

use common::*;

fn assert_report(r: GradReport) {
    eprintln!(
        "{}: max rel err {:.2e} over {} coords ({} at kinks)",
        r.name, r.max_rel, r.checked, r.kinks
    );
    assert!(r.passed(), "{r:?}");
}

#[test]
fn dense() {
    assert_report(check_dense(1));
}

#[test]
fn relu_mlp() {
    assert_report(check_mlp(2));
}

#[test]
fn group_max_pooling() {
    assert_report(check_group_max(3));
}

#[test]
fn chamfer_distance() {
    assert_report(check_chamfer(4));
}

#[test]
fn entropy_model() {
    assert_report(check_entropy(5));
}

#[test]
fn decoder() {
    assert_report(check_decoder(6));
}

#[test]
fn encoder() {
    assert_report(check_encoder(7));
}

#[test]
fn composed_objective() {
    for seed in [8, 9] {
        assert_report(check_batch_loss(seed));
    }
}

#[test]
fn upsampler_objective() {
    assert_report(check_upsampler(10));
}

#[test]
fn kink_detection() {
    // |x| and max(x, 0) near 0 are not differentiable; x^2 is
    assert!(central_difference(|x: f64| x.abs(), 0.0, 1e-4).is_none());
    assert!(central_difference(|x: f64| x.max(0.0), 0.0, 1e-4).is_none());
    assert!(central_difference(|x: f64| x.max(0.0), 3e-5, 1e-4).is_none());
    assert!(central_difference(|x: f64| x.max(0.0), 3e-4, 1e-4).is_some());
    let d = central_difference(|x: f64| x * x, 0.3, 1e-4).unwrap();
    assert!((d - 0.6).abs() < 1e-9);
}
