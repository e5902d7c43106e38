mod common;

use common::{grad_error, GRAD_TOLERANCE, LAYER_KINDS};

fn sweep(kind: &str) {
    for seed in 0..20u64 {
        let e = grad_error(kind, seed);
        assert!(e < GRAD_TOLERANCE, "{kind} seed {seed}: relative error {e:e}");
    }
}

#[test]
fn affine() {
    sweep("affine");
}

#[test]
fn sigmoid() {
    sweep("sigmoid");
}

#[test]
fn relu() {
    sweep("relu");
}

#[test]
fn softmax_cross_entropy() {
    sweep("softmax-ce-head");
}

#[test]
fn mse() {
    sweep("mse-head");
}

#[test]
fn lhuc_scale() {
    sweep("lhuc-scale");
}

#[test]
fn context_splice() {
    sweep("context-splice");
}

#[test]
fn online_average() {
    sweep("online-average");
}

#[test]
fn every_kind_is_covered() {
    assert_eq!(LAYER_KINDS.len(), 8);
    for k in LAYER_KINDS {
        assert!(grad_error(k, 99).is_finite());
    }
}
