mod common;

use common::nn_checks::*;

#[test]
fn layers_match_brute_force() {
    let rep = oracle_suite(150, 7);
    assert_eq!(rep.cases, 150);
    assert!(rep.passes(ORACLE_TOLERANCE), "{:?}", rep.worst);
}

#[test]
fn gradients_match_finite_differences() {
    let (layers, network) = gradient_suite(20);
    assert!(layers.passes(LAYER_GRAD_TOLERANCE), "{:?}", layers.worst);
    assert!(
        network.passes(NETWORK_GRAD_TOLERANCE),
        "{:?}",
        network.worst
    );
}
