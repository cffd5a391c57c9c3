mod common;

use common::gradcheck::{check_all_ops, check_transformer, TOLERANCE};

#[test]
fn every_op_matches_central_differences() {
    for seed in [1, 2] {
        for r in check_all_ops(seed).unwrap() {
            assert!(r.passed(), "seed {seed}: {} worst relative error {:e}", r.name, r.worst);
        }
    }
}

#[test]
fn transformer_parameter_gradients() {
    for (seed, rope) in [(3, false), (4, true)] {
        let worst = check_transformer(seed, rope).unwrap();
        assert!(worst < TOLERANCE, "rope = {rope}: worst relative error {worst:e}");
    }
}
