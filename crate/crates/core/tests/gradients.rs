use stfm::diffengine::gradcheck::check_gradients;
use stfm::diffengine::{Graph, Matrix};
use stfm::embedding::DiagonalIndex;
use stfm::model::{ModelConfig, Variant};
use stfm::selftest::{gradient_suite, invariant_suite, kernel_gradient_suite, network_gradient_check, GRAD_TOL};
use stfm::training::total_loss;

mod common;

#[test]
fn every_kernel_matches_finite_differences() {
    for seed in [1, 2, 3] {
        for check in kernel_gradient_suite(seed).unwrap() {
            assert!(check.passed, "seed {seed}: {} rel error {:e}", check.name, check.value);
        }
    }
}

#[test]
fn full_v1_graph_matches_finite_differences() {
    let cfg = ModelConfig {
        hidden: 8,
        ..ModelConfig::new(6, 8, 4)
    };
    let check = network_gradient_check(&cfg, 5).unwrap();
    assert!(check.value < GRAD_TOL, "{} rel error {:e}", check.name, check.value);
}

#[test]
fn ablated_networks_match_finite_differences() {
    let base = ModelConfig {
        hidden: 8,
        dropout_rate: 0.0,
        ..ModelConfig::new(4, 7, 3)
    };
    let variants = [
        ModelConfig { use_attention: false, ..base },
        ModelConfig { use_trend: false, ..base },
        ModelConfig { use_season: false, use_trend: false, ..base },
        ModelConfig { variant: Variant::Stfm, use_attention: false, ..base },
    ];
    for cfg in variants {
        let check = network_gradient_check(&cfg, 8).unwrap();
        assert!(check.passed, "{} rel error {:e}", check.name, check.value);
    }
}

#[test]
fn composite_loss_matches_finite_differences() {
    for seed in 0..5 {
        let x = common::random_matrix(seed, 4, 5);
        let target = common::random_matrix(seed + 100, 4, 5);
        let mask = DiagonalIndex::new(5, 4).known_mask();
        let anchor = 0.3 * seed as f64 - 0.5;
        let report = check_gradients(&[("out".to_string(), x)], 1e-6, |g: &mut Graph, p| {
            Ok(total_loss(g, p[0], &target, &mask, anchor, 1.0, 0.7)?.total)
        })
        .unwrap();
        assert!(report.passes(GRAD_TOL), "seed {seed}: {:e}", report.max_rel_error());
    }
}

#[test]
fn gradient_suite_passes_on_other_seeds() {
    for check in gradient_suite(21).unwrap() {
        assert!(check.passed, "{} rel error {:e}", check.name, check.value);
    }
}

#[test]
fn invariant_suite_passes() {
    for check in invariant_suite(4).unwrap() {
        assert!(check.passed, "{}: {:e}", check.name, check.value);
    }
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let mut g = Graph::new();
    let a = g.parameter("a", Matrix::filled(2, 2, 1.0));
    let _unused = g.parameter("unused", Matrix::filled(1, 3, 1.0));
    let loss = g.sum_squares(a).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get("unused").unwrap(), &Matrix::zeros(1, 3));
}
