mod common;

use amos_core::{build_relu_unit, evaluate_unit, parameter_count, AmosUnitParams, GateKind};
use common::{naive_unit, quantized_relu, random_unit, rng};
use proptest::prelude::*;

#[test]
fn table_of_parameter_counts() {
    assert_eq!(parameter_count(1, 8), 52);
    assert_eq!(parameter_count(1, 10), 75);
    assert_eq!(parameter_count(1, 12), 102);
    assert_eq!(parameter_count(2, 40), 940);
}

#[test]
fn relu_staircase_matches_floor_oracle_exactly() {
    for k in [1, 3, 8, 12] {
        for alpha in [1.0, 8.0, 2f64.powi(k as i32)] {
            let p = build_relu_unit(k, alpha).unwrap();
            for n in 0..=2000 {
                let x = -alpha + 2.0 * alpha * n as f64 / 2000.0;
                assert_eq!(p.output(x, None).unwrap(), quantized_relu(x, k, alpha), "K={k} alpha={alpha} x={x}");
            }
        }
    }
}

#[test]
fn unit_json_round_trip() {
    let mut p = random_unit(&mut rng(3), 2, 5);
    p.kind = Some(GateKind::Mult);
    p.domain = Some(vec![[-1.0, 1.0], [-1.0, 1.0]]);
    let back = AmosUnitParams::from_json(&p.to_json()).unwrap();
    assert_eq!(back, p);
}

proptest! {
    #[test]
    fn evaluate_matches_definition(seed in any::<u64>(), k in 1usize..12, arity in 1usize..=2, x in -3.0f64..3.0, x2 in -3.0f64..3.0) {
        let p = random_unit(&mut rng(seed), arity, k);
        let x2 = (arity == 2).then_some(x2);
        let got = evaluate_unit(&p, x, x2).unwrap();
        let (y, z) = naive_unit(&p, x, x2.unwrap_or(0.0));
        prop_assert_eq!(got.y, y);
        prop_assert_eq!(&got.z, &z);
        prop_assert_eq!(got.spike_count, z.iter().filter(|&&s| s == 1).count());
    }

    #[test]
    fn relu_error_within_one_quantum(k in 1usize..=16, log_alpha in -3i32..12, x in -1.0f64..1.0) {
        let alpha = 2f64.powi(log_alpha);
        let x = x * alpha;
        let y = build_relu_unit(k, alpha).unwrap().output(x, None).unwrap();
        let err = x.max(0.0) - y;
        prop_assert!(err >= 0.0);
        prop_assert!(err <= alpha * 2f64.powi(-(k as i32)));
    }

    #[test]
    fn relu_output_is_monotone(k in 1usize..10, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let p = build_relu_unit(k, 2.0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(p.output(lo, None).unwrap() <= p.output(hi, None).unwrap());
    }
}
