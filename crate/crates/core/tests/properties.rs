use proptest::prelude::*;

use ctxid::diffnet::{backward, forward, init_params, interpolate_params, Activation, MlpSpec};
use ctxid::systems::{rk4_step, spring_derivative, spring_energy, SpringParams};

fn spec_strategy() -> impl Strategy<Value = MlpSpec> {
    prop::collection::vec(1usize..=6, 2..=4).prop_map(|s| MlpSpec::new(s, Activation::Silu).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear_in_upstream(spec in spec_strategy(), seed in any::<u64>(), raw in prop::collection::vec(-2.0f64..2.0, 18)) {
        let p = init_params(&spec, seed);
        let x = &raw[..spec.input_dim()];
        let u1 = &raw[6..6 + spec.output_dim()];
        let u2 = &raw[12..12 + spec.output_dim()];
        let sum: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| a + b).collect();
        let (g1, g2, g) = (backward(&spec, &p, x, u1).unwrap(), backward(&spec, &p, x, u2).unwrap(), backward(&spec, &p, x, &sum).unwrap());
        for ((a, b), c) in g1.wrt_params.iter().chain(&g1.wrt_inputs).zip(g2.wrt_params.iter().chain(&g2.wrt_inputs)).zip(g.wrt_params.iter().chain(&g.wrt_inputs)) {
            prop_assert!((a + b - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn forward_is_bitwise_repeatable(spec in spec_strategy(), seed in any::<u64>(), raw in prop::collection::vec(-3.0f64..3.0, 6)) {
        let p = init_params(&spec, seed);
        let x = &raw[..spec.input_dim()];
        prop_assert_eq!(forward(&spec, &p, x).unwrap(), forward(&spec, &p, x).unwrap());
    }

    #[test]
    fn interpolation_stays_between_endpoints(spec in spec_strategy(), s1 in any::<u64>(), s2 in any::<u64>(), lambda in 0.0f64..=1.0) {
        let (a, b) = (init_params(&spec, s1), init_params(&spec, s2));
        let m = interpolate_params(&a, &b, lambda).unwrap();
        for ((x, y), v) in a.values().iter().zip(b.values()).zip(m.values()) {
            prop_assert!(*v >= x.min(*y) - 1e-15 && *v <= x.max(*y) + 1e-15);
        }
    }

    #[test]
    fn spring_energy_is_nearly_conserved_per_step(
        m in prop::array::uniform5(0.75f64..1.25),
        s in prop::array::uniform4(-1.0f64..1.0),
    ) {
        let p = SpringParams { m1: m[0], m2: m[1], k1: m[2], k2: m[3], k3: m[4] };
        let next = rk4_step(|x| spring_derivative(&p, x), &s, 1e-3).unwrap();
        let (e0, e1) = (spring_energy(&p, &s), spring_energy(&p, &next));
        prop_assert!((e1 - e0).abs() <= 1e-12 * (1.0 + e0));
    }
}
