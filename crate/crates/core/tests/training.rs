use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ringsim_core::device::NetworkSpec;
use ringsim_core::training::{
    accuracy, forward, generate_xor, gradients, train_from, truth_model, virtual_surface, virtual_to_physical,
    CostMode, NetworkCircuit, NetworkSim, N_PARAMS,
};
use ringsim_core::{Activation, Error, TrainingConfig, VirtualParams};

fn cost(vp: &VirtualParams, act: &Activation, mode: CostMode, x: [f64; 2], d: f64) -> f64 {
    mode.cost(d, forward(vp, act, x).1)
}

fn params(seed: u64) -> VirtualParams {
    VirtualParams::random(&mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_central_differences(
        seed in 0u64..10_000,
        x0 in 0.0f64..0.8,
        x1 in 0.0f64..0.8,
        pos in any::<bool>(),
        ce in any::<bool>(),
    ) {
        let act = Activation::default();
        let mode = if ce { CostMode::SoftmaxCrossEntropy } else { CostMode::SquaredError };
        let d = if pos { 1.0 } else { -1.0 };
        let vp = params(seed);
        let g = gradients(&vp, &act, mode, [x0, x1], d).to_array();
        let base = vp.to_array();
        let h = 1e-6;
        for i in 0..N_PARAMS {
            let mut up = base;
            let mut dn = base;
            up[i] += h;
            dn[i] -= h;
            let num = (cost(&VirtualParams::from_array(up), &act, mode, [x0, x1], d)
                - cost(&VirtualParams::from_array(dn), &act, mode, [x0, x1], d))
                / (2.0 * h);
            prop_assert!(
                (num - g[i]).abs() <= 1e-5 * (1.0 + num.abs()),
                "param {i}: analytic {} numeric {num}", g[i]
            );
        }
    }

    #[test]
    fn positive_output_scaling_keeps_every_sign(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let act = Activation::default();
        let vp = params(seed);
        let a = virtual_surface(&vp, &act, 16);
        let b = virtual_surface(&vp.scale_output(c), &act, 16);
        prop_assert_eq!(a.sign(), b.sign());
    }

    #[test]
    fn activation_slope_sign_follows_the_quadratic(x in -6.0f64..20.0) {
        let act = Activation::default();
        let df = act.df(x);
        if x >= 0.0 {
            prop_assert!(df >= 0.0, "df({x}) = {df}");
        } else if x > -act.ib {
            prop_assert!(df <= 0.0, "df({x}) = {df}");
        }
        prop_assert!(act.f(x).is_ok());
        let fx = act.f(x).unwrap();
        prop_assert!((1.0 - act.atten - 1e-12..=1.0).contains(&fx));
    }

    #[test]
    fn physical_weights_reproduce_virtual_ones(seed in 0u64..10_000) {
        let circuit = NetworkCircuit::default();
        let vp = params(seed);
        // shrink into the realizable range
        let vp = VirtualParams {
            w0: vp.w0.map(|r| r.map(|w| w.clamp(-2.0, 2.0))),
            w1: vp.w1.map(|w| w.clamp(-1.3, 1.3)),
            ..vp
        };
        let p = virtual_to_physical(&vp, &circuit).unwrap();
        let (g1, g2) = (circuit.hidden_gain(), circuit.output_gain());
        for k in 0..3 {
            prop_assert!((p.w31[k] * g2 - vp.w1[k]).abs() < 1e-12);
            for j in 0..2 {
                prop_assert!((p.w23[k][j] * g1 - vp.w0[k][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn activation_rejects_currents_below_the_bias() {
    let act = Activation::default();
    assert!(matches!(act.f(-act.ib - 1e-9), Err(Error::Domain(_))));
    assert!(act.f(-act.ib).is_ok());
    // on resonance at x = 0 the transmission is at its minimum
    assert!((act.f(0.0).unwrap() - (1.0 - act.atten)).abs() < 1e-12);
}

#[test]
fn swapping_classes_flips_the_decision_surface() {
    let act = Activation::default();
    let data = generate_xor(4);
    let cfg = TrainingConfig {
        epochs: 200,
        seed: 4,
        ..TrainingConfig::default()
    };
    let init = params(4);
    let a = train_from(init, &data, &cfg, &act).unwrap();
    let b = train_from(init.scale_output(-1.0), &data.swapped_labels(), &cfg, &act).unwrap();
    let (sa, sb) = (virtual_surface(&a.params, &act, 32).sign(), virtual_surface(&b.params, &act, 32).sign());
    let flipped = sa
        .iter()
        .flatten()
        .zip(sb.iter().flatten())
        .filter(|(x, y)| **x == -**y)
        .count();
    assert!(flipped as f64 >= 0.95 * 32.0 * 32.0, "{flipped} of 1024 flipped");
    let swapped_acc = accuracy(&b.params, &act, &data.swapped_labels());
    assert!((swapped_acc - accuracy(&a.params, &act, &data)).abs() < 1e-12);
}

#[test]
fn simulated_network_tracks_virtual_hidden_currents() {
    let vp = VirtualParams::sweep_reference();
    let circuit = NetworkCircuit::default();
    let pp = virtual_to_physical(&vp, &circuit).unwrap();
    let device = NetworkSpec::default().build().unwrap();
    let model = truth_model(&device);
    let sim = NetworkSim::new(&device, &model, circuit, pp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let drive = [rng.random_range(0.0..0.15), rng.random_range(0.0..0.15)];
        let state = sim.run(drive).unwrap();
        let target = vp.hidden_drive(state.x0);
        for (a, b) in state.hidden_currents.iter().zip(&target) {
            assert!((a - b).abs() <= 0.05, "drive {drive:?}: {a} vs {b}");
        }
    }
}

#[test]
fn training_is_repeatable() {
    let act = Activation::default();
    let data = generate_xor(1);
    let cfg = TrainingConfig {
        epochs: 50,
        seed: 9,
        ..TrainingConfig::default()
    };
    let a = ringsim_core::training::train(&data, &cfg, &act).unwrap();
    let b = ringsim_core::training::train(&data, &cfg, &act).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curve.len(), 51);
}

#[test]
fn oversized_weights_are_unrealizable() {
    let vp = VirtualParams {
        w1: [5.0, 0.0, 0.0],
        ..VirtualParams::sweep_reference()
    };
    assert!(matches!(
        virtual_to_physical(&vp, &NetworkCircuit::default()),
        Err(Error::Unrealizable(_))
    ));
}
