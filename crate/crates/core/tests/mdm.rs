use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ringsim_core::mdm::{
    alpha_from_er, compensate_mixing, extinction_ratio, model_extinction_db, InterferometerModel, ModeMixing,
};
use ringsim_core::seeds;

const WINDOW: (f64, f64) = (1540.0, 1560.0);
const DL: f64 = 1.2e6;

fn measured_er(alpha: f64, noise_db: f64, seed: u64) -> f64 {
    let s = InterferometerModel::new(alpha, DL)
        .unwrap()
        .spectrum(WINDOW, 0.01, 1.0, noise_db, seed)
        .unwrap();
    extinction_ratio(&s).unwrap()
}

#[test]
fn extinction_peaks_at_balanced_coupling() {
    let alphas: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let er: Vec<f64> = alphas.iter().map(|&a| model_extinction_db(a)).collect();
    let max = er.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(er[50], max);
    assert_eq!(er[0], 0.0);
    assert_eq!(er[100], 0.0);
    assert!(er.iter().all(|v| *v >= 0.0));
    // rising towards the middle from either end
    for i in 0..50 {
        assert!(er[i + 1] >= er[i] && er[99 - i] >= er[100 - i]);
    }

    let fitted: Vec<f64> = alphas.iter().map(|&a| measured_er(a, 0.0, 0)).collect();
    let fmax = fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((fitted[50] - fmax).abs() < 1e-6, "{} vs {fmax}", fitted[50]);
    assert!(fitted[0] < 1e-6 && fitted[100] < 1e-6);
}

proptest! {
    #[test]
    fn transmission_is_periodic_in_wavenumber(alpha in 0.0f64..=1.0, k in 1i32..5, lam in 1540.0f64..1560.0) {
        let m = InterferometerModel::new(alpha, DL).unwrap();
        // one period in 1/λ is 1/ΔL
        let nu = 1.0 / lam + k as f64 / DL;
        prop_assert!((m.transmission(lam) - m.transmission(1.0 / nu)).abs() < 1e-9);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&m.transmission(lam)));
    }

    #[test]
    fn coupling_is_mirror_symmetric(alpha in 0.0f64..=1.0, lam in 1540.0f64..1560.0) {
        let a = InterferometerModel::new(alpha, DL).unwrap();
        let b = InterferometerModel::new(1.0 - alpha, DL).unwrap();
        prop_assert!((a.transmission(lam) - b.transmission(lam)).abs() < 1e-12);
    }

    #[test]
    fn model_er_inverts(alpha in 0.0f64..0.48) {
        let (lo, hi) = alpha_from_er(model_extinction_db(alpha));
        prop_assert!((lo - alpha).abs() < 1e-9);
        prop_assert!((lo + hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compensation_preserves_norm_and_undoes_mixing(seed in 0u64..10_000, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ModeMixing::random(n, &mut rng);
        let w: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64 - 1.0, 0.5 * i as f64)).collect();
        let pre = compensate_mixing(&m, &w).unwrap();
        let norm = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>();
        prop_assert!((norm(&pre) - norm(&w)).abs() < 1e-9 * (1.0 + norm(&w)));
        let out = m.apply(&pre).unwrap();
        for (a, b) in out.iter().zip(&w) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }
}

#[test]
fn noisy_coupling_recovered_within_tolerance() {
    for alpha in [0.2f64, 0.3, 0.4, 0.5, 0.7] {
        let truth = alpha.min(1.0 - alpha);
        for k in 0..50 {
            let seed = seeds::indexed_seed(seeds::substream_seed(k, seeds::NOISE), 0);
            let (lo, _) = alpha_from_er(measured_er(alpha, 0.2, seed));
            assert!((lo - truth).abs() <= 0.05, "alpha {alpha} seed {k}: {lo}");
        }
    }
}
