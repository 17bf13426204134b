use proptest::prelude::*;
use sns_cli::config::{ExperimentConfig, FieldSpec, ModesSpec, NoiseSpec};
use sns_core::spectral::ModeAmplitude;

proptest! {
    #[test]
    fn config_round_trips_losslessly(
        seed in any::<u64>(),
        nu in 1e-3f64..1e3,
        dt in 1e-6f64..1e-1,
        q in prop::collection::vec(0.0f64..10.0, 1..12),
        z in prop::collection::vec(-1e3f64..1e3, 0..5),
        modes in prop::collection::vec((-8i32..=8, -8i32..=8, any::<f64>().prop_filter("finite", |x| x.is_finite()), -1.0f64..1.0), 0..6),
        forced in any::<bool>(),
    ) {
        let mut c = ExperimentConfig::default();
        c.seed = seed;
        c.physics.nu = nu;
        c.integrator.dt = dt;
        c.noise = NoiseSpec::PerMode { q };
        c.estimators.z_norms = z;
        c.estimators.forced_failure = forced;
        c.initial.x0 = FieldSpec::Modes(ModesSpec {
            modes: modes.into_iter().map(|(k1, k2, re, im)| ModeAmplitude { k: [k1, k2], re, im }).collect(),
        });
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_json(), c.to_json());
    }
}
