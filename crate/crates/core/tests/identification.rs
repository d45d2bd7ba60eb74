use follower_lab_core::model::NoiseModel;
use follower_lab_core::sysid::{fit_structured, fit_unstructured, FitOptions};
use follower_lab_core::trajectory::gen_filtered_noise;
use follower_lab_core::{build_state_space, simulate, EnvParams, FollowerParams, NoiseTrajSpec, SessionRecord, SimConfig};
use proptest::prelude::*;

fn record(p: &FollowerParams, seed: u64, duration_s: f64, sigma: Option<f64>) -> SessionRecord {
    let mut spec = NoiseTrajSpec::new(seed, vec![(-0.15, 0.15)]);
    spec.duration_s = duration_s;
    let u = gen_filtered_noise(&spec).unwrap();
    let model = build_state_space(p, &EnvParams::free_space()).unwrap();
    let config = SimConfig {
        noise: sigma.map(|s| NoiseModel { sigma_pos: s, seed: seed + 1000, force_noise_enabled: false }),
        ..SimConfig::default()
    };
    simulate(&model, &u, &config).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn guess(p: &FollowerParams) -> FollowerParams {
    FollowerParams::new(p.mass, 0.5 * p.damping, 0.5 * p.stiffness).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noise_free_fit_recovers_ratios(m in 0.5f64..5.0, km in 4.0f64..60.0, zeta in 0.3f64..1.0, seed in 0u64..1000) {
        let wn = km.sqrt();
        let truth = FollowerParams::new(m, 2.0 * zeta * wn * m, km * m).unwrap();
        let rec = record(&truth, seed, 60.0, None);
        let fit = fit_structured(&rec, 0, &guess(&truth), &FitOptions::default()).unwrap();
        let p = fit.params().unwrap();
        prop_assert!(fit.converged, "{:?}", fit.termination);
        prop_assert!(p.mass > 0.0 && p.damping > 0.0 && p.stiffness > 0.0);
        prop_assert!(rel(p.stiffness_per_mass(), truth.stiffness_per_mass()) < 5e-3);
        prop_assert!(rel(p.damping_per_mass(), truth.damping_per_mass()) < 5e-3);
    }

    #[test]
    fn accepted_steps_never_raise_the_cost(km in 4.0f64..300.0, zeta in 0.2f64..1.5, seed in 0u64..1000) {
        let wn = km.sqrt();
        let truth = FollowerParams::new(1.0, 2.0 * zeta * wn, km).unwrap();
        let rec = record(&truth, seed, 30.0, Some(0.007));
        let init = FollowerParams::new(1.0, 5.0, 50.0).unwrap();
        let fit = fit_structured(&rec, 0, &init, &FitOptions::default()).unwrap();
        prop_assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", fit.cost_history);
        let p = fit.params().unwrap();
        prop_assert!(p.mass > 0.0 && p.damping > 0.0 && p.stiffness > 0.0);
    }
}

/// Noisy fit of the reference follower. Over 20 seeds of this setup the
/// k/m estimate scatters by about 1% and b/m by about 13% (one sd), so b/m
/// is held to three of those.
#[test]
fn noisy_reference_follower() {
    let truth = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
    let init = FollowerParams::new(1.0, 10.0, 100.0).unwrap();
    for seed in [1, 2, 3] {
        let rec = record(&truth, seed, 240.0, Some(0.007));
        let fit = fit_structured(&rec, 0, &init, &FitOptions::default()).unwrap();
        let p = fit.params().unwrap();
        assert!(fit.converged);
        assert!(rel(p.stiffness_per_mass(), 270.0) < 0.05, "k/m {}", p.stiffness_per_mass());
        assert!(rel(p.damping_per_mass(), 20.0) < 0.4, "b/m {}", p.damping_per_mass());
    }
}

#[test]
fn unstructured_fit_of_noisy_axis_is_stable() {
    let truth = FollowerParams::new(1.0, 8.0, 40.0).unwrap();
    let rec = record(&truth, 4, 60.0, Some(0.007));
    let init = build_state_space(&FollowerParams::new(1.0, 5.0, 30.0).unwrap(), &EnvParams::free_space()).unwrap();
    let fit = fit_unstructured(&rec, &init, &FitOptions::unstructured()).unwrap();
    assert!(fit.converged, "{:?}", fit.termination);
    match &fit.model {
        follower_lab_core::sysid::FittedModel::Unstructured { model, .. } => {
            assert!(model.spectral_abscissa() < 0.0);
        }
        other => panic!("unexpected model {other:?}"),
    }
    assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
}
