use follower_lab_core::model::DEFAULT_DT;
use follower_lab_core::trajectory::{gen_fourier, uniform_timestamps, FourierComponent, Provenance};
use follower_lab_core::{
    block_diagonal, build_state_space, simulate, EnvParams, FollowerParams, FourierSpec, InitialState, SimConfig,
    Trajectory,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params_from(mass: f64, wn: f64, zeta: f64) -> FollowerParams {
    FollowerParams::new(mass, 2.0 * zeta * wn * mass, mass * wn * wn).unwrap()
}

fn human_params() -> impl Strategy<Value = FollowerParams> {
    (0.5f64..5.0, 2.0f64..30.0, 0.2f64..2.0).prop_map(|(m, wn, z)| params_from(m, wn, z))
}

fn components() -> impl Strategy<Value = Vec<FourierComponent>> {
    prop::collection::vec(
        (0.0f64..0.1, 0.01f64..0.63, 0.0f64..std::f64::consts::TAU).prop_map(|(amplitude, frequency_hz, phase)| FourierComponent {
            amplitude,
            frequency_hz,
            phase,
        }),
        1..5,
    )
}

fn fourier(axes: Vec<Vec<FourierComponent>>, duration_s: f64) -> Trajectory {
    gen_fourier(&FourierSpec {
        axes,
        duration_s,
        rate_hz: 100.0,
        max_frequency_hz: 0.63,
    })
    .unwrap()
}

fn zero_start() -> SimConfig {
    SimConfig {
        initial: InitialState::Zero,
        ..SimConfig::default()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sum(a: &Trajectory, b: &Trajectory) -> Trajectory {
    let add = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        x.iter().zip(y).map(|(p, q)| p.iter().zip(q).map(|(u, v)| u + v).collect()).collect()
    };
    Trajectory {
        rate_hz: a.rate_hz,
        t: a.t.clone(),
        pos: add(&a.pos, &b.pos),
        vel: add(&a.vel, &b.vel),
        rot: vec![],
        ang_vel: vec![],
        provenance: Provenance::External,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn superposition(p in human_params(), c1 in components(), c2 in components()) {
        let model = build_state_space(&p, &EnvParams::free_space()).unwrap();
        let u1 = fourier(vec![c1], 20.0);
        let u2 = fourier(vec![c2], 20.0);
        let y1 = simulate(&model, &u1, &zero_start()).unwrap().output;
        let y2 = simulate(&model, &u2, &zero_start()).unwrap().output;
        let y12 = simulate(&model, &sum(&u1, &u2), &zero_start()).unwrap().output;
        for (ch12, (ch1, ch2)) in [(&y12.pos, (&y1.pos, &y2.pos)), (&y12.vel, (&y1.vel, &y2.vel))] {
            let scale = max_abs(&ch12[0]).max(max_abs(&ch1[0])).max(max_abs(&ch2[0])).max(1e-300);
            for i in 0..ch12[0].len() {
                let err = (ch12[0][i] - ch1[0][i] - ch2[0][i]).abs();
                prop_assert!(err <= 1e-9 * scale, "sample {i}: error {err} vs scale {scale}");
            }
        }
    }

    #[test]
    fn time_shift_invariance(p in human_params(), c in components(), shift in 1usize..300) {
        let model = build_state_space(&p, &EnvParams::free_space()).unwrap();
        let u = fourier(vec![c], 20.0);
        let y = simulate(&model, &u, &zero_start()).unwrap().output.pos.remove(0);
        let yd = simulate(&model, &u.delayed(shift), &zero_start()).unwrap().output.pos.remove(0);
        let scale = max_abs(&y).max(1e-300);
        prop_assert!(yd[..shift].iter().all(|v| *v == 0.0));
        for i in 0..y.len() - shift {
            prop_assert!((yd[i + shift] - y[i]).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn block_diagonal_matches_independent_axes(
        ps in prop::collection::vec(human_params(), 1..5),
        seed in any::<u64>(),
    ) {
        let k = ps.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axes: Vec<Vec<FourierComponent>> = (0..k)
            .map(|_| {
                (0..3)
                    .map(|_| FourierComponent {
                        amplitude: rng.random_range(0.0..0.1),
                        frequency_hz: rng.random_range(0.01..0.63),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    })
                    .collect()
            })
            .collect();
        let u = fourier(axes, 20.0);
        let singles: Vec<_> = ps.iter().map(|p| build_state_space(p, &EnvParams::free_space()).unwrap()).collect();
        let joint = simulate(&block_diagonal(&singles).unwrap(), &u, &SimConfig::default()).unwrap().output;
        for (axis, model) in singles.iter().enumerate() {
            let one_axis = Trajectory {
                pos: vec![u.pos[axis].clone()],
                vel: vec![u.vel[axis].clone()],
                ..u.clone()
            };
            let alone = simulate(model, &one_axis, &SimConfig::default()).unwrap().output;
            for i in 0..alone.len() {
                prop_assert!((joint.pos[axis][i] - alone.pos[0][i]).abs() <= 1e-12);
                prop_assert!((joint.vel[axis][i] - alone.vel[0][i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unit_dc_gain(p in human_params(), level in -0.3f64..0.3) {
        let [s1, s2] = p.poles();
        let tau = 1.0 / s1.re.abs().min(s2.re.abs());
        let n = ((40.0 * tau) / DEFAULT_DT).ceil() as usize;
        let u = Trajectory {
            rate_hz: 100.0,
            t: uniform_timestamps(n, 100.0),
            pos: vec![vec![level; n]],
            vel: vec![vec![0.0; n]],
            rot: vec![],
            ang_vel: vec![],
            provenance: Provenance::External,
        };
        let model = build_state_space(&p, &EnvParams::free_space()).unwrap();
        let y = simulate(&model, &u, &zero_start()).unwrap().output;
        prop_assert!((y.pos[0][n - 1] - level).abs() <= 1e-6 * level.abs().max(1e-3));
    }
}

#[test]
fn random_positive_triples_are_hurwitz() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let log_uniform = |rng: &mut ChaCha8Rng| 10f64.powf(rng.random_range(-3.0..3.0));
    for _ in 0..10_000 {
        let p = FollowerParams::new(log_uniform(&mut rng), log_uniform(&mut rng), log_uniform(&mut rng)).unwrap();
        let model = build_state_space(&p, &EnvParams::free_space()).unwrap();
        let re = follower_lab_core::linalg::eigenvalue_real_parts(&model.a).unwrap();
        assert!(re.iter().all(|r| *r < 0.0), "{p:?} has eigenvalue real parts {re:?}");
        assert!(p.is_hurwitz());
    }
}

/// A staircase held over the coarse step is a valid ZOH input at both rates,
/// so halving dt must reproduce the coarse samples.
#[test]
fn halving_dt_leaves_zoh_samples_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = params_from(rng.random_range(0.5..5.0), rng.random_range(2.0..30.0), rng.random_range(0.2..2.0));
        let model = build_state_space(&p, &EnvParams::free_space()).unwrap();
        let coarse_n = 2000;
        let steps: Vec<f64> = (0..coarse_n)
            .map(|i| 0.1 * (2.0 * std::f64::consts::PI * 0.3 * i as f64 * 0.01).sin())
            .collect();
        let make = |rate: f64, repeat: usize| {
            let pos: Vec<f64> = steps.iter().flat_map(|v| std::iter::repeat_n(*v, repeat)).collect();
            let n = pos.len();
            Trajectory {
                rate_hz: rate,
                t: uniform_timestamps(n, rate),
                pos: vec![pos],
                vel: vec![vec![0.0; n]],
                rot: vec![],
                ang_vel: vec![],
                provenance: Provenance::External,
            }
        };
        let coarse = simulate(&model, &make(100.0, 1), &SimConfig { dt: 0.01, ..zero_start() }).unwrap();
        let fine = simulate(&model, &make(200.0, 2), &SimConfig { dt: 0.005, ..zero_start() }).unwrap();
        let scale = max_abs(&coarse.output.pos[0]);
        for i in 0..coarse_n {
            let d = (coarse.output.pos[0][i] - fine.output.pos[0][2 * i]).abs();
            assert!(d < 1e-6 * scale, "sample {i}: {d}");
        }
    }
}
