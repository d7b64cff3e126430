use diu_core::forcing::{
    apply_kick, meal_square_driver, periodic_schedule, poisson_schedule,
    uniform_amplitude_schedule, RngStream, MEAL_DURATION, MEAL_STARTS, MINUTES_PER_DAY,
};
use diu_core::integrate::{run_kick_relaxation, IntegratorConfig};
use diu_core::model::{rhs_into, UltradianParams, UltradianState, STATE_DIM};
use diu_core::shearflow::{characteristic_root, history_distance, CylinderHistory};
use proptest::prelude::*;
use rand::Rng;

fn state() -> impl Strategy<Value = [f64; STATE_DIM]> {
    proptest::array::uniform6(0.0f64..20_000.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn periodic_gaps_are_exact(a in 0.0f64..100.0, period in 0.1f64..500.0, n in 2usize..400) {
        let s = periodic_schedule(a, period, n).unwrap();
        for (k, &t) in s.times().iter().enumerate() {
            prop_assert_eq!(t, k as f64 * period);
        }
        prop_assert!(s.amplitudes().iter().all(|&x| x == a));
    }

    #[test]
    fn schedules_regenerate_from_descriptor(seed in any::<u64>(), index in 0u64..1000, n in 0usize..200) {
        let st = RngStream::new(seed, index);
        for s in [
            periodic_schedule(3.0, 7.5, n).unwrap(),
            poisson_schedule(10.0, 20.0, n, st).unwrap(),
            uniform_amplitude_schedule(45.0, 55.0, 20.0, n, st).unwrap(),
        ] {
            let again = s.descriptor().generate().unwrap();
            prop_assert_eq!(s.times(), again.times());
            prop_assert_eq!(s.amplitudes(), again.amplitudes());
        }
    }

    #[test]
    fn stream_draws_depend_only_on_seed_and_index(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        let draw = |idx| -> Vec<u64> {
            let mut g = RngStream::new(seed, idx).generator();
            (0..8).map(|_| g.random()).collect()
        };
        prop_assert_eq!(draw(i), draw(i));
        if i != j {
            prop_assert_ne!(draw(i), draw(j));
        }
    }

    #[test]
    fn poisson_times_increase(seed in any::<u64>(), mean in 0.5f64..100.0) {
        let s = poisson_schedule(1.0, mean, 300, RngStream::new(seed, 0)).unwrap();
        prop_assert!(s.times()[0] > 0.0);
        prop_assert!(s.gaps().iter().all(|&g| g > 0.0));
    }

    #[test]
    fn uniform_amplitudes_stay_in_range(seed in any::<u64>(), lo in 0.0f64..50.0, w in 0.0f64..50.0) {
        let s = uniform_amplitude_schedule(lo, lo + w, 10.0, 200, RngStream::new(seed, 3)).unwrap();
        prop_assert!(s.amplitudes().iter().all(|&a| (lo..=lo + w).contains(&a)));
    }

    #[test]
    fn kick_only_moves_glucose(y in state(), a in -100.0f64..100.0) {
        let s = UltradianState::from_array(y);
        let k = apply_kick(&s, a).to_array();
        for c in 0..STATE_DIM {
            if c == 2 {
                prop_assert_eq!(k[c], y[c] + a);
            } else {
                prop_assert_eq!(k[c].to_bits(), y[c].to_bits());
            }
        }
    }

    #[test]
    fn meal_drive_is_piecewise_constant(a in 0.0f64..200.0, t in 0.0f64..3.0 * MINUTES_PER_DAY) {
        let d = meal_square_driver(a, 3).unwrap();
        let day = t.rem_euclid(MINUTES_PER_DAY);
        let eating = MEAL_STARTS.iter().any(|&s| (s..s + MEAL_DURATION).contains(&day));
        prop_assert_eq!(d.level_at(t), if eating { a } else { 0.0 });
        let bps = d.breakpoints();
        prop_assert!(bps.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(bps.len(), 2 * 3 * MEAL_STARTS.len());
    }

    #[test]
    fn filter_chain_is_linear(y1 in state(), y2 in state(), c in -3.0f64..3.0) {
        let p = UltradianParams::default();
        let chain = |y: &[f64; STATE_DIM]| {
            let mut out = [0.0; STATE_DIM];
            rhs_into(y, &p, 0.0, &mut out);
            [out[3], out[4], out[5]]
        };
        let mix: [f64; STATE_DIM] = std::array::from_fn(|i| y1[i] + c * y2[i]);
        let (a, b, m) = (chain(&y1), chain(&y2), chain(&mix));
        for k in 0..3 {
            let expect = a[k] + c * b[k];
            prop_assert!((m[k] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn characteristic_roots_have_small_residual(lambda in 0.01f64..2.0, tau in 0.0f64..40.0) {
        let r = characteristic_root(lambda, tau).unwrap();
        let g = r.gamma;
        let f = g + lambda * (-g * tau).exp();
        prop_assert!(f.norm() < 1e-12);
        prop_assert!(g.im >= 0.0);
    }

    #[test]
    fn history_theta_is_reduced(tau in 0.1f64..20.0, theta in -50.0f64..50.0, z in -10.0f64..10.0) {
        let h = CylinderHistory::constant(tau, 16, theta, z).unwrap();
        prop_assert!((0.0..1.0).contains(&h.theta()));
        for (_, th, _) in h.mesh() {
            prop_assert!((0.0..1.0).contains(&th));
        }
        let shifted = CylinderHistory::constant(tau, 16, theta + 1.0, z).unwrap();
        prop_assert!(history_distance(&h, &shifted) < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn event_log_matches_kicks_in_horizon(period in 5.0f64..60.0, n in 1usize..20, horizon in 0.0f64..400.0) {
        let p = UltradianParams::default().with_delay(6.0);
        let sched = periodic_schedule(5.0, period, n).unwrap();
        let drive = diu_core::forcing::DriveSignal::basal(0.0);
        let traj = run_kick_relaxation(
            &p,
            &sched,
            &drive,
            &UltradianState::REFERENCE,
            horizon,
            &IntegratorConfig::default(),
            Some(10.0),
            &mut |_, _, _| {},
        )
        .unwrap();
        let inside = sched.times().iter().filter(|&&t| t <= horizon).count();
        prop_assert_eq!(traj.events.len(), inside);
        prop_assert!(traj.times.windows(2).all(|w| w[0] <= w[1]));
    }
}
