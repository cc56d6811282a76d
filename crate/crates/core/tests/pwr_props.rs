use proptest::prelude::*;
use sdo_core::ocp::axial_offset;
use sdo_core::{ModelParams, PwrModel};

fn model() -> PwrModel {
    PwrModel::new(ModelParams::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn steady_state_balances_load(load in 0.3f64..1.0) {
        let m = model();
        let x = m.steady_state(load).unwrap();
        let total: f64 = x.power.iter().sum();
        prop_assert!((total - load).abs() <= 1e-10);
        let r = m.algebraic_residual(&x.xenon, x.h_cr, load, &x.power, x.boron);
        prop_assert!(r.iter().all(|v| v.abs() <= 1e-10));
        let next = m.step(&x, 0.0, load, 600.0).unwrap();
        for (a, b) in next.to_vec().iter().zip(x.to_vec()) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn random_transients_stay_consistent(
        u in prop::collection::vec(-0.05f64..0.05, 12),
        w in prop::collection::vec(0.5f64..1.0, 12),
    ) {
        let m = model();
        let p = m.params().clone();
        let x0 = m.steady_state(w[0]).unwrap();
        let traj = m.simulate(&x0, &u, &w, 600.0).unwrap();
        prop_assert_eq!(traj.states.len(), 13);
        let mut h = x0.h_cr;
        for (k, s) in traj.states.iter().enumerate().skip(1) {
            // rods integrate the commanded speed inside their travel
            h = (h + u[k - 1] * 600.0).clamp(p.h_min, p.h_max);
            prop_assert!((s.h_cr - h).abs() <= 1e-9 * h.abs().max(1.0));
            prop_assert!((s.power.iter().sum::<f64>() - w[k - 1]).abs() <= 1e-9);
            prop_assert!(s.iodine.iter().chain(&s.xenon).all(|v| *v > 0.0));
            let ao = axial_offset(&s.power).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ao));
            prop_assert!((s.t_in - p.t_ref(w[k - 1])).abs() <= 1e-12);
        }
    }

    #[test]
    fn detached_counters_are_independent(n in 1usize..6) {
        let m = model();
        let d = m.detached();
        let x0 = m.steady_state(1.0).unwrap();
        let before = m.counter().get();
        d.simulate(&x0, &vec![0.0; n], &vec![1.0; n], 600.0).unwrap();
        prop_assert_eq!(m.counter().get(), before);
        prop_assert_eq!(d.counter().get(), (n * m.params().n_sub) as u64);
    }
}
