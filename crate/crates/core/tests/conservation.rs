mod common;

use proptest::prelude::*;

use tedsim::equations::{assemble_continuity, compute_drift_velocity_n, solve_continuity, solve_laplace, TimeStep};
use tedsim::validation::{hetero_device, HeteroCase};

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    // Closed column: one implicit step moves carriers around but keeps
    // their number, for any bias, charge and step length.
    #[test]
    fn closed_step_keeps_carriers(bias in -2.0f64..2.0, charge in prop::sample::select(vec![-2, -1, 1, 2]), log_dt in -14.0f64..-6.0) {
        let dev = common::closed_device([1, 1, 12], bias, charge);
        let mut state = dev.initial_state(|p| 1e22 * (1.0 + 0.5 * (p[2] * 3e8).sin()), |p| 300.0 + 100.0 * p[2] / 2e-8);
        state.phi = solve_laplace(&dev).unwrap().0;
        let tr = compute_drift_velocity_n(&dev, &state.phi, &state.temperature, &state.n).unwrap();
        let (n, _) = solve_continuity(&dev, &tr, &state.n, &state.n, TimeStep::Finite(10f64.powf(log_dt))).unwrap();
        let (m0, m1) = (common::total_carriers(&dev, &state.n), common::total_carriers(&dev, &n));
        prop_assert!((m1 - m0).abs() <= 10.0 * dev.linear_tolerance * m0, "{m0} -> {m1}");
        prop_assert!(n.iter().all(|&x| x >= 0.0));
    }

    // The assembled continuity operator of a real device, including its
    // Robin contacts, keeps the sign structure for arbitrary states.
    #[test]
    fn continuity_operator_is_m_matrix(
        phi_top in -3.0f64..3.0,
        t_slope in 0.0f64..600.0,
        log_n in 10.0f64..24.0,
        steady in any::<bool>(),
        case in prop::sample::select(HeteroCase::ALL.to_vec()),
    ) {
        let dev = hetero_device(case, [2, 2, 10]).unwrap();
        let state = dev.initial_state(|p| 10f64.powf(log_n) * (1.0 + p[0] * 1e8), |p| 300.0 + t_slope * p[2] / 1e-8);
        let phi: Vec<f64> = dev.mesh().vertices().iter().map(|p| phi_top * p[2] / 1e-8).collect();
        let tr = compute_drift_velocity_n(&dev, &phi, &state.temperature, &state.n).unwrap();
        let dt = if steady { TimeStep::Steady } else { TimeStep::Finite(1e-12) };
        let sys = assemble_continuity(&dev, &tr, &state.n, dt).unwrap();
        let report = sys.is_m_matrix();
        prop_assert!(report.all(), "{report:?}");
    }
}
