mod common;

use tedsim::equations::TimeStep;
use tedsim::gummel::{gummel_step, run_transient, GummelError, GummelSettings, Schedule, TimeGrid};
use tedsim::validation::{hetero_device, HeteroCase, HETERO_DIVISIONS};

#[test]
fn equilibrium_is_a_fixed_point() {
    let dev = common::equilibrium_device([2, 2, 6], 1e16);
    let state = dev.initial_state(|_| 1e16, |_| 300.0);
    let (next, trace) = gummel_step(&dev, &state, TimeStep::Finite(1e-12), &GummelSettings::default(), 1).unwrap();
    assert_eq!(trace.iterations, 0);
    assert_eq!(trace.density_norms.len(), trace.iterations + 1);
    for (a, b) in next.n.iter().zip(&state.n) {
        assert!((a - b).abs() <= 1e-9 * b, "{a} vs {b}");
    }
    for t in &next.temperature {
        assert!((t - 300.0).abs() < 1e-9);
    }
}

#[test]
fn traces_hold_one_entry_per_sweep() {
    let dev = hetero_device(HeteroCase::B, [2, 2, 10]).unwrap();
    let grid = TimeGrid::geometric(1e-14, 4.0, 1e-9).unwrap();
    let hist = run_transient(
        &dev,
        dev.initial_state(|_| 1e16, |_| 300.0),
        &Schedule::Transient(grid.clone()),
        &GummelSettings::default(),
        &mut |_, _, _| {},
    )
    .map_err(|f| f.error.to_string())
    .unwrap();
    assert_eq!(hist.states.len(), grid.steps().len() + 1);
    for t in &hist.traces {
        let len = t.iterations + 1;
        assert_eq!(t.density_norms.len(), len);
        assert_eq!(t.potential_norms.len(), len);
        assert_eq!(t.temperature_norms.len(), len);
        assert_eq!(t.residuals.len(), len);
        assert!(t.residuals.iter().flatten().all(|r| *r <= dev.linear_tolerance));
    }
}

// Relaxation of the three-zone cube from the uniform start: steady well
// before 10 us, and the density updates shrink over the last sweeps.
#[test]
fn heterogeneous_transient_reaches_steady_state() {
    let dev = hetero_device(HeteroCase::A, HETERO_DIVISIONS).unwrap();
    let grid = TimeGrid::geometric(1e-15, 2.0, 1e-5).unwrap();
    let mut changes = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    let hist = run_transient(
        &dev,
        dev.initial_state(|_| 1e16, |_| 300.0),
        &Schedule::Transient(grid),
        &GummelSettings::default(),
        &mut |_, s, _| {
            if let Some(p) = &prev {
                let d: f64 = s.n.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let n: f64 = p.iter().map(|a| a * a).sum::<f64>().sqrt();
                changes.push((s.time, d / n));
            }
            prev = Some(s.n.clone());
        },
    )
    .map_err(|f| f.error.to_string())
    .unwrap();
    let steady = changes.iter().find(|(_, c)| *c < 1e-6).map(|(t, _)| *t);
    assert!(matches!(steady, Some(t) if t <= 1e-5), "{changes:?}");
    for t in hist.traces.iter().filter(|t| t.density_norms.len() >= 3) {
        let d = &t.density_norms[t.density_norms.len() - 3..];
        assert!(d[2] <= d[1] && d[1] <= d[0], "{d:?}");
    }
}

#[test]
fn failure_keeps_the_partial_history() {
    let dev = hetero_device(HeteroCase::A, [2, 2, 10]).unwrap();
    let grid = TimeGrid::from_steps(&[1e-14; 4]).unwrap();
    let settings = GummelSettings {
        toll: 1e-300,
        max_iterations: 3,
        ..GummelSettings::default()
    };
    let mut seen = 0;
    let fail = run_transient(
        &dev,
        dev.initial_state(|_| 1e16, |_| 300.0),
        &Schedule::Transient(grid),
        &settings,
        &mut |_, _, _| seen += 1,
    )
    .unwrap_err();
    assert_eq!(fail.step, 1);
    assert_eq!(fail.history.states.len(), 1);
    assert_eq!(seen, 1);
    match fail.error {
        GummelError::MaxIterations { trace } => assert_eq!(trace.density_norms.len(), 3),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn steady_schedule_matches_long_transient() {
    let dev = hetero_device(HeteroCase::B, [2, 2, 10]).unwrap();
    let init = dev.initial_state(|_| 1e16, |_| 300.0);
    let settings = GummelSettings {
        toll: 1e-5,
        ..GummelSettings::default()
    };
    let steady = run_transient(&dev, init.clone(), &Schedule::Steady, &settings, &mut |_, _, _| {})
        .map_err(|f| f.error.to_string())
        .unwrap();
    let grid = TimeGrid::geometric(1e-15, 2.0, 1e-3).unwrap();
    let long = run_transient(&dev, init, &Schedule::Transient(grid), &settings, &mut |_, _, _| {})
        .map_err(|f| f.error.to_string())
        .unwrap();
    let (a, b) = (steady.states.last().unwrap(), long.states.last().unwrap());
    let scale = a.n.iter().copied().fold(0.0, f64::max);
    for (x, y) in a.n.iter().zip(&b.n) {
        assert!((x - y).abs() <= 1e-6 * scale, "{x} vs {y}");
    }
}
