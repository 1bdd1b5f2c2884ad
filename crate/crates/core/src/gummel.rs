//! Backward Euler time stepping with a Gummel fixed-point loop per step.

use thiserror::Error;

use crate::equations::{
    compute_drift_velocity_n, compute_heat_drive, solve_continuity, solve_heat, solve_laplace, solve_poisson, Device,
    EquationError, FieldMode, FieldState, TimeStep,
};
use crate::fem::norm2;
use crate::materials::N_FLOOR;

/// Strictly increasing time levels starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    levels: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TimeGridError {
    #[error("time grid needs at least one step")]
    Empty,
    #[error("time step {index} is {value}; steps must be positive and finite")]
    BadStep { index: usize, value: f64 },
    #[error("geometric grid needs dt_first > 0, growth >= 1 and t_final > 0")]
    BadGeometric,
}

impl TimeGrid {
    pub fn from_steps(steps: &[f64]) -> Result<Self, TimeGridError> {
        if steps.is_empty() {
            return Err(TimeGridError::Empty);
        }
        let mut levels = vec![0.0];
        for (index, &dt) in steps.iter().enumerate() {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(TimeGridError::BadStep { index, value: dt });
            }
            levels.push(levels.last().unwrap() + dt);
        }
        Ok(TimeGrid { levels })
    }

    /// Steps `dt_first * growth^k`, the last one clipped to end at `t_final`.
    pub fn geometric(dt_first: f64, growth: f64, t_final: f64) -> Result<Self, TimeGridError> {
        if !(dt_first > 0.0 && growth >= 1.0 && t_final > 0.0)
            || !dt_first.is_finite()
            || !growth.is_finite()
            || !t_final.is_finite()
        {
            return Err(TimeGridError::BadGeometric);
        }
        let mut levels = vec![0.0];
        let mut dt = dt_first;
        while *levels.last().unwrap() < t_final {
            let t = (levels.last().unwrap() + dt).min(t_final);
            // Fold a sliver final step into the previous one.
            if t_final - t < 1e-9 * t_final {
                levels.push(t_final);
                break;
            }
            levels.push(t);
            dt *= growth;
        }
        Ok(TimeGrid { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn steps(&self) -> Vec<f64> {
        self.levels.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn final_time(&self) -> f64 {
        *self.levels.last().unwrap()
    }
}

/// Either a direct stationary solve or a Backward Euler grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Steady,
    Transient(TimeGrid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    /// Plain Euclidean norm over active nodal values.
    #[default]
    Plain,
    /// Root mean square weighted by lumped volumes.
    VolumeWeighted,
}

/// Which density and temperature enter the time-derivative right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhsLevel {
    /// The previous time level (Backward Euler).
    #[default]
    Step,
    /// The previous fixed-point iterate.
    Iterate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GummelSettings {
    /// Threshold on the density update norm (dimensionless).
    pub toll: f64,
    pub max_iterations: usize,
    /// Density unit of the convergence norm; `None` uses the largest active
    /// density at the start of each step.
    pub density_scale: Option<f64>,
    /// Relaxation of the density update (1 = plain fixed point).
    pub damping: f64,
    /// Also require `||d phi||_2 < toll` (V) and `||d T||_2 < toll` (K).
    pub strict: bool,
    pub norm: NormKind,
    pub rhs_level: RhsLevel,
}

impl Default for GummelSettings {
    fn default() -> Self {
        GummelSettings {
            toll: 1e-3,
            max_iterations: 100,
            density_scale: None,
            damping: 1.0,
            strict: false,
            norm: NormKind::Plain,
            rhs_level: RhsLevel::Step,
        }
    }
}

impl GummelSettings {
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.toll > 0.0 && self.toll.is_finite()) {
            e.push(format!("solver.toll must be positive, got {}", self.toll));
        }
        if self.max_iterations < 1 {
            e.push("solver.max_gummel must be at least 1".into());
        }
        if let Some(s) = self.density_scale {
            if !(s > 0.0 && s.is_finite()) {
                e.push(format!("solver.density_scale must be positive, got {s}"));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            e.push(format!("solver.damping must lie in (0, 1], got {}", self.damping));
        }
        e
    }
}

/// Convergence history of one time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub step: usize,
    pub time: f64,
    /// Number of the converged iterate `m*`.
    pub iterations: usize,
    /// Density update norms, one per sweep (length `m* + 1`).
    pub density_norms: Vec<f64>,
    pub potential_norms: Vec<f64>,
    pub temperature_norms: Vec<f64>,
    /// Backward errors of the Poisson, continuity and heat solves per sweep.
    pub residuals: Vec<[f64; 3]>,
}

#[derive(Debug, Error)]
pub enum GummelError {
    #[error("no convergence in {} iterations (last density update {:e})", .trace.density_norms.len(), .trace.density_norms.last().copied().unwrap_or(f64::NAN))]
    MaxIterations { trace: IterationTrace },
    #[error(transparent)]
    Equation(#[from] EquationError),
    #[error("invalid solver settings: {}", .0.join("; "))]
    Settings(Vec<String>),
}

/// `||n_new - n_old||_2 < toll` with the plain Euclidean norm.
pub fn check_convergence(n_new: &[f64], n_old: &[f64], toll: f64) -> bool {
    let d: Vec<f64> = n_new.iter().zip(n_old).map(|(a, b)| a - b).collect();
    norm2(&d) < toll
}

fn density_norm(dev: &Device, weights: &[f64], dn: &[f64], kind: NormKind) -> f64 {
    let act = dev.active_nodes();
    match kind {
        NormKind::Plain => norm2(&act.iter().map(|&g| dn[g]).collect::<Vec<_>>()),
        NormKind::VolumeWeighted => {
            let total: f64 = weights.iter().sum();
            let s: f64 = act.iter().zip(weights).map(|(&g, w)| w * dn[g] * dn[g]).sum();
            (s / total).sqrt()
        }
    }
}

/// Advances `state_k` by one step: repeated Poisson, continuity and heat
/// solves until the density update drops below `toll`.
pub fn gummel_step(
    dev: &Device,
    state_k: &FieldState,
    dt: TimeStep,
    settings: &GummelSettings,
    step: usize,
) -> Result<(FieldState, IterationTrace), GummelError> {
    let errs = settings.validate();
    if !errs.is_empty() {
        return Err(GummelError::Settings(errs));
    }
    state_k.check(dev.mesh().num_vertices())?;

    let physics = *dev.physics();
    let time = match dt {
        TimeStep::Finite(h) => state_k.time + h,
        TimeStep::Steady => f64::INFINITY,
    };
    let scale = settings.density_scale.unwrap_or_else(|| {
        dev.active_nodes()
            .iter()
            .map(|&g| state_k.n[g].abs())
            .fold(N_FLOOR, f64::max)
    });
    let weights = dev.active_lumped_volumes();

    let mut phi = state_k.phi.clone();
    let mut n = state_k.n.clone();
    let mut temp = state_k.temperature.clone();
    let mut trace = IterationTrace {
        step,
        time,
        ..Default::default()
    };

    for m in 0..settings.max_iterations {
        let (n_prev, t_prev) = match settings.rhs_level {
            RhsLevel::Step => (&state_k.n, &state_k.temperature),
            RhsLevel::Iterate => (&n, &temp),
        };

        let (phi_new, r_phi) = match physics.potential {
            FieldMode::Solved => solve_poisson(dev, &n, &temp)?,
            FieldMode::Imposed => (phi.clone(), 0.0),
        };

        let mut transport = None;
        let (n_solved, r_n) = match physics.density {
            FieldMode::Solved => {
                let tr = compute_drift_velocity_n(dev, &phi_new, &temp, &n)?;
                let out = solve_continuity(dev, &tr, &n, n_prev, dt)?;
                transport = Some(tr);
                out
            }
            FieldMode::Imposed => (n.clone(), 0.0),
        };

        let (t_new, r_t) = match physics.temperature {
            FieldMode::Solved => {
                let src = compute_heat_drive(dev, &phi_new, &n_solved, &temp, transport.as_ref());
                solve_heat(dev, &src, t_prev, dt)?
            }
            FieldMode::Imposed => (temp.clone(), 0.0),
        };

        let dn: Vec<f64> = n_solved.iter().zip(&n).map(|(a, b)| (a - b) / scale).collect();
        let dn_norm = density_norm(dev, &weights, &dn, settings.norm);
        let dphi = norm2(&phi_new.iter().zip(&phi).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dt_norm = norm2(&t_new.iter().zip(&temp).map(|(a, b)| a - b).collect::<Vec<_>>());
        trace.density_norms.push(dn_norm);
        trace.potential_norms.push(dphi);
        trace.temperature_norms.push(dt_norm);
        trace.residuals.push([r_phi, r_n, r_t]);
        log::debug!("gummel step={step} m={m} dn={dn_norm:.3e} dphi={dphi:.3e} dT={dt_norm:.3e}");

        let w = settings.damping;
        for (x, s) in n.iter_mut().zip(&n_solved) {
            *x += w * (s - *x);
        }
        phi = phi_new;
        temp = t_new;

        let converged =
            dn_norm < settings.toll && (!settings.strict || (dphi < settings.toll && dt_norm < settings.toll));
        if converged {
            trace.iterations = m;
            let state = FieldState {
                time: if time.is_finite() { time } else { state_k.time },
                phi,
                n,
                temperature: temp,
            };
            return Ok((state, trace));
        }
    }
    trace.iterations = settings.max_iterations;
    Err(GummelError::MaxIterations { trace })
}

/// Snapshots and traces of a run.
#[derive(Debug, Clone, Default)]
pub struct RunHistory {
    /// Initial state followed by one state per completed step.
    pub states: Vec<FieldState>,
    pub traces: Vec<IterationTrace>,
    /// `||n_{k+1} - n_k||_2 / ||n_k||_2` per completed step.
    pub steady_changes: Vec<f64>,
}

#[derive(Debug, Error)]
#[error("step {step} failed: {error}")]
pub struct RunFailure {
    pub step: usize,
    pub error: GummelError,
    pub history: RunHistory,
}

/// Initial potential: a Poisson solve against the initial density and
/// temperature, or the charge-free solution when the potential is imposed.
pub fn initial_potential(dev: &Device, state: &mut FieldState) -> Result<(), EquationError> {
    let (phi, _) = match dev.physics().potential {
        FieldMode::Solved => solve_poisson(dev, &state.n, &state.temperature)?,
        FieldMode::Imposed => solve_laplace(dev)?,
    };
    state.phi = phi;
    Ok(())
}

/// Runs the schedule from `initial` (whose potential is recomputed first).
///
/// `observer` sees every state as soon as it exists (the initial one with
/// no trace), so a failed run leaves everything computed so far behind.
// The failure carries the partial history by value.
#[allow(clippy::result_large_err)]
pub fn run_transient(
    dev: &Device,
    initial: FieldState,
    schedule: &Schedule,
    settings: &GummelSettings,
    observer: &mut dyn FnMut(usize, &FieldState, Option<&IterationTrace>),
) -> Result<RunHistory, RunFailure> {
    let mut history = RunHistory::default();
    let mut state = initial;
    if let Err(e) = initial_potential(dev, &mut state) {
        return Err(RunFailure {
            step: 0,
            error: e.into(),
            history,
        });
    }
    observer(0, &state, None);
    history.states.push(state.clone());

    let steps: Vec<TimeStep> = match schedule {
        Schedule::Steady => vec![TimeStep::Steady],
        Schedule::Transient(g) => g.steps().into_iter().map(TimeStep::Finite).collect(),
    };
    for (k, dt) in steps.into_iter().enumerate() {
        let step = k + 1;
        match gummel_step(dev, &state, dt, settings, step) {
            Ok((next, trace)) => {
                let dn: Vec<f64> = next.n.iter().zip(&state.n).map(|(a, b)| a - b).collect();
                let base = norm2(&state.n);
                let change = if base > 0.0 { norm2(&dn) / base } else { norm2(&dn) };
                log::info!(
                    "step={step} time={:e} iterations={} dn={:.3e} steady_change={change:.3e}",
                    next.time,
                    trace.iterations,
                    trace.density_norms.last().copied().unwrap_or(0.0)
                );
                observer(step, &next, Some(&trace));
                history.steady_changes.push(change);
                history.traces.push(trace);
                history.states.push(next.clone());
                state = next;
            }
            Err(error) => {
                log::error!("step={step} failed: {error}");
                return Err(RunFailure { step, error, history });
            }
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grids() {
        let g = TimeGrid::from_steps(&[1.0, 2.0, 0.5]).unwrap();
        assert_eq!(g.levels(), &[0.0, 1.0, 3.0, 3.5]);
        assert_eq!(g.steps(), vec![1.0, 2.0, 0.5]);
        assert_eq!(TimeGrid::from_steps(&[]), Err(TimeGridError::Empty));
        assert!(matches!(
            TimeGrid::from_steps(&[1.0, 0.0]),
            Err(TimeGridError::BadStep { index: 1, .. })
        ));
        let g = TimeGrid::geometric(1e-9, 2.0, 1e-6).unwrap();
        assert_eq!(g.final_time(), 1e-6);
        assert!(g.steps().iter().all(|&d| d > 0.0));
        assert!(g.levels().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn convergence_check_examples() {
        let a = vec![1.0, 2.0, 3.0];
        assert!(check_convergence(&a, &a, 1e-300));
        let toll = 1e-3;
        let p = a.len() as f64;
        let b: Vec<f64> = a.iter().map(|x| x + toll / p.sqrt()).collect();
        // Boundary case: norm equals toll up to rounding, strict inequality.
        let exact: Vec<f64> = vec![toll / p.sqrt(); 3];
        assert!(!check_convergence(&exact, &[0.0; 3], norm2(&exact)));
        assert!(!check_convergence(&b, &a, toll * 0.999_999));
        let c: Vec<f64> = vec![2.0 * toll, 0.0, 0.0];
        assert!(!check_convergence(&c, &[0.0; 3], toll));
    }

    #[test]
    fn settings_validation() {
        let mut s = GummelSettings::default();
        assert!(s.validate().is_empty());
        s.toll = 0.0;
        s.max_iterations = 0;
        s.damping = 1.5;
        assert_eq!(s.validate().len(), 3);
    }
}
