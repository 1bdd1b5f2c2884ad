//! One-dimensional reference solutions and the 3D runs compared against them.
//!
//! The oracles here use plain finite differences and closed forms, never
//! the element kernels.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::equations::{
    BoundaryCondition, BoundarySpec, Device, EquationError, FieldMode, FieldState, HeatDrive, Physics,
};
use crate::gummel::{run_transient, GummelSettings, RunFailure, Schedule, TimeGrid};
use crate::materials::{ActiveMaterial, ActiveZone, MaterialTable, K_B, Q};
use crate::mesh::{build_box_mesh, extract_line_cut, Axis, MeshError, SurfaceLabel};
use crate::profile::{Profile1D, Quantity};

const EPS0: f64 = 8.854e-12;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("Robin system is singular (determinant {0:e})")]
    SingularRobin(f64),
    #[error("profiles do not overlap")]
    NoOverlap,
    #[error("mass normalization failed")]
    Normalization,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Equation(#[from] EquationError),
    #[error(transparent)]
    Run(#[from] Box<RunFailure>),
    #[error("unknown validation case {0:?}")]
    UnknownCase(String),
}

/// Local Péclet number `q h alpha N_e mu E0 / (2 kappa)`.
pub fn peclet_local(h: f64, alpha: f64, n_e: f64, mobility: f64, e0: f64, kappa: f64) -> Result<f64, ValidationError> {
    if !(kappa > 0.0) {
        return Err(ValidationError::NonPositive {
            name: "kappa",
            value: kappa,
        });
    }
    Ok(Q * h * alpha * n_e * mobility * e0 / (2.0 * kappa))
}

/// Parameters of the convective heat problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatProblem {
    pub n_e: f64,
    pub e0: f64,
    pub mobility: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub length: f64,
    pub gamma: f64,
    pub t_bottom: f64,
    pub t_top: f64,
}

impl HeatProblem {
    pub fn reference(kappa: f64) -> Self {
        HeatProblem {
            n_e: 1e26,
            e0: 1.158e9,
            mobility: 3.3e-6,
            alpha: 1e-4,
            kappa,
            length: 1e-8,
            gamma: 1.17e5,
            t_bottom: 900.0,
            t_top: 300.0,
        }
    }

    /// Convective coefficient `q alpha N_e mu E0` (W/(m^2 K)).
    pub fn convective_coefficient(&self) -> f64 {
        Q * self.alpha * self.n_e * self.mobility * self.e0
    }

    pub fn current_density(&self) -> f64 {
        Q * self.n_e * self.mobility * self.e0
    }

    pub fn peclet(&self, h: f64) -> Result<f64, ValidationError> {
        peclet_local(h, self.alpha, self.n_e, self.mobility, self.e0, self.kappa)
    }
}

/// Steady solution of `(a T - kappa T')' = 0` with outflow
/// `gamma (T - T_ext)` of the total flux at both ends, stored as
/// `T = b1 + b2 (e^{s z} - 1) / s` with `s = a / kappa` so that `a = 0`
/// stays regular. For `s != 0` this is `C1 + C2 e^{s z}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatAnalytic {
    pub b1: f64,
    pub b2: f64,
    /// `a / kappa` (1/m).
    pub rate: f64,
    pub length: f64,
}

impl HeatAnalytic {
    pub fn eval(&self, z: f64) -> f64 {
        self.b1 + self.b2 * expm1_over(self.rate, z)
    }

    /// Constant term of the exponential form; infinite when `a = 0`.
    pub fn c1(&self) -> f64 {
        self.b1 - self.b2 / self.rate
    }

    /// Exponential coefficient; infinite when `a = 0`.
    pub fn c2(&self) -> f64 {
        self.b2 / self.rate
    }

    pub fn profile(&self, samples: usize) -> Profile1D {
        let n = samples.max(2);
        let pts = (0..n)
            .map(|i| {
                let z = self.length * i as f64 / (n - 1) as f64;
                (z, self.eval(z))
            })
            .collect();
        Profile1D::new(pts, Quantity::Temperature)
    }
}

fn expm1_over(s: f64, z: f64) -> f64 {
    if s == 0.0 {
        z
    } else {
        (s * z).exp_m1() / s
    }
}

pub fn heat_1d_analytic(p: &HeatProblem) -> Result<HeatAnalytic, ValidationError> {
    for (name, value) in [("kappa", p.kappa), ("length", p.length)] {
        if !(value > 0.0) {
            return Err(ValidationError::NonPositive { name, value });
        }
    }
    let a = p.convective_coefficient();
    let (k, g, l) = (p.kappa, p.gamma, p.length);
    let s = a / k;
    // Total flux of the basis is a b1 - kappa b2.
    let gl = expm1_over(s, l);
    let m = [[g + a, -k], [a - g, -(k + g * gl)]];
    let rhs = [g * p.t_bottom, -g * p.t_top];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    if !det.is_finite() || det.abs() <= 1e-14 * scale * scale {
        return Err(ValidationError::SingularRobin(det));
    }
    Ok(HeatAnalytic {
        b1: (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det,
        b2: (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det,
        rate: s,
        length: l,
    })
}

/// Node-centered finite differences on `points` nodes, central fluxes,
/// solved with the Thomas algorithm.
pub fn heat_1d_finite_difference(p: &HeatProblem, points: usize) -> Profile1D {
    let n = points.max(3);
    let a = p.convective_coefficient();
    let h = p.length / (n - 1) as f64;
    let (k, g) = (p.kappa, p.gamma);
    // Flux between i and i+1: F = a (T_i + T_{i+1}) / 2 - k (T_{i+1} - T_i) / h
    //                          = cl T_i + cr T_{i+1}.
    let cl = 0.5 * a + k / h;
    let cr = 0.5 * a - k / h;
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        // Balance: F_{i+1/2} - F_{i-1/2} = 0, boundary fluxes from Robin data.
        if i + 1 < n {
            diag[i] += cl;
            upper[i] += cr;
        } else {
            // F(L) = g (T_N - T_t)
            diag[i] += g;
            rhs[i] += g * p.t_top;
        }
        if i > 0 {
            lower[i] -= cl;
            diag[i] -= cr;
        } else {
            // F(0) = -g (T_0 - T_b)
            diag[i] += g;
            rhs[i] += g * p.t_bottom;
        }
    }
    let t = thomas(&lower, &diag, &upper, &rhs);
    let pts = t.into_iter().enumerate().map(|(i, v)| (i as f64 * h, v)).collect();
    Profile1D::new(pts, Quantity::Temperature)
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Setting of the blocking-boundary species problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesProblem {
    pub charge: i32,
    /// z component of the field (V/m).
    pub field: f64,
    pub alpha: f64,
    pub t_bottom: f64,
    pub t_top: f64,
    pub length: f64,
    pub n_ref: f64,
    pub n_initial: f64,
}

impl SpeciesProblem {
    pub fn reference(charge: i32) -> Self {
        SpeciesProblem {
            charge,
            field: -1e6,
            alpha: 1e-4,
            t_bottom: 970.0,
            t_top: 370.0,
            length: 9e-6,
            n_ref: 1e28,
            n_initial: 1e28,
        }
    }

    pub fn temperature(&self, z: f64) -> f64 {
        self.t_bottom + (self.t_top - self.t_bottom) * z / self.length
    }
}

/// Zero-flux profile: `y = ln(N / N_ref)` solves
/// `y' = (z q / (K_B T)) (E - alpha T') - y T' / T`, integrated with the
/// implicit trapezoid rule and shifted so `int N = N_initial L`.
pub fn species_1d_steady_oracle(p: &SpeciesProblem, points: usize) -> Result<Profile1D, ValidationError> {
    let n = points.max(3);
    let h = p.length / (n - 1) as f64;
    let dt = (p.t_top - p.t_bottom) / p.length;
    let zq = p.charge as f64 * Q;
    let coords: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let f = |z: f64| zq / (K_B * p.temperature(z)) * (p.field - p.alpha * dt);
    let g = |z: f64| dt / p.temperature(z);
    // y = yp + y0 yh with yp(0) = 0 and yh(0) = 1.
    let mut yp = vec![0.0; n];
    let mut yh = vec![1.0; n];
    for i in 0..n - 1 {
        let (za, zb) = (coords[i], coords[i + 1]);
        let lhs = 1.0 + 0.5 * h * g(zb);
        let keep = 1.0 - 0.5 * h * g(za);
        yp[i + 1] = (yp[i] * keep + 0.5 * h * (f(za) + f(zb))) / lhs;
        yh[i + 1] = yh[i] * keep / lhs;
    }
    let target = (p.n_initial * p.length / p.n_ref).ln();
    // ln int e^{yp + y0 yh}, evaluated with a max shift.
    let log_mass = |y0: f64| -> (f64, f64) {
        let y: Vec<f64> = yp.iter().zip(&yh).map(|(a, b)| a + y0 * b).collect();
        let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = y.iter().map(|v| (v - top).exp()).collect();
        let trap = |vals: &dyn Fn(usize) -> f64| -> f64 { (0..n - 1).map(|i| 0.5 * h * (vals(i) + vals(i + 1))).sum() };
        let m = trap(&|i| w[i]);
        let dm = trap(&|i| w[i] * yh[i]);
        (top + m.ln(), dm / m)
    };
    // Newton on a convex function; derivative is a weighted mean of yh > 0.
    let mut y0 = 0.0;
    for _ in 0..200 {
        let (lm, d) = log_mass(y0);
        let step = (lm - target) / d;
        y0 -= step;
        if step.abs() < 1e-13 * (1.0 + y0.abs()) {
            let pts = coords
                .iter()
                .zip(yp.iter().zip(&yh))
                .map(|(&z, (a, b))| (z, p.n_ref * (a + y0 * b).exp()))
                .collect();
            return Ok(Profile1D::new(pts, Quantity::Density));
        }
    }
    Err(ValidationError::Normalization)
}

/// Relative deviations against the reference's largest magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileError {
    pub linf: f64,
    pub l2: f64,
}

/// Compares at the numeric sample points inside the reference range.
pub fn profile_error(numeric: &Profile1D, reference: &Profile1D) -> Result<ProfileError, ValidationError> {
    let pairs: Vec<(f64, f64)> = numeric
        .points()
        .iter()
        .filter_map(|&(x, v)| reference.interpolate(x).map(|r| (v, r)))
        .collect();
    if pairs.is_empty() {
        return Err(ValidationError::NoOverlap);
    }
    let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let linf = pairs.iter().map(|(v, r)| (v - r).abs()).fold(0.0, f64::max) / scale;
    let l2 = (pairs.iter().map(|(v, r)| (v - r).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt() / scale;
    Ok(ProfileError { linf, l2 })
}

fn zone(epsilon: f64, alpha: f64, kappa: f64, rho: f64, c: f64, mobility: f64, n_ref: f64) -> ActiveZone {
    ActiveZone {
        epsilon,
        alpha,
        kappa,
        rho,
        c,
        mobility,
        n_ref,
        doping: 0.0,
    }
}

fn bc_map(entries: &[(SurfaceLabel, BoundaryCondition)]) -> BTreeMap<SurfaceLabel, BoundaryCondition> {
    entries.iter().copied().collect()
}

fn centerline(dev: &Device, field: &[f64], quantity: Quantity, samples: usize) -> Result<Profile1D, ValidationError> {
    let (lo, hi) = dev.mesh().bounding_box();
    let anchor = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    Ok(extract_line_cut(dev.mesh(), field, Axis::Z, anchor, samples, quantity)?)
}

/// A 3D run compared against its oracle.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    pub numeric: Profile1D,
    pub reference: Profile1D,
    pub error: ProfileError,
    pub final_state: FieldState,
    pub gummel_iterations: Vec<usize>,
}

/// Device for the convective heat problem: all-active box, uniform
/// prescribed current, Robin ends and insulated sides.
pub fn heat_device(p: &HeatProblem, divisions: [usize; 3]) -> Result<Device, ValidationError> {
    let l = p.length;
    let mesh = build_box_mesh([l, l, l], divisions, &[])?;
    let mut active = ActiveMaterial::uniform(zone(11.7 * EPS0, p.alpha, p.kappa, 3.98e6, 880.0, p.mobility, 1e26));
    active.charge = -1;
    let materials = MaterialTable {
        bottom: None,
        active,
        top: None,
    };
    let boundary = BoundarySpec {
        poisson: bc_map(&[
            (SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(0.0)),
            (SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(0.0)),
        ]),
        continuity: BTreeMap::new(),
        heat: bc_map(&[
            (
                SurfaceLabel::SigmaB,
                BoundaryCondition::Robin {
                    coefficient: p.gamma,
                    reference: p.t_bottom,
                },
            ),
            (
                SurfaceLabel::SigmaT,
                BoundaryCondition::Robin {
                    coefficient: p.gamma,
                    reference: p.t_top,
                },
            ),
            (SurfaceLabel::SigmaLat, BoundaryCondition::Neumann(0.0)),
        ]),
    };
    let physics = Physics {
        potential: FieldMode::Imposed,
        density: FieldMode::Imposed,
        temperature: FieldMode::Solved,
        heat_drive: HeatDrive::Prescribed([0.0, 0.0, p.current_density()]),
        ..Physics::default()
    };
    Ok(Device::new(mesh, materials, boundary, physics)?)
}

/// Steady 3D heat solve and its centerline against the closed form.
pub fn heat_case(p: &HeatProblem, divisions: [usize; 3]) -> Result<CaseReport, ValidationError> {
    let dev = heat_device(p, divisions)?;
    let init = dev.initial_state(|_| p.n_e, |_| 300.0);
    let hist = run_transient(
        &dev,
        init,
        &Schedule::Steady,
        &GummelSettings::default(),
        &mut |_, _, _| {},
    )
    .map_err(Box::new)?;
    let state = hist.states.last().unwrap().clone();
    let numeric = centerline(&dev, &state.temperature, Quantity::Temperature, divisions[2] + 1)?;
    let reference = heat_1d_analytic(p)?.profile(10_001);
    let error = profile_error(&numeric, &reference)?;
    Ok(CaseReport {
        name: format!("heat-kappa-{}", p.kappa),
        numeric,
        reference,
        error,
        final_state: state,
        gummel_iterations: hist.traces.iter().map(|t| t.iterations).collect(),
    })
}

/// Device for the species problem: all-active column, imposed linear
/// potential and temperature, blocking boundaries.
pub fn species_device(p: &SpeciesProblem, lateral: f64, divisions: [usize; 3]) -> Result<Device, ValidationError> {
    let mesh = build_box_mesh([lateral, lateral, p.length], divisions, &[])?;
    let mut active = ActiveMaterial::uniform(zone(11.7 * EPS0, p.alpha, 1.0, 1.0, 1.0, 3.3e-6, p.n_ref));
    active.charge = p.charge;
    let materials = MaterialTable {
        bottom: None,
        active,
        top: None,
    };
    let boundary = BoundarySpec {
        poisson: bc_map(&[
            (SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(0.0)),
            (SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(-p.field * p.length)),
        ]),
        continuity: BTreeMap::new(),
        heat: bc_map(&[
            (SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(p.t_bottom)),
            (SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(p.t_top)),
            (SurfaceLabel::SigmaLat, BoundaryCondition::Neumann(0.0)),
        ]),
    };
    let physics = Physics {
        potential: FieldMode::Imposed,
        density: FieldMode::Solved,
        temperature: FieldMode::Imposed,
        ..Physics::default()
    };
    Ok(Device::new(mesh, materials, boundary, physics)?)
}

/// Default time grid for the species relaxation: 1 ns growing by 1.5x to 10 ms.
pub fn species_time_grid() -> TimeGrid {
    TimeGrid::geometric(1e-9, 1.5, 1e-2).expect("valid grid")
}

/// Species run to steady state; also reports the relative mass drift.
pub fn species_case(
    p: &SpeciesProblem,
    divisions: [usize; 3],
    grid: &TimeGrid,
) -> Result<(CaseReport, f64), ValidationError> {
    let lateral = 0.1e-6;
    let dev = species_device(p, lateral, divisions)?;
    let init = dev.initial_state(|_| p.n_initial, |x| p.temperature(x[2]));
    let settings = GummelSettings {
        density_scale: Some(p.n_initial),
        ..GummelSettings::default()
    };
    let hist = run_transient(
        &dev,
        init,
        &Schedule::Transient(grid.clone()),
        &settings,
        &mut |_, _, _| {},
    )
    .map_err(Box::new)?;
    let state = hist.states.last().unwrap().clone();
    let w = dev.active_lumped_volumes();
    let mass = |n: &[f64]| -> f64 { dev.active_nodes().iter().zip(&w).map(|(&g, m)| m * n[g]).sum() };
    let m0 = p.n_initial * dev.mesh().total_volume();
    let drift = (mass(&state.n) - m0).abs() / m0;
    let numeric = centerline(&dev, &state.n, Quantity::Density, divisions[2] + 1)?;
    let reference = species_1d_steady_oracle(p, 10_001)?;
    let error = profile_error(&numeric, &reference)?;
    Ok((
        CaseReport {
            name: format!("species-z{:+}", p.charge),
            numeric,
            reference,
            error,
            final_state: state,
            gummel_iterations: hist.traces.iter().map(|t| t.iterations).collect(),
        },
        drift,
    ))
}

/// The three heterogeneous zone stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeteroCase {
    A,
    B,
    C,
}

impl HeteroCase {
    pub const ALL: [HeteroCase; 3] = [HeteroCase::A, HeteroCase::B, HeteroCase::C];

    pub fn name(self) -> &'static str {
        match self {
            HeteroCase::A => "a",
            HeteroCase::B => "b",
            HeteroCase::C => "c",
        }
    }

    /// Third (0 bottom, 1 middle, 2 top) where the density should peak.
    pub fn expected_third(self) -> usize {
        match self {
            HeteroCase::A => 0,
            HeteroCase::B => 2,
            HeteroCase::C => 1,
        }
    }

    /// Per zone, bottom to top: (mobility, rho, c, kappa).
    pub fn zones(self) -> [(f64, f64, f64, f64); 3] {
        match self {
            HeteroCase::A => [
                (3e-6, 3.98, 880.0, 30.0),
                (300.0, 3.98, 880.0, 3.0),
                (3e-10, 3.98, 880.0, 300.0),
            ],
            HeteroCase::B => [
                (300.0, 3.98, 880.0, 0.3),
                (300.0, 3.98, 880.0, 0.3),
                (3e-10, 3.98, 880.0, 300.0),
            ],
            HeteroCase::C => [
                (300.0, 3980.0, 8800.0, 0.03),
                (3e-10, 3980.0, 8800.0, 0.03),
                (3e-6, 3.98, 880.0, 300.0),
            ],
        }
    }
}

pub const HETERO_THICKNESS: f64 = 1e-8;

/// Heterogeneous 10 nm cube with zones of 3, 4 and 3 nm. `divisions[2]`
/// must be a multiple of 10 so the zone breaks fall on grid planes.
pub fn hetero_device(case: HeteroCase, divisions: [usize; 3]) -> Result<Device, ValidationError> {
    let l = HETERO_THICKNESS;
    let mesh = build_box_mesh([l, l, l], divisions, &[])?;
    let zones = case
        .zones()
        .iter()
        .map(|&(mu, rho, c, kappa)| zone(11.7 * EPS0, 1e-4, kappa, rho, c, mu, 1e16))
        .collect();
    let active = ActiveMaterial {
        charge: -1,
        zone_breaks: vec![3e-9, 7e-9],
        zones,
    };
    let materials = MaterialTable {
        bottom: None,
        active,
        top: None,
    };
    let robin = |coefficient, reference| BoundaryCondition::Robin { coefficient, reference };
    let boundary = BoundarySpec {
        poisson: bc_map(&[
            (SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(0.0)),
            (SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(1.0)),
            (SurfaceLabel::SigmaLat, BoundaryCondition::Neumann(0.0)),
        ]),
        continuity: bc_map(&[
            (SurfaceLabel::GammaB, robin(200.0, 1e19)),
            (SurfaceLabel::GammaT, robin(200.0, 1e13)),
            (SurfaceLabel::SigmaLatA, robin(200.0, 1e13)),
        ]),
        heat: bc_map(&[
            (SurfaceLabel::SigmaB, robin(1e5, 300.0)),
            (SurfaceLabel::SigmaT, robin(1e5, 600.0)),
            (SurfaceLabel::SigmaLat, robin(1e5, 300.0)),
        ]),
    };
    Ok(Device::new(mesh, materials, boundary, Physics::default())?)
}

/// Outcome of a heterogeneous run.
#[derive(Debug, Clone)]
pub struct HeteroReport {
    pub case: HeteroCase,
    pub cut: Profile1D,
    pub argmax: f64,
    pub third: usize,
    pub gummel_iterations: Vec<usize>,
    pub final_state: FieldState,
}

/// The heterogeneous cases are solved directly for the steady state.
pub fn hetero_schedule() -> Schedule {
    Schedule::Steady
}

pub fn hetero_case(
    case: HeteroCase,
    divisions: [usize; 3],
    schedule: &Schedule,
    settings: &GummelSettings,
) -> Result<HeteroReport, ValidationError> {
    let dev = hetero_device(case, divisions)?;
    let init = dev.initial_state(|_| 1e16, |_| 300.0);
    let hist = run_transient(&dev, init, schedule, settings, &mut |_, _, _| {}).map_err(Box::new)?;
    let state = hist.states.last().unwrap().clone();
    let cut = centerline(&dev, &state.n, Quantity::Density, divisions[2] + 1)?;
    let argmax = cut.argmax().unwrap_or(0.0);
    let third = ((argmax / HETERO_THICKNESS * 3.0).floor() as usize).min(2);
    Ok(HeteroReport {
        case,
        cut,
        argmax,
        third,
        gummel_iterations: hist.traces.iter().map(|t| t.iterations).collect(),
        final_state: state,
    })
}

pub const HEAT_DIVISIONS: [usize; 3] = [4, 4, 20];
pub const SPECIES_DIVISIONS: [usize; 3] = [1, 1, 900];
pub const HETERO_DIVISIONS: [usize; 3] = [3, 3, 30];
/// Relative L-infinity gate of the heat comparison.
pub const HEAT_GATE: f64 = 0.02;
/// Relative L2 gate of the species comparison.
pub const SPECIES_GATE: f64 = 0.02;
/// Relative mass drift gate of the species run.
pub const MASS_GATE: f64 = 1e-3;

pub const CASE_NAMES: [&str; 10] = [
    "peclet",
    "heat-kappa-0.01",
    "heat-kappa-0.05",
    "heat-kappa-0.1",
    "species-z-1",
    "species-z+1",
    "species-z+2",
    "hetero-a",
    "hetero-b",
    "hetero-c",
];

/// Result of one named validation case.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub name: String,
    pub passed: bool,
    pub summary: String,
    /// Numeric and reference profiles, when the case has them.
    pub comparison: Option<(Profile1D, Profile1D)>,
}

/// Whether `x` rounds to `r` at the leading significant digit of `r`.
pub fn rounds_to(x: f64, r: f64) -> bool {
    let unit = 10f64.powf(r.abs().log10().floor());
    (x - r).abs() < 0.5 * unit
}

fn is_monotone(p: &Profile1D) -> bool {
    let v: Vec<f64> = p.values().collect();
    v.windows(2).all(|w| w[1] >= w[0]) || v.windows(2).all(|w| w[1] <= w[0])
}

/// Runs a case from [`CASE_NAMES`], or all of them for `"all"`.
pub fn run_named_case(name: &str) -> Result<Vec<CaseOutcome>, ValidationError> {
    if name == "all" {
        let mut out = Vec::new();
        for n in CASE_NAMES {
            out.extend(run_named_case(n)?);
        }
        return Ok(out);
    }
    let outcome = if name == "peclet" {
        let pe: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|&k| HeatProblem::reference(k).peclet(1e-8))
            .collect::<Result<_, _>>()?;
        let rounded = [3.0, 0.6, 0.3];
        let passed = pe.iter().zip(rounded).all(|(&p, r)| rounds_to(p, r));
        CaseOutcome {
            name: name.into(),
            passed,
            summary: format!("Pe_loc = {:.4} {:.4} {:.4} (kappa 0.01 0.05 0.1)", pe[0], pe[1], pe[2]),
            comparison: None,
        }
    } else if let Some(k) = name.strip_prefix("heat-kappa-") {
        let kappa: f64 = k.parse().map_err(|_| ValidationError::UnknownCase(name.into()))?;
        let r = heat_case(&HeatProblem::reference(kappa), HEAT_DIVISIONS)?;
        let mono = is_monotone(&r.numeric);
        let passed = r.error.linf <= HEAT_GATE && mono;
        CaseOutcome {
            name: name.into(),
            passed,
            summary: format!(
                "relative Linf {:.3e} (gate {HEAT_GATE}), L2 {:.3e}, monotone {mono}",
                r.error.linf, r.error.l2
            ),
            comparison: Some((r.numeric, r.reference)),
        }
    } else if let Some(z) = name.strip_prefix("species-z") {
        let charge: i32 = z.parse().map_err(|_| ValidationError::UnknownCase(name.into()))?;
        let (r, drift) = species_case(
            &SpeciesProblem::reference(charge),
            SPECIES_DIVISIONS,
            &species_time_grid(),
        )?;
        let passed = r.error.l2 <= SPECIES_GATE && drift <= MASS_GATE;
        CaseOutcome {
            name: name.into(),
            passed,
            summary: format!(
                "relative L2 {:.3e} (gate {SPECIES_GATE}), Linf {:.3e}, mass drift {drift:.3e} (gate {MASS_GATE})",
                r.error.l2, r.error.linf
            ),
            comparison: Some((r.numeric, r.reference)),
        }
    } else if let Some(c) = name.strip_prefix("hetero-") {
        let case = match c {
            "a" => HeteroCase::A,
            "b" => HeteroCase::B,
            "c" => HeteroCase::C,
            _ => return Err(ValidationError::UnknownCase(name.into())),
        };
        let r = hetero_case(case, HETERO_DIVISIONS, &hetero_schedule(), &GummelSettings::default())?;
        let thirds = ["bottom", "middle", "top"];
        CaseOutcome {
            name: name.into(),
            passed: r.third == case.expected_third(),
            summary: format!(
                "density peak at z = {:.3} nm, {} third (expected {}), iterations {:?}",
                r.argmax * 1e9,
                thirds[r.third],
                thirds[case.expected_third()],
                r.gummel_iterations
            ),
            comparison: None,
        }
    } else {
        return Err(ValidationError::UnknownCase(name.into()));
    };
    Ok(vec![outcome])
}
