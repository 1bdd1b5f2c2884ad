//! Linearized Poisson, continuity and heat systems of one fixed-point sweep.
//!
//! All three equations are assembled element by element in edge form. The
//! continuity equation is divided by the elementary charge, so its unknown
//! is the number density and its fluxes are particle fluxes. The species
//! charge number `z` is taken from the active material (`-1` for electrons).
//!
//! Edge conventions: for an element edge from local vertex `a` to `b`,
//! `e_ab = x_b - x_a` and every edge quantity (`peclet`, `current`) is the
//! corresponding field dotted with `e_ab`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{
    bernoulli, local_diffusion_from_weights, local_lumped_mass, local_sg_advection_diffusion, solve_linear, FaceRef,
    FemError, LocalMatrix, SparseSystem, SparsityPattern,
};
use crate::materials::{
    chemical_potential, einstein_diffusivity, MaterialError, MaterialTable, RegionMaterial, F, K_B, N_FLOOR, Q,
};
use crate::mesh::{compute_edge_geometry, EdgeGeometry, Mesh, MeshError, RegionLabel, SurfaceLabel, TET_EDGES};

#[derive(Debug, Error)]
pub enum EquationError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("{equation}: {source}")]
    Fem { equation: &'static str, source: FemError },
    #[error("time step must be positive, got {0}")]
    NonPositiveTimeStep(f64),
    #[error("field state invalid: {0}")]
    State(String),
}

/// Backward Euler step width; `Steady` drops the time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    Finite(f64),
    Steady,
}

impl TimeStep {
    /// Reciprocal width, zero for the steady sentinel.
    pub fn inverse(self) -> Result<f64, EquationError> {
        match self {
            TimeStep::Steady => Ok(0.0),
            TimeStep::Finite(dt) if dt > 0.0 && dt.is_finite() => Ok(1.0 / dt),
            TimeStep::Finite(dt) if dt == f64::INFINITY => Ok(0.0),
            TimeStep::Finite(dt) => Err(EquationError::NonPositiveTimeStep(dt)),
        }
    }
}

/// Nodal `phi` (V), `n` (1/m^3) and `T` (K) at one time level.
///
/// `n` is sized to the whole mesh; nodes touching no active cell hold the
/// fixed contact concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub time: f64,
    pub phi: Vec<f64>,
    pub n: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl FieldState {
    pub fn check(&self, nodes: usize) -> Result<(), EquationError> {
        if self.phi.len() != nodes || self.n.len() != nodes || self.temperature.len() != nodes {
            return Err(EquationError::State(format!(
                "arrays must have {nodes} entries (phi {}, n {}, T {})",
                self.phi.len(),
                self.n.len(),
                self.temperature.len()
            )));
        }
        if let Some(t) = self.temperature.iter().find(|t| !(**t > 0.0)) {
            return Err(EquationError::State(format!("temperature {t} is not positive")));
        }
        if let Some(n) = self.n.iter().find(|n| !(**n >= 0.0)) {
            return Err(EquationError::State(format!("density {n} is negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    Dirichlet(f64),
    /// Prescribed inflow flux density into the domain.
    Neumann(f64),
    /// Outflow `coefficient * (U - reference)`.
    Robin {
        coefficient: f64,
        reference: f64,
    },
}

/// Boundary data per equation and surface. Surfaces without an entry are
/// homogeneous Neumann.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundarySpec {
    pub poisson: BTreeMap<SurfaceLabel, BoundaryCondition>,
    pub continuity: BTreeMap<SurfaceLabel, BoundaryCondition>,
    pub heat: BTreeMap<SurfaceLabel, BoundaryCondition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldMode {
    /// Unknown of its own equation.
    #[default]
    Solved,
    /// Held at its initial value (for the potential: the charge-free
    /// solution with the contact data).
    Imposed,
}

/// Which current drives convection and sources in the heat equation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum HeatDrive {
    /// Metal: generalized Ohm's law. Active: reconstructed from the
    /// continuity edge fluxes.
    #[default]
    Coupled,
    /// A uniform current density (A/m^2) with zero electrochemical
    /// potential, as in the convective validation problem.
    Prescribed([f64; 3]),
}

/// Form of the electrochemical heat source divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeatSourceForm {
    /// `div(phi_ec * alpha * j)`, the thermal velocity times the potential.
    #[default]
    ThermalVelocity,
    /// `div(phi_ec * j)`, the energy-consistent product.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Physics {
    pub potential: FieldMode,
    pub density: FieldMode,
    pub temperature: FieldMode,
    pub heat_drive: HeatDrive,
    pub heat_source: HeatSourceForm,
}

#[derive(Debug, Clone)]
struct Element {
    region: RegionLabel,
    s_phi: f64,
    s_t: f64,
    alpha: f64,
    kappa: f64,
    rho_c: f64,
    /// Active only.
    mobility: f64,
    n_ref: f64,
    doping: f64,
    /// Metal only: chemical energy over F (V).
    chem_volts: f64,
}

/// Boundary data resolved to faces.
#[derive(Debug, Clone)]
struct ResolvedBc {
    faces: Vec<FaceRef>,
    condition: BoundaryCondition,
}

/// A mesh with materials and boundary data, ready for assembly.
#[derive(Debug, Clone)]
pub struct Device {
    mesh: Mesh,
    geometry: EdgeGeometry,
    materials: MaterialTable,
    boundary: BoundarySpec,
    physics: Physics,
    charge: i32,
    elements: Vec<Element>,
    pattern: Arc<SparsityPattern>,
    active_tets: Vec<usize>,
    active_nodes: Vec<usize>,
    active_index: Vec<Option<usize>>,
    active_pattern: Arc<SparsityPattern>,
    poisson_bc: Vec<ResolvedBc>,
    continuity_bc: Vec<ResolvedBc>,
    heat_bc: Vec<ResolvedBc>,
    contact_density: Vec<f64>,
    pub linear_tolerance: f64,
}

fn exterior_of(mesh: &Mesh, label: SurfaceLabel) -> Option<SurfaceLabel> {
    match label {
        SurfaceLabel::SigmaB | SurfaceLabel::SigmaT | SurfaceLabel::SigmaLat => Some(label),
        SurfaceLabel::GammaB if mesh.interface_is_exterior(label) => Some(SurfaceLabel::SigmaB),
        SurfaceLabel::GammaT if mesh.interface_is_exterior(label) => Some(SurfaceLabel::SigmaT),
        _ => None,
    }
}

/// Maps the labels of an exterior-surface equation onto `SigmaB/T/Lat`,
/// reporting interface labels and duplicate aliases.
fn normalize_exterior(
    mesh: &Mesh,
    equation: &str,
    spec: &BTreeMap<SurfaceLabel, BoundaryCondition>,
    errs: &mut Vec<String>,
) -> BTreeMap<SurfaceLabel, (SurfaceLabel, BoundaryCondition)> {
    let mut out = BTreeMap::new();
    for (&label, &bc) in spec {
        match exterior_of(mesh, label) {
            Some(ext) => {
                if out.insert(ext, (label, bc)).is_some() {
                    errs.push(format!(
                        "{equation}: {label} and {ext} denote the same surface; give only one"
                    ));
                }
            }
            None => errs.push(format!(
                "{equation}: {label} is an interior interface here; the condition there is natural"
            )),
        }
    }
    out
}

fn check_bc(equation: &str, label: SurfaceLabel, bc: &BoundaryCondition, errs: &mut Vec<String>) {
    let bad = |v: f64| !v.is_finite();
    match *bc {
        BoundaryCondition::Dirichlet(v) | BoundaryCondition::Neumann(v) if bad(v) => {
            errs.push(format!("{equation}.{label}: value must be finite"))
        }
        BoundaryCondition::Robin { coefficient, reference } => {
            if !(coefficient >= 0.0 && coefficient.is_finite()) {
                errs.push(format!(
                    "{equation}.{label}: robin coefficient must be nonnegative, got {coefficient}"
                ));
            }
            if bad(reference) {
                errs.push(format!("{equation}.{label}: robin reference must be finite"));
            }
        }
        _ => {}
    }
}

impl Device {
    pub fn new(
        mesh: Mesh,
        materials: MaterialTable,
        boundary: BoundarySpec,
        physics: Physics,
    ) -> Result<Self, EquationError> {
        let mut errs: Vec<String> = materials.validate().iter().map(|e| e.to_string()).collect();
        for (region, name) in [(RegionLabel::Bottom, "bottom"), (RegionLabel::Top, "top")] {
            if mesh.has_region(region) && materials.metal(region).is_none() {
                errs.push(format!("mesh has a {name} contact region but no [{name}] material"));
            }
        }

        // Poisson: Dirichlet on both contacts, Neumann only elsewhere.
        let poisson = normalize_exterior(&mesh, "poisson", &boundary.poisson, &mut errs);
        for ext in [SurfaceLabel::SigmaB, SurfaceLabel::SigmaT] {
            match poisson.get(&ext) {
                Some((_, BoundaryCondition::Dirichlet(_))) => {}
                _ => errs.push(format!("poisson: a dirichlet condition on {ext} is required")),
            }
        }
        if let Some((_, bc)) = poisson.get(&SurfaceLabel::SigmaLat) {
            if !matches!(bc, BoundaryCondition::Neumann(_)) {
                errs.push("poisson: sigma_lat accepts only a neumann condition".into());
            }
        }
        for (l, bc) in &boundary.poisson {
            check_bc("poisson", *l, bc, &mut errs);
        }

        // Heat: every exterior surface needs a condition when T is solved.
        let heat = normalize_exterior(&mesh, "heat", &boundary.heat, &mut errs);
        for ext in [SurfaceLabel::SigmaB, SurfaceLabel::SigmaT, SurfaceLabel::SigmaLat] {
            if physics.temperature == FieldMode::Solved && !heat.contains_key(&ext) {
                errs.push(format!("heat: a condition on {ext} is required"));
            }
        }
        for (l, bc) in &boundary.heat {
            check_bc("heat", *l, bc, &mut errs);
        }

        // Continuity lives on the active boundary only.
        let mut continuity = BTreeMap::new();
        for (&label, &bc) in &boundary.continuity {
            check_bc("continuity", label, &bc, &mut errs);
            let target = match label {
                SurfaceLabel::GammaB | SurfaceLabel::GammaT | SurfaceLabel::SigmaLatA => Some(label),
                SurfaceLabel::SigmaB if mesh.interface_is_exterior(SurfaceLabel::GammaB) => Some(SurfaceLabel::GammaB),
                SurfaceLabel::SigmaT if mesh.interface_is_exterior(SurfaceLabel::GammaT) => Some(SurfaceLabel::GammaT),
                SurfaceLabel::SigmaLat => Some(SurfaceLabel::SigmaLatA),
                _ => None,
            };
            match target {
                Some(t) => {
                    if continuity.insert(t, bc).is_some() {
                        errs.push(format!("continuity: {label} duplicates the condition on {t}"));
                    }
                }
                None => errs.push(format!("continuity: {label} does not bound the active region")),
            }
        }
        if !errs.is_empty() {
            return Err(EquationError::Config(errs));
        }

        let geometry = compute_edge_geometry(&mesh)?;
        let charge = materials.active.charge;
        let elements: Vec<Element> = (0..mesh.num_tets())
            .map(|t| {
                let region = mesh.tets()[t].region;
                let z = mesh.tet_centroid(t)[2];
                let mat = materials.lookup(region, z);
                let (mobility, n_ref, doping, chem_volts) = match mat {
                    RegionMaterial::Active(a) => (a.mobility, a.n_ref, a.doping, 0.0),
                    RegionMaterial::Metal(m) => (0.0, m.n_ref, 0.0, m.chemical_energy / F),
                };
                Element {
                    region,
                    s_phi: mat.potential_coefficient(),
                    s_t: mat.thermal_coefficient(),
                    alpha: mat.alpha(),
                    kappa: mat.kappa(),
                    rho_c: mat.heat_capacity(),
                    mobility,
                    n_ref,
                    doping,
                    chem_volts,
                }
            })
            .collect();

        let nv = mesh.num_vertices();
        let pattern = Arc::new(SparsityPattern::from_elements(
            nv,
            mesh.tets().iter().map(|t| t.vertices),
        ));
        let active_tets: Vec<usize> = (0..mesh.num_tets())
            .filter(|&t| mesh.tets()[t].region == RegionLabel::Active)
            .collect();
        let mut active_index = vec![None; nv];
        let mut active_nodes = Vec::new();
        for &t in &active_tets {
            for v in mesh.tets()[t].vertices {
                if active_index[v].is_none() {
                    active_index[v] = Some(usize::MAX);
                }
            }
        }
        for v in 0..nv {
            if active_index[v].is_some() {
                active_index[v] = Some(active_nodes.len());
                active_nodes.push(v);
            }
        }
        let active_pattern = Arc::new(SparsityPattern::from_elements(
            active_nodes.len(),
            active_tets
                .iter()
                .map(|&t| mesh.tets()[t].vertices.map(|v| active_index[v].unwrap())),
        ));

        let faces_of = |label: SurfaceLabel, local: bool| -> Vec<FaceRef> {
            mesh.face_set(label)
                .into_iter()
                .map(|f| FaceRef {
                    nodes: mesh.faces()[f].vertices.map(|v| {
                        if local {
                            active_index[v].expect("active boundary node")
                        } else {
                            v
                        }
                    }),
                    area: mesh.face_area(f),
                })
                .collect()
        };
        let resolve = |map: BTreeMap<SurfaceLabel, (SurfaceLabel, BoundaryCondition)>| {
            map.into_iter()
                .map(|(ext, (_, condition))| ResolvedBc {
                    faces: faces_of(ext, false),
                    condition,
                })
                .collect::<Vec<_>>()
        };
        let poisson_bc = resolve(poisson);
        let heat_bc = resolve(heat);
        let continuity_bc = continuity
            .into_iter()
            .map(|(label, condition)| ResolvedBc {
                faces: faces_of(label, true),
                condition,
            })
            .collect();

        // Contact density for nodes outside the active closure.
        let mut contact_density = vec![0.0; nv];
        for (t, tet) in mesh.tets().iter().enumerate() {
            if let Some(m) = materials.metal(elements[t].region) {
                for v in tet.vertices {
                    if active_index[v].is_none() {
                        contact_density[v] = m.electron_density;
                    }
                }
            }
        }

        Ok(Device {
            mesh,
            geometry,
            materials,
            boundary,
            physics,
            charge,
            elements,
            pattern,
            active_tets,
            active_nodes,
            active_index,
            active_pattern,
            poisson_bc,
            continuity_bc,
            heat_bc,
            contact_density,
            linear_tolerance: crate::fem::DEFAULT_LINEAR_TOLERANCE,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn geometry(&self) -> &EdgeGeometry {
        &self.geometry
    }

    pub fn materials(&self) -> &MaterialTable {
        &self.materials
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    pub fn charge(&self) -> i32 {
        self.charge
    }

    /// Global vertex of each continuity dof.
    pub fn active_nodes(&self) -> &[usize] {
        &self.active_nodes
    }

    pub fn active_index(&self, v: usize) -> Option<usize> {
        self.active_index[v]
    }

    pub fn active_tets(&self) -> &[usize] {
        &self.active_tets
    }

    /// Lumped vertex volumes restricted to active cells, per continuity dof.
    pub fn active_lumped_volumes(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.active_nodes.len()];
        for &t in &self.active_tets {
            for v in self.mesh.tets()[t].vertices {
                m[self.active_index[v].unwrap()] += 0.25 * self.geometry.tet_volumes[t];
            }
        }
        m
    }

    /// Builds an initial state: uniform-or-given `n0` on active nodes, the
    /// contact concentration elsewhere, `T0` everywhere and `phi = 0`.
    pub fn initial_state(&self, n0: impl Fn([f64; 3]) -> f64, t0: impl Fn([f64; 3]) -> f64) -> FieldState {
        let v = self.mesh.vertices();
        FieldState {
            time: 0.0,
            phi: vec![0.0; v.len()],
            n: (0..v.len())
                .map(|i| {
                    if self.active_index[i].is_some() {
                        n0(v[i])
                    } else {
                        self.contact_density[i]
                    }
                })
                .collect(),
            temperature: v.iter().map(|&p| t0(p)).collect(),
        }
    }

    /// Largest Dirichlet/Robin reference density on the active boundary.
    pub fn boundary_density_scale(&self) -> f64 {
        self.continuity_bc
            .iter()
            .map(|b| match b.condition {
                BoundaryCondition::Dirichlet(v) => v.abs(),
                BoundaryCondition::Robin { reference, .. } => reference.abs(),
                BoundaryCondition::Neumann(_) => 0.0,
            })
            .fold(0.0, f64::max)
    }

    fn solve(&self, system: &SparseSystem, equation: &'static str) -> Result<(Vec<f64>, f64), EquationError> {
        let x =
            solve_linear(system, self.linear_tolerance).map_err(|source| EquationError::Fem { equation, source })?;
        let r = system.backward_error(&x);
        Ok((x, r))
    }

    fn apply_bcs(
        &self,
        system: &mut SparseSystem,
        bcs: &[ResolvedBc],
        equation: &'static str,
    ) -> Result<(), EquationError> {
        let wrap = |source| EquationError::Fem { equation, source };
        let mut dirichlet: BTreeMap<usize, f64> = BTreeMap::new();
        for bc in bcs {
            match bc.condition {
                BoundaryCondition::Neumann(g) => system.apply_neumann(&bc.faces, g).map_err(wrap)?,
                BoundaryCondition::Robin { coefficient, reference } => {
                    system.apply_robin(&bc.faces, coefficient, reference).map_err(wrap)?
                }
                BoundaryCondition::Dirichlet(v) => {
                    for f in &bc.faces {
                        for &n in &f.nodes {
                            dirichlet.insert(n, v);
                        }
                    }
                }
            }
        }
        let (nodes, values): (Vec<usize>, Vec<f64>) = dirichlet.into_iter().unzip();
        system.apply_dirichlet(&nodes, &values).map_err(wrap)
    }

    fn scatter(&self, system: &mut SparseSystem, locals: Vec<(usize, LocalMatrix)>) {
        for (t, m) in locals {
            system.add_local(self.mesh.tets()[t].vertices, &m);
        }
    }
}

/// Generalized Poisson system for the potential.
///
/// Stiffness with `sigma | epsilon | sigma` per region; right-hand side
/// `q (z n + doping)` lumped on active cells minus the thermoelectric
/// stiffness `sigma alpha` applied to `T` in the contacts.
pub fn assemble_poisson(dev: &Device, n: &[f64], t: &[f64]) -> Result<SparseSystem, EquationError> {
    assemble_poisson_with(dev, Some((n, t)))
}

/// Charge-free Poisson system with the contact data only.
pub fn assemble_laplace(dev: &Device) -> Result<SparseSystem, EquationError> {
    assemble_poisson_with(dev, None)
}

fn assemble_poisson_with(dev: &Device, sources: Option<(&[f64], &[f64])>) -> Result<SparseSystem, EquationError> {
    let mesh = &dev.mesh;
    let mut sys = SparseSystem::new(dev.pattern.clone());
    let locals: Vec<(usize, LocalMatrix)> = (0..mesh.num_tets())
        .into_par_iter()
        .map(|t| {
            (
                t,
                local_diffusion_from_weights(&dev.geometry.tet_weights[t], dev.elements[t].s_phi),
            )
        })
        .collect();
    dev.scatter(&mut sys, locals);
    if let Some((n, temp)) = sources {
        let z = dev.charge as f64;
        for (t, tet) in mesh.tets().iter().enumerate() {
            let el = &dev.elements[t];
            if el.region == RegionLabel::Active {
                let share = 0.25 * dev.geometry.tet_volumes[t];
                for v in tet.vertices {
                    sys.add_rhs(v, share * Q * (z * n[v] + el.doping));
                }
            } else if el.s_t != 0.0 {
                let kt = local_diffusion_from_weights(&dev.geometry.tet_weights[t], el.s_t);
                for a in 0..4 {
                    let load: f64 = (0..4).map(|b| kt[a][b] * temp[tet.vertices[b]]).sum();
                    sys.add_rhs(tet.vertices[a], -load);
                }
            }
        }
    }
    dev.apply_bcs(&mut sys, &dev.poisson_bc, "poisson")?;
    Ok(sys)
}

/// Per-edge transport coefficients of the continuity equation on active cells.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTransport {
    /// Entry `k` belongs to `Device::active_tets()[k]`.
    pub peclet: Vec<[f64; 6]>,
    /// Edge diffusivities (m^2/s).
    pub diffusivity: Vec<[f64; 6]>,
}

/// Edge Peclet numbers and diffusivities from `phi^(m+1)`, `T^(m)`, `n^(m)`.
///
/// For charge number `z` and edge `i -> j`:
/// `u = -z (d_phi + alpha d_T) / V_T - ln(n~ / N_ref) d_T / T~`, with `V_T`
/// the thermal voltage at the edge-mean temperature `T~` and `n~` the
/// edge-mean density. For `z = -1` this is
/// `(d_phi + alpha d_T - (K_B / q) ln(n~ / N_ref) d_T) / V_T`. The
/// diffusivity is the Einstein value at `T~` with the cell mobility.
pub fn compute_drift_velocity_n(
    dev: &Device,
    phi: &[f64],
    t: &[f64],
    n: &[f64],
) -> Result<EdgeTransport, EquationError> {
    let z = dev.charge;
    type EdgePair = ([f64; 6], [f64; 6]);
    let results: Result<Vec<EdgePair>, MaterialError> = dev
        .active_tets
        .par_iter()
        .map(|&k| {
            let el = &dev.elements[k];
            let v = dev.mesh.tets()[k].vertices;
            let mut u = [0.0; 6];
            let mut d = [0.0; 6];
            for (e, &(a, b)) in TET_EDGES.iter().enumerate() {
                let (i, j) = (v[a], v[b]);
                let tm = 0.5 * (t[i] + t[j]);
                let nm = (0.5 * (n[i] + n[j])).max(N_FLOOR);
                let dphi = phi[j] - phi[i];
                let dt = t[j] - t[i];
                let vt = K_B * tm / Q;
                u[e] = -(z as f64) * (dphi + el.alpha * dt) / vt - (nm / el.n_ref).ln() * dt / tm;
                d[e] = einstein_diffusivity(tm, el.mobility, z)?;
            }
            Ok((u, d))
        })
        .collect();
    let (peclet, diffusivity) = results?.into_iter().unzip();
    Ok(EdgeTransport { peclet, diffusivity })
}

/// Continuity system on the active dofs:
/// lumped `1/dt` mass plus Scharfetter-Gummel transport, right-hand side
/// `n_prev / dt`, and the active-boundary conditions.
pub fn assemble_continuity(
    dev: &Device,
    transport: &EdgeTransport,
    n_prev: &[f64],
    dt: TimeStep,
) -> Result<SparseSystem, EquationError> {
    let inv_dt = dt.inverse()?;
    let mut sys = SparseSystem::new(dev.active_pattern.clone());
    let locals: Vec<LocalMatrix> = dev
        .active_tets
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            local_sg_advection_diffusion(
                &dev.geometry.tet_weights[t],
                &transport.peclet[k],
                &transport.diffusivity[k],
            )
        })
        .collect();
    for (k, &t) in dev.active_tets.iter().enumerate() {
        let dofs = dev.mesh.tets()[t].vertices.map(|v| dev.active_index[v].unwrap());
        sys.add_local(dofs, &locals[k]);
        if inv_dt > 0.0 {
            let m = local_lumped_mass(dev.geometry.tet_volumes[t], inv_dt);
            sys.add_diagonal(dofs, &m);
            for a in 0..4 {
                let g = dev.mesh.tets()[t].vertices[a];
                sys.add_rhs(dofs[a], m[a] * n_prev[g]);
            }
        }
    }
    dev.apply_bcs(&mut sys, &dev.continuity_bc, "continuity")?;
    Ok(sys)
}

/// Edge currents and element-local electrochemical potentials feeding the
/// heat equation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatSources {
    /// Current density dotted with each element edge (A/m).
    pub current: Vec<[f64; 6]>,
    /// Electrochemical potential at each element vertex (V).
    pub phi_ec: Vec<[f64; 4]>,
}

/// Current and electrochemical potential from `phi^(m+1)`, `n^(m+1)`, `T^(m)`.
///
/// Active edge currents reuse the Scharfetter-Gummel fluxes of `transport`,
/// so they are the currents of the continuity system just solved.
pub fn compute_heat_drive(
    dev: &Device,
    phi: &[f64],
    n: &[f64],
    t: &[f64],
    transport: Option<&EdgeTransport>,
) -> HeatSources {
    let mesh = &dev.mesh;
    let z = dev.charge;
    let mut active_slot = vec![usize::MAX; mesh.num_tets()];
    for (k, &t) in dev.active_tets.iter().enumerate() {
        active_slot[t] = k;
    }
    let pairs: Vec<([f64; 6], [f64; 4])> = (0..mesh.num_tets())
        .into_par_iter()
        .map(|k| {
            let el = &dev.elements[k];
            let v = mesh.tets()[k].vertices;
            if let HeatDrive::Prescribed(j) = dev.physics.heat_drive {
                let p = mesh.tet_points(k);
                let mut cur = [0.0; 6];
                for (e, &(a, b)) in TET_EDGES.iter().enumerate() {
                    cur[e] = (0..3).map(|d| j[d] * (p[b][d] - p[a][d])).sum();
                }
                return (cur, [0.0; 4]);
            }
            let mut cur = [0.0; 6];
            let mut pec = [0.0; 4];
            if el.region == RegionLabel::Active {
                if let Some(tr) = transport {
                    let s = active_slot[k];
                    for (e, &(a, b)) in TET_EDGES.iter().enumerate() {
                        let (u, d) = (tr.peclet[s][e], tr.diffusivity[s][e]);
                        let flux = d * (bernoulli(-u) * n[v[a]] - bernoulli(u) * n[v[b]]);
                        cur[e] = z as f64 * Q * flux;
                    }
                }
                for a in 0..4 {
                    pec[a] = phi[v[a]] + chemical_potential(n[v[a]], t[v[a]], z, el.n_ref);
                }
            } else {
                for (e, &(a, b)) in TET_EDGES.iter().enumerate() {
                    let dphi = phi[v[b]] - phi[v[a]];
                    let dt = t[v[b]] - t[v[a]];
                    cur[e] = -el.s_phi * (dphi + el.alpha * dt);
                }
                for a in 0..4 {
                    pec[a] = phi[v[a]] - el.chem_volts;
                }
            }
            (cur, pec)
        })
        .collect();
    let (current, phi_ec) = pairs.into_iter().unzip();
    HeatSources { current, phi_ec }
}

/// Heat system: lumped `rho c / dt` mass plus Scharfetter-Gummel convection
/// with thermal Peclet `alpha (j . e) / kappa`; right-hand side
/// `rho c T_prev / dt` plus the weak divergence of the electrochemical
/// source. Boundary conditions act on the total heat flux.
pub fn assemble_heat(
    dev: &Device,
    sources: &HeatSources,
    t_prev: &[f64],
    dt: TimeStep,
) -> Result<SparseSystem, EquationError> {
    let inv_dt = dt.inverse()?;
    let mesh = &dev.mesh;
    let mut sys = SparseSystem::new(dev.pattern.clone());
    let locals: Vec<(usize, LocalMatrix)> = (0..mesh.num_tets())
        .into_par_iter()
        .map(|t| {
            let el = &dev.elements[t];
            let u = sources.current[t].map(|c| el.alpha * c / el.kappa);
            (
                t,
                local_sg_advection_diffusion(&dev.geometry.tet_weights[t], &u, &[el.kappa; 6]),
            )
        })
        .collect();
    dev.scatter(&mut sys, locals);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let el = &dev.elements[t];
        let v = tet.vertices;
        if inv_dt > 0.0 {
            let m = local_lumped_mass(dev.geometry.tet_volumes[t], el.rho_c * inv_dt);
            sys.add_diagonal(v, &m);
            for a in 0..4 {
                sys.add_rhs(v[a], m[a] * t_prev[v[a]]);
            }
        }
        let weight = match dev.physics.heat_source {
            HeatSourceForm::ThermalVelocity => el.alpha,
            HeatSourceForm::Current => 1.0,
        };
        let w = &dev.geometry.tet_weights[t];
        let pec = &sources.phi_ec[t];
        for (e, &(a, b)) in TET_EDGES.iter().enumerate() {
            let s = w[e] * 0.5 * (pec[a] + pec[b]) * weight * sources.current[t][e];
            if s != 0.0 {
                sys.add_rhs(v[a], -s);
                sys.add_rhs(v[b], s);
            }
        }
    }
    dev.apply_bcs(&mut sys, &dev.heat_bc, "heat")?;
    Ok(sys)
}

/// Solves a Poisson system, returning the potential and the backward error.
pub fn solve_poisson(dev: &Device, n: &[f64], t: &[f64]) -> Result<(Vec<f64>, f64), EquationError> {
    dev.solve(&assemble_poisson(dev, n, t)?, "poisson")
}

pub fn solve_laplace(dev: &Device) -> Result<(Vec<f64>, f64), EquationError> {
    dev.solve(&assemble_laplace(dev)?, "poisson")
}

/// Solves the continuity system and scatters the active solution into a
/// copy of `n_iter` (contact-only nodes keep their values).
pub fn solve_continuity(
    dev: &Device,
    transport: &EdgeTransport,
    n_iter: &[f64],
    n_prev: &[f64],
    dt: TimeStep,
) -> Result<(Vec<f64>, f64), EquationError> {
    let sys = assemble_continuity(dev, transport, n_prev, dt)?;
    let (x, r) = dev.solve(&sys, "continuity")?;
    let mut n = n_iter.to_vec();
    for (k, &g) in dev.active_nodes.iter().enumerate() {
        n[g] = x[k];
    }
    Ok((n, r))
}

pub fn solve_heat(
    dev: &Device,
    sources: &HeatSources,
    t_prev: &[f64],
    dt: TimeStep,
) -> Result<(Vec<f64>, f64), EquationError> {
    dev.solve(&assemble_heat(dev, sources, t_prev, dt)?, "heat")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{ActiveMaterial, ActiveZone, MetalMaterial};
    use crate::mesh::build_box_mesh;

    pub(crate) fn zone() -> ActiveZone {
        ActiveZone {
            epsilon: 11.7 * 8.854e-12,
            alpha: 1e-4,
            kappa: 1.0,
            rho: 3.98e3,
            c: 880.0,
            mobility: 3.3e-6,
            n_ref: 1e16,
            doping: 0.0,
        }
    }

    fn metal(sigma: f64, alpha: f64) -> MetalMaterial {
        MetalMaterial {
            sigma,
            alpha,
            kappa: 100.0,
            rho: 8e3,
            c: 400.0,
            chemical_energy: 0.0,
            electron_density: 1e28,
            n_ref: 1e28,
        }
    }

    fn spec(phi_b: f64, phi_t: f64) -> BoundarySpec {
        let mut b = BoundarySpec::default();
        b.poisson
            .insert(SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(phi_b));
        b.poisson
            .insert(SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(phi_t));
        b.heat.insert(SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(300.0));
        b.heat.insert(SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(300.0));
        b.heat.insert(SurfaceLabel::SigmaLat, BoundaryCondition::Neumann(0.0));
        b
    }

    fn active_device(div: [usize; 3], b: BoundarySpec) -> Device {
        let mesh = build_box_mesh([1e-8; 3], div, &[]).unwrap();
        let mats = MaterialTable {
            bottom: None,
            active: ActiveMaterial::uniform(zone()),
            top: None,
        };
        Device::new(mesh, mats, b, Physics::default()).unwrap()
    }

    #[test]
    fn poisson_ramp_and_gauge_shift() {
        let dev = active_device([2, 2, 5], spec(0.0, 1.0));
        let nv = dev.mesh().num_vertices();
        let n = vec![0.0; nv];
        let t = vec![300.0; nv];
        let (phi, _) = solve_poisson(&dev, &n, &t).unwrap();
        for (v, p) in dev.mesh().vertices().iter().enumerate() {
            assert!((phi[v] - p[2] / 1e-8).abs() < 1e-12);
        }
        let shifted = active_device([2, 2, 5], spec(0.7, 1.7));
        let (phi2, _) = solve_poisson(&shifted, &n, &t).unwrap();
        for v in 0..nv {
            assert!((phi2[v] - phi[v] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn neutral_active_region_is_harmonic() {
        let mut z = zone();
        z.doping = 1e24;
        let mesh = build_box_mesh([1e-8; 3], [2, 2, 4], &[]).unwrap();
        let mats = MaterialTable {
            bottom: None,
            active: ActiveMaterial::uniform(z),
            top: None,
        };
        let dev = Device::new(mesh, mats, spec(0.0, 2.0), Physics::default()).unwrap();
        let nv = dev.mesh().num_vertices();
        let sys = assemble_poisson(&dev, &vec![1e24; nv], &vec![300.0; nv]).unwrap();
        let lap = assemble_laplace(&dev).unwrap();
        assert_eq!(sys.rhs(), lap.rhs());
    }

    #[test]
    fn three_layer_stack_drops_across_dielectric() {
        let mesh = build_box_mesh([1e-8, 1e-8, 1e-8], [1, 1, 10], &[3e-9, 7e-9]).unwrap();
        let mats = MaterialTable {
            bottom: Some(metal(1e6, 0.0)),
            active: ActiveMaterial::uniform(zone()),
            top: Some(metal(1e6, 0.0)),
        };
        let dev = Device::new(mesh, mats, spec(0.0, 1.0), Physics::default()).unwrap();
        let (phi, _) = solve_laplace(&dev).unwrap();
        // Series conductances: metal layers 3 nm each, dielectric 4 nm.
        let g_m = 1e6 / 3e-9;
        let g_a = zone().epsilon / 4e-9;
        let r = 1.0 / g_m + 1.0 / g_a + 1.0 / g_m;
        let drop_bottom = (1.0 / g_m) / r;
        for (v, p) in dev.mesh().vertices().iter().enumerate() {
            if (p[2] - 3e-9).abs() < 1e-15 {
                assert!((phi[v] - drop_bottom).abs() < 1e-12);
            }
        }
        assert!(drop_bottom < 1e-12);
    }

    #[test]
    fn isothermal_drift_matches_classical_peclet() {
        let dev = active_device([1, 1, 4], spec(0.0, 1.0));
        let nv = dev.mesh().num_vertices();
        let phi: Vec<f64> = dev.mesh().vertices().iter().map(|p| p[2] * 1e8).collect();
        let t = vec![300.0; nv];
        let n = vec![3e20; nv];
        let tr = compute_drift_velocity_n(&dev, &phi, &t, &n).unwrap();
        let vt = K_B * 300.0 / Q;
        for (k, &tt) in dev.active_tets().iter().enumerate() {
            let v = dev.mesh().tets()[tt].vertices;
            for (e, &(a, b)) in TET_EDGES.iter().enumerate() {
                let expect = (phi[v[b]] - phi[v[a]]) / vt;
                assert!((tr.peclet[k][e] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
            }
        }
        // Thermoelectric balance: d_phi = -alpha d_T with n = N_ref.
        let t: Vec<f64> = dev.mesh().vertices().iter().map(|p| 300.0 + 1e10 * p[2]).collect();
        let phi: Vec<f64> = t.iter().map(|x| -zone().alpha * x).collect();
        let n = vec![zone().n_ref; nv];
        let tr = compute_drift_velocity_n(&dev, &phi, &t, &n).unwrap();
        assert!(tr.peclet.iter().flatten().all(|u| u.abs() < 1e-12));
    }

    #[test]
    fn closed_continuity_keeps_uniform_density() {
        let b = spec(0.0, 0.0);
        let dev = active_device([2, 2, 2], b);
        let nv = dev.mesh().num_vertices();
        let zero = vec![0.0; nv];
        let t = vec![300.0; nv];
        let n0 = vec![1e20; nv];
        let tr = compute_drift_velocity_n(&dev, &zero, &t, &n0).unwrap();
        // Conditioning grows like dt; the last case is nearly a pure Neumann problem.
        for (dt, tol) in [(1e-12, 1e-12), (1e-9, 1e-12), (1e-6, 1e-9), (1.0, 1e-3)] {
            let (n, _) = solve_continuity(&dev, &tr, &n0, &n0, TimeStep::Finite(dt)).unwrap();
            assert!(n.iter().all(|x| (x / 1e20 - 1.0).abs() < tol), "dt {dt}");
        }
        assert!(matches!(
            assemble_continuity(&dev, &tr, &n0, TimeStep::Finite(0.0)),
            Err(EquationError::NonPositiveTimeStep(_))
        ));
    }

    #[test]
    fn robin_flux_matches_boundary_data() {
        let mut b = spec(0.0, 1.0);
        let robin = |n_eq| BoundaryCondition::Robin {
            coefficient: 2e2,
            reference: n_eq,
        };
        b.continuity.insert(SurfaceLabel::GammaB, robin(1e19));
        b.continuity.insert(SurfaceLabel::GammaT, robin(1e13));
        let dev = active_device([1, 1, 6], b);
        let nv = dev.mesh().num_vertices();
        let phi: Vec<f64> = dev.mesh().vertices().iter().map(|p| p[2] / 1e-8).collect();
        let t = vec![300.0; nv];
        let n0 = vec![1e16; nv];
        let tr = compute_drift_velocity_n(&dev, &phi, &t, &n0).unwrap();
        let (n, _) = solve_continuity(&dev, &tr, &n0, &n0, TimeStep::Steady).unwrap();
        // Steady, closed laterally: inflow at the bottom equals outflow at the top.
        let area = 1e-16;
        let mean = |z: f64| {
            let vals: Vec<f64> = dev
                .mesh()
                .vertices()
                .iter()
                .enumerate()
                .filter(|(_, p)| (p[2] - z).abs() < 1e-15)
                .map(|(v, _)| n[v])
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let inflow = 2e2 * (1e19 - mean(0.0)) * area;
        let outflow = 2e2 * (mean(1e-8) - 1e13) * area;
        assert!(inflow > 0.0);
        assert!((inflow - outflow).abs() < 1e-8 * inflow);
        assert!(n.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn heat_without_current_is_linear() {
        let mut b = spec(0.0, 0.0);
        b.heat.insert(SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(300.0));
        b.heat.insert(SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(900.0));
        let dev = active_device([2, 2, 6], b);
        let nv = dev.mesh().num_vertices();
        let src = HeatSources {
            current: vec![[0.0; 6]; dev.mesh().num_tets()],
            phi_ec: vec![[0.0; 4]; dev.mesh().num_tets()],
        };
        let (t, _) = solve_heat(&dev, &src, &vec![300.0; nv], TimeStep::Steady).unwrap();
        for (v, p) in dev.mesh().vertices().iter().enumerate() {
            assert!((t[v] - (300.0 + 600.0 * p[2] / 1e-8)).abs() < 1e-9);
        }
    }

    #[test]
    fn configuration_errors_are_collected() {
        let mesh = build_box_mesh([1e-8; 3], [1, 1, 2], &[]).unwrap();
        let mats = MaterialTable {
            bottom: None,
            active: ActiveMaterial::uniform(zone()),
            top: None,
        };
        let mut b = BoundarySpec::default();
        b.heat.insert(SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(300.0));
        b.heat.insert(SurfaceLabel::GammaB, BoundaryCondition::Dirichlet(300.0));
        let err = Device::new(mesh, mats, b, Physics::default()).unwrap_err();
        let EquationError::Config(list) = err else { panic!() };
        let text = list.join("\n");
        assert!(text.contains("dirichlet condition on sigma_b is required"), "{text}");
        assert!(text.contains("dirichlet condition on sigma_t is required"), "{text}");
        assert!(text.contains("same surface"), "{text}");
        assert!(text.contains("heat: a condition on sigma_lat is required"), "{text}");
    }
}
