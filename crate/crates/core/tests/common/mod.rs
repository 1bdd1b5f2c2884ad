#![allow(dead_code)]

use std::collections::BTreeMap;

use tedsim::equations::{BoundaryCondition, BoundarySpec, Device, FieldMode, Physics};
use tedsim::materials::{ActiveMaterial, ActiveZone, MaterialTable};
use tedsim::mesh::{build_box_mesh, SurfaceLabel};

pub fn zone(mobility: f64, n_ref: f64, doping: f64) -> ActiveZone {
    ActiveZone {
        epsilon: 1.0359e-10,
        alpha: 1e-4,
        kappa: 1.5,
        rho: 2330.0,
        c: 700.0,
        mobility,
        n_ref,
        doping,
    }
}

pub fn bcs(entries: &[(SurfaceLabel, BoundaryCondition)]) -> BTreeMap<SurfaceLabel, BoundaryCondition> {
    entries.iter().copied().collect()
}

pub fn robin(coefficient: f64, reference: f64) -> BoundaryCondition {
    BoundaryCondition::Robin { coefficient, reference }
}

/// 10 nm cube at rest: no bias, doping equal to the contact densities and
/// every thermal reference at 300 K.
pub fn equilibrium_device(divisions: [usize; 3], density: f64) -> Device {
    let mesh = build_box_mesh([1e-8; 3], divisions, &[]).unwrap();
    let active = ActiveMaterial::uniform(zone(1e-3, 1e16, density));
    let boundary = BoundarySpec {
        poisson: bcs(&[
            (SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(0.0)),
            (SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(0.0)),
        ]),
        continuity: bcs(&[
            (SurfaceLabel::GammaB, robin(200.0, density)),
            (SurfaceLabel::GammaT, robin(200.0, density)),
            (SurfaceLabel::SigmaLatA, robin(200.0, density)),
        ]),
        heat: bcs(&[
            (SurfaceLabel::SigmaB, robin(1e5, 300.0)),
            (SurfaceLabel::SigmaT, robin(1e5, 300.0)),
            (SurfaceLabel::SigmaLat, robin(1e5, 300.0)),
        ]),
    };
    let materials = MaterialTable {
        bottom: None,
        active,
        top: None,
    };
    Device::new(mesh, materials, boundary, Physics::default()).unwrap()
}

/// Closed column: imposed ramp potential and temperature, no flux through
/// any surface, so the total number of carriers is an invariant.
pub fn closed_device(divisions: [usize; 3], bias: f64, charge: i32) -> Device {
    let mesh = build_box_mesh([1e-8, 1e-8, 2e-8], divisions, &[]).unwrap();
    let mut active = ActiveMaterial::uniform(zone(1e-3, 1e22, 0.0));
    active.charge = charge;
    let boundary = BoundarySpec {
        poisson: bcs(&[
            (SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(0.0)),
            (SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(bias)),
        ]),
        continuity: BTreeMap::new(),
        heat: bcs(&[
            (SurfaceLabel::SigmaB, BoundaryCondition::Dirichlet(300.0)),
            (SurfaceLabel::SigmaT, BoundaryCondition::Dirichlet(400.0)),
        ]),
    };
    let physics = Physics {
        potential: FieldMode::Imposed,
        density: FieldMode::Solved,
        temperature: FieldMode::Imposed,
        ..Physics::default()
    };
    let materials = MaterialTable {
        bottom: None,
        active,
        top: None,
    };
    Device::new(mesh, materials, boundary, physics).unwrap()
}

pub fn total_carriers(dev: &Device, n: &[f64]) -> f64 {
    let vol = dev.active_lumped_volumes();
    dev.active_nodes().iter().zip(&vol).map(|(&v, w)| n[v] * w).sum()
}
