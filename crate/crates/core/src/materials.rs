//! Physical constants, per-region coefficients and the derived potentials.

use thiserror::Error;

use crate::mesh::RegionLabel;

/// Elementary charge (C).
pub const Q: f64 = 1.602e-19;
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.38e-23;
/// Gas constant (J/(K mol)).
pub const R: f64 = 8.314;
/// Faraday constant (C/mol).
pub const F: f64 = 9.648e4;

/// Densities are clamped to this floor (1/m^3) before any logarithm.
pub const N_FLOOR: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("temperature must be positive, got {0} K")]
    NonPositiveTemperature(f64),
    #[error("species charge number must be nonzero")]
    ZeroCharge,
    #[error("{field} must be {requirement}, got {value}")]
    Invalid {
        field: String,
        requirement: &'static str,
        value: f64,
    },
    #[error("active zone breaks must be increasing and one fewer than the zones ({zones} zones, {breaks} breaks)")]
    ZoneLayout { zones: usize, breaks: usize },
}

/// Coefficients of a metallic contact region.
#[derive(Debug, Clone, PartialEq)]
pub struct MetalMaterial {
    /// Electrical conductivity (S/m).
    pub sigma: f64,
    /// Thermopower (V/K).
    pub alpha: f64,
    /// Thermal conductivity (W/(m K)).
    pub kappa: f64,
    /// Mass density (kg/m^3).
    pub rho: f64,
    /// Specific heat (J/(kg K)).
    pub c: f64,
    /// Constant chemical energy (J/mol).
    pub chemical_energy: f64,
    /// Fixed electron concentration (1/m^3); stored, never transported.
    pub electron_density: f64,
    pub n_ref: f64,
}

/// Coefficients of one z-slab of the active layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveZone {
    /// Permittivity (F/m).
    pub epsilon: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub rho: f64,
    pub c: f64,
    /// Mobility (m^2/(V s)).
    pub mobility: f64,
    pub n_ref: f64,
    /// Net doping (1/m^3).
    pub doping: f64,
}

/// The active layer: a species charge number and a stack of zones ordered
/// by increasing z, separated at `zone_breaks`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveMaterial {
    pub charge: i32,
    pub zone_breaks: Vec<f64>,
    pub zones: Vec<ActiveZone>,
}

impl ActiveMaterial {
    pub fn uniform(zone: ActiveZone) -> Self {
        ActiveMaterial {
            charge: -1,
            zone_breaks: Vec::new(),
            zones: vec![zone],
        }
    }

    /// Zone index containing height `z`.
    pub fn zone_index(&self, z: f64) -> usize {
        self.zone_breaks.partition_point(|&b| b <= z)
    }

    pub fn zone_at(&self, z: f64) -> &ActiveZone {
        &self.zones[self.zone_index(z).min(self.zones.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum RegionMaterial<'a> {
    Metal(&'a MetalMaterial),
    Active(&'a ActiveZone),
}

impl RegionMaterial<'_> {
    pub fn alpha(&self) -> f64 {
        match self {
            RegionMaterial::Metal(m) => m.alpha,
            RegionMaterial::Active(a) => a.alpha,
        }
    }

    pub fn kappa(&self) -> f64 {
        match self {
            RegionMaterial::Metal(m) => m.kappa,
            RegionMaterial::Active(a) => a.kappa,
        }
    }

    /// Volumetric heat capacity rho*c (J/(m^3 K)).
    pub fn heat_capacity(&self) -> f64 {
        match self {
            RegionMaterial::Metal(m) => m.rho * m.c,
            RegionMaterial::Active(a) => a.rho * a.c,
        }
    }

    /// Coefficient of grad(phi) in the generalized Poisson flux.
    pub fn potential_coefficient(&self) -> f64 {
        match self {
            RegionMaterial::Metal(m) => m.sigma,
            RegionMaterial::Active(a) => a.epsilon,
        }
    }

    /// Coefficient of grad(T) in the generalized Poisson flux.
    pub fn thermal_coefficient(&self) -> f64 {
        match self {
            RegionMaterial::Metal(m) => m.sigma * m.alpha,
            RegionMaterial::Active(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTable {
    pub bottom: Option<MetalMaterial>,
    pub active: ActiveMaterial,
    pub top: Option<MetalMaterial>,
}

impl MaterialTable {
    /// Material of a cell in `region` whose centroid height is `z`.
    ///
    /// Panics if a contact region is requested but has no material; use
    /// [`MaterialTable::validate`] first.
    pub fn lookup(&self, region: RegionLabel, z: f64) -> RegionMaterial<'_> {
        match region {
            RegionLabel::Bottom => RegionMaterial::Metal(self.bottom.as_ref().expect("bottom material")),
            RegionLabel::Top => RegionMaterial::Metal(self.top.as_ref().expect("top material")),
            RegionLabel::Active => RegionMaterial::Active(self.active.zone_at(z)),
        }
    }

    pub fn metal(&self, region: RegionLabel) -> Option<&MetalMaterial> {
        match region {
            RegionLabel::Bottom => self.bottom.as_ref(),
            RegionLabel::Top => self.top.as_ref(),
            RegionLabel::Active => None,
        }
    }

    /// Every coefficient violation, named by `section.field`.
    pub fn validate(&self) -> Vec<MaterialError> {
        let mut errs = Vec::new();
        let mut positive = |field: String, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(MaterialError::Invalid {
                    field,
                    requirement: "positive and finite",
                    value: v,
                });
            }
        };
        for (name, m) in [("bottom", &self.bottom), ("top", &self.top)] {
            if let Some(m) = m {
                positive(format!("{name}.sigma"), m.sigma);
                positive(format!("{name}.kappa"), m.kappa);
                positive(format!("{name}.rho"), m.rho);
                positive(format!("{name}.c"), m.c);
                positive(format!("{name}.electron_density"), m.electron_density);
                positive(format!("{name}.n_ref"), m.n_ref);
            }
        }
        for (i, z) in self.active.zones.iter().enumerate() {
            let f = |s: &str| format!("active.zone[{i}].{s}");
            positive(f("epsilon"), z.epsilon);
            positive(f("kappa"), z.kappa);
            positive(f("rho"), z.rho);
            positive(f("c"), z.c);
            positive(f("mobility"), z.mobility);
            positive(f("n_ref"), z.n_ref);
        }
        let finite = |errs: &mut Vec<MaterialError>, field: String, v: f64| {
            if !v.is_finite() {
                errs.push(MaterialError::Invalid {
                    field,
                    requirement: "finite",
                    value: v,
                });
            }
        };
        for (name, m) in [("bottom", &self.bottom), ("top", &self.top)] {
            if let Some(m) = m {
                finite(&mut errs, format!("{name}.alpha"), m.alpha);
                finite(&mut errs, format!("{name}.chemical_energy"), m.chemical_energy);
            }
        }
        for (i, z) in self.active.zones.iter().enumerate() {
            finite(&mut errs, format!("active.zone[{i}].alpha"), z.alpha);
            if !(z.doping >= 0.0 && z.doping.is_finite()) {
                errs.push(MaterialError::Invalid {
                    field: format!("active.zone[{i}].doping"),
                    requirement: "nonnegative and finite",
                    value: z.doping,
                });
            }
        }
        if self.active.charge == 0 {
            errs.push(MaterialError::ZeroCharge);
        }
        let b = &self.active.zone_breaks;
        if self.active.zones.is_empty()
            || b.len() + 1 != self.active.zones.len()
            || b.windows(2).any(|w| !(w[0] < w[1]))
        {
            errs.push(MaterialError::ZoneLayout {
                zones: self.active.zones.len(),
                breaks: b.len(),
            });
        }
        errs
    }
}

/// Generalized Einstein relation `K_B T mu / (q |z|)` (m^2/s).
pub fn einstein_diffusivity(t: f64, mobility: f64, z: i32) -> Result<f64, MaterialError> {
    if z == 0 {
        return Err(MaterialError::ZeroCharge);
    }
    if !(t > 0.0) {
        return Err(MaterialError::NonPositiveTemperature(t));
    }
    Ok(K_B * t * mobility / (Q * z.unsigned_abs() as f64))
}

/// Thermal voltage `K_B T / q` (V).
pub fn thermal_voltage(t: f64) -> f64 {
    K_B * t / Q
}

/// Chemical potential `(K_B T / (z q)) ln(n / N_ref)` (V), with `n` clamped
/// at [`N_FLOOR`]. `z` must be nonzero.
pub fn chemical_potential(n: f64, t: f64, z: i32, n_ref: f64) -> f64 {
    assert!(z != 0, "species charge number must be nonzero");
    K_B * t / (z as f64 * Q) * (n.max(N_FLOOR) / n_ref).ln()
}

/// Thermal potential `alpha T` (V).
pub fn thermal_potential(alpha: f64, t: f64) -> f64 {
    alpha * t
}

/// Species conductivity `q |z| mu n` (S/m).
pub fn species_conductivity(n: f64, mobility: f64, z: i32) -> f64 {
    Q * z.unsigned_abs() as f64 * mobility * n
}

/// Thermo-electrochemical potential (V).
///
/// Metal: `phi - mu_c / F + alpha T`. Active: `phi + chemical potential + alpha T`,
/// which for `z = -1` is `phi - (K_B T / q) ln(n / N_ref) + alpha T`.
pub fn psi_n(phi: f64, n: f64, t: f64, material: RegionMaterial<'_>, z: i32) -> f64 {
    match material {
        RegionMaterial::Metal(m) => phi - m.chemical_energy / F + m.alpha * t,
        RegionMaterial::Active(a) => phi + chemical_potential(n, t, z, a.n_ref) + a.alpha * t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metal() -> MetalMaterial {
        MetalMaterial {
            sigma: 1e6,
            alpha: 1e-4,
            kappa: 100.0,
            rho: 8e3,
            c: 400.0,
            chemical_energy: 9.648e4,
            electron_density: 1e28,
            n_ref: 1e28,
        }
    }

    fn zone() -> ActiveZone {
        ActiveZone {
            epsilon: 1e-10,
            alpha: 1e-4,
            kappa: 1.0,
            rho: 3.98e3,
            c: 880.0,
            mobility: 3.3e-6,
            n_ref: 1e16,
            doping: 0.0,
        }
    }

    #[test]
    fn einstein_examples() {
        let d = einstein_diffusivity(300.0, 3.3e-6, -1).unwrap();
        assert!((d - 8.52808988764045e-08).abs() < 1e-20);
        let d2 = einstein_diffusivity(300.0, 3.3e-6, 2).unwrap();
        assert!((d2 - 0.5 * d).abs() < 1e-22);
        assert_eq!(einstein_diffusivity(300.0, 0.0, 1).unwrap(), 0.0);
        assert_eq!(
            einstein_diffusivity(0.0, 1.0, 1),
            Err(MaterialError::NonPositiveTemperature(0.0))
        );
        assert_eq!(einstein_diffusivity(300.0, 1.0, 0), Err(MaterialError::ZeroCharge));
    }

    #[test]
    fn chemical_potential_examples() {
        assert_eq!(chemical_potential(1e16, 300.0, -1, 1e16), 0.0);
        let e = std::f64::consts::E;
        let v = chemical_potential(1e16 * e, 300.0, -1, 1e16);
        assert!((v + 0.025842696629213485).abs() < 1e-15);
        let v = chemical_potential(1e16 * e, 300.0, 1, 1e16);
        assert!((v - 0.025842696629213485).abs() < 1e-15);
        // Clamped below the floor.
        assert_eq!(
            chemical_potential(0.0, 300.0, -1, 1e16),
            chemical_potential(N_FLOOR, 300.0, -1, 1e16)
        );
    }

    #[test]
    fn psi_examples() {
        let mut m = metal();
        m.chemical_energy = 0.0;
        assert_eq!(psi_n(0.0, 0.0, 0.0, RegionMaterial::Metal(&m), -1), 0.0);
        let z = zone();
        let v = psi_n(0.2, 1e16, 300.0, RegionMaterial::Active(&z), -1);
        assert!((v - (0.2 + 0.03)).abs() < 1e-15);
        let m = metal();
        let v = psi_n(1.0, 0.0, 300.0, RegionMaterial::Metal(&m), -1);
        assert!((v - 0.03).abs() < 1e-15);
    }

    #[test]
    fn zone_lookup() {
        let mut a = ActiveMaterial::uniform(zone());
        a.zones = vec![zone(), zone(), zone()];
        a.zones[1].mobility = 300.0;
        a.zone_breaks = vec![3e-9, 7e-9];
        assert_eq!(a.zone_index(1e-9), 0);
        assert_eq!(a.zone_index(5e-9), 1);
        assert_eq!(a.zone_index(9e-9), 2);
        assert_eq!(a.zone_at(5e-9).mobility, 300.0);
    }

    #[test]
    fn validation_names_fields() {
        let mut t = MaterialTable {
            bottom: Some(metal()),
            active: ActiveMaterial::uniform(zone()),
            top: None,
        };
        assert!(t.validate().is_empty());
        t.active.zones[0].kappa = -1.0;
        t.bottom.as_mut().unwrap().sigma = 0.0;
        let errs = t.validate();
        assert_eq!(errs.len(), 2);
        let text: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        assert!(text.iter().any(|s| s.contains("active.zone[0].kappa")));
        assert!(text.iter().any(|s| s.contains("bottom.sigma")));
    }

    proptest! {
        #[test]
        fn einstein_scaling(t in 1.0f64..2000.0, mu in 1e-10f64..1e3, s in 0.1f64..10.0, z in 1i32..4) {
            let d = einstein_diffusivity(t, mu, 1).unwrap();
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            prop_assert!(rel(einstein_diffusivity(s * t, mu, 1).unwrap(), s * d) < 1e-14);
            prop_assert!(rel(einstein_diffusivity(t, s * mu, 1).unwrap(), s * d) < 1e-14);
            prop_assert!(rel(einstein_diffusivity(t, mu, -z).unwrap(), d / z as f64) < 1e-14);
        }

        #[test]
        fn chemical_potential_is_log_additive(
            a in 8.0f64..40.0, b in 8.0f64..40.0, t in 10.0f64..1500.0, z in prop::sample::select(vec![-2, -1, 1, 2])
        ) {
            let n_ref = 1e16;
            let (n1, n2) = (10f64.powf(a), 10f64.powf(b));
            let lhs = chemical_potential(n1 * n2 / n_ref, t, z, n_ref);
            let rhs = chemical_potential(n1, t, z, n_ref) + chemical_potential(n2, t, z, n_ref);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + rhs.abs() + 1e-3));
        }

        #[test]
        fn psi_gauge_shift(phi in -10.0f64..10.0, c in -10.0f64..10.0, n in 1.0f64..1e28, t in 1.0f64..1500.0) {
            let m = metal();
            let z = zone();
            for mat in [RegionMaterial::Metal(&m), RegionMaterial::Active(&z)] {
                let base = psi_n(phi, n, t, mat, -1);
                let shifted = psi_n(phi + c, n, t, mat, -1);
                prop_assert!((shifted - base - c).abs() < 1e-12 * (1.0 + base.abs() + c.abs()));
            }
        }
    }
}
