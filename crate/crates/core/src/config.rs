//! Run configuration: a sectioned `key = value` file (TOML syntax).
//!
//! ```text
//! [geometry]            size, divisions, bottom_thickness, top_thickness | mesh
//! [bottom] [top]        metal contacts (optional)
//! [active]              charge, zone_breaks, per-zone coefficients
//! [physics]             field modes and heat drive
//! [poisson] [continuity] [heat]   surface = "dirichlet v" | "neumann g" | "robin c ref"
//! [initial]             n0, t0
//! [time]                steady | steps | geometric
//! [solver]              toll, max_gummel, ...
//! [output]              snapshots, cuts, vtk
//! ```
//!
//! Every violation is collected before anything is built, and unknown keys
//! are errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::{Table, Value};

use crate::equations::{
    BoundaryCondition, BoundarySpec, Device, EquationError, FieldMode, FieldState, HeatDrive, HeatSourceForm, Physics,
};
use crate::gummel::{GummelSettings, NormKind, RhsLevel, Schedule, TimeGrid};
use crate::materials::{ActiveMaterial, ActiveZone, MaterialTable, MetalMaterial};
use crate::mesh::{build_box_mesh, import_mesh, Axis, Mesh, MeshError, SurfaceLabel};
use crate::profile::Quantity;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: syntax error: {message}")]
    Syntax { path: String, message: String },
    #[error("{path}: {} problem(s):\n  {}", .errors.len(), .errors.join("\n  "))]
    Invalid { path: String, errors: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Box {
        size: [f64; 3],
        divisions: [usize; 3],
        bottom_thickness: f64,
        top_thickness: f64,
    },
    /// ASCII `tetmesh 1` file, relative paths resolved against the config.
    File(PathBuf),
}

/// Initial value of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialValue {
    Constant(f64),
    /// Linear in z from the first value at the bottom of the mesh to the
    /// second at the top.
    LinearZ(f64, f64),
}

impl InitialValue {
    fn parse(s: &str) -> Option<Self> {
        let w: Vec<&str> = s.split_whitespace().collect();
        match w.as_slice() {
            ["linear_z", a, b] => Some(InitialValue::LinearZ(a.parse().ok()?, b.parse().ok()?)),
            [a] => Some(InitialValue::Constant(a.parse().ok()?)),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match *self {
            InitialValue::Constant(v) => num(v),
            InitialValue::LinearZ(a, b) => format!("\"linear_z {} {}\"", num(a), num(b)),
        }
    }

    pub fn evaluate(&self, z: f64, z_lo: f64, z_hi: f64) -> f64 {
        match *self {
            InitialValue::Constant(v) => v,
            InitialValue::LinearZ(a, b) => a + (b - a) * (z - z_lo) / (z_hi - z_lo),
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            InitialValue::Constant(v) => vec![v],
            InitialValue::LinearZ(a, b) => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimeSpec {
    Steady,
    Steps(Vec<f64>),
    Geometric { first: f64, growth: f64, final_time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotPolicy {
    All,
    Final,
    Every(usize),
}

impl SnapshotPolicy {
    /// Whether `step` (0 = initial state) of `last` gets written.
    pub fn wants(&self, step: usize, last: usize) -> bool {
        match *self {
            SnapshotPolicy::All => true,
            SnapshotPolicy::Final => step == last,
            SnapshotPolicy::Every(k) => step.is_multiple_of(k) || step == last,
        }
    }
}

/// A straight line cut parallel to an axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutSpec {
    pub quantity: Quantity,
    pub axis: Axis,
    /// Transverse coordinates; `None` is the center of the bounding box.
    pub anchor: Option<[f64; 2]>,
    pub samples: usize,
}

pub fn quantity_name(q: Quantity) -> &'static str {
    match q {
        Quantity::Density => "n",
        Quantity::Temperature => "T",
        Quantity::Potential => "phi",
    }
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::X => "x",
        Axis::Y => "y",
        Axis::Z => "z",
    }
}

impl CutSpec {
    /// `"<n|T|phi> <x|y|z> <center | a b> <samples>"`.
    fn parse(s: &str) -> Option<Self> {
        let w: Vec<&str> = s.split_whitespace().collect();
        let quantity = match *w.first()? {
            "n" => Quantity::Density,
            "T" => Quantity::Temperature,
            "phi" => Quantity::Potential,
            _ => return None,
        };
        let axis = Axis::parse(w.get(1)?)?;
        let (anchor, rest) = match w.get(2)? {
            &"center" => (None, &w[3..]),
            a => (Some([a.parse().ok()?, w.get(3)?.parse().ok()?]), w.get(4..)?),
        };
        match rest {
            [s] => Some(CutSpec {
                quantity,
                axis,
                anchor,
                samples: s.parse().ok()?,
            }),
            _ => None,
        }
    }

    fn render(&self) -> String {
        let anchor = match self.anchor {
            None => "center".to_string(),
            Some([a, b]) => format!("{} {}", num(a), num(b)),
        };
        format!(
            "\"{} {} {} {}\"",
            quantity_name(self.quantity),
            axis_name(self.axis),
            anchor,
            self.samples
        )
    }

    /// File stem, e.g. `cut_n_z_0`.
    pub fn file_stem(&self, index: usize) -> String {
        format!(
            "cut_{}_{}_{}",
            quantity_name(self.quantity),
            axis_name(self.axis),
            index
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub snapshots: SnapshotPolicy,
    pub cuts: Vec<CutSpec>,
    pub vtk: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            snapshots: SnapshotPolicy::Final,
            cuts: Vec::new(),
            vtk: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub geometry: Geometry,
    pub materials: MaterialTable,
    pub physics: Physics,
    pub boundary: BoundarySpec,
    pub n0: InitialValue,
    pub t0: InitialValue,
    pub time: TimeSpec,
    pub solver: GummelSettings,
    pub linear_tolerance: f64,
    pub output: OutputSpec,
}

/// Key tracker for one section: reads values, records problems, reports
/// leftovers as unknown keys.
struct Section<'a> {
    name: &'a str,
    table: Option<&'a Table>,
    used: BTreeSet<&'a str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'a str, errs: &mut Vec<String>) -> Self {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                errs.push(format!("[{name}] must be a section"));
                None
            }
        };
        Section {
            name,
            table,
            used: BTreeSet::new(),
        }
    }

    fn present(&self) -> bool {
        self.table.is_some()
    }

    fn has(&self, key: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(key))
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a Value> {
        self.used.insert(key);
        self.table?.get(key)
    }

    fn f64(&mut self, key: &'a str, errs: &mut Vec<String>) -> Option<f64> {
        let name = self.name;
        match self.raw(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            _ => {
                errs.push(format!("{name}.{key} must be a number"));
                None
            }
        }
    }

    fn req_f64(&mut self, key: &'a str, errs: &mut Vec<String>) -> Option<f64> {
        if !self.has(key) {
            errs.push(format!("{}.{key} is required", self.name));
            self.used.insert(key);
            return None;
        }
        self.f64(key, errs)
    }

    fn usize(&mut self, key: &'a str, errs: &mut Vec<String>) -> Option<usize> {
        let name = self.name;
        match self.raw(key)? {
            Value::Integer(v) if *v >= 0 => Some(*v as usize),
            _ => {
                errs.push(format!("{name}.{key} must be a nonnegative integer"));
                None
            }
        }
    }

    fn bool(&mut self, key: &'a str, errs: &mut Vec<String>) -> Option<bool> {
        let name = self.name;
        match self.raw(key)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                errs.push(format!("{name}.{key} must be true or false"));
                None
            }
        }
    }

    fn str(&mut self, key: &'a str, errs: &mut Vec<String>) -> Option<&'a str> {
        let name = self.name;
        match self.raw(key)? {
            Value::String(s) => Some(s.as_str()),
            _ => {
                errs.push(format!("{name}.{key} must be a string"));
                None
            }
        }
    }

    fn f64_list(&mut self, key: &'a str, errs: &mut Vec<String>) -> Option<Vec<f64>> {
        let name = self.name;
        let v = self.raw(key)?;
        let list = match v {
            Value::Array(a) => a
                .iter()
                .map(|x| match x {
                    Value::Float(f) => Some(*f),
                    Value::Integer(i) => Some(*i as f64),
                    _ => None,
                })
                .collect::<Option<Vec<f64>>>(),
            _ => None,
        };
        if list.is_none() {
            errs.push(format!("{name}.{key} must be a list of numbers"));
        }
        list
    }

    /// A number or a list, broadcast to `len` entries.
    fn per_zone(&mut self, key: &'a str, len: usize, errs: &mut Vec<String>) -> Option<Vec<f64>> {
        let name = self.name;
        if !self.has(key) {
            errs.push(format!("{name}.{key} is required"));
            self.used.insert(key);
            return None;
        }
        match self.table.and_then(|t| t.get(key)) {
            Some(Value::Array(_)) => {
                let l = self.f64_list(key, errs)?;
                if l.len() != len {
                    errs.push(format!("{name}.{key} has {} entries for {len} zone(s)", l.len()));
                    return None;
                }
                Some(l)
            }
            _ => self.f64(key, errs).map(|v| vec![v; len]),
        }
    }

    fn finish(self, errs: &mut Vec<String>) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.contains(k.as_str()) {
                    errs.push(format!("unknown key {}.{k}", self.name));
                }
            }
        }
    }
}

const SECTIONS: [&str; 13] = [
    "geometry",
    "bottom",
    "top",
    "active",
    "physics",
    "poisson",
    "continuity",
    "heat",
    "initial",
    "time",
    "solver",
    "output",
    "meta",
];

fn positive(errs: &mut Vec<String>, field: &str, v: Option<f64>) {
    if let Some(v) = v {
        if !(v > 0.0 && v.is_finite()) {
            errs.push(format!("{field} must be positive, got {v}"));
        }
    }
}

fn parse_metal(root: &Table, name: &'static str, errs: &mut Vec<String>) -> Option<MetalMaterial> {
    let mut s = Section::new(root, name, errs);
    if !s.present() {
        return None;
    }
    const KEYS: [&str; 8] = [
        "sigma",
        "alpha",
        "kappa",
        "rho",
        "c",
        "chemical_energy",
        "electron_density",
        "n_ref",
    ];
    let v: Vec<Option<f64>> = KEYS.iter().map(|k| s.req_f64(k, errs)).collect();
    let m = match v.as_slice() {
        [Some(sigma), Some(alpha), Some(kappa), Some(rho), Some(c), Some(chemical_energy), Some(electron_density), Some(n_ref)] => {
            Some(MetalMaterial {
                sigma: *sigma,
                alpha: *alpha,
                kappa: *kappa,
                rho: *rho,
                c: *c,
                chemical_energy: *chemical_energy,
                electron_density: *electron_density,
                n_ref: *n_ref,
            })
        }
        _ => None,
    };
    s.finish(errs);
    m
}

fn parse_active(root: &Table, errs: &mut Vec<String>) -> Option<ActiveMaterial> {
    let mut s = Section::new(root, "active", errs);
    if !s.present() {
        errs.push("[active] section is required".into());
        return None;
    }
    let charge = match s.raw("charge") {
        Some(Value::Integer(z)) if *z != 0 && z.abs() <= 8 => Some(*z as i32),
        Some(_) => {
            errs.push("active.charge must be a nonzero integer".into());
            None
        }
        None => Some(-1),
    };
    let breaks = if s.has("zone_breaks") {
        s.f64_list("zone_breaks", errs)
    } else {
        s.used.insert("zone_breaks");
        Some(Vec::new())
    };
    let zones = breaks.as_ref().map(|b| b.len() + 1).unwrap_or(1);
    let mut field = |k: &'static str| s.per_zone(k, zones, errs);
    let epsilon = field("epsilon");
    let alpha = field("alpha");
    let kappa = field("kappa");
    let rho = field("rho");
    let c = field("c");
    let mobility = field("mobility");
    let n_ref = field("n_ref");
    let doping = if s.has("doping") {
        s.per_zone("doping", zones, errs)
    } else {
        s.used.insert("doping");
        Some(vec![0.0; zones])
    };
    s.finish(errs);
    let (epsilon, alpha, kappa, rho, c, mobility, n_ref, doping) =
        (epsilon?, alpha?, kappa?, rho?, c?, mobility?, n_ref?, doping?);
    Some(ActiveMaterial {
        charge: charge?,
        zone_breaks: breaks?,
        zones: (0..zones)
            .map(|i| ActiveZone {
                epsilon: epsilon[i],
                alpha: alpha[i],
                kappa: kappa[i],
                rho: rho[i],
                c: c[i],
                mobility: mobility[i],
                n_ref: n_ref[i],
                doping: doping[i],
            })
            .collect(),
    })
}

pub fn parse_boundary_condition(s: &str) -> Option<BoundaryCondition> {
    let w: Vec<&str> = s.split_whitespace().collect();
    let f = |x: &str| x.parse::<f64>().ok();
    match w.as_slice() {
        ["dirichlet", v] => Some(BoundaryCondition::Dirichlet(f(v)?)),
        ["neumann", g] => Some(BoundaryCondition::Neumann(f(g)?)),
        ["robin", c, r] => Some(BoundaryCondition::Robin {
            coefficient: f(c)?,
            reference: f(r)?,
        }),
        _ => None,
    }
}

fn render_bc(bc: &BoundaryCondition) -> String {
    match *bc {
        BoundaryCondition::Dirichlet(v) => format!("\"dirichlet {}\"", num(v)),
        BoundaryCondition::Neumann(g) => format!("\"neumann {}\"", num(g)),
        BoundaryCondition::Robin { coefficient, reference } => {
            format!("\"robin {} {}\"", num(coefficient), num(reference))
        }
    }
}

fn parse_bcs(root: &Table, name: &'static str, errs: &mut Vec<String>) -> BTreeMap<SurfaceLabel, BoundaryCondition> {
    let mut out = BTreeMap::new();
    let Some(table) = (match root.get(name) {
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            errs.push(format!("[{name}] must be a section"));
            None
        }
        None => None,
    }) else {
        return out;
    };
    for (k, v) in table {
        let Some(label) = SurfaceLabel::parse(k) else {
            errs.push(format!("unknown key {name}.{k} (not a surface label)"));
            continue;
        };
        match v.as_str().and_then(parse_boundary_condition) {
            Some(bc) => {
                out.insert(label, bc);
            }
            None => errs.push(format!(
                "{name}.{k} must be \"dirichlet <v>\", \"neumann <g>\" or \"robin <coef> <ref>\""
            )),
        }
    }
    out
}

fn parse_mode(s: &mut Section<'_>, key: &'static str, errs: &mut Vec<String>) -> FieldMode {
    match s.str(key, errs) {
        None => FieldMode::Solved,
        Some("solved") => FieldMode::Solved,
        Some("imposed") => FieldMode::Imposed,
        Some(other) => {
            errs.push(format!(
                "physics.{key} must be \"solved\" or \"imposed\", got {other:?}"
            ));
            FieldMode::Solved
        }
    }
}

fn parse_physics(root: &Table, errs: &mut Vec<String>) -> Physics {
    let mut s = Section::new(root, "physics", errs);
    let potential = parse_mode(&mut s, "potential", errs);
    let density = parse_mode(&mut s, "density", errs);
    let temperature = parse_mode(&mut s, "temperature", errs);
    let heat_drive = match s.f64_list("prescribed_current", errs) {
        None => HeatDrive::Coupled,
        Some(j) if j.len() == 3 => HeatDrive::Prescribed([j[0], j[1], j[2]]),
        Some(_) => {
            errs.push("physics.prescribed_current must have three components".into());
            HeatDrive::Coupled
        }
    };
    let heat_source = match s.str("heat_source", errs) {
        None | Some("thermal_velocity") => HeatSourceForm::ThermalVelocity,
        Some("current") => HeatSourceForm::Current,
        Some(other) => {
            errs.push(format!(
                "physics.heat_source must be \"thermal_velocity\" or \"current\", got {other:?}"
            ));
            HeatSourceForm::ThermalVelocity
        }
    };
    s.finish(errs);
    Physics {
        potential,
        density,
        temperature,
        heat_drive,
        heat_source,
    }
}

fn parse_geometry(root: &Table, errs: &mut Vec<String>) -> Option<Geometry> {
    let mut s = Section::new(root, "geometry", errs);
    if !s.present() {
        errs.push("[geometry] section is required".into());
        return None;
    }
    let has_box = s.has("size") || s.has("divisions");
    let g = if s.has("mesh") && has_box {
        errs.push("geometry: give either a mesh file or size/divisions, not both".into());
        for k in ["mesh", "size", "divisions", "bottom_thickness", "top_thickness"] {
            s.used.insert(k);
        }
        None
    } else if s.has("mesh") {
        s.str("mesh", errs).map(|p| Geometry::File(PathBuf::from(p)))
    } else {
        let size = s.f64_list("size", errs);
        let div = match s.raw("divisions") {
            Some(Value::Array(a)) if a.len() == 3 => {
                let d: Option<Vec<usize>> = a
                    .iter()
                    .map(|v| v.as_integer().filter(|&i| i > 0).map(|i| i as usize))
                    .collect();
                if d.is_none() {
                    errs.push("geometry.divisions must be three positive integers".into());
                }
                d
            }
            Some(_) => {
                errs.push("geometry.divisions must be three positive integers".into());
                None
            }
            None => {
                errs.push("geometry needs either mesh or size and divisions".into());
                None
            }
        };
        let tb = s.f64("bottom_thickness", errs).unwrap_or(0.0);
        let tt = s.f64("top_thickness", errs).unwrap_or(0.0);
        if tb < 0.0 || tt < 0.0 {
            errs.push("geometry: contact thicknesses must be nonnegative".into());
        }
        match (size, div) {
            (Some(sz), Some(d)) if sz.len() == 3 => {
                if sz.iter().any(|&v| !(v > 0.0)) {
                    errs.push("geometry.size must be positive".into());
                }
                if tb + tt >= sz[2] {
                    errs.push("geometry: contacts leave no active layer".into());
                }
                Some(Geometry::Box {
                    size: [sz[0], sz[1], sz[2]],
                    divisions: [d[0], d[1], d[2]],
                    bottom_thickness: tb,
                    top_thickness: tt,
                })
            }
            (Some(_), Some(_)) => {
                errs.push("geometry.size must have three entries".into());
                None
            }
            _ => None,
        }
    };
    s.finish(errs);
    g
}

fn parse_time(root: &Table, errs: &mut Vec<String>) -> Option<TimeSpec> {
    let mut s = Section::new(root, "time", errs);
    let steady = s.bool("steady", errs).unwrap_or(false);
    let steps = s.f64_list("steps", errs);
    let geometric = s.f64_list("geometric", errs);
    s.finish(errs);
    let given = steady as usize + steps.is_some() as usize + geometric.is_some() as usize;
    if given != 1 {
        errs.push("time: give exactly one of steady = true, steps = [...], geometric = [first, growth, final]".into());
        return None;
    }
    if steady {
        return Some(TimeSpec::Steady);
    }
    if let Some(st) = steps {
        if let Err(e) = TimeGrid::from_steps(&st) {
            errs.push(format!("time.steps: {e}"));
            return None;
        }
        return Some(TimeSpec::Steps(st));
    }
    let g = geometric?;
    if g.len() != 3 {
        errs.push("time.geometric must be [first, growth, final]".into());
        return None;
    }
    if let Err(e) = TimeGrid::geometric(g[0], g[1], g[2]) {
        errs.push(format!("time.geometric: {e}"));
        return None;
    }
    Some(TimeSpec::Geometric {
        first: g[0],
        growth: g[1],
        final_time: g[2],
    })
}

fn parse_solver(root: &Table, errs: &mut Vec<String>) -> (GummelSettings, f64) {
    let mut s = Section::new(root, "solver", errs);
    let mut g = GummelSettings::default();
    if let Some(v) = s.f64("toll", errs) {
        g.toll = v;
    }
    if let Some(v) = s.usize("max_gummel", errs) {
        g.max_iterations = v;
    }
    if let Some(v) = s.f64("damping", errs) {
        g.damping = v;
    }
    if let Some(v) = s.bool("strict", errs) {
        g.strict = v;
    }
    if let Some(v) = s.f64("density_scale", errs) {
        g.density_scale = Some(v);
    }
    match s.str("norm", errs) {
        None | Some("plain") => {}
        Some("volume_weighted") => g.norm = NormKind::VolumeWeighted,
        Some(o) => errs.push(format!(
            "solver.norm must be \"plain\" or \"volume_weighted\", got {o:?}"
        )),
    }
    match s.str("rhs_level", errs) {
        None | Some("step") => {}
        Some("iterate") => g.rhs_level = RhsLevel::Iterate,
        Some(o) => errs.push(format!("solver.rhs_level must be \"step\" or \"iterate\", got {o:?}")),
    }
    let lin = s
        .f64("linear_tolerance", errs)
        .unwrap_or(crate::fem::DEFAULT_LINEAR_TOLERANCE);
    if !(lin > 0.0 && lin < 1.0) {
        errs.push(format!("solver.linear_tolerance must lie in (0, 1), got {lin}"));
    }
    s.finish(errs);
    errs.extend(g.validate());
    (g, lin)
}

fn parse_output(root: &Table, errs: &mut Vec<String>) -> OutputSpec {
    let mut s = Section::new(root, "output", errs);
    let mut out = OutputSpec::default();
    match s.raw("snapshots") {
        None => {}
        Some(Value::String(v)) if v == "all" => out.snapshots = SnapshotPolicy::All,
        Some(Value::String(v)) if v == "final" => out.snapshots = SnapshotPolicy::Final,
        Some(Value::Integer(k)) if *k > 0 => out.snapshots = SnapshotPolicy::Every(*k as usize),
        Some(_) => errs.push("output.snapshots must be \"all\", \"final\" or a positive step interval".into()),
    }
    if let Some(v) = s.bool("vtk", errs) {
        out.vtk = v;
    }
    match s.raw("cuts") {
        None => {}
        Some(Value::Array(a)) => {
            for c in a {
                match c.as_str().and_then(CutSpec::parse) {
                    Some(cut) if cut.samples >= 2 => out.cuts.push(cut),
                    _ => errs.push(format!(
                        "output.cuts entry {c} must read \"<n|T|phi> <x|y|z> <center|a b> <samples >= 2>\""
                    )),
                }
            }
        }
        Some(_) => errs.push("output.cuts must be a list of strings".into()),
    }
    s.finish(errs);
    out
}

fn check_material_signs(m: &MaterialTable, errs: &mut Vec<String>) {
    errs.extend(m.validate().iter().map(|e| e.to_string()));
}

/// Parses and validates configuration text. `source` names it in errors;
/// `base_dir` resolves relative paths.
pub fn parse_config_str(text: &str, source: &str, base_dir: &Path) -> Result<SimulationConfig, ConfigError> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax {
        path: source.to_string(),
        message: e.message().to_string(),
    })?;
    let mut errs = Vec::new();
    for k in root.keys() {
        if !SECTIONS.contains(&k.as_str()) {
            errs.push(format!("unknown section [{k}]"));
        }
    }
    let geometry = parse_geometry(&root, &mut errs);
    let bottom = parse_metal(&root, "bottom", &mut errs);
    let top = parse_metal(&root, "top", &mut errs);
    let active = parse_active(&root, &mut errs);
    let physics = parse_physics(&root, &mut errs);
    let boundary = BoundarySpec {
        poisson: parse_bcs(&root, "poisson", &mut errs),
        continuity: parse_bcs(&root, "continuity", &mut errs),
        heat: parse_bcs(&root, "heat", &mut errs),
    };
    for ext in [SurfaceLabel::SigmaB, SurfaceLabel::SigmaT] {
        let alias = if ext == SurfaceLabel::SigmaB {
            SurfaceLabel::GammaB
        } else {
            SurfaceLabel::GammaT
        };
        let found = [ext, alias]
            .iter()
            .any(|l| matches!(boundary.poisson.get(l), Some(BoundaryCondition::Dirichlet(_))));
        if !found {
            errs.push(format!("poisson.{ext}: a dirichlet contact is required"));
        }
    }

    let mut init = Section::new(&root, "initial", &mut errs);
    let mut initial = |k: &'static str, errs: &mut Vec<String>| -> Option<InitialValue> {
        let v = match init.raw(k) {
            None => {
                errs.push(format!("initial.{k} is required"));
                return None;
            }
            Some(Value::Float(v)) => Some(InitialValue::Constant(*v)),
            Some(Value::Integer(v)) => Some(InitialValue::Constant(*v as f64)),
            Some(Value::String(s)) => InitialValue::parse(s),
            Some(_) => None,
        };
        if v.is_none() {
            errs.push(format!("initial.{k} must be a number or \"linear_z <bottom> <top>\""));
        }
        v
    };
    let n0 = initial("n0", &mut errs);
    let t0 = initial("t0", &mut errs);
    init.finish(&mut errs);
    if let Some(n) = n0 {
        if n.values().iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            errs.push("initial.n0 must be nonnegative".into());
        }
    }
    if let Some(t) = t0 {
        if t.values().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            errs.push("initial.t0 must be positive".into());
        }
    }

    let time = parse_time(&root, &mut errs);
    let (solver, linear_tolerance) = parse_solver(&root, &mut errs);
    let output = parse_output(&root, &mut errs);
    let mut meta = Section::new(&root, "meta", &mut errs);
    let _ = meta.str("description", &mut errs);
    meta.finish(&mut errs);

    let materials = active.map(|active| MaterialTable { bottom, active, top });
    if let Some(m) = &materials {
        check_material_signs(m, &mut errs);
    }
    if let (
        Some(Geometry::Box {
            bottom_thickness,
            top_thickness,
            ..
        }),
        Some(m),
    ) = (&geometry, &materials)
    {
        if *bottom_thickness > 0.0 && m.bottom.is_none() {
            errs.push("geometry has a bottom contact but there is no [bottom] section".into());
        }
        if *top_thickness > 0.0 && m.top.is_none() {
            errs.push("geometry has a top contact but there is no [top] section".into());
        }
    }
    positive(&mut errs, "solver.linear_tolerance", Some(linear_tolerance));

    if !errs.is_empty() {
        errs.dedup();
        return Err(ConfigError::Invalid {
            path: source.to_string(),
            errors: errs,
        });
    }
    Ok(SimulationConfig {
        base_dir: base_dir.to_path_buf(),
        geometry: geometry.unwrap(),
        materials: materials.unwrap(),
        physics,
        boundary,
        n0: n0.unwrap(),
        t0: t0.unwrap(),
        time: time.unwrap(),
        solver,
        linear_tolerance,
        output,
    })
}

pub fn parse_config(path: &Path) -> Result<SimulationConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    parse_config_str(&text, &path.display().to_string(), &base)
}

/// Shortest round-trip float text, always a valid TOML float.
fn num(v: f64) -> String {
    let s = format!("{v:e}");
    if v.is_finite() {
        s
    } else {
        format!("{v}")
    }
}

fn list(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", "))
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Equation(#[from] EquationError),
    #[error("time grid: {0}")]
    Time(String),
}

impl SimulationConfig {
    pub fn build_mesh(&self) -> Result<Mesh, MeshError> {
        match &self.geometry {
            Geometry::Box {
                size,
                divisions,
                bottom_thickness,
                top_thickness,
            } => build_box_mesh(*size, *divisions, &[*bottom_thickness, size[2] - top_thickness]),
            Geometry::File(p) => import_mesh(&self.base_dir.join(p)),
        }
    }

    pub fn build_device(&self) -> Result<Device, BuildError> {
        let mesh = self.build_mesh()?;
        let mut dev = Device::new(mesh, self.materials.clone(), self.boundary.clone(), self.physics)?;
        dev.linear_tolerance = self.linear_tolerance;
        Ok(dev)
    }

    pub fn initial_state(&self, dev: &Device) -> FieldState {
        let (lo, hi) = dev.mesh().bounding_box();
        let (n0, t0) = (self.n0, self.t0);
        dev.initial_state(|p| n0.evaluate(p[2], lo[2], hi[2]), |p| t0.evaluate(p[2], lo[2], hi[2]))
    }

    pub fn schedule(&self) -> Result<Schedule, BuildError> {
        let err = |e: crate::gummel::TimeGridError| BuildError::Time(e.to_string());
        Ok(match &self.time {
            TimeSpec::Steady => Schedule::Steady,
            TimeSpec::Steps(s) => Schedule::Transient(TimeGrid::from_steps(s).map_err(err)?),
            TimeSpec::Geometric {
                first,
                growth,
                final_time,
            } => Schedule::Transient(TimeGrid::geometric(*first, *growth, *final_time).map_err(err)?),
        })
    }

    /// Gummel settings with a concrete density scale: unset means the
    /// larger of the initial density and the boundary reference densities.
    pub fn gummel_settings(&self, dev: &Device) -> GummelSettings {
        let mut s = self.solver.clone();
        if s.density_scale.is_none() {
            let n0 = self.n0.values().into_iter().fold(0.0, f64::max);
            let scale = n0.max(dev.boundary_density_scale());
            if scale > 0.0 {
                s.density_scale = Some(scale);
            }
        }
        s
    }

    /// Renders the configuration in the input format; parsing the echo
    /// gives back an equal configuration.
    pub fn echo(&self) -> String {
        let mut o = String::new();
        let w = &mut o;
        let _ = writeln!(w, "[geometry]");
        match &self.geometry {
            Geometry::Box {
                size,
                divisions,
                bottom_thickness,
                top_thickness,
            } => {
                let _ = writeln!(w, "size = {}", list(size));
                let _ = writeln!(w, "divisions = [{}, {}, {}]", divisions[0], divisions[1], divisions[2]);
                let _ = writeln!(w, "bottom_thickness = {}", num(*bottom_thickness));
                let _ = writeln!(w, "top_thickness = {}", num(*top_thickness));
            }
            Geometry::File(p) => {
                let _ = writeln!(w, "mesh = {:?}", p.display().to_string());
            }
        }
        for (name, m) in [("bottom", &self.materials.bottom), ("top", &self.materials.top)] {
            if let Some(m) = m {
                let _ = writeln!(w, "\n[{name}]");
                for (k, v) in [
                    ("sigma", m.sigma),
                    ("alpha", m.alpha),
                    ("kappa", m.kappa),
                    ("rho", m.rho),
                    ("c", m.c),
                    ("chemical_energy", m.chemical_energy),
                    ("electron_density", m.electron_density),
                    ("n_ref", m.n_ref),
                ] {
                    let _ = writeln!(w, "{k} = {}", num(v));
                }
            }
        }
        let a = &self.materials.active;
        let _ = writeln!(w, "\n[active]\ncharge = {}", a.charge);
        let _ = writeln!(w, "zone_breaks = {}", list(&a.zone_breaks));
        let col = |f: fn(&ActiveZone) -> f64| list(&a.zones.iter().map(f).collect::<Vec<_>>());
        let _ = writeln!(w, "epsilon = {}", col(|z| z.epsilon));
        let _ = writeln!(w, "alpha = {}", col(|z| z.alpha));
        let _ = writeln!(w, "kappa = {}", col(|z| z.kappa));
        let _ = writeln!(w, "rho = {}", col(|z| z.rho));
        let _ = writeln!(w, "c = {}", col(|z| z.c));
        let _ = writeln!(w, "mobility = {}", col(|z| z.mobility));
        let _ = writeln!(w, "n_ref = {}", col(|z| z.n_ref));
        let _ = writeln!(w, "doping = {}", col(|z| z.doping));

        let mode = |m: FieldMode| if m == FieldMode::Solved { "solved" } else { "imposed" };
        let p = &self.physics;
        let _ = writeln!(w, "\n[physics]");
        let _ = writeln!(w, "potential = \"{}\"", mode(p.potential));
        let _ = writeln!(w, "density = \"{}\"", mode(p.density));
        let _ = writeln!(w, "temperature = \"{}\"", mode(p.temperature));
        if let HeatDrive::Prescribed(j) = p.heat_drive {
            let _ = writeln!(w, "prescribed_current = {}", list(&j));
        }
        let hs = match p.heat_source {
            HeatSourceForm::ThermalVelocity => "thermal_velocity",
            HeatSourceForm::Current => "current",
        };
        let _ = writeln!(w, "heat_source = \"{hs}\"");

        for (name, map) in [
            ("poisson", &self.boundary.poisson),
            ("continuity", &self.boundary.continuity),
            ("heat", &self.boundary.heat),
        ] {
            let _ = writeln!(w, "\n[{name}]");
            for (l, bc) in map {
                let _ = writeln!(w, "{l} = {}", render_bc(bc));
            }
        }

        let _ = writeln!(w, "\n[initial]\nn0 = {}\nt0 = {}", self.n0.render(), self.t0.render());
        let _ = writeln!(w, "\n[time]");
        match &self.time {
            TimeSpec::Steady => {
                let _ = writeln!(w, "steady = true");
            }
            TimeSpec::Steps(s) => {
                let _ = writeln!(w, "steps = {}", list(s));
            }
            TimeSpec::Geometric {
                first,
                growth,
                final_time,
            } => {
                let _ = writeln!(w, "geometric = {}", list(&[*first, *growth, *final_time]));
            }
        }
        let s = &self.solver;
        let _ = writeln!(w, "\n[solver]");
        let _ = writeln!(w, "toll = {}", num(s.toll));
        let _ = writeln!(w, "max_gummel = {}", s.max_iterations);
        let _ = writeln!(w, "damping = {}", num(s.damping));
        let _ = writeln!(w, "strict = {}", s.strict);
        if let Some(d) = s.density_scale {
            let _ = writeln!(w, "density_scale = {}", num(d));
        }
        let norm = if s.norm == NormKind::Plain {
            "plain"
        } else {
            "volume_weighted"
        };
        let _ = writeln!(w, "norm = \"{norm}\"");
        let rl = if s.rhs_level == RhsLevel::Step {
            "step"
        } else {
            "iterate"
        };
        let _ = writeln!(w, "rhs_level = \"{rl}\"");
        let _ = writeln!(w, "linear_tolerance = {}", num(self.linear_tolerance));

        let out = &self.output;
        let _ = writeln!(w, "\n[output]");
        match out.snapshots {
            SnapshotPolicy::All => {
                let _ = writeln!(w, "snapshots = \"all\"");
            }
            SnapshotPolicy::Final => {
                let _ = writeln!(w, "snapshots = \"final\"");
            }
            SnapshotPolicy::Every(k) => {
                let _ = writeln!(w, "snapshots = {k}");
            }
        }
        let _ = writeln!(w, "vtk = {}", out.vtk);
        let cuts: Vec<String> = out.cuts.iter().map(|c| c.render()).collect();
        let _ = writeln!(w, "cuts = [{}]", cuts.join(", "));
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
[geometry]
size = [1e-8, 1e-8, 1e-8]
divisions = [2, 2, 10]

[active]
charge = -1
zone_breaks = [3e-9, 7e-9]
epsilon = 1.036e-10
alpha = 1e-4
kappa = [30, 3, 300]
rho = 3.98
c = 880
mobility = [3e-6, 300, 3e-10]
n_ref = 1e16

[poisson]
sigma_b = "dirichlet 0"
sigma_t = "dirichlet 1"

[continuity]
gamma_b = "robin 200 1e19"
gamma_t = "robin 200 1e13"

[heat]
sigma_b = "robin 1e5 300"
sigma_t = "robin 1e5 600"
sigma_lat = "robin 1e5 300"

[initial]
n0 = 1e16
t0 = 300

[time]
steady = true

[output]
cuts = ["n z center 11", "T z 5e-9 5e-9 11"]
"#;

    fn parse(text: &str) -> Result<SimulationConfig, ConfigError> {
        parse_config_str(text, "test.toml", Path::new("."))
    }

    fn errors(text: &str) -> Vec<String> {
        match parse(text) {
            Err(ConfigError::Invalid { errors, .. }) => errors,
            other => panic!("expected validation errors, got {other:?}"),
        }
    }

    #[test]
    fn sample_parses_and_builds() {
        let c = parse(SAMPLE).unwrap();
        assert_eq!(c.materials.active.zones.len(), 3);
        assert_eq!(c.materials.active.zones[1].mobility, 300.0);
        assert_eq!(c.materials.active.zones[2].rho, 3.98);
        assert_eq!(c.output.cuts.len(), 2);
        assert_eq!(c.output.cuts[1].anchor, Some([5e-9, 5e-9]));
        let dev = c.build_device().unwrap();
        assert_eq!(dev.mesh().num_tets(), 2 * 2 * 10 * 6);
        let s = c.gummel_settings(&dev);
        assert_eq!(s.density_scale, Some(1e19));
    }

    #[test]
    fn echo_round_trips() {
        let c = parse(SAMPLE).unwrap();
        let again = parse(&c.echo()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.echo(), c.echo());
    }

    #[test]
    fn all_errors_reported() {
        let bad = SAMPLE
            .replace("kappa = [30, 3, 300]", "kappa = [30, -3, 300]")
            .replace("steady = true", "steady = true\nsteps = [1e-9]")
            .replace("[initial]", "[initial]\ncolour = 1");
        let e = errors(&bad);
        assert!(e.iter().any(|m| m.contains("kappa")), "{e:?}");
        assert!(e.iter().any(|m| m.contains("exactly one")), "{e:?}");
        assert!(e.iter().any(|m| m.contains("unknown key initial.colour")), "{e:?}");
    }

    #[test]
    fn ambiguous_geometry_and_missing_contact() {
        let bad = SAMPLE
            .replace("divisions = [2, 2, 10]", "divisions = [2, 2, 10]\nmesh = \"x.mesh\"")
            .replace("sigma_t = \"dirichlet 1\"", "");
        let e = errors(&bad);
        assert!(e.iter().any(|m| m.contains("not both")), "{e:?}");
        assert!(e.iter().any(|m| m.contains("poisson.sigma_t")), "{e:?}");
    }

    #[test]
    fn bad_strings_and_sections() {
        let bad = SAMPLE
            .replace("\"robin 200 1e19\"", "\"robin 200\"")
            .replace("[time]", "[timing]\nx = 1\n[time]")
            .replace("\"n z center 11\"", "\"n w center 11\"");
        let e = errors(&bad);
        assert!(e.iter().any(|m| m.contains("continuity.gamma_b")), "{e:?}");
        assert!(e.iter().any(|m| m.contains("[timing]")), "{e:?}");
        assert!(e.iter().any(|m| m.contains("output.cuts")), "{e:?}");
        assert!(matches!(parse("[geometry"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn zone_count_mismatch() {
        let e = errors(&SAMPLE.replace("mobility = [3e-6, 300, 3e-10]", "mobility = [3e-6, 300]"));
        assert!(e.iter().any(|m| m.contains("active.mobility has 2 entries")), "{e:?}");
    }

    #[test]
    fn initial_linear_profile() {
        let c = parse(&SAMPLE.replace("t0 = 300", "t0 = \"linear_z 970 370\"")).unwrap();
        let dev = c.build_device().unwrap();
        let s = c.initial_state(&dev);
        let v = dev.mesh().vertices();
        for (p, t) in v.iter().zip(&s.temperature) {
            assert!((t - (970.0 - 600.0 * p[2] / 1e-8)).abs() < 1e-9);
        }
        assert_eq!(parse(&c.echo()).unwrap(), c);
    }

    #[test]
    fn missing_file() {
        let e = parse_config(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(matches!(e, ConfigError::Io { .. }));
    }

    #[test]
    fn cut_and_bc_strings() {
        assert_eq!(
            parse_boundary_condition("robin 200 1e19"),
            Some(BoundaryCondition::Robin {
                coefficient: 200.0,
                reference: 1e19
            })
        );
        assert_eq!(parse_boundary_condition("dirichlet"), None);
        let c = CutSpec::parse("phi x 1 2 5").unwrap();
        assert_eq!((c.axis, c.anchor, c.samples), (Axis::X, Some([1.0, 2.0]), 5));
        assert!(CutSpec::parse("n z center").is_none());
        assert!(SnapshotPolicy::Every(3).wants(6, 10));
        assert!(SnapshotPolicy::Every(3).wants(10, 10));
        assert!(!SnapshotPolicy::Final.wants(0, 10));
    }
}
