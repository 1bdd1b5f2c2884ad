//! Tetrahedral meshes of the three-layer device domain.
//!
//! A [`Mesh`] is a conforming tetrahedralization whose cells carry a
//! [`RegionLabel`] (bottom contact, active layer, top contact) and whose
//! exterior faces carry a [`SurfaceLabel`]. Faces separating the active layer
//! from a contact region are recorded as labeled interface faces; they do not
//! duplicate vertices, since the potential and the temperature are continuous
//! across them.
//!
//! Face normals used by boundary assembly are taken outward from the active
//! region on interface faces and outward from the domain on exterior faces.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::profile::{Profile1D, Quantity};

pub type Point = [f64; 3];

/// Local vertex pairs of the six tetrahedron edges, in the order used by
/// every per-element edge array in this crate.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Local vertex triples of the four tetrahedron faces (face `k` is opposite vertex `k`).
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionLabel {
    Bottom,
    Active,
    Top,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::Bottom => "bottom",
            RegionLabel::Active => "active",
            RegionLabel::Top => "top",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bottom" => Some(RegionLabel::Bottom),
            "active" => Some(RegionLabel::Active),
            "top" => Some(RegionLabel::Top),
            _ => None,
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Boundary and interface surfaces of the device.
///
/// `SigmaLatA` is never stored on a face; it names the subset of lateral
/// faces that touch active cells and is resolved by [`Mesh::face_set`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceLabel {
    SigmaB,
    SigmaT,
    SigmaLat,
    GammaB,
    GammaT,
    SigmaLatA,
}

impl SurfaceLabel {
    pub const ALL: [SurfaceLabel; 6] = [
        SurfaceLabel::SigmaB,
        SurfaceLabel::SigmaT,
        SurfaceLabel::SigmaLat,
        SurfaceLabel::GammaB,
        SurfaceLabel::GammaT,
        SurfaceLabel::SigmaLatA,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SurfaceLabel::SigmaB => "sigma_b",
            SurfaceLabel::SigmaT => "sigma_t",
            SurfaceLabel::SigmaLat => "sigma_lat",
            SurfaceLabel::GammaB => "gamma_b",
            SurfaceLabel::GammaT => "gamma_t",
            SurfaceLabel::SigmaLatA => "sigma_lat_a",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        SurfaceLabel::ALL.into_iter().find(|l| l.as_str() == s)
    }

    pub fn is_exterior(self) -> bool {
        matches!(
            self,
            SurfaceLabel::SigmaB | SurfaceLabel::SigmaT | SurfaceLabel::SigmaLat
        )
    }
}

impl fmt::Display for SurfaceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tetrahedron {
    pub vertices: [usize; 4],
    pub region: RegionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub vertices: [usize; 3],
    pub label: SurfaceLabel,
    /// Whether the face bounds an active cell.
    pub touches_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("box extents must be positive and finite, got {0:?}")]
    BadExtents([f64; 3]),
    #[error("box divisions must be positive, got {0:?}")]
    BadDivisions([usize; 3]),
    #[error("layer breaks must be two increasing z values inside [0, {extent}], got {breaks:?}")]
    BadBreaks { breaks: Vec<f64>, extent: f64 },
    #[error("layer break z = {0} does not lie on a grid plane")]
    BreakOffGrid(f64),
    #[error("tetrahedron {tet} references vertex {vertex}, but the mesh has {count} vertices")]
    VertexOutOfRange { tet: usize, vertex: usize, count: usize },
    #[error("tetrahedron {tet} repeats a vertex")]
    RepeatedVertex { tet: usize },
    #[error("tetrahedron {0} is degenerate (zero volume)")]
    Degenerate(usize),
    #[error("face {face:?} is shared by {count} tetrahedra (non-conforming mesh)")]
    NonConforming { face: [usize; 3], count: usize },
    #[error("boundary face {0:?} has no surface label")]
    UnlabeledBoundaryFace([usize; 3]),
    #[error("labeled face {0:?} is not a face of the tetrahedralization")]
    UnknownFace([usize; 3]),
    #[error("face {face:?} is labeled {label} but lies {place}")]
    WrongLabel {
        face: [usize; 3],
        label: SurfaceLabel,
        place: &'static str,
    },
    #[error("face {0:?} joins the bottom and top regions directly")]
    BottomTouchesTop([usize; 3]),
    #[error("the mesh has no active cells")]
    NoActiveRegion,
    #[error("line cut anchor {0:?} lies outside the mesh")]
    CutOutsideMesh([f64; 2]),
    #[error("cut needs at least two samples")]
    TooFewSamples,
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    tets: Vec<Tetrahedron>,
    faces: Vec<BoundaryFace>,
    edges: Vec<[usize; 2]>,
    tet_edges: Vec<[usize; 6]>,
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

/// Six times the signed volume of the tetrahedron `p`.
fn signed_volume6(p: &[Point; 4]) -> f64 {
    dot(sub(p[1], p[0]), cross(sub(p[2], p[0]), sub(p[3], p[0])))
}

/// Signed volume of a tetrahedron (positive for right-handed vertex order).
pub fn tet_signed_volume(p: &[Point; 4]) -> f64 {
    signed_volume6(p) / 6.0
}

pub fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

impl Mesh {
    /// Validates and assembles a mesh from raw parts.
    ///
    /// Tetrahedra are reoriented to positive volume. Exterior faces must all
    /// be present in `labeled_faces` with an exterior label; interface faces
    /// between the active layer and a contact region are derived when absent
    /// and checked when present.
    pub fn new(
        vertices: Vec<Point>,
        mut tets: Vec<Tetrahedron>,
        labeled_faces: Vec<([usize; 3], SurfaceLabel)>,
    ) -> Result<Self, MeshError> {
        let count = vertices.len();
        let scale = bounding_scale(&vertices);
        for (t, tet) in tets.iter_mut().enumerate() {
            for &v in &tet.vertices {
                if v >= count {
                    return Err(MeshError::VertexOutOfRange {
                        tet: t,
                        vertex: v,
                        count,
                    });
                }
            }
            let mut s = tet.vertices;
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(MeshError::RepeatedVertex { tet: t });
            }
            let p = tet.vertices.map(|v| vertices[v]);
            let vol6 = signed_volume6(&p);
            if vol6.abs() <= 1e-12 * scale.powi(3) || !vol6.is_finite() {
                return Err(MeshError::Degenerate(t));
            }
            if vol6 < 0.0 {
                tet.vertices.swap(2, 3);
            }
        }
        if !tets.iter().any(|t| t.region == RegionLabel::Active) {
            return Err(MeshError::NoActiveRegion);
        }

        let mut face_map: HashMap<[usize; 3], Vec<usize>> = HashMap::new();
        for (t, tet) in tets.iter().enumerate() {
            for lf in TET_FACES {
                let f = sorted3(lf.map(|k| tet.vertices[k]));
                face_map.entry(f).or_default().push(t);
            }
        }
        if let Some((face, owners)) = face_map.iter().find(|(_, o)| o.len() > 2) {
            return Err(MeshError::NonConforming {
                face: *face,
                count: owners.len(),
            });
        }
        let mut given: HashMap<[usize; 3], SurfaceLabel> = HashMap::new();
        for (f, label) in labeled_faces {
            let key = sorted3(f);
            if !face_map.contains_key(&key) {
                return Err(MeshError::UnknownFace(f));
            }
            given.insert(key, label);
        }

        // Deterministic face order: iterate tets and their local faces.
        let mut faces = Vec::new();
        let mut seen: HashMap<[usize; 3], ()> = HashMap::new();
        for tet in &tets {
            for lf in TET_FACES {
                let local = lf.map(|k| tet.vertices[k]);
                let key = sorted3(local);
                if seen.insert(key, ()).is_some() {
                    continue;
                }
                let owners = &face_map[&key];
                let regions: Vec<RegionLabel> = owners.iter().map(|&o| tets[o].region).collect();
                let touches_active = regions.contains(&RegionLabel::Active);
                let label = given.get(&key).copied();
                if owners.len() == 1 {
                    match label {
                        Some(l) if l.is_exterior() => faces.push(BoundaryFace {
                            vertices: local,
                            label: l,
                            touches_active,
                        }),
                        Some(l) => {
                            return Err(MeshError::WrongLabel {
                                face: key,
                                label: l,
                                place: "on the exterior boundary",
                            })
                        }
                        None => return Err(MeshError::UnlabeledBoundaryFace(key)),
                    }
                    continue;
                }
                let expected = match (regions[0], regions[1]) {
                    (a, b) if a == b => None,
                    (RegionLabel::Bottom, RegionLabel::Active) | (RegionLabel::Active, RegionLabel::Bottom) => {
                        Some(SurfaceLabel::GammaB)
                    }
                    (RegionLabel::Top, RegionLabel::Active) | (RegionLabel::Active, RegionLabel::Top) => {
                        Some(SurfaceLabel::GammaT)
                    }
                    _ => return Err(MeshError::BottomTouchesTop(key)),
                };
                match (expected, label) {
                    (None, None) => {}
                    (None, Some(l)) => {
                        return Err(MeshError::WrongLabel {
                            face: key,
                            label: l,
                            place: "inside a single region",
                        })
                    }
                    (Some(e), Some(l)) if e != l => {
                        return Err(MeshError::WrongLabel {
                            face: key,
                            label: l,
                            place: "on the other interface",
                        })
                    }
                    (Some(e), _) => faces.push(BoundaryFace {
                        vertices: local,
                        label: e,
                        touches_active: true,
                    }),
                }
            }
        }

        let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut tet_edges = Vec::with_capacity(tets.len());
        for tet in &tets {
            let mut ids = [0usize; 6];
            for (k, (a, b)) in TET_EDGES.iter().enumerate() {
                let (va, vb) = (tet.vertices[*a], tet.vertices[*b]);
                let key = [va.min(vb), va.max(vb)];
                let next = edges.len();
                let id = *edge_index.entry(key).or_insert(next);
                if id == next {
                    edges.push(key);
                }
                ids[k] = id;
            }
            tet_edges.push(ids);
        }

        Ok(Mesh {
            vertices,
            tets,
            faces,
            edges,
            tet_edges,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tets(&self) -> &[Tetrahedron] {
        &self.tets
    }

    /// Exterior faces and active/contact interface faces.
    pub fn faces(&self) -> &[BoundaryFace] {
        &self.faces
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Global edge ids of each tetrahedron, ordered as [`TET_EDGES`].
    pub fn tet_edges(&self) -> &[[usize; 6]] {
        &self.tet_edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_points(&self, t: usize) -> [Point; 4] {
        self.tets[t].vertices.map(|v| self.vertices[v])
    }

    pub fn tet_centroid(&self, t: usize) -> Point {
        let p = self.tet_points(t);
        let mut c = [0.0; 3];
        for q in p {
            for d in 0..3 {
                c[d] += 0.25 * q[d];
            }
        }
        c
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume6(&self.tet_points(t)) / 6.0
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].vertices.map(|v| self.vertices[v]);
        triangle_area(a, b, c)
    }

    pub fn has_region(&self, region: RegionLabel) -> bool {
        self.tets.iter().any(|t| t.region == region)
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    /// Indices into [`Mesh::faces`] making up the requested surface.
    ///
    /// `GammaB`/`GammaT` fall back to the active-touching `SigmaB`/`SigmaT`
    /// faces when the corresponding contact layer is empty, so interface
    /// conditions remain expressible on degenerate stacks.
    pub fn face_set(&self, label: SurfaceLabel) -> Vec<usize> {
        let pick = |pred: &dyn Fn(&BoundaryFace) -> bool| -> Vec<usize> {
            self.faces
                .iter()
                .enumerate()
                .filter(|(_, f)| pred(f))
                .map(|(i, _)| i)
                .collect()
        };
        match label {
            SurfaceLabel::SigmaLatA => pick(&|f| f.label == SurfaceLabel::SigmaLat && f.touches_active),
            SurfaceLabel::GammaB if !self.has_region(RegionLabel::Bottom) => {
                pick(&|f| f.label == SurfaceLabel::SigmaB && f.touches_active)
            }
            SurfaceLabel::GammaT if !self.has_region(RegionLabel::Top) => {
                pick(&|f| f.label == SurfaceLabel::SigmaT && f.touches_active)
            }
            l => pick(&|f| f.label == l),
        }
    }

    /// Whether `GammaB`/`GammaT` coincide with an exterior contact surface.
    pub fn interface_is_exterior(&self, label: SurfaceLabel) -> bool {
        match label {
            SurfaceLabel::GammaB => !self.has_region(RegionLabel::Bottom),
            SurfaceLabel::GammaT => !self.has_region(RegionLabel::Top),
            _ => false,
        }
    }

    /// Distinct vertices of a set of faces, sorted.
    pub fn face_set_nodes(&self, faces: &[usize]) -> Vec<usize> {
        let mut nodes: Vec<usize> = faces.iter().flat_map(|&f| self.faces[f].vertices).collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Writes the mesh in the ASCII `tetmesh 1` format.
    pub fn write_ascii(&self, path: &Path) -> Result<(), MeshError> {
        let io_err = |e: std::io::Error| MeshError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "tetmesh 1")?;
        writeln!(w, "{}", self.vertices.len())?;
        for p in &self.vertices {
            writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
        }
        writeln!(w, "{}", self.tets.len())?;
        for t in &self.tets {
            let v = t.vertices;
            writeln!(w, "{} {} {} {} {}", v[0], v[1], v[2], v[3], t.region)?;
        }
        writeln!(w, "{}", self.faces.len())?;
        for f in &self.faces {
            let v = f.vertices;
            writeln!(w, "{} {} {} {}", v[0], v[1], v[2], f.label)?;
        }
        Ok(())
    }
}

fn bounding_scale(vertices: &[Point]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in vertices {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (0..3)
        .map(|d| hi[d] - lo[d])
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
}

/// Builds a structured box mesh, six Kuhn tetrahedra per grid cell.
///
/// `layer_breaks` is either empty (everything active) or the two z values
/// where the bottom contact ends and the top contact begins. A break equal
/// to 0 or to the z extent leaves that contact empty.
pub fn build_box_mesh(extents: [f64; 3], divisions: [usize; 3], layer_breaks: &[f64]) -> Result<Mesh, MeshError> {
    if extents.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(MeshError::BadExtents(extents));
    }
    if divisions.contains(&0) {
        return Err(MeshError::BadDivisions(divisions));
    }
    let lz = extents[2];
    let (z_lo, z_hi) = match layer_breaks {
        [] => (0.0, lz),
        [a, b] if *a >= 0.0 && a < b && *b <= lz => (*a, *b),
        _ => {
            return Err(MeshError::BadBreaks {
                breaks: layer_breaks.to_vec(),
                extent: lz,
            })
        }
    };
    let hz = lz / divisions[2] as f64;
    for z in [z_lo, z_hi] {
        let k = z / hz;
        if (k - k.round()).abs() > 1e-9 {
            return Err(MeshError::BreakOffGrid(z));
        }
    }
    let k_lo = (z_lo / hz).round() as usize;
    let k_hi = (z_hi / hz).round() as usize;

    let [nx, ny, nz] = divisions;
    let h = [extents[0] / nx as f64, extents[1] / ny as f64, extents[2] / nz as f64];
    let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                // Pin the outer planes exactly to the extents.
                let coord = |n: usize, div: usize, d: usize| {
                    if n == div {
                        extents[d]
                    } else {
                        n as f64 * h[d]
                    }
                };
                vertices.push([coord(i, nx, 0), coord(j, ny, 1), coord(k, nz, 2)]);
            }
        }
    }

    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        let region = if k < k_lo {
            RegionLabel::Bottom
        } else if k < k_hi {
            RegionLabel::Active
        } else {
            RegionLabel::Top
        };
        for j in 0..ny {
            for i in 0..nx {
                let corner = |bits: usize| vid(i + (bits & 1), j + ((bits >> 1) & 1), k + ((bits >> 2) & 1));
                for p in perms {
                    let b1 = 1 << p[0];
                    let b2 = b1 | (1 << p[1]);
                    tets.push(Tetrahedron {
                        vertices: [corner(0), corner(b1), corner(b2), corner(7)],
                        region,
                    });
                }
            }
        }
    }

    // Exterior faces are labeled by the plane they lie on.
    let mut counts: HashMap<[usize; 3], ([usize; 3], u8)> = HashMap::new();
    for t in &tets {
        for lf in TET_FACES {
            let f = lf.map(|k| t.vertices[k]);
            counts.entry(sorted3(f)).or_insert((f, 0)).1 += 1;
        }
    }
    let mut labeled: Vec<([usize; 3], SurfaceLabel)> = counts
        .into_values()
        .filter(|(_, c)| *c == 1)
        .map(|(f, _)| {
            let on_plane = |z: f64| f.iter().all(|&v| (vertices[v][2] - z).abs() <= 1e-9 * lz);
            let label = if on_plane(0.0) {
                SurfaceLabel::SigmaB
            } else if on_plane(lz) {
                SurfaceLabel::SigmaT
            } else {
                SurfaceLabel::SigmaLat
            };
            (f, label)
        })
        .collect();
    labeled.sort_by_key(|(f, _)| sorted3(*f));
    Mesh::new(vertices, tets, labeled)
}

/// Reads a mesh in the ASCII `tetmesh 1` format.
pub fn import_mesh(path: &Path) -> Result<Mesh, MeshError> {
    let text = fs::read_to_string(path).map_err(|e| MeshError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_mesh(&text, &path.display().to_string())
}

struct Lines<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
    source: &'a str,
}

impl<'a> Lines<'a> {
    fn err(&self, line: usize, message: String) -> MeshError {
        MeshError::Parse {
            path: self.source.to_string(),
            line,
            message,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), MeshError> {
        let item = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.last_line, format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    fn count(&mut self, what: &str) -> Result<usize, MeshError> {
        let (ln, l) = self.next(what)?;
        l.parse::<usize>()
            .map_err(|_| self.err(ln, format!("expected {what}, found '{l}'")))
    }
}

pub fn parse_mesh(text: &str, source: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines {
        items: text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect(),
        pos: 0,
        last_line: text.lines().count(),
        source,
    };
    let err = |line: usize, message: String| MeshError::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let (ln, header) = lines.next("header")?;
    if header.split_whitespace().collect::<Vec<_>>() != ["tetmesh", "1"] {
        return Err(err(ln, format!("expected header 'tetmesh 1', found '{header}'")));
    }

    let nv = lines.count("vertex count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next("vertex line")?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| err(ln, format!("malformed vertex line '{l}'")))?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(err(ln, format!("vertex line needs three finite coordinates: '{l}'")));
        }
        vertices.push([vals[0], vals[1], vals[2]]);
    }

    let nt = lines.count("tetrahedron count")?;
    let mut tets = Vec::with_capacity(nt);
    for t in 0..nt {
        let (ln, l) = lines.next("tetrahedron line")?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(err(ln, format!("tetrahedron line needs 4 indices and a region: '{l}'")));
        }
        let mut v = [0usize; 4];
        for k in 0..4 {
            v[k] = parts[k]
                .parse()
                .map_err(|_| err(ln, format!("bad vertex index '{}'", parts[k])))?;
            if v[k] >= nv {
                return Err(err(
                    ln,
                    format!("tetrahedron {t} references vertex {} but only {nv} exist", v[k]),
                ));
            }
        }
        let region = RegionLabel::parse(parts[4]).ok_or_else(|| err(ln, format!("unknown region '{}'", parts[4])))?;
        tets.push(Tetrahedron { vertices: v, region });
    }

    let nf = lines.count("boundary face count")?;
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next("boundary face line")?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(err(ln, format!("face line needs 3 indices and a label: '{l}'")));
        }
        let mut v = [0usize; 3];
        for k in 0..3 {
            v[k] = parts[k]
                .parse()
                .map_err(|_| err(ln, format!("bad vertex index '{}'", parts[k])))?;
            if v[k] >= nv {
                return Err(err(ln, format!("face references vertex {} but only {nv} exist", v[k])));
            }
        }
        let label = SurfaceLabel::parse(parts[3])
            .filter(|l| *l != SurfaceLabel::SigmaLatA)
            .ok_or_else(|| err(ln, format!("unknown surface label '{}'", parts[3])))?;
        faces.push((v, label));
    }
    if let Some(&(ln, l)) = lines.items.get(lines.pos) {
        return Err(err(ln, format!("trailing content '{l}'")));
    }
    Mesh::new(vertices, tets, faces)
}

/// Per-edge and per-element geometric data for the edge-averaged scheme.
#[derive(Debug, Clone)]
pub struct EdgeGeometry {
    /// Global stiffness weight of each mesh edge (m).
    pub edge_weights: Vec<f64>,
    pub edge_lengths: Vec<f64>,
    /// Per-element weights `-|K| grad(l_i).grad(l_j)`, ordered as [`TET_EDGES`].
    pub tet_weights: Vec<[f64; 6]>,
    /// Barycentric gradients of each element (1/m).
    pub tet_gradients: Vec<[Point; 4]>,
    pub tet_volumes: Vec<f64>,
    /// Lumped (quarter-volume) vertex volumes (m^3).
    pub lumped_volumes: Vec<f64>,
    /// Number of edges whose global weight is negative.
    pub negative_edges: usize,
}

/// Barycentric coordinate gradients of a positively oriented tetrahedron.
pub fn barycentric_gradients(p: &[Point; 4]) -> Option<[Point; 4]> {
    let e1 = sub(p[1], p[0]);
    let e2 = sub(p[2], p[0]);
    let e3 = sub(p[3], p[0]);
    let det = dot(e1, cross(e2, e3));
    if det.abs() <= f64::MIN_POSITIVE || !det.is_finite() {
        return None;
    }
    // Rows of the inverse Jacobian.
    let g1 = cross(e2, e3).map(|c| c / det);
    let g2 = cross(e3, e1).map(|c| c / det);
    let g3 = cross(e1, e2).map(|c| c / det);
    let g0 = [
        -(g1[0] + g2[0] + g3[0]),
        -(g1[1] + g2[1] + g3[1]),
        -(g1[2] + g2[2] + g3[2]),
    ];
    Some([g0, g1, g2, g3])
}

pub fn compute_edge_geometry(mesh: &Mesh) -> Result<EdgeGeometry, MeshError> {
    let nt = mesh.num_tets();
    let mut tet_weights = Vec::with_capacity(nt);
    let mut tet_gradients = Vec::with_capacity(nt);
    let mut tet_volumes = Vec::with_capacity(nt);
    let mut edge_weights = vec![0.0; mesh.edges().len()];
    let mut lumped_volumes = vec![0.0; mesh.num_vertices()];
    let scale = bounding_scale(mesh.vertices());
    for t in 0..nt {
        let p = mesh.tet_points(t);
        let vol = signed_volume6(&p) / 6.0;
        if vol <= 1e-12 * scale.powi(3) / 6.0 {
            return Err(MeshError::Degenerate(t));
        }
        let grads = barycentric_gradients(&p).ok_or(MeshError::Degenerate(t))?;
        let mut w = [0.0; 6];
        for (k, (a, b)) in TET_EDGES.iter().enumerate() {
            w[k] = -vol * dot(grads[*a], grads[*b]);
            edge_weights[mesh.tet_edges()[t][k]] += w[k];
        }
        for &v in &mesh.tets()[t].vertices {
            lumped_volumes[v] += 0.25 * vol;
        }
        tet_weights.push(w);
        tet_gradients.push(grads);
        tet_volumes.push(vol);
    }
    let edge_lengths = mesh
        .edges()
        .iter()
        .map(|[a, b]| norm(sub(mesh.vertices()[*b], mesh.vertices()[*a])))
        .collect();
    // Round-off on right-angle edges is treated as zero.
    let negative_edges = edge_weights
        .iter()
        .zip(mesh.edges())
        .filter(|(w, [a, b])| {
            let len = norm(sub(mesh.vertices()[*b], mesh.vertices()[*a]));
            **w < -1e-12 * len
        })
        .count();
    if negative_edges > 0 {
        log::warn!(
            "{negative_edges} edges have negative stiffness weight; the discrete maximum principle is not guaranteed"
        );
    }
    Ok(EdgeGeometry {
        edge_weights,
        edge_lengths,
        tet_weights,
        tet_gradients,
        tet_volumes,
        lumped_volumes,
        negative_edges,
    })
}

/// Samples a nodal P1 field on `samples` evenly spaced points along a line
/// parallel to `axis`, through `anchor` (the other two coordinates in
/// increasing axis order). Points outside the mesh are omitted.
pub fn extract_line_cut(
    mesh: &Mesh,
    field: &[f64],
    axis: Axis,
    anchor: [f64; 2],
    samples: usize,
    quantity: Quantity,
) -> Result<Profile1D, MeshError> {
    if samples < 2 {
        return Err(MeshError::TooFewSamples);
    }
    let a = axis.index();
    let others: [usize; 2] = match axis {
        Axis::X => [1, 2],
        Axis::Y => [0, 2],
        Axis::Z => [0, 1],
    };
    let (lo, hi) = mesh.bounding_box();
    let tol = 1e-9 * (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);

    // Cells whose bounding box meets the line.
    let candidates: Vec<usize> = (0..mesh.num_tets())
        .filter(|&t| {
            let p = mesh.tet_points(t);
            others.iter().zip(anchor).all(|(&d, c)| {
                let mn = p.iter().map(|q| q[d]).fold(f64::INFINITY, f64::min);
                let mx = p.iter().map(|q| q[d]).fold(f64::NEG_INFINITY, f64::max);
                c >= mn - tol && c <= mx + tol
            })
        })
        .collect();
    if candidates.is_empty() {
        return Err(MeshError::CutOutsideMesh(anchor));
    }
    let grads: Vec<[Point; 4]> = candidates
        .iter()
        .map(|&t| barycentric_gradients(&mesh.tet_points(t)).expect("validated mesh"))
        .collect();

    let mut points = Vec::with_capacity(samples);
    for s in 0..samples {
        let coord = if s + 1 == samples {
            hi[a]
        } else {
            lo[a] + (hi[a] - lo[a]) * s as f64 / (samples - 1) as f64
        };
        let mut x = [0.0; 3];
        x[a] = coord;
        x[others[0]] = anchor[0];
        x[others[1]] = anchor[1];
        for (ci, &t) in candidates.iter().enumerate() {
            let p = mesh.tet_points(t);
            let g = &grads[ci];
            let mut lam = [0.0; 4];
            for k in 0..4 {
                // l_k(x) = 1 at vertex k, so l_k(x) = 1 + g_k.(x - p_k).
                lam[k] = 1.0 + dot(g[k], sub(x, p[k]));
            }
            if lam.iter().all(|&l| l >= -1e-10) {
                let v = mesh.tets()[t].vertices;
                let value: f64 = (0..4).map(|k| lam[k] * field[v[k]]).sum();
                points.push((coord, value));
                break;
            }
        }
    }
    if points.is_empty() {
        return Err(MeshError::CutOutsideMesh(anchor));
    }
    Ok(Profile1D::new(points, quantity))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> Mesh {
        build_box_mesh([1.0; 3], [1, 1, 1], &[]).unwrap()
    }

    #[test]
    fn single_cube_has_six_active_tets() {
        let m = unit_cube();
        assert_eq!(m.num_vertices(), 8);
        assert_eq!(m.num_tets(), 6);
        assert!(m.tets().iter().all(|t| t.region == RegionLabel::Active));
        // 12 exterior triangles, no interfaces.
        assert_eq!(m.faces().len(), 12);
        assert!((m.total_volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn counts_match_enumeration() {
        for n in 1..4usize {
            let m = build_box_mesh([1.0; 3], [n; 3], &[]).unwrap();
            assert_eq!(m.num_vertices(), (n + 1).pow(3));
            assert_eq!(m.num_tets(), 6 * n.pow(3));
        }
    }

    #[test]
    fn layer_breaks_place_active_region() {
        let m = build_box_mesh([10e-9, 10e-9, 10e-9], [2, 2, 10], &[3e-9, 7e-9]).unwrap();
        for t in 0..m.num_tets() {
            let z = m.tet_centroid(t)[2];
            let expect = if z < 3e-9 {
                RegionLabel::Bottom
            } else if z < 7e-9 {
                RegionLabel::Active
            } else {
                RegionLabel::Top
            };
            assert_eq!(m.tets()[t].region, expect);
        }
        let gb = m.face_set(SurfaceLabel::GammaB);
        assert!(!gb.is_empty());
        for f in gb {
            for v in m.faces()[f].vertices {
                assert!((m.vertices()[v][2] - 3e-9).abs() < 1e-20);
            }
        }
        assert!(!m.interface_is_exterior(SurfaceLabel::GammaT));
    }

    #[test]
    fn degenerate_layers_alias_interfaces() {
        let m = build_box_mesh([1.0; 3], [2, 2, 2], &[0.0, 1.0]).unwrap();
        assert!(!m.has_region(RegionLabel::Bottom));
        assert_eq!(m.face_set(SurfaceLabel::GammaB), m.face_set(SurfaceLabel::SigmaB));
        assert_eq!(m.face_set(SurfaceLabel::GammaT), m.face_set(SurfaceLabel::SigmaT));
        assert!(m.interface_is_exterior(SurfaceLabel::GammaB));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            build_box_mesh([1.0, 0.0, 1.0], [1, 1, 1], &[]),
            Err(MeshError::BadExtents(_))
        ));
        assert!(matches!(
            build_box_mesh([1.0; 3], [1, 0, 1], &[]),
            Err(MeshError::BadDivisions(_))
        ));
        assert!(matches!(
            build_box_mesh([1.0; 3], [1, 1, 4], &[0.3, 0.5]),
            Err(MeshError::BreakOffGrid(_))
        ));
        assert!(matches!(
            build_box_mesh([1.0; 3], [1, 1, 4], &[0.5, 0.25]),
            Err(MeshError::BadBreaks { .. })
        ));
    }

    #[test]
    fn lateral_active_faces_are_lateral() {
        let m = build_box_mesh([1.0; 3], [2, 2, 4], &[0.25, 0.75]).unwrap();
        let lat = m.face_set(SurfaceLabel::SigmaLat);
        let lat_a = m.face_set(SurfaceLabel::SigmaLatA);
        assert!(lat_a.iter().all(|f| lat.contains(f)));
        assert_eq!(lat_a.len() * 2, lat.len());
    }

    #[test]
    fn boundary_areas_match_box() {
        let (lx, ly, lz) = (2.0, 3.0, 5.0);
        let m = build_box_mesh([lx, ly, lz], [3, 2, 4], &[]).unwrap();
        let area = |l| -> f64 { m.face_set(l).iter().map(|&f| m.face_area(f)).sum() };
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(area(SurfaceLabel::SigmaB), lx * ly) < 1e-12);
        assert!(rel(area(SurfaceLabel::SigmaT), lx * ly) < 1e-12);
        assert!(rel(area(SurfaceLabel::SigmaLat), 2.0 * (lx + ly) * lz) < 1e-12);
    }

    #[test]
    fn kuhn_weights_are_nonnegative() {
        for (ext, div) in [
            ([1.0, 1.0, 1.0], [1, 1, 1]),
            ([1.0, 2.0, 0.5], [3, 2, 5]),
            ([1e-8, 1e-8, 1e-8], [4, 4, 20]),
        ] {
            let m = build_box_mesh(ext, div, &[]).unwrap();
            let g = compute_edge_geometry(&m).unwrap();
            assert_eq!(g.negative_edges, 0);
            let lumped: f64 = g.lumped_volumes.iter().sum();
            assert!((lumped - m.total_volume()).abs() <= 1e-12 * m.total_volume());
        }
    }

    #[test]
    fn distorted_pair_reports_negative_weight() {
        // Two tets sharing face (0,1,2) with both apexes close to the face:
        // the edge opposite the shared face sees two obtuse dihedral angles.
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, 1.0, 0.0],
            [0.5, 0.4, 0.05],
            [0.5, 0.4, -0.05],
        ];
        let tets = vec![
            Tetrahedron {
                vertices: [0, 1, 2, 3],
                region: RegionLabel::Active,
            },
            Tetrahedron {
                vertices: [0, 1, 2, 4],
                region: RegionLabel::Active,
            },
        ];
        let mut faces = Vec::new();
        for apex in [3, 4] {
            for f in [[0, 1, apex], [1, 2, apex], [0, 2, apex]] {
                faces.push((f, SurfaceLabel::SigmaLat));
            }
        }
        let m = Mesh::new(vertices, tets, faces).unwrap();
        let g = compute_edge_geometry(&m).unwrap();
        assert!(g.negative_edges >= 1);
    }

    #[test]
    fn line_cut_reproduces_linear_field() {
        let m = build_box_mesh([1e-8, 1e-8, 1e-8], [2, 2, 10], &[]).unwrap();
        let z: Vec<f64> = m.vertices().iter().map(|p| p[2]).collect();
        let cut = extract_line_cut(&m, &z, Axis::Z, [0.5e-8, 0.5e-8], 21, Quantity::Potential).unwrap();
        assert_eq!(cut.len(), 21);
        for (i, (c, v)) in cut.points().iter().enumerate() {
            assert!((c - i as f64 * 0.5e-9).abs() < 1e-21);
            assert!((v - c).abs() < 1e-22);
        }
        let flat = vec![4.5; m.num_vertices()];
        let cut = extract_line_cut(&m, &flat, Axis::X, [0.3e-8, 0.2e-8], 7, Quantity::Temperature).unwrap();
        assert!(cut.points().iter().all(|(_, v)| (v - 4.5).abs() < 1e-12));
        assert!(matches!(
            extract_line_cut(&m, &flat, Axis::Z, [2e-8, 0.0], 5, Quantity::Temperature),
            Err(MeshError::CutOutsideMesh(_))
        ));
    }

    #[test]
    fn ascii_round_trip_and_validation() {
        let m = unit_cube();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = parse_mesh(&text, "cube").unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.tets(), m.tets());
        assert_eq!(back.faces(), m.faces());

        let bad = text.replacen("0 1 3 7 active", "0 1 3 99 active", 1);
        let e = parse_mesh(&bad, "cube").unwrap_err();
        assert!(e.to_string().contains("tetrahedron"), "{e}");

        // Drop the last boundary face.
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        let n = lines.len();
        let count_line = n - 12;
        let shorter = lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if i == count_line {
                    "11".to_string()
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(
            parse_mesh(&shorter, "cube"),
            Err(MeshError::UnlabeledBoundaryFace(_))
        ));
    }

    #[test]
    fn face_shared_by_three_tets_is_rejected() {
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.2, 0.2, 1.0],
            [0.2, 0.2, -1.0],
            [0.3, 0.3, 2.0],
        ];
        let tets = vec![
            Tetrahedron {
                vertices: [0, 1, 2, 3],
                region: RegionLabel::Active,
            },
            Tetrahedron {
                vertices: [0, 1, 2, 4],
                region: RegionLabel::Active,
            },
            Tetrahedron {
                vertices: [0, 1, 2, 5],
                region: RegionLabel::Active,
            },
        ];
        assert!(matches!(
            Mesh::new(vertices, tets, vec![]),
            Err(MeshError::NonConforming { count: 3, .. })
        ));
    }
}
