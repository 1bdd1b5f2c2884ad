//! File output and run orchestration.
//!
//! A run directory holds `config.toml` (the echoed input), `mesh.txt`,
//! `snapshot_NNNN.vtk`, `cut_*.csv` and `gummel_trace.csv`. Files are
//! written as soon as their data exists, so a failed run keeps its history.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{BuildError, CutSpec, SimulationConfig};
use crate::equations::{Device, FieldState};
use crate::gummel::{run_transient, GummelSettings, IterationTrace, RunFailure, RunHistory, Schedule};
use crate::mesh::{compute_edge_geometry, extract_line_cut, Mesh, MeshError, RegionLabel, SurfaceLabel};
use crate::profile::{Profile1D, Quantity};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), OutputError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    fill(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn region_id(r: RegionLabel) -> u8 {
    match r {
        RegionLabel::Bottom => 0,
        RegionLabel::Active => 1,
        RegionLabel::Top => 2,
    }
}

/// Legacy ASCII VTK unstructured grid with point arrays `phi`, `n`, `T`
/// and a cell array `region` (0 bottom, 1 active, 2 top).
pub fn write_vtk<W: Write + ?Sized>(mesh: &Mesh, state: &FieldState, w: &mut W) -> std::io::Result<()> {
    let nv = mesh.num_vertices();
    let nt = mesh.num_tets();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "tedsim t={:e}", state.time)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for p in mesh.vertices() {
        writeln!(w, "{:e} {:e} {:e}", p[0], p[1], p[2])?;
    }
    writeln!(w, "CELLS {nt} {}", 5 * nt)?;
    for t in mesh.tets() {
        let v = t.vertices;
        writeln!(w, "4 {} {} {} {}", v[0], v[1], v[2], v[3])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "10")?;
    }
    writeln!(w, "CELL_DATA {nt}")?;
    writeln!(w, "SCALARS region int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for t in mesh.tets() {
        writeln!(w, "{}", region_id(t.region))?;
    }
    writeln!(w, "POINT_DATA {nv}")?;
    for (name, field) in [("phi", &state.phi), ("n", &state.n), ("T", &state.temperature)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in field.iter() {
            writeln!(w, "{v:e}")?;
        }
    }
    Ok(())
}

pub fn write_vtk_snapshot(mesh: &Mesh, state: &FieldState, path: &Path) -> Result<(), OutputError> {
    write_file(path, |w| write_vtk(mesh, state, w))
}

/// `coordinate_um,value` rows, coordinates converted from m to um, 17
/// significant digits.
pub fn write_cut<W: Write + ?Sized>(profile: &Profile1D, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "coordinate_um,value")?;
    for &(x, v) in profile.points() {
        writeln!(w, "{:.16e},{:.16e}", x * 1e6, v)?;
    }
    Ok(())
}

pub fn write_cut_csv(profile: &Profile1D, path: &Path) -> Result<(), OutputError> {
    write_file(path, |w| write_cut(profile, w))
}

/// Numeric and reference profiles side by side, sampled at the numeric points.
pub fn write_comparison_csv(numeric: &Profile1D, reference: &Profile1D, path: &Path) -> Result<(), OutputError> {
    write_file(path, |w| {
        writeln!(w, "coordinate_um,numeric,reference")?;
        for &(x, v) in numeric.points() {
            match reference.interpolate(x) {
                Some(r) => writeln!(w, "{:.16e},{:.16e},{:.16e}", x * 1e6, v, r)?,
                None => writeln!(w, "{:.16e},{:.16e},", x * 1e6, v)?,
            }
        }
        Ok(())
    })
}

/// Human-readable mesh summary: counts, labels, volumes and edge weights.
pub fn mesh_report(mesh: &Mesh) -> Result<String, MeshError> {
    let g = compute_edge_geometry(mesh)?;
    let mut s = String::new();
    let (lo, hi) = mesh.bounding_box();
    let _ = writeln!(s, "vertices {}", mesh.num_vertices());
    let _ = writeln!(s, "tetrahedra {}", mesh.num_tets());
    let _ = writeln!(s, "edges {}", mesh.edges().len());
    let _ = writeln!(s, "boundary_faces {}", mesh.faces().len());
    let _ = writeln!(
        s,
        "bounding_box {:e} {:e} {:e} {:e} {:e} {:e}",
        lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]
    );
    let _ = writeln!(s, "volume {:e}", mesh.total_volume());
    for r in [RegionLabel::Bottom, RegionLabel::Active, RegionLabel::Top] {
        let count = mesh.tets().iter().filter(|t| t.region == r).count();
        let _ = writeln!(s, "region {} {}", r, count);
    }
    for l in SurfaceLabel::ALL {
        let _ = writeln!(s, "surface {} {}", l, mesh.face_set(l).len());
    }
    let vmin = g.tet_volumes.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = g.tet_volumes.iter().copied().fold(0.0, f64::max);
    let _ = writeln!(s, "tet_volume_min {vmin:e}");
    let _ = writeln!(s, "tet_volume_max {vmax:e}");
    // Worst longest-to-shortest edge ratio over all elements.
    let mut worst = 0.0f64;
    for e in mesh.tet_edges() {
        let longest = e.iter().map(|&k| g.edge_lengths[k]).fold(0.0, f64::max);
        let shortest = e.iter().map(|&k| g.edge_lengths[k]).fold(f64::INFINITY, f64::min);
        worst = worst.max(longest / shortest);
    }
    let _ = writeln!(s, "edge_ratio_max {worst:.6}");
    let wmin = g.edge_weights.iter().copied().fold(f64::INFINITY, f64::min);
    let _ = writeln!(s, "edge_weight_min {wmin:e}");
    let _ = writeln!(s, "negative_weight_edges {}", g.negative_edges);
    Ok(s)
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Solver(#[from] Box<RunFailure>),
}

impl RunError {
    /// Process exit code: 1 for setup problems, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Solver(_) => 2,
            _ => 1,
        }
    }
}

/// Paths produced by a run.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub directory: PathBuf,
    pub config_echo: PathBuf,
    pub mesh_summary: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub cuts: Vec<PathBuf>,
    pub trace_log: PathBuf,
}

fn cut_profile(dev: &Device, state: &FieldState, cut: &CutSpec) -> Result<Profile1D, MeshError> {
    let field = match cut.quantity {
        Quantity::Density => &state.n,
        Quantity::Temperature => &state.temperature,
        Quantity::Potential => &state.phi,
    };
    let (lo, hi) = dev.mesh().bounding_box();
    let a = cut.axis.index();
    let (i, j) = match a {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let anchor = cut.anchor.unwrap_or([0.5 * (lo[i] + hi[i]), 0.5 * (lo[j] + hi[j])]);
    extract_line_cut(dev.mesh(), field, cut.axis, anchor, cut.samples, cut.quantity)
}

fn trace_rows(trace: &IterationTrace, out: &mut String) {
    for m in 0..trace.density_norms.len() {
        let r = trace.residuals[m];
        let _ = writeln!(
            out,
            "{},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            trace.step,
            trace.time,
            m,
            trace.density_norms[m],
            trace.potential_norms[m],
            trace.temperature_norms[m],
            r[0],
            r[1],
            r[2]
        );
    }
}

const TRACE_HEADER: &str =
    "step,time,iteration,density_update,potential_update,temperature_update,poisson_residual,continuity_residual,heat_residual";

/// Runs `config` and writes everything into `dir`.
pub fn run_to_directory(
    config: &SimulationConfig,
    settings_override: impl FnOnce(&mut GummelSettings),
    dir: &Path,
) -> Result<(RunHistory, RunArtifacts), RunError> {
    let dev = config.build_device()?;
    let schedule = config.schedule()?;
    let mut settings = config.gummel_settings(&dev);
    settings_override(&mut settings);
    if let Err(e) = fs::create_dir_all(dir) {
        return Err(OutputError::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into());
    }

    let mut art = RunArtifacts {
        directory: dir.to_path_buf(),
        config_echo: dir.join("config.toml"),
        mesh_summary: dir.join("mesh.txt"),
        trace_log: dir.join("gummel_trace.csv"),
        ..Default::default()
    };
    let mut echo = config.clone();
    echo.solver = settings.clone();
    if let crate::config::Geometry::File(p) = &echo.geometry {
        echo.geometry = crate::config::Geometry::File(config.base_dir.join(p));
    }
    let text = echo.echo();
    write_file(&art.config_echo, |w| w.write_all(text.as_bytes()))?;
    let report = mesh_report(dev.mesh()).map_err(OutputError::from)?;
    write_file(&art.mesh_summary, |w| w.write_all(report.as_bytes()))?;
    write_file(&art.trace_log, |w| writeln!(w, "{TRACE_HEADER}"))?;

    let last = match &schedule {
        Schedule::Steady => 1,
        Schedule::Transient(g) => g.steps().len(),
    };
    let mut write_error: Option<OutputError> = None;
    let mut observer = |step: usize, state: &FieldState, trace: Option<&IterationTrace>| {
        if write_error.is_some() {
            return;
        }
        let mut result = || -> Result<(), OutputError> {
            if let Some(t) = trace {
                let mut rows = String::new();
                trace_rows(t, &mut rows);
                let f = fs::OpenOptions::new()
                    .append(true)
                    .open(&art.trace_log)
                    .map_err(io_err(&art.trace_log))?;
                let mut f = BufWriter::new(f);
                f.write_all(rows.as_bytes()).map_err(io_err(&art.trace_log))?;
            }
            if config.output.snapshots.wants(step, last) {
                if config.output.vtk {
                    let p = dir.join(format!("snapshot_{step:04}.vtk"));
                    write_vtk_snapshot(dev.mesh(), state, &p)?;
                    art.snapshots.push(p);
                }
                for (k, cut) in config.output.cuts.iter().enumerate() {
                    let prof = cut_profile(&dev, state, cut)?;
                    let p = dir.join(format!("{}_step{step:04}.csv", cut.file_stem(k)));
                    write_cut_csv(&prof, &p)?;
                    art.cuts.push(p);
                }
            }
            Ok(())
        };
        if let Err(e) = result() {
            write_error = Some(e);
        }
    };
    let init = config.initial_state(&dev);
    let outcome = run_transient(&dev, init, &schedule, &settings, &mut observer);
    if let Err(f) = &outcome {
        // Record the failing step's trace too.
        if let crate::gummel::GummelError::MaxIterations { trace } = &f.error {
            let mut rows = String::new();
            trace_rows(trace, &mut rows);
            if let Ok(mut file) = fs::OpenOptions::new().append(true).open(&art.trace_log) {
                let _ = file.write_all(rows.as_bytes());
            }
        }
    }
    if let Some(e) = write_error {
        return Err(e.into());
    }
    let history = outcome.map_err(Box::new)?;
    Ok((history, art))
}
